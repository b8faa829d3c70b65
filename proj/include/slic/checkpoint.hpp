#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "slic/model.hpp"
#include "slic/types.hpp"

namespace slic {

struct ModelCheckpoint {
    Seq2SeqModel model;
    std::uint64_t step = 0;
    double val_perplexity = 0.0;
    std::optional<MetricTriple> val_rouge;
    // Present in resumable training snapshots.
    std::optional<AdamState> optimizer;
};

// 16 hex digits of FNV-1a over parameter names, shapes and value bytes.
std::string checkpoint_id(const Seq2SeqModel& model);

// FNV-1a 64 of a byte string, as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

// File layout (all integers little-endian):
//   8 bytes   magic "SLICCKPT"
//   u32       format version (1)
//   u64       header length H
//   H bytes   JSON header: config, step, metrics, checkpoint_id and a tensor
//             directory [{name, shape, section}] with section one of
//             "param", "adam_m", "adam_v"
//   then every directory entry's values as raw IEEE-754 f64, in order.
void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace slic
