#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slic/types.hpp"

namespace slic {

enum class TaskKind { salient_copy, sorted_unique };

std::string to_string(TaskKind t);
TaskKind task_kind_from_string(const std::string& s);

// Task-level ids placed just above the reserved ones.
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kKeyId = 4;
inline constexpr TokenId kFirstContentId = 5;

struct LengthRange {
    std::size_t min = 1;
    std::size_t max = 1;
    friend bool operator==(const LengthRange&, const LengthRange&) = default;
};

struct SyntheticTaskSpec {
    TaskKind task = TaskKind::salient_copy;
    std::size_t vocab_size = 128;
    // sorted_unique: number of input tokens.
    LengthRange input_len{6, 10};
    // salient_copy: groups per input and tokens per group.
    LengthRange num_groups{3, 5};
    LengthRange group_len{2, 4};
    // sorted_unique draws from the first `alphabet_size` content ids (0 = all).
    std::size_t alphabet_size = 0;
    std::size_t num_train = 20000;
    std::size_t num_val = 500;
    std::size_t num_test = 500;
    std::uint64_t seed = 0;
    double noise_rate = 0.1;
    // Generated examples must fit these bounds (targets include EOS).
    std::size_t max_enc_len = 32;
    std::size_t max_dec_len = 12;

    void validate() const;
};

struct DatasetSplits {
    std::vector<Example> train;
    std::vector<Example> val;
    std::vector<Example> test;
};

// Pure function of the spec (including its seed).
DatasetSplits generate_dataset(const SyntheticTaskSpec& spec);

// Noise-free target for a context; inverse of the generator's construction.
TokenSeq reference_target(TaskKind task, const TokenSeq& context);

// Line-delimited JSON: {"example_id", "context_ids", "target_ids"}.
void write_examples(const std::filesystem::path& path, const std::vector<Example>& examples);
std::vector<Example> read_examples(const std::filesystem::path& path);

}  // namespace slic
