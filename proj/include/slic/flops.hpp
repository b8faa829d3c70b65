#pragma once

#include <cstdint>
#include <string>

#include <boost/multiprecision/cpp_int.hpp>

#include "slic/model.hpp"

namespace slic {

using BigInt = boost::multiprecision::cpp_int;

// Symbols of the inference-compute estimate. Parameter counts exclude
// embeddings.
struct FlopsInput {
    std::uint64_t n_enc_params = 0;
    std::uint64_t n_dec_params = 0;
    std::uint64_t n_enc_layer = 0;
    std::uint64_t n_dec_layer = 0;
    std::uint64_t n_enc_ctx = 0;
    std::uint64_t n_dec_ctx = 0;
    std::uint64_t d_enc_attn = 0;
    std::uint64_t d_dec_attn = 0;
    // Decoded candidates; 0 leaves only the encoder term.
    std::uint64_t num_candidates = 0;

    void validate() const;
};

struct FlopsEstimate {
    BigInt per_enc_token;  // 2 N_enc + 2 n_enc_layer n_enc_ctx d_enc_attn
    BigInt per_dec_token;  // 2 N_dec + n_dec_layer n_dec_ctx d_dec_attn (causal mask halves context)
    BigInt encoder;        // per_enc_token * n_enc_ctx
    BigInt decoder;        // per_dec_token * n_dec_ctx * m
    BigInt total;
};

// Exact arbitrary-precision arithmetic; nothing wraps.
FlopsEstimate estimate_flops(const FlopsInput& f);

// Non-embedding parameter counts of the encoder and decoder stacks.
std::uint64_t encoder_non_embedding_params(const ModelConfig& c);
std::uint64_t decoder_non_embedding_params(const ModelConfig& c);

FlopsInput flops_input_for(const ModelConfig& c, std::uint64_t n_enc_ctx, std::uint64_t n_dec_ctx,
                           std::uint64_t num_candidates);

}  // namespace slic
