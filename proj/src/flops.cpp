#include "slic/flops.hpp"

#include <stdexcept>

namespace slic {

void FlopsInput::validate() const {
    if (!n_enc_params || !n_dec_params || !n_enc_layer || !n_dec_layer || !n_enc_ctx || !n_dec_ctx || !d_enc_attn ||
        !d_dec_attn)
        throw std::invalid_argument("flops: every size except num_candidates must be positive");
}

FlopsEstimate estimate_flops(const FlopsInput& f) {
    f.validate();
    FlopsEstimate e;
    e.per_enc_token = 2 * BigInt(f.n_enc_params) + 2 * BigInt(f.n_enc_layer) * f.n_enc_ctx * f.d_enc_attn;
    e.per_dec_token = 2 * BigInt(f.n_dec_params) + BigInt(f.n_dec_layer) * f.n_dec_ctx * f.d_dec_attn;
    e.encoder = e.per_enc_token * f.n_enc_ctx;
    e.decoder = e.per_dec_token * f.n_dec_ctx * f.num_candidates;
    e.total = e.encoder + e.decoder;
    return e;
}

namespace {

std::uint64_t count(const ModelConfig& c, const char* stack) {
    std::uint64_t n = 0;
    for (const auto& [name, shape] : Seq2SeqModel::parameter_shapes(c))
        if (name.starts_with(stack)) n += numel_of(shape);
    return n;
}

}  // namespace

std::uint64_t encoder_non_embedding_params(const ModelConfig& c) { return count(c, "enc."); }

std::uint64_t decoder_non_embedding_params(const ModelConfig& c) { return count(c, "dec."); }

FlopsInput flops_input_for(const ModelConfig& c, std::uint64_t n_enc_ctx, std::uint64_t n_dec_ctx,
                           std::uint64_t num_candidates) {
    FlopsInput f;
    f.n_enc_params = encoder_non_embedding_params(c);
    f.n_dec_params = decoder_non_embedding_params(c);
    f.n_enc_layer = c.num_enc_layers;
    f.n_dec_layer = c.num_dec_layers;
    f.n_enc_ctx = n_enc_ctx;
    f.n_dec_ctx = n_dec_ctx;
    f.d_enc_attn = c.d_model;
    f.d_dec_attn = c.d_model;
    f.num_candidates = num_candidates;
    return f;
}

}  // namespace slic
