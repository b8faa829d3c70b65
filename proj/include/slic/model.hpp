#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "slic/ops.hpp"
#include "slic/tensor.hpp"
#include "slic/types.hpp"

namespace slic {

struct ModelConfig {
    std::size_t vocab_size = 128;
    std::size_t num_enc_layers = 2;
    std::size_t num_dec_layers = 1;
    std::size_t d_model = 32;
    std::size_t num_heads = 4;
    std::size_t d_ff = 64;
    std::size_t max_enc_len = 32;
    std::size_t max_dec_len = 12;
    // Output projection reuses the token embedding table.
    bool tie_embeddings = true;
    double label_smoothing = 0.0;
    std::uint64_t init_seed = 0;

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Raised for inputs a model call cannot accept (length bounds, bad ids).
class ModelInputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised when a training loss stops being finite.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using ParamMap = std::map<std::string, Tensor>;

// Packed encoder output: rows of all contexts stacked in order.
struct EncodedBatch {
    Tensor memory;
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> lengths;
};

// Teacher-forced decoder pass over several sequences packed row-wise.
struct DecodedBatch {
    Tensor log_probs;  // rows x vocab
    Tensor hidden;     // rows x d_model, final decoder states
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> lengths;
};

// Final decoder states of one sequence: len(y) x d_model.
struct DecoderStates {
    std::size_t length = 0;
    std::size_t width = 0;
    std::vector<double> hidden;

    std::span<const double> row(std::size_t i) const { return {hidden.data() + i * width, width}; }
};

struct TeacherForced {
    Tensor log_probs;  // len(y) x vocab
    DecoderStates states;
};

class Seq2SeqModel {
public:
    Seq2SeqModel() = default;
    // Fresh parameters drawn from config.init_seed.
    explicit Seq2SeqModel(ModelConfig config);
    Seq2SeqModel(ModelConfig config, ParamMap params);

    const ModelConfig& config() const { return config_; }
    const ParamMap& params() const { return params_; }
    ParamMap& params() { return params_; }
    const Tensor& param(const std::string& name) const;

    // Parameter names this architecture produces, with shapes.
    static std::map<std::string, Shape> parameter_shapes(const ModelConfig& config);
    std::size_t parameter_count() const;

    // Deep copy; the copy's parameters require gradients iff `trainable`.
    Seq2SeqModel clone(bool trainable = true) const;

    // Validation helpers; throw ModelInputError.
    void check_context(const TokenSeq& x) const;
    void check_target(const TokenSeq& y) const;

    EncodedBatch encode_batch(std::span<const TokenSeq> contexts) const;
    // Each decoder input starts with BOS; memory_of[i] picks the context.
    DecodedBatch decode_batch(const EncodedBatch& enc, std::span<const TokenSeq> decoder_inputs,
                              std::span<const std::size_t> memory_of) const;

    // Sum of realized-token log-probs for each target, as a differentiable [n]
    // tensor. `out` receives the underlying decoder pass when non-null.
    Tensor score_targets(const EncodedBatch& enc, std::span<const TokenSeq> targets,
                         std::span<const std::size_t> memory_of, DecodedBatch* out = nullptr) const;

    Tensor encode(const TokenSeq& x) const;
    TeacherForced teacher_forced(const TokenSeq& x, const TokenSeq& y) const;
    double sequence_log_prob(const TokenSeq& x, const TokenSeq& y) const;

    // Next-token log-prob rows for each prefix (BOS excluded) against the
    // context memory_of[i]. No tape is recorded.
    std::vector<std::vector<double>> next_token_log_probs(const EncodedBatch& enc,
                                                          std::span<const TokenSeq> prefixes,
                                                          std::span<const std::size_t> memory_of) const;

    // Ids that can never be generated (PAD, BOS).
    static bool is_blocked(TokenId id) { return id == kPadId || id == kBosId; }

private:
    Tensor attention_block(const std::string& prefix, const Tensor& x, const Tensor& kv_source,
                           std::span<const ops::AttentionSegment> segments, bool causal) const;
    Tensor ffn_block(const std::string& prefix, const Tensor& x) const;
    Tensor ln(const std::string& prefix, const Tensor& x) const;

    ModelConfig config_;
    ParamMap params_;
};

// exp(-sum log p / token count) over a dataset.
double perplexity(const Seq2SeqModel& model, std::span<const Example> dataset);

// Mean token NLL (with optional label smoothing) over a batch; differentiable.
Tensor mle_loss(const Seq2SeqModel& model, std::span<const Example> batch);

struct AdamState {
    std::uint64_t step = 0;
    std::map<std::string, std::vector<double>> first;
    std::map<std::string, std::vector<double>> second;
};

// Adam with betas (0.9, 0.999) and eps 1e-8.
class Adam {
public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    Adam() = default;
    explicit Adam(AdamState state) : state_(std::move(state)) {}

    // Applies one update from the accumulated leaf gradients, then clears them.
    void step(ParamMap& params, double learning_rate);
    const AdamState& state() const { return state_; }

private:
    AdamState state_;
};

void zero_grads(ParamMap& params);

// One MLE update. Returns the loss evaluated before the update.
double mle_train_step(Seq2SeqModel& model, Adam& optimizer, std::span<const Example> batch,
                      double learning_rate);

}  // namespace slic
