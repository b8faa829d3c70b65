#include "slic/model.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace slic {
namespace {

constexpr double kBlockedLogit = -1e30;

std::vector<std::uint8_t> blocked_mask(std::size_t rows, std::size_t vocab) {
    std::vector<std::uint8_t> mask(rows * vocab, 0);
    for (std::size_t r = 0; r < rows; ++r)
        for (TokenId id : {kPadId, kBosId}) mask[r * vocab + static_cast<std::size_t>(id)] = 1;
    return mask;
}

std::string layer_name(const char* stack, std::size_t l) { return std::string(stack) + "." + std::to_string(l); }

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size <= static_cast<std::size_t>(kNumReserved))
        throw std::invalid_argument("model: vocab_size must exceed the " + std::to_string(kNumReserved) +
                                    " reserved ids");
    if (num_heads == 0 || d_model % num_heads != 0)
        throw std::invalid_argument("model: d_model " + std::to_string(d_model) + " not divisible by num_heads " +
                                    std::to_string(num_heads));
    if (max_enc_len < 1 || max_dec_len < 1) throw std::invalid_argument("model: max lengths must be >= 1");
    if (d_ff < 1 || num_enc_layers < 1 || num_dec_layers < 1)
        throw std::invalid_argument("model: layer counts and d_ff must be >= 1");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
        throw std::invalid_argument("model: label_smoothing must lie in [0, 1)");
}

std::map<std::string, Shape> Seq2SeqModel::parameter_shapes(const ModelConfig& c) {
    std::map<std::string, Shape> shapes;
    const std::size_t d = c.d_model;
    auto add_ln = [&](const std::string& p) {
        shapes[p + ".gamma"] = {d};
        shapes[p + ".beta"] = {d};
    };
    auto add_attn = [&](const std::string& p) {
        for (const char* w : {".wq", ".wk", ".wv", ".wo"}) shapes[p + w] = {d, d};
    };
    auto add_ffn = [&](const std::string& p) {
        shapes[p + ".w1"] = {d, c.d_ff};
        shapes[p + ".b1"] = {c.d_ff};
        shapes[p + ".w2"] = {c.d_ff, d};
        shapes[p + ".b2"] = {d};
    };
    shapes["embed.token"] = {c.vocab_size, d};
    shapes["embed.enc_pos"] = {c.max_enc_len, d};
    shapes["embed.dec_pos"] = {c.max_dec_len, d};
    for (std::size_t l = 0; l < c.num_enc_layers; ++l) {
        const auto p = layer_name("enc", l);
        add_ln(p + ".attn_ln");
        add_attn(p + ".attn");
        add_ln(p + ".ffn_ln");
        add_ffn(p + ".ffn");
    }
    add_ln("enc.final_ln");
    for (std::size_t l = 0; l < c.num_dec_layers; ++l) {
        const auto p = layer_name("dec", l);
        add_ln(p + ".self_ln");
        add_attn(p + ".self");
        add_ln(p + ".cross_ln");
        add_attn(p + ".cross");
        add_ln(p + ".ffn_ln");
        add_ffn(p + ".ffn");
    }
    add_ln("dec.final_ln");
    shapes["out.bias"] = {c.vocab_size};
    if (!c.tie_embeddings) shapes["out.weight"] = {c.vocab_size, d};
    return shapes;
}

Seq2SeqModel::Seq2SeqModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(config_.init_seed);
    for (const auto& [name, shape] : parameter_shapes(config_)) {
        std::vector<double> values(numel_of(shape), 0.0);
        const auto ends_with = [&](const char* s) { return name.ends_with(s); };
        if (ends_with(".gamma")) {
            std::fill(values.begin(), values.end(), 1.0);
        } else if (ends_with(".beta") || ends_with(".b1") || ends_with(".b2") || name == "out.bias") {
            // zeros
        } else {
            // Embeddings use a fixed small scale; projections scale with fan-in.
            const double stddev = name.starts_with("embed.") || name == "out.weight"
                                      ? 0.1
                                      : 1.0 / std::sqrt(static_cast<double>(shape[0]));
            std::normal_distribution<double> dist(0.0, stddev);
            for (auto& v : values) v = dist(rng);
        }
        params_.emplace(name, Tensor::from(shape, std::move(values), true));
    }
}

Seq2SeqModel::Seq2SeqModel(ModelConfig config, ParamMap params)
    : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    const auto expected = parameter_shapes(config_);
    if (expected.size() != params_.size())
        throw std::invalid_argument("model: parameter set does not match the configured architecture");
    for (const auto& [name, shape] : expected) {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::invalid_argument("model: missing parameter " + name);
        if (it->second.shape() != shape)
            throw std::invalid_argument("model: parameter " + name + " has shape " +
                                        shape_str(it->second.shape()) + ", expected " + shape_str(shape));
    }
}

const Tensor& Seq2SeqModel::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("model: no parameter named " + name);
    return it->second;
}

std::size_t Seq2SeqModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
}

Seq2SeqModel Seq2SeqModel::clone(bool trainable) const {
    ParamMap copy;
    for (const auto& [name, t] : params_) copy.emplace(name, t.clone(trainable));
    return Seq2SeqModel(config_, std::move(copy));
}

void Seq2SeqModel::check_context(const TokenSeq& x) const {
    if (x.empty()) throw ModelInputError("context must be non-empty");
    if (x.size() > config_.max_enc_len)
        throw ModelInputError("context length " + std::to_string(x.size()) + " exceeds max_enc_len " +
                              std::to_string(config_.max_enc_len));
    for (TokenId id : x)
        if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size || id == kPadId)
            throw ModelInputError("context holds invalid token id " + std::to_string(id));
}

void Seq2SeqModel::check_target(const TokenSeq& y) const {
    if (y.empty()) throw ModelInputError("target must be non-empty");
    if (y.size() > config_.max_dec_len)
        throw ModelInputError("target length " + std::to_string(y.size()) + " exceeds max_dec_len " +
                              std::to_string(config_.max_dec_len));
    for (std::size_t i = 0; i < y.size(); ++i) {
        const TokenId id = y[i];
        if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size || is_blocked(id))
            throw ModelInputError("target holds invalid token id " + std::to_string(id));
        if (id == kEosId && i + 1 != y.size()) throw ModelInputError("EOS inside target");
    }
}

Tensor Seq2SeqModel::ln(const std::string& prefix, const Tensor& x) const {
    return ops::layer_norm(x, param(prefix + ".gamma"), param(prefix + ".beta"));
}

Tensor Seq2SeqModel::attention_block(const std::string& prefix, const Tensor& x, const Tensor& kv_source,
                                     std::span<const ops::AttentionSegment> segments, bool causal) const {
    auto q = ops::matmul(x, param(prefix + ".wq"));
    auto k = ops::matmul(kv_source, param(prefix + ".wk"));
    auto v = ops::matmul(kv_source, param(prefix + ".wv"));
    auto a = ops::multi_head_attention(q, k, v, config_.num_heads, segments, causal);
    return ops::matmul(a, param(prefix + ".wo"));
}

Tensor Seq2SeqModel::ffn_block(const std::string& prefix, const Tensor& x) const {
    auto h = ops::gelu(ops::add_bias(ops::matmul(x, param(prefix + ".w1")), param(prefix + ".b1")));
    return ops::add_bias(ops::matmul(h, param(prefix + ".w2")), param(prefix + ".b2"));
}

EncodedBatch Seq2SeqModel::encode_batch(std::span<const TokenSeq> contexts) const {
    EncodedBatch enc;
    std::vector<TokenId> ids, pos;
    std::vector<ops::AttentionSegment> segs;
    for (const auto& x : contexts) {
        check_context(x);
        enc.offsets.push_back(ids.size());
        enc.lengths.push_back(x.size());
        segs.push_back({ids.size(), x.size(), ids.size(), x.size()});
        for (std::size_t i = 0; i < x.size(); ++i) {
            ids.push_back(x[i]);
            pos.push_back(static_cast<TokenId>(i));
        }
    }
    if (ids.empty()) throw ModelInputError("encode_batch: no contexts");
    auto h = ops::add(ops::embedding(param("embed.token"), ids), ops::embedding(param("embed.enc_pos"), pos));
    for (std::size_t l = 0; l < config_.num_enc_layers; ++l) {
        const auto p = layer_name("enc", l);
        auto a = ln(p + ".attn_ln", h);
        h = ops::add(h, attention_block(p + ".attn", a, a, segs, false));
        h = ops::add(h, ffn_block(p + ".ffn", ln(p + ".ffn_ln", h)));
    }
    enc.memory = ln("enc.final_ln", h);
    return enc;
}

DecodedBatch Seq2SeqModel::decode_batch(const EncodedBatch& enc, std::span<const TokenSeq> decoder_inputs,
                                        std::span<const std::size_t> memory_of) const {
    if (decoder_inputs.size() != memory_of.size())
        throw std::invalid_argument("decode_batch: decoder_inputs and memory_of differ in size");
    DecodedBatch out;
    std::vector<TokenId> ids, pos;
    std::vector<ops::AttentionSegment> self_segs, cross_segs;
    for (std::size_t s = 0; s < decoder_inputs.size(); ++s) {
        const auto& in = decoder_inputs[s];
        if (in.empty() || in.front() != kBosId) throw ModelInputError("decoder input must start with BOS");
        if (in.size() > config_.max_dec_len)
            throw ModelInputError("decoder length " + std::to_string(in.size()) + " exceeds max_dec_len " +
                                  std::to_string(config_.max_dec_len));
        if (memory_of[s] >= enc.offsets.size()) throw std::out_of_range("decode_batch: memory index");
        out.offsets.push_back(ids.size());
        out.lengths.push_back(in.size());
        self_segs.push_back({ids.size(), in.size(), ids.size(), in.size()});
        cross_segs.push_back({ids.size(), in.size(), enc.offsets[memory_of[s]], enc.lengths[memory_of[s]]});
        for (std::size_t i = 0; i < in.size(); ++i) {
            ids.push_back(in[i]);
            pos.push_back(static_cast<TokenId>(i));
        }
    }
    if (ids.empty()) throw ModelInputError("decode_batch: no sequences");
    auto h = ops::add(ops::embedding(param("embed.token"), ids), ops::embedding(param("embed.dec_pos"), pos));
    for (std::size_t l = 0; l < config_.num_dec_layers; ++l) {
        const auto p = layer_name("dec", l);
        auto a = ln(p + ".self_ln", h);
        h = ops::add(h, attention_block(p + ".self", a, a, self_segs, true));
        h = ops::add(h, attention_block(p + ".cross", ln(p + ".cross_ln", h), enc.memory, cross_segs, false));
        h = ops::add(h, ffn_block(p + ".ffn", ln(p + ".ffn_ln", h)));
    }
    out.hidden = ln("dec.final_ln", h);
    const Tensor& proj = config_.tie_embeddings ? param("embed.token") : param("out.weight");
    auto logits = ops::add_bias(ops::matmul_nt(out.hidden, proj), param("out.bias"));
    logits = ops::masked_fill(logits, blocked_mask(ids.size(), config_.vocab_size), kBlockedLogit);
    out.log_probs = ops::log_softmax(logits);
    return out;
}

Tensor Seq2SeqModel::score_targets(const EncodedBatch& enc, std::span<const TokenSeq> targets,
                                   std::span<const std::size_t> memory_of, DecodedBatch* out) const {
    std::vector<TokenSeq> inputs;
    inputs.reserve(targets.size());
    std::vector<TokenId> realized;
    std::vector<std::size_t> lengths;
    for (const auto& y : targets) {
        check_target(y);
        TokenSeq in{kBosId};
        in.insert(in.end(), y.begin(), y.end() - 1);
        inputs.push_back(std::move(in));
        realized.insert(realized.end(), y.begin(), y.end());
        lengths.push_back(y.size());
    }
    auto dec = decode_batch(enc, inputs, memory_of);
    auto scores = ops::segment_sum(ops::gather(dec.log_probs, realized), lengths);
    if (out) *out = std::move(dec);
    return scores;
}

Tensor Seq2SeqModel::encode(const TokenSeq& x) const {
    std::vector<TokenSeq> xs{x};
    return encode_batch(xs).memory;
}

TeacherForced Seq2SeqModel::teacher_forced(const TokenSeq& x, const TokenSeq& y) const {
    std::vector<TokenSeq> xs{x}, ys{y};
    std::vector<std::size_t> mem{0};
    auto enc = encode_batch(xs);
    DecodedBatch dec;
    score_targets(enc, ys, mem, &dec);
    TeacherForced tf;
    tf.log_probs = dec.log_probs;
    tf.states.length = y.size();
    tf.states.width = config_.d_model;
    tf.states.hidden.assign(dec.hidden.data().begin(), dec.hidden.data().end());
    return tf;
}

double Seq2SeqModel::sequence_log_prob(const TokenSeq& x, const TokenSeq& y) const {
    NoGradGuard guard;
    std::vector<TokenSeq> xs{x}, ys{y};
    std::vector<std::size_t> mem{0};
    return score_targets(encode_batch(xs), ys, mem).item();
}

std::vector<std::vector<double>> Seq2SeqModel::next_token_log_probs(const EncodedBatch& enc,
                                                                    std::span<const TokenSeq> prefixes,
                                                                    std::span<const std::size_t> memory_of) const {
    NoGradGuard guard;
    std::vector<TokenSeq> inputs;
    inputs.reserve(prefixes.size());
    for (const auto& p : prefixes) {
        TokenSeq in{kBosId};
        in.insert(in.end(), p.begin(), p.end());
        inputs.push_back(std::move(in));
    }
    auto dec = decode_batch(enc, inputs, memory_of);
    const std::size_t vocab = config_.vocab_size;
    std::vector<std::vector<double>> rows(prefixes.size());
    for (std::size_t s = 0; s < prefixes.size(); ++s) {
        const std::size_t last = dec.offsets[s] + dec.lengths[s] - 1;
        auto begin = dec.log_probs.data().begin() + static_cast<std::ptrdiff_t>(last * vocab);
        rows[s].assign(begin, begin + static_cast<std::ptrdiff_t>(vocab));
    }
    return rows;
}

double perplexity(const Seq2SeqModel& model, std::span<const Example> dataset) {
    if (dataset.empty()) throw std::invalid_argument("perplexity: empty dataset");
    NoGradGuard guard;
    constexpr std::size_t kChunk = 64;
    double total_logp = 0.0;
    std::size_t tokens = 0;
    for (std::size_t begin = 0; begin < dataset.size(); begin += kChunk) {
        const std::size_t end = std::min(dataset.size(), begin + kChunk);
        std::vector<TokenSeq> xs, ys;
        std::vector<std::size_t> mem;
        for (std::size_t i = begin; i < end; ++i) {
            xs.push_back(dataset[i].context);
            ys.push_back(dataset[i].target);
            mem.push_back(i - begin);
            tokens += dataset[i].target.size();
        }
        auto scores = model.score_targets(model.encode_batch(xs), ys, mem);
        for (double s : scores.data()) total_logp += s;
    }
    return std::exp(-total_logp / static_cast<double>(tokens));
}

Tensor mle_loss(const Seq2SeqModel& model, std::span<const Example> batch) {
    if (batch.empty()) throw std::invalid_argument("mle_loss: empty batch");
    std::vector<TokenSeq> xs, ys;
    std::vector<std::size_t> mem;
    std::size_t tokens = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        xs.push_back(batch[i].context);
        ys.push_back(batch[i].target);
        mem.push_back(i);
        tokens += batch[i].target.size();
    }
    DecodedBatch dec;
    auto scores = model.score_targets(model.encode_batch(xs), ys, mem, &dec);
    const double inv_tokens = 1.0 / static_cast<double>(tokens);
    auto nll = ops::scale(ops::sum(scores), -inv_tokens);
    const double eps = model.config().label_smoothing;
    if (eps == 0.0) return nll;
    // Smoothing target: uniform over the generable ids.
    const std::size_t vocab = model.config().vocab_size;
    const std::size_t rows = dec.log_probs.rows();
    auto all = ops::sum(ops::masked_fill(dec.log_probs, blocked_mask(rows, vocab), 0.0));
    const double usable = static_cast<double>(vocab - 2);
    auto smooth = ops::scale(all, -inv_tokens / usable);
    return ops::add(ops::scale(nll, 1.0 - eps), ops::scale(smooth, eps));
}

void zero_grads(ParamMap& params) {
    for (auto& [_, t] : params) t.zero_grad();
}

void Adam::step(ParamMap& params, double learning_rate) {
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double c1 = 1.0 - std::pow(kBeta1, t);
    const double c2 = 1.0 - std::pow(kBeta2, t);
    for (auto& [name, tensor] : params) {
        auto& m = state_.first[name];
        auto& v = state_.second[name];
        const std::size_t n = tensor.numel();
        if (m.size() != n) m.assign(n, 0.0);
        if (v.size() != n) v.assign(n, 0.0);
        auto g = tensor.grad();
        auto p = tensor.mutable_data();
        for (std::size_t i = 0; i < n; ++i) {
            const double gi = g.empty() ? 0.0 : g[i];
            m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
            v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
            p[i] -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
        }
        tensor.zero_grad();
    }
}

double mle_train_step(Seq2SeqModel& model, Adam& optimizer, std::span<const Example> batch,
                      double learning_rate) {
    zero_grads(model.params());
    auto loss = mle_loss(model, batch);
    const double value = loss.item();
    if (!std::isfinite(value)) throw TrainingDiverged("mle_train_step: non-finite loss " + std::to_string(value));
    loss.backward();
    optimizer.step(model.params(), learning_rate);
    return value;
}

}  // namespace slic
