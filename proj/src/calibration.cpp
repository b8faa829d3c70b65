#include "slic/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "slic/ops.hpp"
#include "slic/rng.hpp"

namespace slic {

std::string to_string(CalibrationLoss v) {
    switch (v) {
        case CalibrationLoss::rank: return "rank";
        case CalibrationLoss::margin: return "margin";
        case CalibrationLoss::list_rank: return "list_rank";
        case CalibrationLoss::expected_reward: return "expected_reward";
    }
    return "unknown";
}

std::string to_string(Regularizer v) {
    switch (v) {
        case Regularizer::none: return "none";
        case Regularizer::cross_entropy: return "cross_entropy";
        case Regularizer::kl_divergence: return "kl_divergence";
    }
    return "unknown";
}

std::string to_string(SimilaritySource v) { return v == SimilaritySource::span_f ? "span_f" : "rouge"; }

CalibrationLoss calibration_loss_from_string(const std::string& s) {
    for (auto v : {CalibrationLoss::rank, CalibrationLoss::margin, CalibrationLoss::list_rank,
                   CalibrationLoss::expected_reward})
        if (to_string(v) == s) return v;
    throw std::invalid_argument("unknown calibration loss '" + s + "'");
}

Regularizer regularizer_from_string(const std::string& s) {
    for (auto v : {Regularizer::none, Regularizer::cross_entropy, Regularizer::kl_divergence})
        if (to_string(v) == s) return v;
    throw std::invalid_argument("unknown regularizer '" + s + "'");
}

SimilaritySource similarity_source_from_string(const std::string& s) {
    if (s == "span_f") return SimilaritySource::span_f;
    if (s == "rouge") return SimilaritySource::rouge;
    throw std::invalid_argument("unknown similarity source '" + s + "'");
}

void CalibrationConfig::validate() const {
    if (!(beta >= 0.0)) throw std::invalid_argument("calibration: beta must be >= 0");
    if (!(lambda >= 0.0)) throw std::invalid_argument("calibration: lambda must be >= 0");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("calibration: learning_rate must be >= 0");
    if (pairwise() && pairs_per_example < 1)
        throw std::invalid_argument("calibration: pairs_per_example must be >= 1 for pairwise losses");
    if (batch_size < 1) throw std::invalid_argument("calibration: batch_size must be >= 1");
}

double similarity_value(const CandidateRecord& c, SimilaritySource source) {
    if (source == SimilaritySource::span_f) return c.similarity.value;
    if (!c.rouge) throw std::invalid_argument("similarity_value: candidate has no ROUGE scores");
    return (c.rouge->rouge1 + c.rouge->rouge2 + c.rouge->rougeL) / 300.0;
}

std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(std::span<const double> similarities, std::size_t k,
                                                              std::mt19937_64& rng) {
    std::vector<std::pair<std::size_t, std::size_t>> untied;
    for (std::size_t i = 0; i < similarities.size(); ++i)
        for (std::size_t j = i + 1; j < similarities.size(); ++j)
            if (similarities[i] != similarities[j]) untied.emplace_back(i, j);
    // Partial Fisher-Yates: the first k slots become a uniform sample.
    const std::size_t take = std::min(k, untied.size());
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, untied.size() - i));
        std::swap(untied[i], untied[j]);
    }
    untied.resize(take);
    for (auto& [a, b] : untied)
        if (similarities[a] < similarities[b]) std::swap(a, b);
    return untied;
}

std::vector<std::size_t> list_rank_order(const CalibrationExample& example, SimilaritySource source) {
    std::vector<std::size_t> order(example.candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> sims;
    for (const auto& c : example.candidates) sims.push_back(similarity_value(c, source));
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        const auto& ca = example.candidates[a];
        const auto& cb = example.candidates[b];
        if (ca.ft_log_prob != cb.ft_log_prob) return ca.ft_log_prob > cb.ft_log_prob;
        return ca.tokens < cb.tokens;
    });
    return order;
}

Tensor loss_rank(const Tensor& logp_pos, const Tensor& logp_neg, double beta) {
    return ops::sum(ops::relu(ops::add_scalar(ops::sub(logp_neg, logp_pos), beta)));
}

Tensor loss_margin(const Tensor& logp_pos, const Tensor& logp_neg, double s_pos, double s_neg, double beta) {
    return loss_rank(logp_pos, logp_neg, beta * (s_pos - s_neg));
}

Tensor loss_list_rank(const Tensor& logps, double beta) {
    const std::size_t m = logps.numel();
    if (m < 2) throw std::invalid_argument("loss_list_rank: needs at least two candidates");
    std::vector<std::size_t> first, second;
    std::vector<double> margins;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) {
            first.push_back(i);
            second.push_back(j);
            margins.push_back(beta * static_cast<double>(j - i));
        }
    const std::size_t pairs = margins.size();
    auto gap = ops::sub(ops::take(logps, second), ops::take(logps, first));
    return ops::sum(ops::relu(ops::add(gap, Tensor::from({pairs}, std::move(margins)))));
}

Tensor loss_expected_reward(const Tensor& logps, std::span<const double> similarities) {
    if (logps.numel() != similarities.size() || similarities.empty())
        throw std::invalid_argument("loss_expected_reward: need one similarity per candidate");
    auto weights = ops::softmax(logps.shape().empty() ? ops::take(logps, std::vector<std::size_t>{0}) : logps);
    Tensor sims = Tensor::from(weights.shape(), {similarities.begin(), similarities.end()});
    return ops::scale(ops::sum(ops::mul(weights, sims)), -1.0);
}

double loss_rank(double logp_pos, double logp_neg, double beta) {
    NoGradGuard guard;
    return loss_rank(Tensor::scalar(logp_pos), Tensor::scalar(logp_neg), beta).item();
}

double loss_margin(double logp_pos, double logp_neg, double s_pos, double s_neg, double beta) {
    NoGradGuard guard;
    return loss_margin(Tensor::scalar(logp_pos), Tensor::scalar(logp_neg), s_pos, s_neg, beta).item();
}

double loss_list_rank(std::span<const double> logps, double beta) {
    NoGradGuard guard;
    return loss_list_rank(Tensor::from({logps.size()}, {logps.begin(), logps.end()}), beta).item();
}

double loss_expected_reward(std::span<const double> logps, std::span<const double> similarities) {
    NoGradGuard guard;
    return loss_expected_reward(Tensor::from({logps.size()}, {logps.begin(), logps.end()}), similarities).item();
}

namespace {

Tensor kl_rows(const Tensor& log_p, const Tensor& log_q_const) {
    return ops::sum(ops::mul(ops::exp(log_p), ops::sub(log_p, log_q_const)));
}

void require_same_config(const Seq2SeqModel& a, const Seq2SeqModel& b) {
    if (!(a.config() == b.config()))
        throw std::invalid_argument("reg_kl: model and frozen model configs differ");
}

}  // namespace

Tensor reg_cross_entropy(const Seq2SeqModel& model, const TokenSeq& x, const TokenSeq& target) {
    std::vector<TokenSeq> xs{x}, ys{target};
    std::vector<std::size_t> mem{0};
    return ops::scale(ops::sum(model.score_targets(model.encode_batch(xs), ys, mem)), -1.0);
}

Tensor reg_kl(const Seq2SeqModel& model, const Seq2SeqModel& frozen, const TokenSeq& x, const TokenSeq& target) {
    require_same_config(model, frozen);
    auto log_p = model.teacher_forced(x, target).log_probs;
    Tensor log_q;
    {
        NoGradGuard guard;
        log_q = frozen.teacher_forced(x, target).log_probs;
    }
    return kl_rows(log_p, log_q);
}

CalibrationObjective calibration_objective(const Seq2SeqModel& model, const Seq2SeqModel& frozen,
                                           std::span<const CalibrationExample> batch, const CalibrationConfig& cfg,
                                           std::uint64_t pair_seed) {
    cfg.validate();
    if (batch.empty()) throw std::invalid_argument("calibration_objective: empty batch");
    if (cfg.reg_type == Regularizer::kl_divergence) require_same_config(model, frozen);

    // One packed decoder pass: every example's candidates, then its target.
    std::vector<TokenSeq> contexts, seqs;
    std::vector<std::size_t> memory_of, cand_begin, target_row;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        contexts.push_back(batch[b].context);
        cand_begin.push_back(seqs.size());
        for (const auto& c : batch[b].candidates) {
            seqs.push_back(c.tokens);
            memory_of.push_back(b);
        }
        target_row.push_back(seqs.size());
        seqs.push_back(batch[b].target);
        memory_of.push_back(b);
    }
    DecodedBatch dec;
    const auto scores = model.score_targets(model.encode_batch(contexts), seqs, memory_of, &dec);

    DecodedBatch frozen_dec;
    if (cfg.reg_type == Regularizer::kl_divergence) {
        NoGradGuard guard;
        std::vector<TokenSeq> targets;
        std::vector<std::size_t> mem;
        for (std::size_t b = 0; b < batch.size(); ++b) {
            targets.push_back(batch[b].target);
            mem.push_back(b);
        }
        frozen.score_targets(frozen.encode_batch(contexts), targets, mem, &frozen_dec);
    }

    CalibrationObjective out;
    std::vector<Tensor> cal_terms, reg_terms;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& ex = batch[b];
        const std::size_t m = ex.candidates.size();
        std::vector<std::size_t> idx(m);
        std::iota(idx.begin(), idx.end(), cand_begin[b]);
        std::vector<double> sims;
        for (const auto& c : ex.candidates) sims.push_back(similarity_value(c, cfg.similarity_source));

        switch (cfg.loss_type) {
            case CalibrationLoss::rank:
            case CalibrationLoss::margin: {
                std::mt19937_64 rng(mix_seed(pair_seed, ex.id));
                const auto pairs = sample_pairs(sims, cfg.pairs_per_example, rng);
                if (pairs.empty()) {
                    ++out.breakdown.skipped;
                    break;
                }
                std::vector<Tensor> terms;
                for (const auto& [pos, neg] : pairs) {
                    std::vector<std::size_t> ip{idx[pos]}, in{idx[neg]};
                    auto lp_pos = ops::take(scores, ip);
                    auto lp_neg = ops::take(scores, in);
                    terms.push_back(cfg.loss_type == CalibrationLoss::rank
                                        ? loss_rank(lp_pos, lp_neg, cfg.beta)
                                        : loss_margin(lp_pos, lp_neg, sims[pos], sims[neg], cfg.beta));
                }
                cal_terms.push_back(ops::scale(ops::sum(ops::concat(terms)), 1.0 / static_cast<double>(terms.size())));
                break;
            }
            case CalibrationLoss::list_rank: {
                if (m < 2) {
                    ++out.breakdown.skipped;
                    break;
                }
                std::vector<std::size_t> ordered;
                for (auto i : list_rank_order(ex, cfg.similarity_source)) ordered.push_back(idx[i]);
                cal_terms.push_back(loss_list_rank(ops::take(scores, ordered), cfg.beta));
                break;
            }
            case CalibrationLoss::expected_reward: {
                if (m < 1) {
                    ++out.breakdown.skipped;
                    break;
                }
                cal_terms.push_back(loss_expected_reward(ops::take(scores, idx), sims));
                break;
            }
        }

        if (cfg.reg_type == Regularizer::cross_entropy) {
            std::vector<std::size_t> it{target_row[b]};
            reg_terms.push_back(ops::scale(ops::take(scores, it), -1.0));
        } else if (cfg.reg_type == Regularizer::kl_divergence) {
            const std::size_t rows = batch[b].target.size();
            auto log_p = ops::slice_rows(dec.log_probs, dec.offsets[target_row[b]], rows);
            auto log_q = ops::slice_rows(frozen_dec.log_probs, frozen_dec.offsets[b], rows);
            reg_terms.push_back(kl_rows(log_p, log_q));
        }
    }

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    auto mean_of = [&](const std::vector<Tensor>& terms) -> Tensor {
        if (terms.empty()) return Tensor::scalar(0.0);
        return ops::scale(ops::sum(ops::concat(terms)), inv_b);
    };
    auto cal = mean_of(cal_terms);
    auto reg = mean_of(reg_terms);
    out.total = ops::add(ops::sum(cal), ops::scale(ops::sum(reg), cfg.lambda));
    out.breakdown.calibration = cal.item();
    out.breakdown.regularization = reg.item();
    out.breakdown.total = out.total.item();
    return out;
}

LossBreakdown calibrate_step(Seq2SeqModel& model, const Seq2SeqModel& frozen, Adam& optimizer,
                             std::span<const CalibrationExample> batch, const CalibrationConfig& cfg,
                             std::uint64_t pair_seed) {
    zero_grads(model.params());
    auto objective = calibration_objective(model, frozen, batch, cfg, pair_seed);
    if (!std::isfinite(objective.breakdown.total))
        throw TrainingDiverged("calibrate_step: non-finite loss " + std::to_string(objective.breakdown.total));
    objective.total.backward();
    optimizer.step(model.params(), cfg.learning_rate);
    return objective.breakdown;
}

}  // namespace slic
