#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "slic/metrics.hpp"
#include "slic/model.hpp"
#include "slic/types.hpp"

namespace slic {

enum class CalibrationLoss { rank, margin, list_rank, expected_reward };
enum class Regularizer { none, cross_entropy, kl_divergence };
// Which stored score ranks candidates: decoder-state span F, or ROUGE.
enum class SimilaritySource { span_f, rouge };

std::string to_string(CalibrationLoss v);
std::string to_string(Regularizer v);
std::string to_string(SimilaritySource v);
CalibrationLoss calibration_loss_from_string(const std::string& s);
Regularizer regularizer_from_string(const std::string& s);
SimilaritySource similarity_source_from_string(const std::string& s);

struct CalibrationConfig {
    CalibrationLoss loss_type = CalibrationLoss::rank;
    double beta = 10.0;
    Regularizer reg_type = Regularizer::kl_divergence;
    double lambda = 0.1;
    double learning_rate = 1e-4;
    std::size_t pairs_per_example = 4;
    SimilaritySource similarity_source = SimilaritySource::span_f;
    std::size_t batch_size = 8;

    bool pairwise() const { return loss_type == CalibrationLoss::rank || loss_type == CalibrationLoss::margin; }
    void validate() const;
};

struct CandidateRecord {
    TokenSeq tokens;
    // log P(tokens | x) under the fine-tuned model at decode time.
    double ft_log_prob = 0.0;
    // Fixed at decode time; calibration only reads it.
    SimilarityScore similarity;
    std::optional<MetricTriple> rouge;
};

struct CalibrationExample {
    std::uint64_t id = 0;
    TokenSeq context;
    TokenSeq target;
    std::vector<CandidateRecord> candidates;
};

// Scalar label of a candidate under the chosen source. ROUGE uses the mean
// of R1/R2/RL scaled to [0, 1].
double similarity_value(const CandidateRecord& c, SimilaritySource source);

// Up to k distinct unordered pairs with unequal similarity, drawn uniformly
// without replacement and oriented (better, worse). Empty when all are tied.
std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(std::span<const double> similarities, std::size_t k,
                                                              std::mt19937_64& rng);

// Candidate indices by similarity descending; ties go to the higher
// ft_log_prob, then the lexicographically smaller token sequence.
std::vector<std::size_t> list_rank_order(const CalibrationExample& example, SimilaritySource source);

// Differentiable forms; log-prob arguments are scalar (or [m]) tensors.
Tensor loss_rank(const Tensor& logp_pos, const Tensor& logp_neg, double beta);
Tensor loss_margin(const Tensor& logp_pos, const Tensor& logp_neg, double s_pos, double s_neg, double beta);
// logps ordered best-first by similarity.
Tensor loss_list_rank(const Tensor& logps, double beta);
Tensor loss_expected_reward(const Tensor& logps, std::span<const double> similarities);

double loss_rank(double logp_pos, double logp_neg, double beta);
double loss_margin(double logp_pos, double logp_neg, double s_pos, double s_neg, double beta);
double loss_list_rank(std::span<const double> logps, double beta);
double loss_expected_reward(std::span<const double> logps, std::span<const double> similarities);

// Summed token NLL of target under model.
Tensor reg_cross_entropy(const Seq2SeqModel& model, const TokenSeq& x, const TokenSeq& target);
// Sum over target positions of KL(P_model || P_frozen) over the full
// vocabulary. The frozen model gets no gradient.
Tensor reg_kl(const Seq2SeqModel& model, const Seq2SeqModel& frozen, const TokenSeq& x, const TokenSeq& target);

struct LossBreakdown {
    double total = 0.0;
    double calibration = 0.0;
    double regularization = 0.0;
    std::size_t skipped = 0;  // examples with no usable pair / list
};

struct CalibrationObjective {
    Tensor total;
    LossBreakdown breakdown;
};

// Mean over the batch of L_cal + lambda * L_reg with candidate log-probs
// recomputed under `model`. Pair sampling is seeded by (pair_seed, example id).
CalibrationObjective calibration_objective(const Seq2SeqModel& model, const Seq2SeqModel& frozen,
                                           std::span<const CalibrationExample> batch, const CalibrationConfig& cfg,
                                           std::uint64_t pair_seed);

// Objective, backward pass, and one optimizer update.
LossBreakdown calibrate_step(Seq2SeqModel& model, const Seq2SeqModel& frozen, Adam& optimizer,
                             std::span<const CalibrationExample> batch, const CalibrationConfig& cfg,
                             std::uint64_t pair_seed);

}  // namespace slic
