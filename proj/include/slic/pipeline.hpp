#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slic/calibration.hpp"
#include "slic/checkpoint.hpp"
#include "slic/config.hpp"

namespace slic {

namespace fs = std::filesystem;

// I/O and cross-stage consistency failures.
class StageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- candidate cache ----

struct CacheRecord {
    CalibrationExample example;
    std::string checkpoint_id;
    DecodeConfig decode;
    SpanMatchConfig similarity;
};

nlohmann::json to_json(const CacheRecord& r);
CacheRecord cache_record_from_json(const nlohmann::json& j);
void write_cache(const fs::path& path, std::span<const CacheRecord> records);
std::vector<CacheRecord> read_cache(const fs::path& path);

// Decodes candidates for one example and scores each with the same model:
// teacher-forced log-prob, span similarity against the target, and ROUGE.
// Nucleus sampling is seeded per example from (decode.seed, example id).
CalibrationExample build_candidates(const Seq2SeqModel& model, const Example& example, const DecodeConfig& decode,
                                    const SpanMatchConfig& similarity);

// Recomputes one candidate's similarity from tokens and the model.
SimilarityScore recompute_similarity(const Seq2SeqModel& model, const TokenSeq& context, const TokenSeq& candidate,
                                     const TokenSeq& target, const SpanMatchConfig& similarity);

// ---- shared evaluation helpers ----

// Fraction of target tokens that are the teacher-forced argmax.
double token_accuracy(const Seq2SeqModel& model, std::span<const Example> dataset);

// Mean over examples of Kendall tau between the model's current candidate
// log-probs and the stored similarities. Examples with fewer than two
// candidates or constant similarity are left out.
double mean_kendall_tau(const Seq2SeqModel& model, std::span<const CalibrationExample> examples,
                        SimilaritySource source);

// Current log-probs of every candidate of an example.
std::vector<double> candidate_log_probs(const Seq2SeqModel& model, const CalibrationExample& example);

// Mean ROUGE triple of select_best outputs over a dataset, plus the outputs.
struct DecodeQuality {
    MetricTriple rouge;
    double r_m = 0.0;
    double rep_pct = 0.0;
    double quality_tau = 0.0;
    double mean_candidates = 0.0;
    std::vector<TokenSeq> outputs;
};
DecodeQuality decode_quality(const Seq2SeqModel& model, std::span<const Example> dataset, const DecodeConfig& decode,
                             std::size_t rep_max_n);

// Largest divisor of m not above the configured group count.
std::size_t groups_for(std::size_t m, std::size_t configured);

// ---- stages ----

void run_gen_data(const Config& cfg, const fs::path& out_dir, bool overwrite);

struct FinetuneOptions {
    fs::path data_dir;
    fs::path out_dir;
    bool overwrite = false;
    std::optional<fs::path> resume;
};

struct FinetuneEval {
    std::uint64_t step = 0;
    double val_perplexity = 0.0;
    double val_token_accuracy = 0.0;
    MetricTriple val_rouge;
    double val_r_m = 0.0;
};

struct FinetuneResult {
    fs::path selected_path;
    fs::path perplexity_path;
    fs::path rouge_path;
    fs::path last_path;
    std::uint64_t perplexity_step = 0;
    std::uint64_t rouge_step = 0;
    std::vector<std::pair<std::uint64_t, double>> losses;
    std::vector<FinetuneEval> evals;
};

// Writes finetune_ppl.ckpt, finetune_rouge.ckpt, finetune_last.ckpt (with
// optimizer state), finetune.ckpt (the selected one), finetune_log.csv and
// finetune_eval.csv.
FinetuneResult run_finetune(const Config& cfg, const FinetuneOptions& opts);

// Decodes candidates for `examples` and writes the cache. Refuses to replace
// an existing file unless `overwrite`.
std::vector<CacheRecord> run_decode_candidates(const Config& cfg, const fs::path& checkpoint,
                                               std::span<const Example> examples, const fs::path& out,
                                               bool overwrite);

struct CalibrateOptions {
    fs::path checkpoint;
    fs::path cache;
    std::optional<fs::path> val_cache;
    std::optional<fs::path> data_dir;  // val.jsonl for R_m-based selection
    fs::path out_dir;
    bool overwrite = false;
};

struct CalibrateLogRow {
    std::uint64_t step = 0;
    LossBreakdown loss;
};

struct CalibrateEval {
    std::uint64_t step = 0;
    std::optional<double> val_calibration_loss;
    double train_tau = 0.0;
    std::optional<double> val_r_m;
};

struct CalibrateResult {
    fs::path final_path;
    fs::path best_path;
    std::uint64_t best_step = 0;
    std::size_t skipped_examples = 0;
    std::size_t total_examples = 0;
    std::vector<CalibrateLogRow> log;
    std::vector<CalibrateEval> evals;
};

// Writes calibrated_final.ckpt, calibrated_best.ckpt, calibrate_log.csv,
// calibrate_eval.csv and calibrate_summary.json.
CalibrateResult run_calibrate(const Config& cfg, const CalibrateOptions& opts);

struct LabeledCheckpoint {
    std::string label;
    fs::path path;
};

struct EvalRow {
    std::string checkpoint_id;
    std::string label;
    DecodeMethod method = DecodeMethod::beam;
    std::size_t num_candidates = 1;
    double alpha = 0.0;
    DecodeQuality quality;
};

struct CheckpointSummary {
    std::string checkpoint_id;
    std::string label;
    double perplexity = 0.0;
    std::optional<double> heldout_tau;
};

struct EvalReport {
    double alpha_star = 0.0;
    std::vector<std::pair<double, double>> alpha_selection;  // (alpha, val ROUGE-L)
    double reference_rep_pct = 0.0;
    std::vector<EvalRow> rows;
    std::vector<CheckpointSummary> summaries;

    const EvalRow& find(const std::string& label, DecodeMethod method, std::size_t m, double alpha) const;
};

struct EvaluateOptions {
    std::vector<LabeledCheckpoint> checkpoints;
    fs::path data_dir;
    std::optional<fs::path> heldout_cache;
    fs::path out_dir;
    bool overwrite = false;
};

// Writes decode_curves.csv, alpha_selection.csv, alpha_sensitivity.csv,
// summary.csv and references.csv.
EvalReport run_evaluate(const Config& cfg, const EvaluateOptions& opts);

// FNV-1a digest of a file's bytes.
std::string file_digest(const fs::path& path);

}  // namespace slic
