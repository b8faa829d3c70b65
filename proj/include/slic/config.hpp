#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slic/calibration.hpp"
#include "slic/data.hpp"
#include "slic/decoding.hpp"
#include "slic/metrics.hpp"
#include "slic/model.hpp"

namespace slic {

enum class CheckpointSelection { perplexity, rouge };

struct FinetuneConfig {
    std::size_t steps = 1500;
    std::size_t batch_size = 64;
    double learning_rate = 3e-3;
    std::size_t eval_every = 250;
    // Validation examples greedily decoded for ROUGE at each evaluation.
    std::size_t eval_examples = 200;
    CheckpointSelection selection = CheckpointSelection::perplexity;
    std::uint64_t seed = 0;
};

struct DecodeSection {
    DecodeConfig decode;
    // Examples of the split to decode (0 = all).
    std::size_t max_examples = 0;
};

struct CalibrationSection {
    CalibrationConfig calibration;
    std::size_t steps = 500;
    std::size_t eval_every = 100;
    // Validation examples decoded for R_m at each evaluation (0 disables).
    std::size_t eval_examples = 100;
    // Training examples whose Kendall tau is tracked during the run.
    std::size_t tau_examples = 200;
    std::uint64_t seed = 0;
};

struct EvaluateConfig {
    std::vector<DecodeMethod> methods{DecodeMethod::beam, DecodeMethod::diverse_beam, DecodeMethod::nucleus};
    std::vector<std::size_t> num_candidates{1, 2, 5, 10, 20};
    // Candidate exponents for alpha*, picked by validation ROUGE-L of the
    // first (fine-tuned) checkpoint.
    std::vector<double> alpha_grid{0.25, 0.5, 0.75, 1.0, 1.5, 2.0};
    std::optional<double> alpha_star;
    std::size_t alpha_select_examples = 200;
    std::size_t alpha_select_candidates = 10;
    std::size_t max_examples = 0;
    std::size_t summary_candidates = 10;
    std::size_t rep_max_n = 4;
    std::string split = "test";
};

struct Config {
    ModelConfig model;
    SyntheticTaskSpec task;
    FinetuneConfig finetune;
    DecodeSection decode;
    SpanMatchConfig similarity;
    CalibrationSection calibration;
    EvaluateConfig evaluate;

    // Task bounds follow the model's length limits.
    void sync_and_validate();
    // Seeds every stage with the same value (the CLI --seed flag).
    void override_seed(std::uint64_t seed);
};

// Unknown keys anywhere raise std::invalid_argument naming the key.
Config config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const Config& c);
Config load_config(const std::filesystem::path& path);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DecodeConfig& c);
DecodeConfig decode_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SpanMatchConfig& c);
SpanMatchConfig span_config_from_json(const nlohmann::json& j);

std::string to_string(CheckpointSelection s);

}  // namespace slic
