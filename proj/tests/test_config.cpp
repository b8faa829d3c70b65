#include <doctest.h>

#include <string>

#include "slic/config.hpp"

using namespace slic;
using nlohmann::json;

TEST_CASE("defaults round-trip through JSON") {
    Config c;
    c.sync_and_validate();
    const json j = config_to_json(c);
    CHECK(config_to_json(config_from_json(j)) == j);
}

TEST_CASE("unknown keys are rejected at every level") {
    for (const auto* text : {R"({"modle": {}})", R"({"model": {"width": 3}})", R"({"calibration": {"bta": 1.0}})",
                             R"({"evaluate": {"alpha": 0.5}})"}) {
        CAPTURE(text);
        CHECK_THROWS_AS(config_from_json(json::parse(text)), std::invalid_argument);
    }
    try {
        config_from_json(json::parse(R"({"finetune": {"stepz": 3}})"));
        FAIL("no throw");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("stepz") != std::string::npos);
    }
}

TEST_CASE("partial configs fill in defaults and parse enums") {
    const auto c = config_from_json(json::parse(
        R"({"calibration": {"loss_type": "expected_reward", "reg_type": "cross_entropy", "similarity_source": "rouge"},
            "decode": {"method": "nucleus", "nucleus_p": 0.9}})"));
    CHECK(c.calibration.calibration.loss_type == CalibrationLoss::expected_reward);
    CHECK(c.calibration.calibration.reg_type == Regularizer::cross_entropy);
    CHECK(c.calibration.calibration.similarity_source == SimilaritySource::rouge);
    CHECK(c.decode.decode.method == DecodeMethod::nucleus);
    CHECK(c.model.d_model == Config{}.model.d_model);
    CHECK_THROWS(config_from_json(json::parse(R"({"calibration": {"loss_type": "hinge"}})")));
}

TEST_CASE("invalid values are rejected") {
    CHECK_THROWS(config_from_json(json::parse(R"({"calibration": {"beta": -1}})")));
    CHECK_THROWS(config_from_json(json::parse(R"({"model": {"d_model": 30, "num_heads": 4}})")));
    CHECK_THROWS(config_from_json(json::parse(R"({"finetune": {"steps": "many"}})")));
}

TEST_CASE("the seed override reaches every stage") {
    Config c;
    c.override_seed(42);
    CHECK(c.task.seed == 42);
    CHECK(c.finetune.seed == 42);
    CHECK(c.calibration.seed == 42);
    CHECK(c.decode.decode.seed == 42);
}
