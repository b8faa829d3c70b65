#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "calib_fixture.hpp"
#include "slic/calibration.hpp"
#include "test_util.hpp"

using namespace slic;

namespace {

double rank_value(double p, double n, double beta) { return loss_rank(p, n, beta); }

Tensor t1(double v, bool grad = false) { return Tensor::from({1}, {v}, grad); }

std::vector<double> random_logps(std::mt19937_64& rng, std::size_t m) {
    std::uniform_real_distribution<double> u(-12.0, -0.01);
    std::vector<double> v(m);
    for (auto& x : v) x = u(rng);
    return v;
}

CalibrationConfig cfg_for(CalibrationLoss loss, Regularizer reg) {
    CalibrationConfig c;
    c.loss_type = loss;
    c.reg_type = reg;
    c.beta = 10.0;
    c.lambda = reg == Regularizer::none ? 0.0 : 0.5;
    c.pairs_per_example = 3;
    return c;
}

}  // namespace

TEST_CASE("sample_pairs hand cases") {
    std::mt19937_64 rng(1);
    const std::vector<double> two{0.9, 0.1};
    const auto p = sample_pairs(two, 4, rng);
    REQUIRE(p.size() == 1);
    CHECK(p[0] == std::pair<std::size_t, std::size_t>{0, 1});
    const std::vector<double> flipped{0.1, 0.9};
    CHECK(sample_pairs(flipped, 4, rng)[0] == std::pair<std::size_t, std::size_t>{1, 0});
    const std::vector<double> tied{0.5, 0.5, 0.5};
    CHECK(sample_pairs(tied, 4, rng).empty());
    const std::vector<double> four{0.1, 0.2, 0.3, 0.4};
    const auto all = sample_pairs(four, 100, rng);
    CHECK(all.size() == 6);
    std::set<std::pair<std::size_t, std::size_t>> distinct(all.begin(), all.end());
    CHECK(distinct.size() == 6);
}

TEST_CASE("sample_pairs draws untied pairs uniformly and orients them") {
    std::mt19937_64 rng(2);
    const std::vector<double> s{0.3, 0.3, 0.9, 0.1, 0.5};
    std::map<std::pair<std::size_t, std::size_t>, int> count;
    const int draws = 36000;
    for (int i = 0; i < draws; ++i)
        for (const auto& [a, b] : sample_pairs(s, 1, rng)) {
            CHECK(s[a] > s[b]);
            ++count[{std::min(a, b), std::max(a, b)}];
        }
    // Ten pairs in total, one of them tied.
    CHECK(count.size() == 9);
    CHECK(count.count({0, 1}) == 0);
    const double expected = draws / 9.0, sd = std::sqrt(draws * (1.0 / 9) * (8.0 / 9));
    for (const auto& [pair, c] : count) CHECK(std::abs(c - expected) < 4 * sd);
}

TEST_CASE("rank loss hand cases") {
    CHECK(rank_value(-1, -2, 1) == 0.0);
    CHECK(rank_value(-2, -1, 1) == 2.0);
    CHECK(rank_value(-1.5, -1.5, 0) == 0.0);
    CHECK(loss_rank(t1(-2), t1(-1), 1.0).item() == 2.0);
}

TEST_CASE("margin loss hand cases") {
    CHECK(loss_margin(-1.0, -1.5, 0.8, 0.3, 2.0) == doctest::Approx(0.5));
    CHECK(loss_margin(-1.0, -0.5, 0.4, 0.4, 3.0) == doctest::Approx(0.5));
    CHECK(loss_margin(-1.0, -30.0, 0.8, 0.3, 2.0) == 0.0);
    CHECK(loss_margin(t1(-1.0), t1(-1.5), 0.8, 0.3, 2.0).item() == doctest::Approx(0.5));
}

TEST_CASE("list rank hand cases") {
    const std::vector<double> equal{-1, -1, -1};
    CHECK(loss_list_rank(equal, 1.0) == 4.0);
    const std::vector<double> separated{-1, -3, -5};
    CHECK(loss_list_rank(separated, 2.0) == 0.0);
    const std::vector<double> one{-1};
    CHECK_THROWS_AS(loss_list_rank(one, 1.0), std::invalid_argument);
}

TEST_CASE("list rank over two candidates is the rank loss") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> beta(0.0, 5.0);
    for (int i = 0; i < 1000; ++i) {
        const auto lp = random_logps(rng, 2);
        const double b = beta(rng);
        CHECK(loss_list_rank(lp, b) == loss_rank(lp[0], lp[1], b));
        auto logps = Tensor::from({2}, lp);
        CHECK(loss_list_rank(logps, b).item() == loss_rank(t1(lp[0]), t1(lp[1]), b).item());
    }
}

TEST_CASE("expected reward hand cases and bounds") {
    const std::vector<double> one_lp{-3.0}, one_s{0.7};
    CHECK(loss_expected_reward(one_lp, one_s) == doctest::Approx(-0.7));
    const std::vector<double> two_lp{-2.0, -2.0}, two_s{1.0, 0.0};
    CHECK(loss_expected_reward(two_lp, two_s) == doctest::Approx(-0.5));
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> s(-1.0, 4.0);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t m = 1 + rng() % 8;
        auto lp = random_logps(rng, m);
        if (i % 3 == 0)
            for (auto& v : lp) v *= 300.0;  // underflow territory for raw probabilities
        std::vector<double> sims(m);
        for (auto& v : sims) v = s(rng);
        const double er = loss_expected_reward(lp, sims);
        CHECK(std::isfinite(er));
        CHECK(er >= -*std::max_element(sims.begin(), sims.end()) - 1e-12);
        CHECK(er <= -*std::min_element(sims.begin(), sims.end()) + 1e-12);
        CHECK(std::abs(loss_expected_reward(Tensor::from({m}, lp), sims).item() - er) < 1e-12);
    }
}

TEST_CASE("hinge losses are nonnegative") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int i = 0; i < 1000; ++i) {
        const auto lp = random_logps(rng, 5);
        const double b = u(rng);
        CHECK(loss_rank(lp[0], lp[1], b) >= 0.0);
        CHECK(loss_margin(lp[0], lp[1], u(rng) + 1.0, u(rng) / 10.0, b) >= 0.0);
        CHECK(loss_list_rank(lp, b) >= 0.0);
    }
}

TEST_CASE("rank loss pushes toward the better candidate") {
    std::mt19937_64 rng(6);
    for (int i = 0; i < 200; ++i) {
        const auto lp = random_logps(rng, 2);
        auto pos = t1(lp[0], true), neg = t1(lp[1], true);
        loss_rank(pos, neg, 3.0).backward();
        CHECK(pos.grad()[0] <= 0.0);
        CHECK(neg.grad()[0] >= 0.0);
    }
}

TEST_CASE("losses do not depend on candidate storage order") {
    const auto model = testutil::calib_micro_model(7);
    const auto frozen = model.clone(false);
    auto batch = testutil::calib_batch(model, 8, 5);
    std::mt19937_64 rng(9);
    for (auto loss : {CalibrationLoss::rank, CalibrationLoss::margin, CalibrationLoss::list_rank,
                      CalibrationLoss::expected_reward}) {
        auto cfg = cfg_for(loss, Regularizer::none);
        cfg.pairs_per_example = 100;  // every pair, so sampling cannot differ
        NoGradGuard guard;
        const double base = calibration_objective(model, frozen, batch, cfg, 1).breakdown.total;
        for (int shuffle = 0; shuffle < 10; ++shuffle) {
            auto shuffled = batch;
            for (auto& ex : shuffled) std::shuffle(ex.candidates.begin(), ex.candidates.end(), rng);
            CHECK(std::abs(calibration_objective(model, frozen, shuffled, cfg, 1).breakdown.total - base) < 1e-12);
        }
    }
}

TEST_CASE("list rank order breaks similarity ties by ft log-prob then tokens") {
    CalibrationExample ex;
    ex.candidates = {{{5, kEosId}, -2.0, {0.5, {}}, std::nullopt},
                     {{6, kEosId}, -1.0, {0.5, {}}, std::nullopt},
                     {{4, kEosId}, -1.0, {0.5, {}}, std::nullopt},
                     {{7, kEosId}, -9.0, {0.9, {}}, std::nullopt}};
    CHECK(list_rank_order(ex, SimilaritySource::span_f) == std::vector<std::size_t>{3, 2, 1, 0});
}

TEST_CASE("cross-entropy regularizer") {
    auto c = testutil::calib_micro_config();
    c.vocab_size = 6;
    Seq2SeqModel uniform(c);
    for (auto& [name, t] : uniform.params())
        for (auto& v : t.mutable_data()) v = 0.0;
    CHECK(std::abs(reg_cross_entropy(uniform, {3, 4}, {5, kEosId}).item() - 2 * std::log(4.0)) < 1e-12);
    const auto model = testutil::calib_micro_model(10);
    std::mt19937_64 rng(11);
    for (int i = 0; i < 50; ++i) {
        TokenSeq x{static_cast<TokenId>(3 + rng() % 5), static_cast<TokenId>(3 + rng() % 5)};
        TokenSeq y{static_cast<TokenId>(3 + rng() % 5), kEosId};
        const double ce = reg_cross_entropy(model, x, y).item();
        CHECK(ce >= 0.0);
        CHECK(std::abs(ce + model.sequence_log_prob(x, y)) < 1e-9);
    }
}

TEST_CASE("kl regularizer: zero at the start point, positive after a perturbation") {
    const auto model = testutil::calib_micro_model(12);
    const auto frozen = model.clone(false);
    CHECK(std::abs(reg_kl(model, frozen, {3, 4}, {5, 6, kEosId}).item()) < 1e-12);
    auto moved = model.clone(true);
    moved.params().at("out.bias").mutable_data()[5] += 0.3;
    CHECK(reg_kl(moved, frozen, {3, 4}, {5, 6, kEosId}).item() > 0.0);
}

TEST_CASE("kl regularizer matches a direct sum over positions and vocabulary") {
    auto c = testutil::calib_micro_config();
    c.vocab_size = 4;
    c.init_seed = 13;
    Seq2SeqModel p(c), q(c);
    std::mt19937_64 rng(14);
    std::normal_distribution<double> d;
    for (auto* m : {&p, &q})
        for (auto& [name, t] : m->params())
            for (auto& v : t.mutable_data()) v = d(rng);
    const TokenSeq x{3, 3}, y{3, kEosId};
    const auto lp = p.teacher_forced(x, y).log_probs, lq = q.teacher_forced(x, y).log_probs;
    double want = 0.0;
    int terms = 0;
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t v = 0; v < 4; ++v, ++terms) {
            const double pv = std::exp(lp.at(t * 4 + v)), qv = std::exp(lq.at(t * 4 + v));
            if (pv > 0.0) want += pv * std::log(pv / qv);
        }
    CHECK(terms == 8);
    CHECK(std::abs(reg_kl(p, q, x, y).item() - want) < 1e-9);
}

TEST_CASE("kl regularizer is nonnegative and leaves the frozen model without gradient") {
    const auto frozen = testutil::calib_micro_model(15);
    std::mt19937_64 rng(16);
    std::normal_distribution<double> d(0.0, 0.3);
    for (int i = 0; i < 20; ++i) {
        auto model = frozen.clone(true);
        for (auto& [name, t] : model.params())
            for (auto& v : t.mutable_data()) v += d(rng);
        auto frozen_live = frozen.clone(true);
        const auto kl = reg_kl(model, frozen_live, {3, 4, 5}, {6, kEosId});
        CHECK(kl.item() >= 0.0);
        kl.backward();
        for (const auto& [name, t] : frozen_live.params()) CHECK(t.grad().empty());
    }
}

TEST_CASE("kl regularizer rejects mismatched configs") {
    auto other = testutil::calib_micro_config();
    other.d_model = 6;
    CHECK_THROWS_AS(reg_kl(testutil::calib_micro_model(1), Seq2SeqModel(other), {3}, {kEosId}),
                    std::invalid_argument);
}

TEST_CASE("objective gradients match central differences for every loss and regularizer") {
    const auto frozen = testutil::calib_micro_model(17);
    auto model = frozen.clone(true);
    // Move away from the start point so the KL term has a gradient.
    std::mt19937_64 rng(18);
    std::normal_distribution<double> d(0.0, 0.05);
    for (auto& [name, t] : model.params())
        for (auto& v : t.mutable_data()) v += d(rng);
    const auto batch = testutil::calib_batch(frozen, 19);
    std::vector<Tensor> leaves;
    for (auto& [name, t] : model.params()) leaves.push_back(t);
    for (auto loss : {CalibrationLoss::rank, CalibrationLoss::margin, CalibrationLoss::list_rank,
                      CalibrationLoss::expected_reward})
        for (auto reg : {Regularizer::none, Regularizer::cross_entropy, Regularizer::kl_divergence}) {
            const auto cfg = cfg_for(loss, reg);
            CAPTURE(to_string(loss));
            CAPTURE(to_string(reg));
            const double err = testutil::gradient_error(
                [&](const std::vector<Tensor>&) { return calibration_objective(model, frozen, batch, cfg, 3).total; },
                leaves, 1e-5);
            CHECK(err < 1e-3);
        }
}

TEST_CASE("calibrate_step: no regularizer reports zero L_reg; zero lr changes nothing") {
    const auto frozen = testutil::calib_micro_model(20);
    auto model = frozen.clone(true);
    const auto batch = testutil::calib_batch(frozen, 21);
    Adam adam;
    auto cfg = cfg_for(CalibrationLoss::rank, Regularizer::none);
    const auto b = calibrate_step(model, frozen, adam, batch, cfg, 1);
    CHECK(b.regularization == 0.0);
    auto model2 = frozen.clone(true);
    Adam adam2;
    const auto before = model2.clone(false);
    const auto obj = calibration_objective(model2, frozen, batch, cfg_for(CalibrationLoss::rank, Regularizer::kl_divergence), 1);
    obj.total.backward();
    adam2.step(model2.params(), 0.0);
    for (const auto& [name, t] : model2.params())
        for (std::size_t i = 0; i < t.numel(); ++i) REQUIRE(t.at(i) == before.param(name).at(i));
}

TEST_CASE("calibrate_step reduces the objective on its batch and never touches labels") {
    const auto frozen = testutil::calib_micro_model(22);
    auto model = frozen.clone(true);
    const auto batch = testutil::calib_batch(frozen, 23);
    const auto labels = batch;
    Adam adam;
    auto cfg = cfg_for(CalibrationLoss::rank, Regularizer::kl_divergence);
    cfg.learning_rate = 1e-2;
    cfg.pairs_per_example = 100;
    const double first = calibrate_step(model, frozen, adam, batch, cfg, 1).total;
    double last = first;
    for (int i = 0; i < 30; ++i) last = calibrate_step(model, frozen, adam, batch, cfg, 1).total;
    CHECK(last < first);
    for (std::size_t b = 0; b < batch.size(); ++b)
        for (std::size_t c = 0; c < batch[b].candidates.size(); ++c)
            CHECK(batch[b].candidates[c].similarity.value == labels[b].candidates[c].similarity.value);
}

TEST_CASE("all-tied examples are skipped by pairwise losses") {
    const auto frozen = testutil::calib_micro_model(24);
    auto batch = testutil::calib_batch(frozen, 25);
    for (auto& c : batch[0].candidates) c.similarity.value = 1.0;
    auto cfg = cfg_for(CalibrationLoss::rank, Regularizer::none);
    NoGradGuard guard;
    CHECK(calibration_objective(frozen, frozen, batch, cfg, 1).breakdown.skipped == 1);
    cfg.loss_type = CalibrationLoss::expected_reward;
    CHECK(calibration_objective(frozen, frozen, batch, cfg, 1).breakdown.skipped == 0);
}

TEST_CASE("rouge similarity source averages the triple on a unit scale") {
    CandidateRecord c;
    c.similarity.value = 2.5;
    c.rouge = MetricTriple{60, 30, 90};
    CHECK(similarity_value(c, SimilaritySource::span_f) == 2.5);
    CHECK(similarity_value(c, SimilaritySource::rouge) == doctest::Approx(0.6));
}

TEST_CASE("config validation") {
    CalibrationConfig c;
    CHECK_NOTHROW(c.validate());
    c.beta = -1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = CalibrationConfig{};
    c.lambda = -0.1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = CalibrationConfig{};
    c.pairs_per_example = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK(c.learning_rate * CalibrationConfig{}.lambda == doctest::Approx(1e-5));
}
