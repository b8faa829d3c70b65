// Acceptance suite: one PASS/FAIL line per criterion.
//
// usage: acceptance <work_dir> <slic_cli> <preset_dir>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "beam_oracle.hpp"
#include "calib_fixture.hpp"
#include "op_cases.hpp"
#include "rouge_fixture.hpp"
#include "slic/checkpoint.hpp"
#include "slic/data.hpp"
#include "slic/flops.hpp"
#include "slic/pipeline.hpp"
#include "span_oracle.hpp"
#include "test_util.hpp"

using namespace slic;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

int failures = 0;

void report(int id, const std::string& title, const std::function<void(Outcome&)>& body) {
    Outcome o;
    try {
        body(o);
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail << " [exception: " << e.what() << "]";
    }
    if (!o.pass) ++failures;
    std::cout << "criterion " << id << " (" << title << "): " << (o.pass ? "PASS" : "FAIL") << " |"
              << o.detail.str() << std::endl;
}

// ---- 1: metric and search oracles ----

void oracles(Outcome& o) {
    std::mt19937_64 rng(2024);
    double worst_span = 0.0;
    SpanMatchConfig cfg;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t width = 1 + rng() % 6;
        const auto a = testutil::random_states(1 + rng() % 10, width, rng);
        const auto b = testutil::random_states(1 + rng() % 10, width, rng);
        const auto got = span_similarity(a, b, cfg);
        const auto want = testutil::brute_span_f(a, b, cfg.span_lengths);
        double sum = 0.0;
        for (const auto& [n, f] : want) {
            worst_span = std::max(worst_span, std::abs(got.per_n.at(n) - f));
            sum += f;
        }
        worst_span = std::max(worst_span, std::abs(got.value - sum));
    }
    o.detail << " span max |diff| " << worst_span << " over 500 pairs;";
    o.require(worst_span <= 1e-9, "span similarity vs brute force");

    double worst_rouge = 0.0;
    for (const auto& c : testutil::rouge_fixture()) {
        const auto r = rouge_triple(c.candidate, c.target);
        worst_rouge = std::max({worst_rouge, std::abs(r.rouge1 - c.rouge1), std::abs(r.rouge2 - c.rouge2),
                                std::abs(r.rougeL - c.rougeL)});
    }
    o.detail << " rouge max |diff| " << worst_rouge << " over " << testutil::rouge_fixture().size() << " cases;";
    o.require(testutil::rouge_fixture().size() == 20 && worst_rouge <= testutil::kRougeTolerance, "rouge fixture");

    const auto t0 = Clock::now();
    int agree = 0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        const std::size_t vocab = 4 + trial % 2, max_len = 3 + trial % 2;
        const auto m = testutil::random_model(vocab, max_len, 7000 + trial);
        const TokenSeq x{3, static_cast<TokenId>(vocab - 1), 3};
        const auto [arg, best] = testutil::enumeration_argmax(m, x, vocab, max_len);
        DecodeConfig d;
        d.num_candidates = testutil::all_sequences(vocab, max_len).size();
        d.max_len = max_len;
        const auto out = beam_search(m, x, d);
        agree += out.front().tokens == arg && std::abs(out.front().log_prob - best) < 1e-9;
    }
    const double secs = seconds_since(t0);
    o.detail << " beam top-1 = enumeration argmax on " << agree << "/100 micro-models in " << secs << " s";
    o.require(agree == 100, "beam argmax");
    o.require(secs < 60.0, "beam check under 1 minute");
}

// ---- 2: gradient checks ----

void gradients(Outcome& o) {
    const auto t0 = Clock::now();
    constexpr double kLimit = 1e-3;
    double worst = 0.0;
    std::string worst_name;
    auto track = [&](const std::string& name, double err) {
        if (err > worst) {
            worst = err;
            worst_name = name;
        }
        o.require(err < kLimit, name);
    };
    std::mt19937_64 rng(99);
    const auto cases = testutil::op_cases();
    for (const auto& c : cases)
        for (int trial = 0; trial < 20; ++trial) track(c.name, testutil::gradient_error(c.f, c.inputs(rng), 1e-5));

    {
        auto cfg = testutil::calib_micro_config(5);
        Seq2SeqModel m(cfg);
        std::vector<Example> batch{{0, {3, 4, 5}, {5, 4, kEosId}}, {1, {6, 7}, {7, kEosId}}};
        std::vector<Tensor> leaves;
        for (auto& [name, t] : m.params()) leaves.push_back(t);
        track("mle_loss",
              testutil::gradient_error([&](const std::vector<Tensor>&) { return mle_loss(m, batch); }, leaves, 1e-5));
    }

    const auto frozen = testutil::calib_micro_model(17);
    auto model = frozen.clone(true);
    std::normal_distribution<double> d(0.0, 0.05);
    for (auto& [name, t] : model.params())
        for (auto& v : t.mutable_data()) v += d(rng);
    const auto batch = testutil::calib_batch(frozen, 19);
    std::vector<Tensor> leaves;
    for (auto& [name, t] : model.params()) leaves.push_back(t);
    int combos = 0;
    for (auto loss : {CalibrationLoss::rank, CalibrationLoss::margin, CalibrationLoss::list_rank,
                      CalibrationLoss::expected_reward})
        for (auto reg : {Regularizer::none, Regularizer::cross_entropy, Regularizer::kl_divergence}) {
            CalibrationConfig cc;
            cc.loss_type = loss;
            cc.reg_type = reg;
            cc.beta = 10.0;
            cc.lambda = reg == Regularizer::none ? 0.0 : 0.5;
            cc.pairs_per_example = 3;
            track(to_string(loss) + "+" + to_string(reg),
                  testutil::gradient_error(
                      [&](const std::vector<Tensor>&) {
                          return calibration_objective(model, frozen, batch, cc, 3).total;
                      },
                      leaves, 1e-5));
            ++combos;
        }
    const double secs = seconds_since(t0);
    o.detail << " " << cases.size() << " ops, mle, " << combos << " loss x regularizer objectives; worst rel err "
             << worst << " (" << worst_name << ") in " << secs << " s";
    o.require(secs < 300.0, "under 5 minutes");
}

// ---- 3: loss properties ----

void loss_properties(Outcome& o) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> lp(-12.0, -0.01), beta(0.0, 10.0), sim(-1.0, 4.0);
    int list_mismatch = 0, er_out = 0, hinge_neg = 0;
    for (int i = 0; i < 1000; ++i) {
        const std::vector<double> two{lp(rng), lp(rng)};
        const double b = beta(rng);
        list_mismatch += loss_list_rank(two, b) != loss_rank(two[0], two[1], b);
        list_mismatch += loss_list_rank(Tensor::from({2}, two), b).item() !=
                         loss_rank(Tensor::from({1}, {two[0]}), Tensor::from({1}, {two[1]}), b).item();

        const std::size_t m = 1 + rng() % 8;
        std::vector<double> lps(m), sims(m);
        for (auto& v : lps) v = lp(rng) * (i % 3 == 0 ? 300.0 : 1.0);
        for (auto& v : sims) v = sim(rng);
        const double er = loss_expected_reward(lps, sims);
        const double lo = -*std::max_element(sims.begin(), sims.end());
        const double hi = -*std::min_element(sims.begin(), sims.end());
        er_out += !(er >= lo - 1e-12 && er <= hi + 1e-12);

        hinge_neg += loss_rank(lps[0], two[1], b) < 0.0;
        hinge_neg += loss_margin(lps[0], two[1], sim(rng) + 1.0, sim(rng) / 4.0, b) < 0.0;
        if (m >= 2) hinge_neg += loss_list_rank(lps, b) < 0.0;
    }
    double worst_kl = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto model = testutil::calib_micro_model(300 + s);
        const auto frozen = model.clone(false);
        const TokenSeq x{3, static_cast<TokenId>(4 + s % 4), 5}, y{static_cast<TokenId>(3 + s % 5), 6, kEosId};
        worst_kl = std::max(worst_kl, std::abs(reg_kl(model, frozen, x, y).item()));
    }
    o.detail << " list_rank(m=2) != rank on " << list_mismatch << "/2000; reg_kl(ft, ft) max |.| " << worst_kl
             << "; expected reward outside [-max s, -min s] on " << er_out << "/1000; negative hinge values "
             << hinge_neg;
    o.require(list_mismatch == 0, "list_rank m=2 equals rank");
    o.require(worst_kl <= 1e-12, "reg_kl at start point");
    o.require(er_out == 0, "expected reward bounds");
    o.require(hinge_neg == 0, "hinge nonnegativity");
}

// ---- 4: FLOPs ----

void flops(Outcome& o) {
    auto input = [](std::uint64_t m) {
        FlopsInput f;
        f.n_enc_params = f.n_dec_params = 1000;
        f.n_enc_layer = f.n_dec_layer = 2;
        f.n_enc_ctx = f.n_dec_ctx = 8;
        f.d_enc_attn = f.d_dec_attn = 4;
        f.num_candidates = m;
        return f;
    };
    const auto e = estimate_flops(input(2));
    o.detail << " total " << e.total << " (encoder " << e.encoder << ", decoder " << e.decoder << ");";
    o.require(e.total == 50048, "total 50048");
    const auto zero = estimate_flops(input(0)), one = estimate_flops(input(1));
    o.require(zero.total == zero.encoder && zero.decoder == 0, "m = 0 leaves the encoder term");
    bool linear = true;
    for (std::uint64_t m = 0; m <= 64; ++m)
        linear = linear && estimate_flops(input(m)).total == zero.total + m * (one.total - zero.total);
    o.detail << " m=0 total " << zero.total << "; linear in m over 0..64: " << (linear ? "yes" : "no");
    o.require(linear, "linear in m");
}

// ---- 5 and 6: end to end on the preset ----

struct SeedResult {
    std::uint64_t seed = 0;
    double tau_ft = 0.0, tau_cal = 0.0;
    double rl1_cal = 0.0, rl10_cal = 0.0;
    double rep_ft = 0.0, rep_cal = 0.0;
    double alpha_star = 0.0;
    double alpha_gap_ft = 0.0, alpha_gap_cal = 0.0;
};

std::vector<Example> first_n(std::vector<Example> v, std::size_t n) {
    if (n > 0 && v.size() > n) v.resize(n);
    return v;
}

SeedResult run_seed(const fs::path& preset, const fs::path& root, std::uint64_t seed) {
    Config cfg = load_config(preset);
    cfg.override_seed(seed);
    cfg.sync_and_validate();
    const auto dir = root / ("seed" + std::to_string(seed));
    fs::remove_all(dir);
    run_gen_data(cfg, dir / "data", false);
    const auto ft = run_finetune(cfg, {dir / "data", dir / "ft", false, std::nullopt});
    run_decode_candidates(cfg, ft.selected_path,
                          first_n(read_examples(dir / "data" / "train.jsonl"), cfg.decode.max_examples),
                          dir / "cache" / "train.jsonl", false);
    run_decode_candidates(cfg, ft.selected_path, read_examples(dir / "data" / "val.jsonl"),
                          dir / "cache" / "val.jsonl", false);
    run_decode_candidates(cfg, ft.selected_path, read_examples(dir / "data" / "test.jsonl"),
                          dir / "cache" / "test.jsonl", false);
    const auto cal = run_calibrate(cfg, {ft.selected_path, dir / "cache" / "train.jsonl", dir / "cache" / "val.jsonl",
                                         dir / "data", dir / "cal", false});
    const auto report = run_evaluate(cfg, {{{"fine-tuned", ft.selected_path}, {"calibrated", cal.best_path}},
                                           dir / "data",
                                           dir / "cache" / "test.jsonl",
                                           dir / "eval",
                                           false});
    SeedResult r;
    r.seed = seed;
    for (const auto& s : report.summaries)
        (s.label == "calibrated" ? r.tau_cal : r.tau_ft) = s.heldout_tau.value();
    const auto m = cfg.evaluate.summary_candidates;
    const auto rl = [&](const std::string& label, std::size_t n, double a) {
        return report.find(label, DecodeMethod::beam, n, a).quality;
    };
    r.rl1_cal = rl("calibrated", 1, 0.0).rouge.rougeL;
    r.rl10_cal = rl("calibrated", m, 0.0).rouge.rougeL;
    r.rep_ft = rl("fine-tuned", m, 0.0).rep_pct;
    r.rep_cal = rl("calibrated", m, 0.0).rep_pct;
    r.alpha_star = report.alpha_star;
    r.alpha_gap_ft = std::abs(rl("fine-tuned", m, 0.0).rouge.rougeL - rl("fine-tuned", m, r.alpha_star).rouge.rougeL);
    r.alpha_gap_cal = std::abs(rl("calibrated", m, 0.0).rouge.rougeL - rl("calibrated", m, r.alpha_star).rouge.rougeL);
    return r;
}

// ---- 7: rerun determinism through the CLI ----

Config determinism_config() {
    Config c;
    c.model.vocab_size = 20;
    c.model.num_enc_layers = 1;
    c.model.num_dec_layers = 1;
    c.model.d_model = 16;
    c.model.num_heads = 2;
    c.model.d_ff = 32;
    c.model.max_enc_len = 16;
    c.model.max_dec_len = 6;
    c.task.num_groups = {2, 3};
    c.task.group_len = {2, 3};
    c.task.num_train = 400;
    c.task.num_val = 30;
    c.task.num_test = 30;
    c.finetune.steps = 60;
    c.finetune.batch_size = 16;
    c.finetune.eval_every = 30;
    c.finetune.eval_examples = 10;
    c.decode.decode.num_candidates = 4;
    c.decode.decode.max_len = 6;
    c.decode.max_examples = 40;
    c.calibration.calibration.learning_rate = 1e-3;
    c.calibration.calibration.lambda = 0.01;
    c.calibration.calibration.batch_size = 4;
    c.calibration.steps = 10;
    c.calibration.eval_every = 5;
    c.calibration.eval_examples = 10;
    c.calibration.tau_examples = 10;
    c.evaluate.methods = {DecodeMethod::beam, DecodeMethod::diverse_beam, DecodeMethod::nucleus};
    c.evaluate.num_candidates = {1, 4};
    c.evaluate.alpha_grid = {0.5, 1.0};
    c.evaluate.alpha_select_examples = 10;
    c.evaluate.alpha_select_candidates = 4;
    c.evaluate.max_examples = 15;
    c.evaluate.summary_candidates = 4;
    c.sync_and_validate();
    return c;
}

std::map<std::string, std::string> digests(const fs::path& target) {
    std::map<std::string, std::string> out;
    if (fs::is_regular_file(target)) {
        out[target.filename().string()] = file_digest(target);
        return out;
    }
    for (const auto& e : fs::recursive_directory_iterator(target))
        if (e.is_regular_file()) out[fs::relative(e.path(), target).string()] = file_digest(e.path());
    return out;
}

void determinism(Outcome& o, const fs::path& root, const std::string& cli) {
    const auto dir = root / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto config = dir / "config.json";
    std::ofstream(config) << config_to_json(determinism_config()).dump(2) << '\n';
    auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };
    const std::string common = " --config " + q(config) + " --seed 3 --overwrite";
    struct Stage {
        std::string name;
        std::string args;
        fs::path output;
    };
    const std::vector<Stage> stages{
        {"gen-data", "gen-data --out " + q(dir / "data"), dir / "data"},
        {"finetune", "finetune --data " + q(dir / "data") + " --out " + q(dir / "ft"), dir / "ft"},
        {"decode-candidates (train)",
         "decode-candidates --checkpoint " + q(dir / "ft" / "finetune.ckpt") + " --data " + q(dir / "data") +
             " --out " + q(dir / "train.jsonl"),
         dir / "train.jsonl"},
        {"decode-candidates (test)",
         "decode-candidates --checkpoint " + q(dir / "ft" / "finetune.ckpt") + " --data " + q(dir / "data") +
             " --split test --out " + q(dir / "test.jsonl"),
         dir / "test.jsonl"},
        {"calibrate",
         "calibrate --checkpoint " + q(dir / "ft" / "finetune.ckpt") + " --cache " + q(dir / "train.jsonl") +
             " --val-cache " + q(dir / "test.jsonl") + " --data " + q(dir / "data") + " --out " + q(dir / "cal"),
         dir / "cal"},
        {"evaluate",
         "evaluate --checkpoint ft=" + q(dir / "ft" / "finetune.ckpt") + " --checkpoint cal=" +
             q(dir / "cal" / "calibrated_final.ckpt") + " --data " + q(dir / "data") + " --heldout-cache " +
             q(dir / "test.jsonl") + " --out " + q(dir / "eval"),
         dir / "eval"},
        {"flops", "flops --out " + q(dir / "flops.json"), dir / "flops.json"},
    };
    std::size_t files = 0;
    for (const auto& s : stages) {
        const std::string cmd = q(cli) + " " + s.args + common + " > /dev/null";
        if (std::system(cmd.c_str()) != 0) throw std::runtime_error("stage failed: " + s.name);
        const auto first = digests(s.output);
        if (std::system(cmd.c_str()) != 0) throw std::runtime_error("stage failed on rerun: " + s.name);
        const auto second = digests(s.output);
        o.require(!first.empty() && first == second, s.name + " output changed on rerun");
        files += first.size();
    }
    o.detail << " " << stages.size() << " CLI stages rerun, " << files << " output files compared by hash";
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 4) {
        std::cerr << "usage: acceptance <work_dir> <slic_cli> <preset_dir>\n";
        return 2;
    }
    const fs::path root = argv[1];
    const std::string cli = argv[2];
    const fs::path preset = fs::path(argv[3]) / "salient_copy.json";
    fs::create_directories(root);
    std::cout.setf(std::ios::fixed);
    std::cout.precision(4);

    report(1, "span similarity, ROUGE and beam search against oracles", oracles);
    std::cout.unsetf(std::ios::fixed);
    std::cout.precision(3);
    report(2, "finite-difference gradients", gradients);
    report(3, "loss properties", loss_properties);
    report(4, "FLOPs estimate", flops);

    std::cout.setf(std::ios::fixed);
    std::vector<SeedResult> seeds;
    std::string e2e_error;
    const auto t0 = Clock::now();
    try {
        for (std::uint64_t s : {1, 2, 3}) {
            seeds.push_back(run_seed(preset, root / "salient_copy", s));
            const auto& r = seeds.back();
            std::cout << "  seed " << r.seed << ": tau ft " << r.tau_ft << " cal " << r.tau_cal << "; cal RL@1 "
                      << r.rl1_cal << " RL@10 " << r.rl10_cal << "; rep% ft " << r.rep_ft << " cal " << r.rep_cal
                      << "; alpha* " << r.alpha_star << " |RL(0)-RL(a*)| ft " << r.alpha_gap_ft << " cal "
                      << r.alpha_gap_cal << std::endl;
        }
    } catch (const std::exception& e) {
        e2e_error = e.what();
    }
    const double minutes = seconds_since(t0) / 60.0;

    report(5, "end-to-end calibration effect on salient_copy", [&](Outcome& o) {
        if (!e2e_error.empty()) throw std::runtime_error(e2e_error);
        double gain = 0.0;
        for (const auto& r : seeds) {
            gain += (r.tau_cal - r.tau_ft) / static_cast<double>(seeds.size());
            o.require(r.rl10_cal >= r.rl1_cal - 0.5, "(b) RL@10 >= RL@1 - 0.5 on seed " + std::to_string(r.seed));
            o.require(r.rep_cal <= r.rep_ft, "(c) rep% on seed " + std::to_string(r.seed));
        }
        o.detail << " (a) mean held-out tau gain " << gain << " over 3 seeds; runtime " << minutes << " min";
        o.require(gain >= 0.10, "(a) tau gain >= 0.10");
        o.require(minutes < 45.0, "under 45 minutes");
    });
    report(6, "length-normalization sensitivity", [&](Outcome& o) {
        if (!e2e_error.empty()) throw std::runtime_error(e2e_error);
        for (const auto& r : seeds) {
            o.detail << " seed " << r.seed << ": cal " << r.alpha_gap_cal << " <= ft " << r.alpha_gap_ft << ";";
            o.require(r.alpha_gap_cal <= r.alpha_gap_ft, "seed " + std::to_string(r.seed));
        }
    });
    report(7, "bit-identical reruns", [&](Outcome& o) { determinism(o, root, cli); });

    std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
              << std::endl;
    return failures ? 1 : 0;
}
