// Command-line driver for the calibration pipeline stages.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "slic/flops.hpp"
#include "slic/pipeline.hpp"

namespace fs = std::filesystem;
using namespace slic;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool overwrite = false;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
    cmd->add_option("--config", c.config, "JSON config file (defaults apply when omitted)");
    cmd->add_option("--seed", c.seed, "seed applied to every stage");
    cmd->add_option("--out", c.out, out_help)->required();
    cmd->add_flag("--overwrite", c.overwrite, "replace existing outputs");
}

Config resolve(const Common& c) {
    Config cfg = c.config.empty() ? Config{} : load_config(c.config);
    if (c.seed) cfg.override_seed(*c.seed);
    cfg.sync_and_validate();
    return cfg;
}

LabeledCheckpoint parse_labeled(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) return {fs::path(s).stem().string(), s};
    return {s.substr(0, eq), s.substr(eq + 1)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequence likelihood calibration on synthetic seq2seq tasks"};
    app.require_subcommand(1);

    Common gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "write train/val/test JSONL splits");
    add_common(gen_cmd, gen, "output directory");

    Common ft;
    std::string ft_data, ft_resume;
    auto* ft_cmd = app.add_subcommand("finetune", "MLE fine-tuning");
    add_common(ft_cmd, ft, "output directory");
    ft_cmd->add_option("--data", ft_data, "dataset directory")->required();
    ft_cmd->add_option("--resume", ft_resume, "resume from a finetune_last.ckpt");

    Common dc;
    std::string dc_ckpt, dc_data, dc_split = "train";
    auto* dc_cmd = app.add_subcommand("decode-candidates", "decode and score candidates into a JSONL cache");
    add_common(dc_cmd, dc, "cache file");
    dc_cmd->add_option("--checkpoint", dc_ckpt, "fine-tuned checkpoint")->required();
    dc_cmd->add_option("--data", dc_data, "dataset directory")->required();
    dc_cmd->add_option("--split", dc_split, "train, val or test");

    Common cal;
    std::string cal_ckpt, cal_cache, cal_val_cache, cal_data;
    auto* cal_cmd = app.add_subcommand("calibrate", "sequence likelihood calibration");
    add_common(cal_cmd, cal, "output directory");
    cal_cmd->add_option("--checkpoint", cal_ckpt, "fine-tuned checkpoint the cache was decoded with")->required();
    cal_cmd->add_option("--cache", cal_cache, "training candidate cache")->required();
    cal_cmd->add_option("--val-cache", cal_val_cache, "validation candidate cache");
    cal_cmd->add_option("--data", cal_data, "dataset directory (val split decoded for R_m)");

    Common ev;
    std::vector<std::string> ev_ckpts;
    std::string ev_data, ev_heldout;
    auto* ev_cmd = app.add_subcommand("evaluate", "decode sweep and report tables");
    add_common(ev_cmd, ev, "report directory");
    ev_cmd->add_option("--checkpoint", ev_ckpts, "label=path, repeatable; the first one picks alpha*")->required();
    ev_cmd->add_option("--data", ev_data, "dataset directory")->required();
    ev_cmd->add_option("--heldout-cache", ev_heldout, "candidate cache for held-out Kendall tau");

    Common fl;
    std::uint64_t enc_ctx = 0, dec_ctx = 0, m = 0;
    auto* fl_cmd = app.add_subcommand("flops", "inference FLOPs estimate for the configured model");
    fl_cmd->add_option("--config", fl.config, "JSON config file");
    fl_cmd->add_option("--seed", fl.seed, "ignored; accepted for uniformity");
    fl_cmd->add_option("--out", fl.out, "write JSON here instead of stdout");
    fl_cmd->add_flag("--overwrite", fl.overwrite, "replace an existing output");
    fl_cmd->add_option("--enc-context", enc_ctx, "encoder context length (default max_enc_len)");
    fl_cmd->add_option("--dec-context", dec_ctx, "decoder context length (default max_dec_len)");
    fl_cmd->add_option("--candidates", m, "decoded candidates m (default decode.num_candidates)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen_cmd) {
            run_gen_data(resolve(gen), gen.out, gen.overwrite);
        } else if (*ft_cmd) {
            FinetuneOptions o{ft_data, ft.out, ft.overwrite, std::nullopt};
            if (!ft_resume.empty()) o.resume = ft_resume;
            const auto r = run_finetune(resolve(ft), o);
            std::cout << "selected " << r.selected_path.string() << " (ppl step " << r.perplexity_step
                      << ", rouge step " << r.rouge_step << ")\n";
        } else if (*dc_cmd) {
            const auto cfg = resolve(dc);
            auto examples = read_examples(fs::path(dc_data) / (dc_split + ".jsonl"));
            if (cfg.decode.max_examples > 0 && examples.size() > cfg.decode.max_examples)
                examples.resize(cfg.decode.max_examples);
            const auto records = run_decode_candidates(cfg, dc_ckpt, examples, dc.out, dc.overwrite);
            std::cout << records.size() << " records written to " << dc.out << "\n";
        } else if (*cal_cmd) {
            CalibrateOptions o;
            o.checkpoint = cal_ckpt;
            o.cache = cal_cache;
            if (!cal_val_cache.empty()) o.val_cache = cal_val_cache;
            if (!cal_data.empty()) o.data_dir = cal_data;
            o.out_dir = cal.out;
            o.overwrite = cal.overwrite;
            const auto r = run_calibrate(resolve(cal), o);
            std::cout << "skipped " << r.skipped_examples << " of " << r.total_examples << " examples; best step "
                      << r.best_step << "\n";
        } else if (*ev_cmd) {
            EvaluateOptions o;
            for (const auto& s : ev_ckpts) o.checkpoints.push_back(parse_labeled(s));
            o.data_dir = ev_data;
            if (!ev_heldout.empty()) o.heldout_cache = ev_heldout;
            o.out_dir = ev.out;
            o.overwrite = ev.overwrite;
            const auto r = run_evaluate(resolve(ev), o);
            std::cout << "alpha* = " << r.alpha_star << "; " << r.rows.size() << " sweep rows\n";
        } else if (*fl_cmd) {
            Config cfg = fl.config.empty() ? Config{} : load_config(fl.config);
            cfg.sync_and_validate();
            const auto in = flops_input_for(cfg.model, enc_ctx ? enc_ctx : cfg.model.max_enc_len,
                                            dec_ctx ? dec_ctx : cfg.model.max_dec_len,
                                            fl_cmd->count("--candidates") ? m : cfg.decode.decode.num_candidates);
            const auto est = estimate_flops(in);
            const nlohmann::json j = {{"n_enc_params", in.n_enc_params},     {"n_dec_params", in.n_dec_params},
                                      {"n_enc_ctx", in.n_enc_ctx},           {"n_dec_ctx", in.n_dec_ctx},
                                      {"num_candidates", in.num_candidates}, {"per_enc_token", est.per_enc_token.str()},
                                      {"per_dec_token", est.per_dec_token.str()}, {"encoder", est.encoder.str()},
                                      {"decoder", est.decoder.str()},        {"total", est.total.str()}};
            if (fl.out.empty()) {
                std::cout << j.dump(2) << "\n";
            } else {
                if (fs::exists(fl.out) && !fl.overwrite) throw StageError(fl.out + " already exists");
                std::ofstream(fl.out) << j.dump(2) << "\n";
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
