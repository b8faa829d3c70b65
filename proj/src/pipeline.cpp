#include "slic/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <omp.h>

#include "slic/rng.hpp"

namespace slic {

using nlohmann::json;

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path, std::ios::binary) {
        if (!out_) throw StageError("cannot write " + path.string());
        row(header);
    }
    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

void require_fresh(const fs::path& path, bool overwrite) {
    if (fs::exists(path) && !overwrite)
        throw StageError(path.string() + " already exists (pass --overwrite to replace it)");
}

// Runs body(i) for i in [0, n) across threads, rethrowing the first failure.
template <class F>
void parallel_for(std::size_t n, F&& body) {
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        try {
            body(static_cast<std::size_t>(i));
        } catch (...) {
#pragma omp critical(slic_parallel_error)
            if (!error) error = std::current_exception();
        }
    }
    if (error) std::rethrow_exception(error);
}

DecoderStates states_of(const DecodedBatch& dec, std::size_t i) {
    DecoderStates s;
    s.width = dec.hidden.cols();
    s.length = dec.lengths[i];
    const auto* begin = dec.hidden.data().data() + dec.offsets[i] * s.width;
    s.hidden.assign(begin, begin + s.length * s.width);
    return s;
}

json triple_json(const MetricTriple& t) { return {{"r1", t.rouge1}, {"r2", t.rouge2}, {"rl", t.rougeL}}; }

std::vector<Example> head(std::vector<Example> v, std::size_t n) {
    if (n > 0 && v.size() > n) v.resize(n);
    return v;
}

std::vector<Example> read_split(const fs::path& dir, const std::string& split) {
    const auto path = dir / (split + ".jsonl");
    if (!fs::exists(path)) throw StageError("missing dataset file " + path.string());
    return read_examples(path);
}

bool is_skipped(const CalibrationExample& ex, const CalibrationConfig& cfg) {
    const std::size_t m = ex.candidates.size();
    switch (cfg.loss_type) {
        case CalibrationLoss::rank:
        case CalibrationLoss::margin: {
            if (m < 2) return true;
            const double first = similarity_value(ex.candidates[0], cfg.similarity_source);
            for (const auto& c : ex.candidates)
                if (similarity_value(c, cfg.similarity_source) != first) return false;
            return true;
        }
        case CalibrationLoss::list_rank:
            return m < 2;
        case CalibrationLoss::expected_reward:
            return m < 1;
    }
    return true;
}

MetricTriple greedy_rouge(const Seq2SeqModel& model, std::span<const Example> dataset) {
    std::vector<MetricTriple> triples(dataset.size());
    parallel_for(dataset.size(), [&](std::size_t i) {
        triples[i] = rouge_triple(greedy_decode(model, dataset[i].context, model.config().max_dec_len),
                                  dataset[i].target);
    });
    return mean_triple(triples);
}

double r_m_of(const MetricTriple& t) {
    std::vector<MetricTriple> one{t};
    return overall_score(one);
}

}  // namespace

// ---- candidate cache ----

json to_json(const CacheRecord& r) {
    json cands = json::array();
    for (const auto& c : r.example.candidates) {
        json per_n = json::object();
        for (const auto& [n, f] : c.similarity.per_n) per_n[std::to_string(n)] = f;
        json jc = {{"token_ids", c.tokens},
                   {"ft_log_prob", c.ft_log_prob},
                   {"span_similarity", {{"value", c.similarity.value}, {"per_n", per_n}}}};
        if (c.rouge) jc["rouge"] = triple_json(*c.rouge);
        cands.push_back(std::move(jc));
    }
    return {{"example_id", r.example.id},
            {"context_ids", r.example.context},
            {"target_ids", r.example.target},
            {"checkpoint_id", r.checkpoint_id},
            {"decode_config", to_json(r.decode)},
            {"similarity_config", to_json(r.similarity)},
            {"m_effective", r.example.candidates.size()},
            {"candidates", cands}};
}

CacheRecord cache_record_from_json(const json& j) {
    CacheRecord r;
    r.example.id = j.at("example_id").get<std::uint64_t>();
    r.example.context = j.at("context_ids").get<TokenSeq>();
    r.example.target = j.at("target_ids").get<TokenSeq>();
    r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    r.decode = decode_config_from_json(j.at("decode_config"));
    if (j.contains("similarity_config")) r.similarity = span_config_from_json(j.at("similarity_config"));
    for (const auto& jc : j.at("candidates")) {
        CandidateRecord c;
        c.tokens = jc.at("token_ids").get<TokenSeq>();
        c.ft_log_prob = jc.at("ft_log_prob").get<double>();
        const auto& s = jc.at("span_similarity");
        c.similarity.value = s.at("value").get<double>();
        for (const auto& [k, v] : s.at("per_n").items()) c.similarity.per_n[std::stoul(k)] = v.get<double>();
        if (jc.contains("rouge")) {
            const auto& jr = jc.at("rouge");
            c.rouge = MetricTriple{jr.at("r1").get<double>(), jr.at("r2").get<double>(), jr.at("rl").get<double>()};
        }
        r.example.candidates.push_back(std::move(c));
    }
    return r;
}

void write_cache(const fs::path& path, std::span<const CacheRecord> records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw StageError("cannot write " + path.string());
    for (const auto& r : records) out << to_json(r).dump() << '\n';
}

std::vector<CacheRecord> read_cache(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StageError("cannot read " + path.string());
    std::vector<CacheRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(cache_record_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw StageError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

CalibrationExample build_candidates(const Seq2SeqModel& model, const Example& example, const DecodeConfig& decode,
                                    const SpanMatchConfig& similarity) {
    DecodeConfig d = decode;
    d.seed = mix_seed(decode.seed, example.id);
    const auto decoded = slic::decode(model, example.context, d);

    NoGradGuard guard;
    std::vector<TokenSeq> contexts{example.context}, seqs;
    for (const auto& c : decoded) seqs.push_back(c.tokens);
    seqs.push_back(example.target);
    std::vector<std::size_t> memory_of(seqs.size(), 0);
    DecodedBatch dec;
    const auto scores = model.score_targets(model.encode_batch(contexts), seqs, memory_of, &dec);

    const std::size_t t = decoded.size();
    const DecoderStates target_states = similarity.source == RepresentationSource::decoder_states
                                            ? states_of(dec, t)
                                            : token_embedding_states(model, example.target);
    CalibrationExample out{example.id, example.context, example.target, {}};
    for (std::size_t i = 0; i < t; ++i) {
        CandidateRecord c;
        c.tokens = decoded[i].tokens;
        c.ft_log_prob = scores.data()[i];
        const DecoderStates cs = similarity.source == RepresentationSource::decoder_states
                                     ? states_of(dec, i)
                                     : token_embedding_states(model, c.tokens);
        c.similarity = span_similarity(cs, target_states, similarity);
        c.rouge = rouge_triple(c.tokens, example.target);
        out.candidates.push_back(std::move(c));
    }
    return out;
}

SimilarityScore recompute_similarity(const Seq2SeqModel& model, const TokenSeq& context, const TokenSeq& candidate,
                                     const TokenSeq& target, const SpanMatchConfig& similarity) {
    if (similarity.source == RepresentationSource::token_embeddings)
        return span_similarity(token_embedding_states(model, candidate), token_embedding_states(model, target),
                               similarity);
    NoGradGuard guard;
    return span_similarity(model.teacher_forced(context, candidate).states,
                           model.teacher_forced(context, target).states, similarity);
}

// ---- shared evaluation helpers ----

double token_accuracy(const Seq2SeqModel& model, std::span<const Example> dataset) {
    if (dataset.empty()) throw std::invalid_argument("token_accuracy: empty dataset");
    NoGradGuard guard;
    const std::size_t vocab = model.config().vocab_size;
    std::size_t correct = 0, total = 0;
    for (std::size_t begin = 0; begin < dataset.size(); begin += 64) {
        const std::size_t end = std::min(dataset.size(), begin + 64);
        std::vector<TokenSeq> contexts, targets;
        std::vector<std::size_t> memory_of;
        for (std::size_t i = begin; i < end; ++i) {
            contexts.push_back(dataset[i].context);
            targets.push_back(dataset[i].target);
            memory_of.push_back(i - begin);
        }
        DecodedBatch dec;
        model.score_targets(model.encode_batch(contexts), targets, memory_of, &dec);
        const auto& lp = dec.log_probs.data();
        for (std::size_t s = 0; s < targets.size(); ++s)
            for (std::size_t t = 0; t < targets[s].size(); ++t) {
                const auto row = lp.begin() + static_cast<std::ptrdiff_t>((dec.offsets[s] + t) * vocab);
                const auto best = std::max_element(row, row + static_cast<std::ptrdiff_t>(vocab)) - row;
                correct += best == targets[s][t] ? 1 : 0;
                ++total;
            }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

std::vector<double> candidate_log_probs(const Seq2SeqModel& model, const CalibrationExample& example) {
    if (example.candidates.empty()) return {};
    NoGradGuard guard;
    std::vector<TokenSeq> contexts{example.context}, seqs;
    for (const auto& c : example.candidates) seqs.push_back(c.tokens);
    std::vector<std::size_t> memory_of(seqs.size(), 0);
    const auto scores = model.score_targets(model.encode_batch(contexts), seqs, memory_of);
    return {scores.data().begin(), scores.data().end()};
}

double mean_kendall_tau(const Seq2SeqModel& model, std::span<const CalibrationExample> examples,
                        SimilaritySource source) {
    std::vector<double> taus(examples.size(), 0.0);
    std::vector<char> used(examples.size(), 0);
    parallel_for(examples.size(), [&](std::size_t i) {
        const auto& ex = examples[i];
        if (ex.candidates.size() < 2) return;
        std::vector<double> sims;
        for (const auto& c : ex.candidates) sims.push_back(similarity_value(c, source));
        if (std::all_of(sims.begin(), sims.end(), [&](double s) { return s == sims[0]; })) return;
        const auto lps = candidate_log_probs(model, ex);
        taus[i] = kendall_tau(lps, sims);
        used[i] = 1;
    });
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < examples.size(); ++i)
        if (used[i]) {
            sum += taus[i];
            ++n;
        }
    return n ? sum / static_cast<double>(n) : 0.0;
}

std::size_t groups_for(std::size_t m, std::size_t configured) {
    for (std::size_t g = std::min(m, std::max<std::size_t>(configured, 1)); g > 1; --g)
        if (m % g == 0) return g;
    return 1;
}

DecodeQuality decode_quality(const Seq2SeqModel& model, std::span<const Example> dataset, const DecodeConfig& decode,
                             std::size_t rep_max_n) {
    if (dataset.empty()) throw std::invalid_argument("decode_quality: empty dataset");
    std::vector<MetricTriple> triples(dataset.size());
    std::vector<double> taus(dataset.size(), 0.0);
    std::vector<char> has_tau(dataset.size(), 0);
    std::vector<std::size_t> counts(dataset.size(), 0);
    DecodeQuality q;
    q.outputs.resize(dataset.size());
    parallel_for(dataset.size(), [&](std::size_t i) {
        DecodeConfig d = decode;
        d.seed = mix_seed(decode.seed, dataset[i].id);
        const auto cands = slic::decode(model, dataset[i].context, d);
        const auto& best = select_best(cands);
        q.outputs[i] = strip_eos(best.tokens);
        triples[i] = rouge_triple(best.tokens, dataset[i].target);
        counts[i] = cands.size();
        if (cands.size() >= 2) {
            std::vector<double> lps, rl;
            for (const auto& c : cands) {
                lps.push_back(c.log_prob);
                rl.push_back(rouge_triple(c.tokens, dataset[i].target).rougeL);
            }
            taus[i] = kendall_tau(lps, rl);
            has_tau[i] = 1;
        }
    });
    q.rouge = mean_triple(triples);
    q.r_m = r_m_of(q.rouge);
    q.rep_pct = repetition_rate<TokenId>(q.outputs, rep_max_n);
    double tau_sum = 0.0;
    std::size_t tau_n = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        q.mean_candidates += static_cast<double>(counts[i]);
        if (has_tau[i]) {
            tau_sum += taus[i];
            ++tau_n;
        }
    }
    q.mean_candidates /= static_cast<double>(dataset.size());
    q.quality_tau = tau_n ? tau_sum / static_cast<double>(tau_n) : 0.0;
    return q;
}

std::string file_digest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StageError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return fnv1a_hex(ss.str());
}

// ---- stages ----

void run_gen_data(const Config& cfg, const fs::path& out_dir, bool overwrite) {
    fs::create_directories(out_dir);
    for (const char* split : {"train", "val", "test"}) require_fresh(out_dir / (std::string(split) + ".jsonl"), overwrite);
    const auto splits = generate_dataset(cfg.task);
    write_examples(out_dir / "train.jsonl", splits.train);
    write_examples(out_dir / "val.jsonl", splits.val);
    write_examples(out_dir / "test.jsonl", splits.test);
}

FinetuneResult run_finetune(const Config& cfg, const FinetuneOptions& opts) {
    const auto& ft = cfg.finetune;
    if (ft.steps == 0 || ft.batch_size == 0 || ft.eval_every == 0)
        throw std::invalid_argument("finetune: steps, batch_size and eval_every must be >= 1");
    const auto train = read_split(opts.data_dir, "train");
    const auto val = read_split(opts.data_dir, "val");
    if (train.empty() || val.empty()) throw StageError("finetune: empty train or val split");
    const auto val_rouge_set = head(val, ft.eval_examples);

    FinetuneResult res;
    res.selected_path = opts.out_dir / "finetune.ckpt";
    res.perplexity_path = opts.out_dir / "finetune_ppl.ckpt";
    res.rouge_path = opts.out_dir / "finetune_rouge.ckpt";
    res.last_path = opts.out_dir / "finetune_last.ckpt";
    fs::create_directories(opts.out_dir);
    require_fresh(res.selected_path, opts.overwrite);

    Seq2SeqModel model;
    Adam adam;
    std::uint64_t start = 0;
    if (opts.resume) {
        auto ck = load_checkpoint(*opts.resume);
        if (!ck.optimizer) throw StageError(opts.resume->string() + " holds no optimizer state to resume from");
        if (!(ck.model.config() == cfg.model)) throw StageError("resume checkpoint model config differs from --config");
        model = ck.model.clone(true);
        adam = Adam(*ck.optimizer);
        start = ck.step;
    } else {
        model = Seq2SeqModel(cfg.model);
    }

    double best_ppl = std::numeric_limits<double>::infinity();
    double best_rm = -1.0;
    bool have_ppl = false, have_rouge = false;
    std::vector<Example> batch(ft.batch_size);
    for (std::uint64_t step = start; step < ft.steps; ++step) {
        std::mt19937_64 rng(mix_seed(ft.seed, step));
        for (auto& ex : batch) ex = train[uniform_below(rng, train.size())];
        const double loss = mle_train_step(model, adam, batch, ft.learning_rate);
        res.losses.emplace_back(step + 1, loss);

        if ((step + 1) % ft.eval_every != 0 && step + 1 != ft.steps) continue;
        FinetuneEval ev;
        ev.step = step + 1;
        ev.val_perplexity = perplexity(model, val);
        ev.val_token_accuracy = token_accuracy(model, val);
        ev.val_rouge = greedy_rouge(model, val_rouge_set);
        ev.val_r_m = r_m_of(ev.val_rouge);
        res.evals.push_back(ev);

        ModelCheckpoint snap{model.clone(false), ev.step, ev.val_perplexity, ev.val_rouge, std::nullopt};
        if (ev.val_perplexity < best_ppl) {
            best_ppl = ev.val_perplexity;
            res.perplexity_step = ev.step;
            save_checkpoint(snap, res.perplexity_path);
            have_ppl = true;
        }
        if (ev.val_r_m > best_rm) {
            best_rm = ev.val_r_m;
            res.rouge_step = ev.step;
            save_checkpoint(snap, res.rouge_path);
            have_rouge = true;
        }
    }
    if (!have_ppl || !have_rouge) throw StageError("finetune: no evaluation ran (resume step >= steps?)");

    const auto& last_eval = res.evals.back();
    save_checkpoint(ModelCheckpoint{model.clone(false), last_eval.step, last_eval.val_perplexity, last_eval.val_rouge,
                                    adam.state()},
                    res.last_path);
    fs::copy_file(ft.selection == CheckpointSelection::perplexity ? res.perplexity_path : res.rouge_path,
                  res.selected_path, fs::copy_options::overwrite_existing);

    CsvWriter log(opts.out_dir / "finetune_log.csv", {"step", "loss"});
    for (const auto& [s, l] : res.losses) log.row({std::to_string(s), num(l)});
    CsvWriter evals(opts.out_dir / "finetune_eval.csv",
                    {"step", "val_perplexity", "val_token_accuracy", "rouge1", "rouge2", "rougeL", "r_m"});
    for (const auto& e : res.evals)
        evals.row({std::to_string(e.step), num(e.val_perplexity), num(e.val_token_accuracy), num(e.val_rouge.rouge1),
                   num(e.val_rouge.rouge2), num(e.val_rouge.rougeL), num(e.val_r_m)});
    return res;
}

std::vector<CacheRecord> run_decode_candidates(const Config& cfg, const fs::path& checkpoint,
                                               std::span<const Example> examples, const fs::path& out,
                                               bool overwrite) {
    require_fresh(out, overwrite);
    cfg.decode.decode.validate();
    cfg.similarity.validate();
    const auto ck = load_checkpoint(checkpoint);
    const auto id = checkpoint_id(ck.model);
    std::vector<CacheRecord> records(examples.size());
    parallel_for(examples.size(), [&](std::size_t i) {
        records[i].example = build_candidates(ck.model, examples[i], cfg.decode.decode, cfg.similarity);
        records[i].checkpoint_id = id;
        records[i].decode = cfg.decode.decode;
        records[i].similarity = cfg.similarity;
    });
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_cache(out, records);
    return records;
}

namespace {

std::vector<CalibrationExample> load_cache_for(const fs::path& path, const std::string& id) {
    std::vector<CalibrationExample> out;
    for (auto& r : read_cache(path)) {
        if (r.checkpoint_id != id)
            throw StageError(path.string() + " was decoded by checkpoint " + r.checkpoint_id +
                             ", but the calibration start point is " + id);
        out.push_back(std::move(r.example));
    }
    if (out.empty()) throw StageError(path.string() + " holds no records");
    return out;
}

double objective_value(const Seq2SeqModel& model, const Seq2SeqModel& frozen,
                       std::span<const CalibrationExample> examples, const CalibrationConfig& cfg,
                       std::uint64_t pair_seed) {
    NoGradGuard guard;
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < examples.size(); b += cfg.batch_size) {
        const auto part = examples.subspan(b, std::min(cfg.batch_size, examples.size() - b));
        sum += calibration_objective(model, frozen, part, cfg, pair_seed).breakdown.calibration;
        ++batches;
    }
    return sum / static_cast<double>(batches);
}

}  // namespace

CalibrateResult run_calibrate(const Config& cfg, const CalibrateOptions& opts) {
    const auto& cs = cfg.calibration;
    const auto& cc = cs.calibration;
    cc.validate();
    if (cs.eval_every == 0) throw std::invalid_argument("calibration: eval_every must be >= 1");

    CalibrateResult res;
    res.final_path = opts.out_dir / "calibrated_final.ckpt";
    res.best_path = opts.out_dir / "calibrated_best.ckpt";
    fs::create_directories(opts.out_dir);
    require_fresh(res.final_path, opts.overwrite);

    const auto ft = load_checkpoint(opts.checkpoint);
    const auto id = checkpoint_id(ft.model);
    const auto train = load_cache_for(opts.cache, id);
    std::vector<CalibrationExample> val_cache;
    if (opts.val_cache) val_cache = load_cache_for(*opts.val_cache, id);
    std::vector<Example> val_decode;
    if (opts.data_dir && cs.eval_examples > 0) val_decode = head(read_split(*opts.data_dir, "val"), cs.eval_examples);
    const std::span<const CalibrationExample> tau_set(train.data(), std::min(train.size(), cs.tau_examples));

    res.total_examples = train.size();
    for (const auto& ex : train) res.skipped_examples += is_skipped(ex, cc) ? 1 : 0;

    const Seq2SeqModel frozen = ft.model.clone(false);
    Seq2SeqModel model = ft.model.clone(true);
    Adam adam;
    DecodeConfig eval_decode = cfg.decode.decode;

    std::optional<double> best_rm;
    auto evaluate = [&](std::uint64_t step) {
        CalibrateEval ev;
        ev.step = step;
        if (!val_cache.empty()) ev.val_calibration_loss = objective_value(model, frozen, val_cache, cc, cs.seed);
        ev.train_tau = mean_kendall_tau(model, tau_set, cc.similarity_source);
        if (!val_decode.empty()) ev.val_r_m = decode_quality(model, val_decode, eval_decode, 4).r_m;
        res.evals.push_back(ev);
        // Best by validation R_m when decoded, else the latest state.
        const bool better = !ev.val_r_m || !best_rm || *ev.val_r_m > *best_rm;
        if (better) {
            if (ev.val_r_m) best_rm = ev.val_r_m;
            res.best_step = step;
            save_checkpoint(ModelCheckpoint{model.clone(false), step, ft.val_perplexity, std::nullopt, std::nullopt},
                            res.best_path);
        }
    };

    evaluate(0);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = train.size();
    std::uint64_t epoch = 0;
    std::vector<CalibrationExample> batch;
    for (std::uint64_t step = 0; step < cs.steps; ++step) {
        batch.clear();
        while (batch.size() < cc.batch_size) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), 0);
                std::mt19937_64 rng(mix_seed(cs.seed, epoch++));
                for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_below(rng, i)]);
                cursor = 0;
            }
            batch.push_back(train[order[cursor++]]);
        }
        const auto loss = calibrate_step(model, frozen, adam, batch, cc, mix_seed(cs.seed, step));
        if (!std::isfinite(loss.total)) throw TrainingDiverged("calibration loss is not finite at step " + std::to_string(step));
        res.log.push_back({step + 1, loss});
        if ((step + 1) % cs.eval_every == 0 || step + 1 == cs.steps) evaluate(step + 1);
    }

    save_checkpoint(ModelCheckpoint{model.clone(false), cs.steps, ft.val_perplexity, std::nullopt, std::nullopt},
                    res.final_path);

    CsvWriter log(opts.out_dir / "calibrate_log.csv", {"step", "total", "l_cal", "l_reg", "skipped"});
    for (const auto& r : res.log)
        log.row({std::to_string(r.step), num(r.loss.total), num(r.loss.calibration), num(r.loss.regularization),
                 std::to_string(r.loss.skipped)});
    CsvWriter evals(opts.out_dir / "calibrate_eval.csv", {"step", "val_l_cal", "train_tau", "val_r_m"});
    for (const auto& e : res.evals)
        evals.row({std::to_string(e.step), e.val_calibration_loss ? num(*e.val_calibration_loss) : "",
                   num(e.train_tau), e.val_r_m ? num(*e.val_r_m) : ""});
    json summary = {{"checkpoint_id", id},
                    {"total_examples", res.total_examples},
                    {"skipped_examples", res.skipped_examples},
                    {"skipped_pct", 100.0 * static_cast<double>(res.skipped_examples) /
                                        static_cast<double>(res.total_examples)},
                    {"best_step", res.best_step}};
    std::ofstream(opts.out_dir / "calibrate_summary.json", std::ios::binary) << summary.dump(2) << '\n';
    return res;
}

const EvalRow& EvalReport::find(const std::string& label, DecodeMethod method, std::size_t m, double alpha) const {
    for (const auto& r : rows)
        if (r.label == label && r.method == method && r.num_candidates == m && r.alpha == alpha) return r;
    throw std::out_of_range("evaluate: no row for " + label + " " + to_string(method) + " m=" + std::to_string(m) +
                            " alpha=" + num(alpha));
}

EvalReport run_evaluate(const Config& cfg, const EvaluateOptions& opts) {
    const auto& ev = cfg.evaluate;
    if (opts.checkpoints.empty()) throw std::invalid_argument("evaluate: no checkpoints");
    if (ev.methods.empty() || ev.num_candidates.empty()) throw std::invalid_argument("evaluate: empty sweep");
    fs::create_directories(opts.out_dir);
    require_fresh(opts.out_dir / "summary.csv", opts.overwrite);

    std::vector<ModelCheckpoint> ckpts;
    for (const auto& c : opts.checkpoints) ckpts.push_back(load_checkpoint(c.path));
    const auto data = head(read_split(opts.data_dir, ev.split), ev.max_examples);
    if (data.empty()) throw StageError("evaluate: empty split " + ev.split);

    EvalReport report;
    DecodeConfig base = cfg.decode.decode;
    if (ev.alpha_star) {
        report.alpha_star = *ev.alpha_star;
    } else {
        if (ev.alpha_grid.empty()) throw std::invalid_argument("evaluate: alpha_grid is empty and alpha_star unset");
        const auto val = head(read_split(opts.data_dir, "val"), ev.alpha_select_examples);
        double best = -1.0;
        for (double a : ev.alpha_grid) {
            DecodeConfig d = base;
            d.method = DecodeMethod::beam;
            d.num_candidates = ev.alpha_select_candidates;
            d.alpha = a;
            const double rl = decode_quality(ckpts.front().model, val, d, ev.rep_max_n).rouge.rougeL;
            report.alpha_selection.emplace_back(a, rl);
            if (rl > best) {
                best = rl;
                report.alpha_star = a;
            }
        }
    }
    std::vector<double> alphas{0.0};
    if (report.alpha_star != 0.0) alphas.push_back(report.alpha_star);

    std::vector<TokenSeq> refs;
    for (const auto& ex : data) refs.push_back(strip_eos(ex.target));
    report.reference_rep_pct = repetition_rate<TokenId>(refs, ev.rep_max_n);

    std::optional<std::vector<CalibrationExample>> heldout;
    if (opts.heldout_cache) {
        heldout.emplace();
        for (auto& r : read_cache(*opts.heldout_cache)) heldout->push_back(std::move(r.example));
    }

    for (std::size_t k = 0; k < ckpts.size(); ++k) {
        const auto& model = ckpts[k].model;
        CheckpointSummary s;
        s.label = opts.checkpoints[k].label;
        s.checkpoint_id = checkpoint_id(model);
        s.perplexity = perplexity(model, data);
        if (heldout) s.heldout_tau = mean_kendall_tau(model, *heldout, cfg.calibration.calibration.similarity_source);
        report.summaries.push_back(s);
        for (auto method : ev.methods)
            for (auto m : ev.num_candidates)
                for (double a : alphas) {
                    DecodeConfig d = base;
                    d.method = method;
                    d.num_candidates = m;
                    d.alpha = a;
                    d.num_groups = groups_for(m, base.num_groups);
                    EvalRow row{s.checkpoint_id, s.label, method, m, a, decode_quality(model, data, d, ev.rep_max_n)};
                    report.rows.push_back(std::move(row));
                }
    }

    CsvWriter curves(opts.out_dir / "decode_curves.csv",
                     {"label", "checkpoint_id", "method", "num_candidates", "alpha", "rouge1", "rouge2", "rougeL",
                      "r_m", "rep_pct", "quality_tau", "mean_candidates"});
    for (const auto& r : report.rows)
        curves.row({r.label, r.checkpoint_id, to_string(r.method), std::to_string(r.num_candidates), num(r.alpha),
                    num(r.quality.rouge.rouge1), num(r.quality.rouge.rouge2), num(r.quality.rouge.rougeL),
                    num(r.quality.r_m), num(r.quality.rep_pct), num(r.quality.quality_tau),
                    num(r.quality.mean_candidates)});

    CsvWriter sel(opts.out_dir / "alpha_selection.csv", {"alpha", "val_rougeL", "selected"});
    for (const auto& [a, rl] : report.alpha_selection)
        sel.row({num(a), num(rl), a == report.alpha_star ? "1" : "0"});

    const bool have_summary_m = std::find(ev.num_candidates.begin(), ev.num_candidates.end(), ev.summary_candidates) !=
                                ev.num_candidates.end();
    const bool have_beam = std::find(ev.methods.begin(), ev.methods.end(), DecodeMethod::beam) != ev.methods.end();
    CsvWriter sens(opts.out_dir / "alpha_sensitivity.csv",
                   {"label", "checkpoint_id", "method", "num_candidates", "alpha_star", "rougeL_alpha0",
                    "rougeL_alpha_star", "abs_diff"});
    for (const auto& s : report.summaries)
        for (auto method : ev.methods)
            for (auto m : ev.num_candidates) {
                const double r0 = report.find(s.label, method, m, 0.0).quality.rouge.rougeL;
                const double rs = report.find(s.label, method, m, report.alpha_star).quality.rouge.rougeL;
                sens.row({s.label, s.checkpoint_id, to_string(method), std::to_string(m), num(report.alpha_star),
                          num(r0), num(rs), num(std::abs(r0 - rs))});
            }

    CsvWriter summary(opts.out_dir / "summary.csv",
                      {"label", "checkpoint_id", "perplexity", "heldout_tau", "num_candidates", "alpha", "rouge1",
                       "rouge2", "rougeL", "r_m", "rep_pct"});
    for (const auto& s : report.summaries) {
        if (!have_summary_m || !have_beam) {
            summary.row({s.label, s.checkpoint_id, num(s.perplexity), s.heldout_tau ? num(*s.heldout_tau) : "", "",
                         "", "", "", "", "", ""});
            continue;
        }
        for (double a : alphas) {
            const auto& q = report.find(s.label, DecodeMethod::beam, ev.summary_candidates, a).quality;
            summary.row({s.label, s.checkpoint_id, num(s.perplexity), s.heldout_tau ? num(*s.heldout_tau) : "",
                         std::to_string(ev.summary_candidates), num(a), num(q.rouge.rouge1), num(q.rouge.rouge2),
                         num(q.rouge.rougeL), num(q.r_m), num(q.rep_pct)});
        }
    }

    CsvWriter references(opts.out_dir / "references.csv", {"split", "examples", "rep_pct"});
    references.row({ev.split, std::to_string(data.size()), num(report.reference_rep_pct)});
    return report;
}

}  // namespace slic
