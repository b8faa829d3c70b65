#include "slic/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace slic {
namespace {

using nlohmann::json;

// Reads keys from one JSON object and rejects whatever it never asked for.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw std::invalid_argument("config: section '" + name_ + "' must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (auto it = j_.find(key); it != j_.end()) {
            try {
                out = it->get<T>();
            } catch (const json::exception& e) {
                throw std::invalid_argument("config: bad value for " + name_ + "." + key + ": " + e.what());
            }
        }
    }

    template <class T, class Parse>
    void get_as(const char* key, T& out, Parse parse) {
        std::string s;
        bool present = j_.contains(key);
        get(key, s);
        if (present) out = parse(s);
    }

    const json* sub(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [k, _] : j_.items())
            if (!seen_.contains(k)) throw std::invalid_argument("config: unknown key '" + name_ + "." + k + "'");
    }

private:
    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

void read_range(Section& s, const char* key, LengthRange& r) {
    std::vector<std::size_t> v{r.min, r.max};
    s.get(key, v);
    if (v.size() != 2) throw std::invalid_argument(std::string("config: ") + key + " must be [min, max]");
    r = {v[0], v[1]};
}

void read_model(Section& s, ModelConfig& c) {
    s.get("vocab_size", c.vocab_size);
    s.get("num_enc_layers", c.num_enc_layers);
    s.get("num_dec_layers", c.num_dec_layers);
    s.get("d_model", c.d_model);
    s.get("num_heads", c.num_heads);
    s.get("d_ff", c.d_ff);
    s.get("max_enc_len", c.max_enc_len);
    s.get("max_dec_len", c.max_dec_len);
    s.get("tie_embeddings", c.tie_embeddings);
    s.get("label_smoothing", c.label_smoothing);
    s.get("init_seed", c.init_seed);
}

void read_decode(Section& s, DecodeConfig& c) {
    s.get_as("method", c.method, decode_method_from_string);
    s.get("num_candidates", c.num_candidates);
    s.get("alpha", c.alpha);
    s.get("nucleus_p", c.nucleus_p);
    s.get("temperature", c.temperature);
    s.get("num_groups", c.num_groups);
    s.get("diversity_penalty", c.diversity_penalty);
    s.get("max_len", c.max_len);
    s.get("seed", c.seed);
}

void read_similarity(Section& s, SpanMatchConfig& c) {
    s.get("span_lengths", c.span_lengths);
    s.get_as("representation_source", c.source, [](const std::string& v) {
        if (v == "decoder_states") return RepresentationSource::decoder_states;
        if (v == "token_embeddings") return RepresentationSource::token_embeddings;
        throw std::invalid_argument("unknown representation_source '" + v + "'");
    });
}

}  // namespace

std::string to_string(CheckpointSelection s) { return s == CheckpointSelection::perplexity ? "perplexity" : "rouge"; }

void Config::sync_and_validate() {
    model.validate();
    task.vocab_size = model.vocab_size;
    task.max_enc_len = model.max_enc_len;
    task.max_dec_len = std::min(model.max_dec_len, decode.decode.max_len);
    task.validate();
    decode.decode.validate();
    similarity.validate();
    calibration.calibration.validate();
    if (finetune.batch_size < 1) throw std::invalid_argument("finetune: batch_size must be >= 1");
    if (finetune.eval_every < 1) throw std::invalid_argument("finetune: eval_every must be >= 1");
    if (calibration.eval_every < 1) throw std::invalid_argument("calibration: eval_every must be >= 1");
    if (evaluate.num_candidates.empty() || evaluate.methods.empty())
        throw std::invalid_argument("evaluate: methods and num_candidates must be non-empty");
    for (auto m : evaluate.num_candidates)
        if (m < 1) throw std::invalid_argument("evaluate: num_candidates entries must be >= 1");
    if (evaluate.alpha_grid.empty() && !evaluate.alpha_star)
        throw std::invalid_argument("evaluate: alpha_grid is empty and alpha_star unset");
    if (evaluate.rep_max_n < 1) throw std::invalid_argument("evaluate: rep_max_n must be >= 1");
}

void Config::override_seed(std::uint64_t seed) {
    model.init_seed = seed;
    task.seed = seed;
    finetune.seed = seed;
    decode.decode.seed = seed;
    calibration.seed = seed;
}

Config config_from_json(const json& j) {
    Config c;
    Section root(j, "<root>");
    if (const json* m = root.sub("model")) {
        Section s(*m, "model");
        read_model(s, c.model);
        s.finish();
    }
    if (const json* t = root.sub("task")) {
        Section s(*t, "task");
        s.get_as("task", c.task.task, task_kind_from_string);
        read_range(s, "input_len", c.task.input_len);
        read_range(s, "num_groups", c.task.num_groups);
        read_range(s, "group_len", c.task.group_len);
        s.get("alphabet_size", c.task.alphabet_size);
        s.get("num_train", c.task.num_train);
        s.get("num_val", c.task.num_val);
        s.get("num_test", c.task.num_test);
        s.get("seed", c.task.seed);
        s.get("noise_rate", c.task.noise_rate);
        s.finish();
    }
    if (const json* f = root.sub("finetune")) {
        Section s(*f, "finetune");
        s.get("steps", c.finetune.steps);
        s.get("batch_size", c.finetune.batch_size);
        s.get("learning_rate", c.finetune.learning_rate);
        s.get("eval_every", c.finetune.eval_every);
        s.get("eval_examples", c.finetune.eval_examples);
        s.get_as("selection", c.finetune.selection, [](const std::string& v) {
            if (v == "perplexity") return CheckpointSelection::perplexity;
            if (v == "rouge") return CheckpointSelection::rouge;
            throw std::invalid_argument("unknown selection '" + v + "'");
        });
        s.get("seed", c.finetune.seed);
        s.finish();
    }
    if (const json* d = root.sub("decode")) {
        Section s(*d, "decode");
        read_decode(s, c.decode.decode);
        s.get("max_examples", c.decode.max_examples);
        s.finish();
    }
    if (const json* sim = root.sub("similarity")) {
        Section s(*sim, "similarity");
        read_similarity(s, c.similarity);
        s.finish();
    }
    if (const json* cal = root.sub("calibration")) {
        Section s(*cal, "calibration");
        auto& cc = c.calibration.calibration;
        s.get_as("loss_type", cc.loss_type, calibration_loss_from_string);
        s.get("beta", cc.beta);
        s.get_as("reg_type", cc.reg_type, regularizer_from_string);
        s.get("lambda", cc.lambda);
        s.get("learning_rate", cc.learning_rate);
        s.get("pairs_per_example", cc.pairs_per_example);
        s.get_as("similarity_source", cc.similarity_source, similarity_source_from_string);
        s.get("batch_size", cc.batch_size);
        s.get("steps", c.calibration.steps);
        s.get("eval_every", c.calibration.eval_every);
        s.get("eval_examples", c.calibration.eval_examples);
        s.get("tau_examples", c.calibration.tau_examples);
        s.get("seed", c.calibration.seed);
        s.finish();
    }
    if (const json* e = root.sub("evaluate")) {
        Section s(*e, "evaluate");
        std::vector<std::string> methods;
        bool has_methods = e->contains("methods");
        s.get("methods", methods);
        if (has_methods) {
            c.evaluate.methods.clear();
            for (const auto& m : methods) c.evaluate.methods.push_back(decode_method_from_string(m));
        }
        s.get("num_candidates", c.evaluate.num_candidates);
        s.get("alpha_grid", c.evaluate.alpha_grid);
        if (const json* a = s.sub("alpha_star"); a && !a->is_null()) c.evaluate.alpha_star = a->get<double>();
        s.get("alpha_select_examples", c.evaluate.alpha_select_examples);
        s.get("alpha_select_candidates", c.evaluate.alpha_select_candidates);
        s.get("max_examples", c.evaluate.max_examples);
        s.get("summary_candidates", c.evaluate.summary_candidates);
        s.get("rep_max_n", c.evaluate.rep_max_n);
        s.get("split", c.evaluate.split);
        s.finish();
    }
    root.finish();
    c.sync_and_validate();
    return c;
}

json to_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size},     {"num_enc_layers", c.num_enc_layers},
            {"num_dec_layers", c.num_dec_layers}, {"d_model", c.d_model},
            {"num_heads", c.num_heads},       {"d_ff", c.d_ff},
            {"max_enc_len", c.max_enc_len},   {"max_dec_len", c.max_dec_len},
            {"tie_embeddings", c.tie_embeddings}, {"label_smoothing", c.label_smoothing},
            {"init_seed", c.init_seed}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    Section s(j, "model");
    read_model(s, c);
    s.finish();
    c.validate();
    return c;
}

json to_json(const DecodeConfig& c) {
    return {{"method", to_string(c.method)}, {"num_candidates", c.num_candidates},
            {"alpha", c.alpha},              {"nucleus_p", c.nucleus_p},
            {"temperature", c.temperature},  {"num_groups", c.num_groups},
            {"diversity_penalty", c.diversity_penalty}, {"max_len", c.max_len},
            {"seed", c.seed}};
}

DecodeConfig decode_config_from_json(const json& j) {
    DecodeConfig c;
    Section s(j, "decode");
    read_decode(s, c);
    s.finish();
    return c;
}

json to_json(const SpanMatchConfig& c) {
    return {{"span_lengths", c.span_lengths},
            {"representation_source",
             c.source == RepresentationSource::decoder_states ? "decoder_states" : "token_embeddings"}};
}

SpanMatchConfig span_config_from_json(const json& j) {
    SpanMatchConfig c;
    Section s(j, "similarity");
    read_similarity(s, c);
    s.finish();
    return c;
}

json config_to_json(const Config& c) {
    json j;
    j["model"] = to_json(c.model);
    j["task"] = {{"task", to_string(c.task.task)},
                 {"input_len", {c.task.input_len.min, c.task.input_len.max}},
                 {"num_groups", {c.task.num_groups.min, c.task.num_groups.max}},
                 {"group_len", {c.task.group_len.min, c.task.group_len.max}},
                 {"alphabet_size", c.task.alphabet_size},
                 {"num_train", c.task.num_train},
                 {"num_val", c.task.num_val},
                 {"num_test", c.task.num_test},
                 {"seed", c.task.seed},
                 {"noise_rate", c.task.noise_rate}};
    j["finetune"] = {{"steps", c.finetune.steps},
                     {"batch_size", c.finetune.batch_size},
                     {"learning_rate", c.finetune.learning_rate},
                     {"eval_every", c.finetune.eval_every},
                     {"eval_examples", c.finetune.eval_examples},
                     {"selection", to_string(c.finetune.selection)},
                     {"seed", c.finetune.seed}};
    j["decode"] = to_json(c.decode.decode);
    j["decode"]["max_examples"] = c.decode.max_examples;
    j["similarity"] = to_json(c.similarity);
    const auto& cc = c.calibration.calibration;
    j["calibration"] = {{"loss_type", to_string(cc.loss_type)},
                        {"beta", cc.beta},
                        {"reg_type", to_string(cc.reg_type)},
                        {"lambda", cc.lambda},
                        {"learning_rate", cc.learning_rate},
                        {"pairs_per_example", cc.pairs_per_example},
                        {"similarity_source", to_string(cc.similarity_source)},
                        {"batch_size", cc.batch_size},
                        {"steps", c.calibration.steps},
                        {"eval_every", c.calibration.eval_every},
                        {"eval_examples", c.calibration.eval_examples},
                        {"tau_examples", c.calibration.tau_examples},
                        {"seed", c.calibration.seed}};
    std::vector<std::string> methods;
    for (auto m : c.evaluate.methods) methods.push_back(to_string(m));
    j["evaluate"] = {{"methods", methods},
                     {"num_candidates", c.evaluate.num_candidates},
                     {"alpha_grid", c.evaluate.alpha_grid},
                     {"alpha_star", c.evaluate.alpha_star ? json(*c.evaluate.alpha_star) : json(nullptr)},
                     {"alpha_select_examples", c.evaluate.alpha_select_examples},
                     {"alpha_select_candidates", c.evaluate.alpha_select_candidates},
                     {"max_examples", c.evaluate.max_examples},
                     {"summary_candidates", c.evaluate.summary_candidates},
                     {"rep_max_n", c.evaluate.rep_max_n},
                     {"split", c.evaluate.split}};
    return j;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw std::invalid_argument("config: " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

}  // namespace slic
