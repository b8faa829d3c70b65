#include "slic/data.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "slic/rng.hpp"

namespace slic {
namespace {

std::size_t draw(std::mt19937_64& rng, const LengthRange& r) {
    return r.min + static_cast<std::size_t>(uniform_below(rng, r.max - r.min + 1));
}

TokenId draw_content(std::mt19937_64& rng, std::size_t alphabet) {
    return kFirstContentId + static_cast<TokenId>(uniform_below(rng, alphabet));
}

// One token dropped or two neighbours swapped; never introduces a repeat.
void perturb(TokenSeq& body, std::mt19937_64& rng) {
    if (body.size() < 2) return;
    if (uniform_below(rng, 2) == 0) {
        body.erase(body.begin() + static_cast<std::ptrdiff_t>(uniform_below(rng, body.size())));
    } else {
        const auto i = static_cast<std::size_t>(uniform_below(rng, body.size() - 1));
        std::swap(body[i], body[i + 1]);
    }
}

Example make_salient_copy(const SyntheticTaskSpec& spec, std::mt19937_64& rng) {
    const std::size_t alphabet = spec.vocab_size - static_cast<std::size_t>(kFirstContentId);
    const std::size_t groups = draw(rng, spec.num_groups);
    const std::size_t key = static_cast<std::size_t>(uniform_below(rng, groups));
    Example ex;
    for (std::size_t g = 0; g < groups; ++g) {
        if (g) ex.context.push_back(kSepId);
        if (g == key) ex.context.push_back(kKeyId);
        const std::size_t len = draw(rng, spec.group_len);
        std::set<TokenId> used;
        TokenSeq group;
        while (group.size() < len) {
            const TokenId t = draw_content(rng, alphabet);
            if (used.insert(t).second) group.push_back(t);
        }
        ex.context.insert(ex.context.end(), group.begin(), group.end());
        if (g == key) ex.target = group;
    }
    return ex;
}

Example make_sorted_unique(const SyntheticTaskSpec& spec, std::mt19937_64& rng) {
    const std::size_t full = spec.vocab_size - static_cast<std::size_t>(kFirstContentId);
    const std::size_t alphabet = spec.alphabet_size ? std::min(spec.alphabet_size, full) : full;
    Example ex;
    const std::size_t len = draw(rng, spec.input_len);
    for (std::size_t i = 0; i < len; ++i) ex.context.push_back(draw_content(rng, alphabet));
    std::set<TokenId> distinct(ex.context.begin(), ex.context.end());
    ex.target.assign(distinct.begin(), distinct.end());
    return ex;
}

std::vector<Example> make_split(const SyntheticTaskSpec& spec, std::size_t count, std::mt19937_64& rng) {
    std::vector<Example> out;
    out.reserve(count);
    while (out.size() < count) {
        Example ex = spec.task == TaskKind::salient_copy ? make_salient_copy(spec, rng) : make_sorted_unique(spec, rng);
        if (uniform01(rng) < spec.noise_rate) perturb(ex.target, rng);
        ex.target.push_back(kEosId);
        if (ex.target.size() > spec.max_dec_len || ex.context.size() > spec.max_enc_len) continue;
        ex.id = out.size();
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace

std::string to_string(TaskKind t) { return t == TaskKind::salient_copy ? "salient_copy" : "sorted_unique"; }

TaskKind task_kind_from_string(const std::string& s) {
    if (s == "salient_copy") return TaskKind::salient_copy;
    if (s == "sorted_unique") return TaskKind::sorted_unique;
    throw std::invalid_argument("unknown task '" + s + "'");
}

void SyntheticTaskSpec::validate() const {
    if (num_train < 1 || num_val < 1 || num_test < 1) throw std::invalid_argument("task: split sizes must be >= 1");
    if (!(noise_rate >= 0.0 && noise_rate < 1.0)) throw std::invalid_argument("task: noise_rate must lie in [0, 1)");
    if (vocab_size <= static_cast<std::size_t>(kFirstContentId) + 1)
        throw std::invalid_argument("task: vocab_size leaves no content tokens");
    for (const auto* r : {&input_len, &num_groups, &group_len})
        if (r->min < 1 || r->min > r->max) throw std::invalid_argument("task: invalid length range");
    const std::size_t alphabet = vocab_size - static_cast<std::size_t>(kFirstContentId);
    if (task == TaskKind::salient_copy && group_len.max > alphabet)
        throw std::invalid_argument("task: group_len exceeds the content alphabet");
    // The shortest possible example must fit, or generation would never end.
    const std::size_t min_ctx = task == TaskKind::salient_copy ? num_groups.min * (group_len.min + 1) : input_len.min;
    if (min_ctx > max_enc_len || (task == TaskKind::salient_copy && group_len.min + 1 > max_dec_len))
        throw std::invalid_argument("task: length ranges cannot fit max_enc_len / max_dec_len");
}

DatasetSplits generate_dataset(const SyntheticTaskSpec& spec) {
    spec.validate();
    DatasetSplits s;
    std::mt19937_64 train_rng(mix_seed(spec.seed, 1));
    std::mt19937_64 val_rng(mix_seed(spec.seed, 2));
    std::mt19937_64 test_rng(mix_seed(spec.seed, 3));
    s.train = make_split(spec, spec.num_train, train_rng);
    s.val = make_split(spec, spec.num_val, val_rng);
    s.test = make_split(spec, spec.num_test, test_rng);
    return s;
}

TokenSeq reference_target(TaskKind task, const TokenSeq& context) {
    if (task == TaskKind::sorted_unique) {
        std::set<TokenId> distinct(context.begin(), context.end());
        return TokenSeq(distinct.begin(), distinct.end());
    }
    auto it = std::find(context.begin(), context.end(), kKeyId);
    if (it == context.end()) throw std::invalid_argument("reference_target: context has no KEY token");
    ++it;
    return TokenSeq(it, std::find(it, context.end(), kSepId));
}

void write_examples(const std::filesystem::path& path, const std::vector<Example>& examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& ex : examples) {
        nlohmann::json j{{"example_id", ex.id}, {"context_ids", ex.context}, {"target_ids", ex.target}};
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<Example> read_examples(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<Example> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        Example ex;
        ex.id = j.at("example_id").get<std::uint64_t>();
        ex.context = j.at("context_ids").get<TokenSeq>();
        ex.target = j.at("target_ids").get<TokenSeq>();
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace slic
