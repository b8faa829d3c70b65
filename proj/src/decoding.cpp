#include "slic/decoding.hpp"

#include "slic/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace slic {
namespace {

struct Hypothesis {
    ScoredCandidate cand;
    bool finished = false;
    bool fresh = false;       // extended during the current step
    double selection = 0.0;   // normalized score minus diversity penalty
};

bool selects_before(const Hypothesis& a, const Hypothesis& b) {
    if (a.selection != b.selection) return a.selection > b.selection;
    if (a.cand.log_prob != b.cand.log_prob) return a.cand.log_prob > b.cand.log_prob;
    return a.cand.tokens < b.cand.tokens;
}

std::size_t effective_max_len(const Seq2SeqModel& model, const DecodeConfig& cfg) {
    return std::min(cfg.max_len, model.config().max_dec_len);
}

// Shared driver for plain (one group, no penalty) and diverse beam search.
std::vector<std::vector<ScoredCandidate>> grouped_beam_search(const Seq2SeqModel& model, const TokenSeq& x,
                                                              std::size_t groups, std::size_t width,
                                                              double penalty, double alpha,
                                                              std::size_t max_len) {
    std::vector<TokenSeq> xs{x};
    const auto enc = [&] {
        NoGradGuard guard;
        return model.encode_batch(xs);
    }();
    const std::size_t vocab = model.config().vocab_size;

    std::vector<std::vector<Hypothesis>> beams(groups, std::vector<Hypothesis>{Hypothesis{}});
    for (;;) {
        std::vector<TokenSeq> prefixes;
        for (const auto& beam : beams)
            for (const auto& h : beam)
                if (!h.finished) prefixes.push_back(h.cand.tokens);
        if (prefixes.empty()) break;
        const std::vector<std::size_t> mem(prefixes.size(), 0);
        const auto rows = model.next_token_log_probs(enc, prefixes, mem);

        std::vector<int> chosen(vocab, 0);
        std::size_t row = 0;
        for (auto& beam : beams) {
            std::vector<Hypothesis> pool;
            for (const auto& h : beam) {
                if (h.finished) {
                    Hypothesis kept = h;
                    kept.fresh = false;
                    kept.selection = h.cand.normalized_score;
                    pool.push_back(std::move(kept));
                    continue;
                }
                const auto& lp = rows[row++];
                std::vector<Hypothesis> local;
                local.reserve(vocab);
                for (std::size_t tok = 0; tok < vocab; ++tok) {
                    const auto id = static_cast<TokenId>(tok);
                    if (Seq2SeqModel::is_blocked(id)) continue;
                    Hypothesis e;
                    e.cand.tokens = h.cand.tokens;
                    e.cand.tokens.push_back(id);
                    e.cand.log_prob = h.cand.log_prob + lp[tok];
                    e.cand.normalized_score = length_normalized(e.cand.log_prob, e.cand.tokens.size(), alpha);
                    e.selection = e.cand.normalized_score - penalty * chosen[tok];
                    e.finished = id == kEosId || e.cand.tokens.size() >= max_len;
                    e.fresh = true;
                    local.push_back(std::move(e));
                }
                // Only a beam's own best `width` extensions can survive the cut.
                const std::size_t keep = std::min(width, local.size());
                std::partial_sort(local.begin(), local.begin() + static_cast<std::ptrdiff_t>(keep), local.end(),
                                  selects_before);
                for (std::size_t i = 0; i < keep; ++i) pool.push_back(std::move(local[i]));
            }
            const std::size_t keep = std::min(width, pool.size());
            std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(),
                              selects_before);
            pool.resize(keep);
            for (const auto& h : pool)
                if (h.fresh) ++chosen[static_cast<std::size_t>(h.cand.tokens.back())];
            beam = std::move(pool);
        }
    }

    std::vector<std::vector<ScoredCandidate>> out(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        for (auto& h : beams[g]) out[g].push_back(std::move(h.cand));
        std::sort(out[g].begin(), out[g].end(), ranks_before);
    }
    return out;
}

std::vector<ScoredCandidate> dedupe_sorted(std::vector<ScoredCandidate> cands) {
    std::set<TokenSeq> seen;
    std::vector<ScoredCandidate> out;
    for (auto& c : cands)
        if (seen.insert(c.tokens).second) out.push_back(std::move(c));
    std::sort(out.begin(), out.end(), ranks_before);
    return out;
}

}  // namespace

std::string to_string(DecodeMethod m) {
    switch (m) {
        case DecodeMethod::beam: return "beam";
        case DecodeMethod::diverse_beam: return "diverse_beam";
        case DecodeMethod::nucleus: return "nucleus";
    }
    return "unknown";
}

DecodeMethod decode_method_from_string(const std::string& s) {
    if (s == "beam") return DecodeMethod::beam;
    if (s == "diverse_beam") return DecodeMethod::diverse_beam;
    if (s == "nucleus") return DecodeMethod::nucleus;
    throw std::invalid_argument("unknown decode method '" + s + "'");
}

void DecodeConfig::validate() const {
    if (num_candidates < 1) throw std::invalid_argument("decode: num_candidates must be >= 1");
    if (alpha < 0.0) throw std::invalid_argument("decode: alpha must be >= 0");
    if (!(nucleus_p > 0.0 && nucleus_p <= 1.0)) throw std::invalid_argument("decode: nucleus_p must lie in (0, 1]");
    if (!(temperature > 0.0)) throw std::invalid_argument("decode: temperature must be > 0");
    if (max_len < 1) throw std::invalid_argument("decode: max_len must be >= 1");
    if (method == DecodeMethod::diverse_beam) {
        if (num_groups < 1 || num_candidates % num_groups != 0)
            throw std::invalid_argument("decode: num_groups " + std::to_string(num_groups) +
                                        " does not divide num_candidates " + std::to_string(num_candidates));
        if (diversity_penalty < 0.0) throw std::invalid_argument("decode: diversity_penalty must be >= 0");
    }
}

double length_normalized(double log_prob, std::size_t length, double alpha) {
    if (alpha == 0.0) return log_prob;
    return log_prob / std::pow(static_cast<double>(length), alpha);
}

bool ranks_before(const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.normalized_score != b.normalized_score) return a.normalized_score > b.normalized_score;
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
}

std::vector<ScoredCandidate> beam_search(const Seq2SeqModel& model, const TokenSeq& x, const DecodeConfig& cfg) {
    cfg.validate();
    return grouped_beam_search(model, x, 1, cfg.num_candidates, 0.0, cfg.alpha, effective_max_len(model, cfg))[0];
}

std::vector<std::vector<ScoredCandidate>> diverse_beam_search_groups(const Seq2SeqModel& model, const TokenSeq& x,
                                                                     const DecodeConfig& cfg) {
    DecodeConfig checked = cfg;
    checked.method = DecodeMethod::diverse_beam;
    checked.validate();
    return grouped_beam_search(model, x, cfg.num_groups, cfg.num_candidates / cfg.num_groups,
                               cfg.diversity_penalty, cfg.alpha, effective_max_len(model, cfg));
}

std::vector<ScoredCandidate> diverse_beam_search(const Seq2SeqModel& model, const TokenSeq& x,
                                                 const DecodeConfig& cfg) {
    std::vector<ScoredCandidate> all;
    for (auto& group : diverse_beam_search_groups(model, x, cfg))
        for (auto& c : group) all.push_back(std::move(c));
    return dedupe_sorted(std::move(all));
}

std::vector<ScoredCandidate> nucleus_sample(const Seq2SeqModel& model, const TokenSeq& x, const DecodeConfig& cfg) {
    cfg.validate();
    const std::size_t max_len = effective_max_len(model, cfg);
    const std::size_t vocab = model.config().vocab_size;
    std::vector<TokenSeq> xs{x};
    const auto enc = [&] {
        NoGradGuard guard;
        return model.encode_batch(xs);
    }();
    std::mt19937_64 rng(cfg.seed);

    std::vector<ScoredCandidate> samples(cfg.num_candidates);
    std::vector<bool> done(cfg.num_candidates, false);
    std::vector<std::size_t> order(vocab);
    std::vector<double> probs(vocab);
    for (;;) {
        std::vector<std::size_t> live;
        std::vector<TokenSeq> prefixes;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (!done[i]) {
                live.push_back(i);
                prefixes.push_back(samples[i].tokens);
            }
        if (live.empty()) break;
        const std::vector<std::size_t> mem(live.size(), 0);
        const auto rows = model.next_token_log_probs(enc, prefixes, mem);
        for (std::size_t r = 0; r < live.size(); ++r) {
            const auto& lp = rows[r];
            // Tempered distribution over generable ids.
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t t = 0; t < vocab; ++t)
                if (!Seq2SeqModel::is_blocked(static_cast<TokenId>(t))) mx = std::max(mx, lp[t] / cfg.temperature);
            double z = 0.0;
            for (std::size_t t = 0; t < vocab; ++t) {
                probs[t] = Seq2SeqModel::is_blocked(static_cast<TokenId>(t)) ? 0.0
                                                                              : std::exp(lp[t] / cfg.temperature - mx);
                z += probs[t];
            }
            for (auto& p : probs) p /= z;
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
            std::size_t kept = 0;
            double mass = 0.0;
            while (kept < vocab && probs[order[kept]] > 0.0) {
                mass += probs[order[kept++]];
                if (mass >= cfg.nucleus_p) break;
            }
            const double u = uniform01(rng) * mass;
            std::size_t pick = order[kept - 1];
            double acc = 0.0;
            for (std::size_t k = 0; k < kept; ++k) {
                acc += probs[order[k]];
                if (u < acc) {
                    pick = order[k];
                    break;
                }
            }
            auto& s = samples[live[r]];
            s.tokens.push_back(static_cast<TokenId>(pick));
            s.log_prob += lp[pick];
            if (pick == static_cast<std::size_t>(kEosId) || s.tokens.size() >= max_len) done[live[r]] = true;
        }
    }
    for (auto& s : samples) s.normalized_score = length_normalized(s.log_prob, s.tokens.size(), cfg.alpha);
    return dedupe_sorted(std::move(samples));
}

std::vector<ScoredCandidate> decode(const Seq2SeqModel& model, const TokenSeq& x, const DecodeConfig& cfg) {
    switch (cfg.method) {
        case DecodeMethod::beam: return beam_search(model, x, cfg);
        case DecodeMethod::diverse_beam: return diverse_beam_search(model, x, cfg);
        case DecodeMethod::nucleus: return nucleus_sample(model, x, cfg);
    }
    throw std::logic_error("decode: unhandled method");
}

TokenSeq greedy_decode(const Seq2SeqModel& model, const TokenSeq& x, std::size_t max_len) {
    std::vector<TokenSeq> xs{x};
    const auto enc = [&] {
        NoGradGuard guard;
        return model.encode_batch(xs);
    }();
    const std::size_t limit = std::min(max_len, model.config().max_dec_len);
    const std::vector<std::size_t> mem{0};
    TokenSeq out;
    while (out.size() < limit) {
        std::vector<TokenSeq> prefix{out};
        const auto row = model.next_token_log_probs(enc, prefix, mem)[0];
        std::size_t best = 0;
        double best_lp = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < row.size(); ++t) {
            if (Seq2SeqModel::is_blocked(static_cast<TokenId>(t))) continue;
            if (row[t] > best_lp) {
                best_lp = row[t];
                best = t;
            }
        }
        out.push_back(static_cast<TokenId>(best));
        if (best == static_cast<std::size_t>(kEosId)) break;
    }
    return out;
}

const ScoredCandidate& select_best(std::span<const ScoredCandidate> candidates) {
    if (candidates.empty()) throw std::invalid_argument("select_best: no candidates");
    const ScoredCandidate* best = &candidates[0];
    for (const auto& c : candidates.subspan(1)) {
        if (c.normalized_score > best->normalized_score) {
            best = &c;
        } else if (c.normalized_score == best->normalized_score) {
            if (c.tokens.size() < best->tokens.size() ||
                (c.tokens.size() == best->tokens.size() && c.tokens < best->tokens))
                best = &c;
        }
    }
    return *best;
}

}  // namespace slic
