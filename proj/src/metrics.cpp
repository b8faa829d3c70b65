#include "slic/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace slic {
namespace {

std::vector<double> normalized_rows(const DecoderStates& s) {
    std::vector<double> out(s.hidden);
    for (std::size_t r = 0; r < s.length; ++r) {
        double* row = out.data() + r * s.width;
        double norm = 0.0;
        for (std::size_t c = 0; c < s.width; ++c) norm += row[c] * row[c];
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (std::size_t c = 0; c < s.width; ++c) row[c] /= norm;
    }
    return out;
}

// Unit vectors for every window of n consecutive rows.
std::vector<double> span_vectors(const std::vector<double>& rows, std::size_t length, std::size_t width,
                                 std::size_t n) {
    const std::size_t count = length - n + 1;
    std::vector<double> spans(count * width, 0.0);
    for (std::size_t i = 0; i < count; ++i) {
        double* v = spans.data() + i * width;
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t c = 0; c < width; ++c) v[c] += rows[(i + k) * width + c];
        double norm = 0.0;
        for (std::size_t c = 0; c < width; ++c) norm += v[c] * v[c];
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (std::size_t c = 0; c < width; ++c) v[c] /= norm;
    }
    return spans;
}

}  // namespace

void SpanMatchConfig::validate() const {
    if (span_lengths.empty()) throw std::invalid_argument("similarity: span_lengths must be non-empty");
    for (auto n : span_lengths)
        if (n < 1) throw std::invalid_argument("similarity: span lengths must be >= 1");
}

SimilarityScore span_similarity(const DecoderStates& candidate, const DecoderStates& target,
                                const SpanMatchConfig& config) {
    config.validate();
    if (candidate.length == 0 || target.length == 0)
        throw std::invalid_argument("span_similarity: empty representation");
    if (candidate.width != target.width)
        throw std::invalid_argument("span_similarity: width mismatch " + std::to_string(candidate.width) + " vs " +
                                    std::to_string(target.width));
    const std::size_t width = candidate.width;
    const auto cand_rows = normalized_rows(candidate);
    const auto targ_rows = normalized_rows(target);

    SimilarityScore score;
    for (std::size_t n : config.span_lengths) {
        if (n > candidate.length || n > target.length || score.per_n.contains(n)) continue;
        const auto cs = span_vectors(cand_rows, candidate.length, width, n);
        const auto ts = span_vectors(targ_rows, target.length, width, n);
        const std::size_t nc = candidate.length - n + 1, nt = target.length - n + 1;
        std::vector<double> best_c(nc, -std::numeric_limits<double>::infinity());
        std::vector<double> best_t(nt, -std::numeric_limits<double>::infinity());
        for (std::size_t i = 0; i < nc; ++i)
            for (std::size_t j = 0; j < nt; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < width; ++c) dot += cs[i * width + c] * ts[j * width + c];
                best_c[i] = std::max(best_c[i], dot);
                best_t[j] = std::max(best_t[j], dot);
            }
        double p = 0.0, r = 0.0;
        for (double v : best_c) p += v;
        for (double v : best_t) r += v;
        p /= static_cast<double>(nc);
        r /= static_cast<double>(nt);
        const double f = p * r <= 0.0 ? 0.0 : 2.0 * p * r / (p + r);
        score.per_n[n] = f;
        score.value += f;
    }
    return score;
}

DecoderStates token_embedding_states(const Seq2SeqModel& model, const TokenSeq& y) {
    const auto& table = model.param("embed.token");
    const std::size_t d = table.dim(1);
    DecoderStates s;
    s.length = y.size();
    s.width = d;
    s.hidden.reserve(y.size() * d);
    for (TokenId id : y) {
        auto row = table.data().subspan(static_cast<std::size_t>(id) * d, d);
        s.hidden.insert(s.hidden.end(), row.begin(), row.end());
    }
    return s;
}

TokenSeq strip_eos(const TokenSeq& y) {
    if (!y.empty() && y.back() == kEosId) return TokenSeq(y.begin(), y.end() - 1);
    return y;
}

MetricTriple rouge_triple(const TokenSeq& candidate, const TokenSeq& target) {
    const auto c = strip_eos(candidate);
    const auto t = strip_eos(target);
    std::span<const TokenId> cs(c), ts(t);
    return {rouge_n(cs, ts, 1), rouge_n(cs, ts, 2), rouge_l(cs, ts)};
}

MetricTriple mean_triple(std::span<const MetricTriple> triples) {
    MetricTriple m;
    if (triples.empty()) return m;
    for (const auto& t : triples) {
        m.rouge1 += t.rouge1;
        m.rouge2 += t.rouge2;
        m.rougeL += t.rougeL;
    }
    const double n = static_cast<double>(triples.size());
    m.rouge1 /= n;
    m.rouge2 /= n;
    m.rougeL /= n;
    return m;
}

double overall_score(std::span<const MetricTriple> per_dataset) {
    if (per_dataset.empty()) throw std::invalid_argument("overall_score: no datasets");
    double total = 0.0;
    for (const auto& t : per_dataset) {
        const double product = t.rouge1 * t.rouge2 * t.rougeL;
        total += product > 0.0 ? std::cbrt(product) : 0.0;
    }
    return total / static_cast<double>(per_dataset.size());
}

double kendall_tau(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("kendall_tau: length mismatch");
    double concordant = 0.0, discordant = 0.0, ties_a = 0.0, ties_b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j) {
            const double da = a[i] - a[j], db = b[i] - b[j];
            if (da == 0.0 && db == 0.0) continue;
            if (da == 0.0) {
                ties_a += 1.0;
            } else if (db == 0.0) {
                ties_b += 1.0;
            } else if ((da > 0.0) == (db > 0.0)) {
                concordant += 1.0;
            } else {
                discordant += 1.0;
            }
        }
    const double denom = std::sqrt((concordant + discordant + ties_a) * (concordant + discordant + ties_b));
    return denom > 0.0 ? (concordant - discordant) / denom : 0.0;
}

}  // namespace slic
