#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "slic/model.hpp"
#include "slic/types.hpp"

namespace slic {

enum class RepresentationSource { decoder_states, token_embeddings };

struct SpanMatchConfig {
    std::vector<std::size_t> span_lengths{1, 2, 4, 8};
    RepresentationSource source = RepresentationSource::decoder_states;

    void validate() const;
};

struct SimilarityScore {
    double value = 0.0;
    // F_n for every span length that fit both sequences.
    std::map<std::size_t, double> per_n;
};

// Span-level F-measure between two row-wise representations.
//
// Rows are L2-normalized; a span of n rows is the mean of its normalized rows,
// normalized again. P_n averages over candidate spans the best dot product
// against any target span, R_n swaps the roles, F_n is their harmonic mean.
// F_n is 0 when P_n * R_n <= 0: with opposite signs the harmonic mean is
// unbounded, and the zero-sum case is the same guard. Span lengths longer than either sequence are
// skipped. The score is the sum of the F_n that were computed.
SimilarityScore span_similarity(const DecoderStates& candidate, const DecoderStates& target,
                                const SpanMatchConfig& config);

// Token-embedding rows for y (the "token emb" representation variant).
DecoderStates token_embedding_states(const Seq2SeqModel& model, const TokenSeq& y);

// --- ROUGE on token sequences (whitespace-token semantics, no stemming) ---

namespace detail {

template <class T>
std::map<std::vector<T>, std::size_t> ngram_counts(std::span<const T> words, std::size_t n) {
    std::map<std::vector<T>, std::size_t> counts;
    if (words.size() < n) return counts;
    for (std::size_t i = 0; i + n <= words.size(); ++i) ++counts[std::vector<T>(words.begin() + i, words.begin() + i + n)];
    return counts;
}

// Harmonic mean of overlap/cand_total and overlap/target_total, written so
// that swapping the sides gives the identical double.
inline double f1_percent(double overlap, double cand_total, double target_total) {
    if (overlap <= 0.0 || cand_total <= 0.0 || target_total <= 0.0) return 0.0;
    return 100.0 * (2.0 * overlap) / (cand_total + target_total);
}

}  // namespace detail

// F1 of clipped n-gram overlap, x100; 0 when either side has no n-grams.
template <class T>
double rouge_n(std::span<const T> candidate, std::span<const T> target, std::size_t n) {
    if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
    const auto cand = detail::ngram_counts(candidate, n);
    const auto ref = detail::ngram_counts(target, n);
    std::size_t overlap = 0;
    for (const auto& [gram, count] : cand) {
        auto it = ref.find(gram);
        if (it != ref.end()) overlap += std::min(count, it->second);
    }
    const double cand_total = candidate.size() >= n ? static_cast<double>(candidate.size() - n + 1) : 0.0;
    const double ref_total = target.size() >= n ? static_cast<double>(target.size() - n + 1) : 0.0;
    return detail::f1_percent(static_cast<double>(overlap), cand_total, ref_total);
}

template <class T>
std::size_t lcs_length(std::span<const T> a, std::span<const T> b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

// F1 from the longest common subsequence, x100.
template <class T>
double rouge_l(std::span<const T> candidate, std::span<const T> target) {
    return detail::f1_percent(static_cast<double>(lcs_length(candidate, target)),
                              static_cast<double>(candidate.size()), static_cast<double>(target.size()));
}

template <class T>
bool has_consecutive_repeat(std::span<const T> words, std::size_t max_n) {
    for (std::size_t n = 1; n <= max_n; ++n)
        for (std::size_t i = 0; i + 2 * n <= words.size(); ++i)
            if (std::equal(words.begin() + i, words.begin() + i + n, words.begin() + i + n)) return true;
    return false;
}

// Percentage of outputs holding some n-gram (n <= max_n) immediately repeated.
template <class T>
double repetition_rate(std::span<const std::vector<T>> outputs, std::size_t max_n = 4) {
    if (outputs.empty()) throw std::invalid_argument("repetition_rate: no outputs");
    if (max_n < 1) throw std::invalid_argument("repetition_rate: max_n must be >= 1");
    std::size_t flagged = 0;
    for (const auto& o : outputs) flagged += has_consecutive_repeat(std::span<const T>(o), max_n) ? 1 : 0;
    return 100.0 * static_cast<double>(flagged) / static_cast<double>(outputs.size());
}

// Token sequence with the trailing EOS removed, as scored by ROUGE.
TokenSeq strip_eos(const TokenSeq& y);

MetricTriple rouge_triple(const TokenSeq& candidate, const TokenSeq& target);
// Corpus average of per-example ROUGE triples.
MetricTriple mean_triple(std::span<const MetricTriple> triples);

// Mean over datasets of cbrt(R1 * R2 * RL); a non-positive product counts as 0.
double overall_score(std::span<const MetricTriple> per_dataset);

// Kendall tau-b; 0 when either side is constant or fewer than two items.
double kendall_tau(std::span<const double> a, std::span<const double> b);

}  // namespace slic
