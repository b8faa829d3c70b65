#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slic/model.hpp"
#include "slic/types.hpp"

namespace slic {

enum class DecodeMethod { beam, diverse_beam, nucleus };

std::string to_string(DecodeMethod m);
DecodeMethod decode_method_from_string(const std::string& s);

struct DecodeConfig {
    DecodeMethod method = DecodeMethod::beam;
    std::size_t num_candidates = 8;
    // Length-normalization exponent; 0 ranks by raw log-prob.
    double alpha = 0.0;
    double nucleus_p = 0.9;
    double temperature = 1.0;
    std::size_t num_groups = 2;
    double diversity_penalty = 1.0;
    std::size_t max_len = 12;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ScoredCandidate {
    TokenSeq tokens;
    double log_prob = 0.0;
    double normalized_score = 0.0;
};

// log_prob / len^alpha
double length_normalized(double log_prob, std::size_t length, double alpha);

// Canonical candidate order: higher normalized score, then higher log-prob,
// then lexicographically smaller tokens.
bool ranks_before(const ScoredCandidate& a, const ScoredCandidate& b);

// Best-first beam search of width num_candidates. Finished hypotheses stay in
// the beam and compete with live ones on normalized score. Returns at most
// num_candidates distinct sequences in canonical order.
std::vector<ScoredCandidate> beam_search(const Seq2SeqModel& model, const TokenSeq& x, const DecodeConfig& cfg);

// Diverse beam search with Hamming diversity: num_groups groups of
// num_candidates / num_groups beams, group k penalized by diversity_penalty
// times the number of earlier groups that chose the same token at the same
// step. Returns each group's beam in canonical order.
std::vector<std::vector<ScoredCandidate>> diverse_beam_search_groups(const Seq2SeqModel& model, const TokenSeq& x,
                                                                     const DecodeConfig& cfg);
// All groups merged, duplicates removed, canonical order.
std::vector<ScoredCandidate> diverse_beam_search(const Seq2SeqModel& model, const TokenSeq& x,
                                                 const DecodeConfig& cfg);

// num_candidates top-p samples from one RNG stream seeded by cfg.seed;
// duplicates removed post hoc, so fewer may come back.
std::vector<ScoredCandidate> nucleus_sample(const Seq2SeqModel& model, const TokenSeq& x, const DecodeConfig& cfg);

// Dispatch on cfg.method.
std::vector<ScoredCandidate> decode(const Seq2SeqModel& model, const TokenSeq& x, const DecodeConfig& cfg);

TokenSeq greedy_decode(const Seq2SeqModel& model, const TokenSeq& x, std::size_t max_len);

// Highest normalized score; ties go to the shorter, then lexicographically
// smaller sequence.
const ScoredCandidate& select_best(std::span<const ScoredCandidate> candidates);

}  // namespace slic
