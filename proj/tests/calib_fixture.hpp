#pragma once

#include <random>
#include <vector>

#include "slic/calibration.hpp"
#include "slic/decoding.hpp"

namespace testutil {

inline slic::ModelConfig calib_micro_config(std::uint64_t seed = 0) {
    slic::ModelConfig c;
    c.vocab_size = 8;
    c.num_enc_layers = 1;
    c.num_dec_layers = 1;
    c.d_model = 4;
    c.num_heads = 2;
    c.d_ff = 6;
    c.max_enc_len = 5;
    c.max_dec_len = 4;
    c.init_seed = seed;
    return c;
}

// A micro model whose weights are scaled up so distributions are peaked.
inline slic::Seq2SeqModel calib_micro_model(std::uint64_t seed) {
    slic::Seq2SeqModel m(calib_micro_config(seed));
    std::mt19937_64 rng(seed + 1000);
    std::normal_distribution<double> d(0.0, 0.7);
    for (auto& [name, t] : m.params())
        for (auto& v : t.mutable_data()) v = d(rng);
    return m;
}

// Two examples with beam candidates and random, untied similarities.
inline std::vector<slic::CalibrationExample> calib_batch(const slic::Seq2SeqModel& model, std::uint64_t seed,
                                                         std::size_t m = 4) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    std::vector<slic::CalibrationExample> batch;
    const std::vector<slic::TokenSeq> contexts{{3, 4, 5}, {6, 7}};
    const std::vector<slic::TokenSeq> targets{{4, 5, slic::kEosId}, {7, slic::kEosId}};
    for (std::size_t b = 0; b < contexts.size(); ++b) {
        slic::DecodeConfig d;
        d.num_candidates = m;
        d.max_len = 4;
        slic::CalibrationExample ex{b, contexts[b], targets[b], {}};
        for (const auto& c : slic::beam_search(model, contexts[b], d)) {
            slic::CandidateRecord r;
            r.tokens = c.tokens;
            r.ft_log_prob = c.log_prob;
            r.similarity.value = u(rng);
            r.rouge = slic::rouge_triple(c.tokens, targets[b]);
            ex.candidates.push_back(r);
        }
        batch.push_back(ex);
    }
    return batch;
}

}  // namespace testutil
