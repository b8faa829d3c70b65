#pragma once

#include <cstdint>
#include <vector>

namespace slic {

using TokenId = std::int32_t;
// Token ids of an input, target, or candidate. Targets and candidates carry
// their terminal EOS; BOS is never stored.
using TokenSeq = std::vector<TokenId>;

// Reserved ids shared by every vocabulary in the project.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kNumReserved = 3;

// ROUGE-1/2/L F1 on a 0..100 scale.
struct MetricTriple {
    double rouge1 = 0.0;
    double rouge2 = 0.0;
    double rougeL = 0.0;
    friend bool operator==(const MetricTriple&, const MetricTriple&) = default;
};

struct Example {
    std::uint64_t id = 0;
    TokenSeq context;
    TokenSeq target;
};

}  // namespace slic
