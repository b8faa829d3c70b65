#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "test_util.hpp"

namespace testutil {

// One registered op with a random-input generator for gradient checks.
struct OpCase {
    std::string name;
    std::function<std::vector<Tensor>(std::mt19937_64&)> inputs;
    std::function<Tensor(const std::vector<Tensor>&)> f;
};

inline std::size_t dim_between(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

inline std::vector<OpCase> op_cases() {
    namespace ops = slic::ops;
    using V = std::vector<Tensor>;
    std::vector<OpCase> c;
    auto matrix = [](std::mt19937_64& rng) { return Shape{dim_between(rng, 1, 4), dim_between(rng, 1, 5)}; };

    c.push_back({"matmul",
                 [](std::mt19937_64& r) {
                     const auto m = dim_between(r, 1, 4), k = dim_between(r, 1, 4), n = dim_between(r, 1, 4);
                     return V{random_tensor({m, k}, r), random_tensor({k, n}, r)};
                 },
                 [](const V& v) { return project(ops::matmul(v[0], v[1]), 1); }});
    c.push_back({"matmul_nt",
                 [](std::mt19937_64& r) {
                     const auto m = dim_between(r, 1, 4), k = dim_between(r, 1, 4), n = dim_between(r, 1, 4);
                     return V{random_tensor({m, k}, r), random_tensor({n, k}, r)};
                 },
                 [](const V& v) { return project(ops::matmul_nt(v[0], v[1]), 2); }});
    for (const char* name : {"add", "sub", "mul"}) {
        const std::string n = name;
        c.push_back({n,
                     [matrix](std::mt19937_64& r) {
                         const auto s = matrix(r);
                         return V{random_tensor(s, r), random_tensor(s, r)};
                     },
                     [n](const V& v) {
                         const auto out = n == "add" ? ops::add(v[0], v[1])
                                          : n == "sub" ? ops::sub(v[0], v[1])
                                                       : ops::mul(v[0], v[1]);
                         return project(out, 3);
                     }});
    }
    c.push_back({"add_bias",
                 [matrix](std::mt19937_64& r) {
                     const auto s = matrix(r);
                     return V{random_tensor(s, r), random_tensor({s[1]}, r)};
                 },
                 [](const V& v) { return project(ops::add_bias(v[0], v[1]), 4); }});
    c.push_back({"scale", [matrix](std::mt19937_64& r) { return V{random_tensor(matrix(r), r)}; },
                 [](const V& v) { return project(ops::scale(v[0], -1.7), 5); }});
    c.push_back({"add_scalar", [matrix](std::mt19937_64& r) { return V{random_tensor(matrix(r), r)}; },
                 [](const V& v) { return project(ops::add_scalar(v[0], 0.3), 6); }});
    c.push_back({"exp", [matrix](std::mt19937_64& r) { return V{random_tensor(matrix(r), r)}; },
                 [](const V& v) { return project(ops::exp(v[0]), 7); }});
    c.push_back({"relu", [matrix](std::mt19937_64& r) { return V{random_tensor(matrix(r), r)}; },
                 [](const V& v) { return project(ops::relu(v[0]), 8); }});
    c.push_back({"gelu", [matrix](std::mt19937_64& r) { return V{random_tensor(matrix(r), r)}; },
                 [](const V& v) { return project(ops::gelu(v[0]), 9); }});
    c.push_back({"softmax", [matrix](std::mt19937_64& r) { return V{random_tensor(matrix(r), r, true, 2.0)}; },
                 [](const V& v) { return project(ops::softmax(v[0]), 10); }});
    c.push_back({"log_softmax", [matrix](std::mt19937_64& r) { return V{random_tensor(matrix(r), r, true, 2.0)}; },
                 [](const V& v) { return project(ops::log_softmax(v[0]), 11); }});
    c.push_back({"layer_norm",
                 [](std::mt19937_64& r) {
                     const auto m = dim_between(r, 1, 4), n = dim_between(r, 2, 6);
                     return V{random_tensor({m, n}, r), random_tensor({n}, r), random_tensor({n}, r)};
                 },
                 [](const V& v) { return project(ops::layer_norm(v[0], v[1], v[2]), 12); }});
    c.push_back({"embedding", [](std::mt19937_64& r) { return V{random_tensor({5, dim_between(r, 1, 4)}, r)}; },
                 [](const V& v) {
                     const std::vector<std::int32_t> ids{3, 0, 3, 4, 1};
                     return project(ops::embedding(v[0], ids), 13);
                 }});
    c.push_back({"gather", [](std::mt19937_64& r) { return V{random_tensor({4, 5}, r)}; },
                 [](const V& v) {
                     const std::vector<std::int32_t> ids{4, 0, 2, 2};
                     return project(ops::gather(v[0], ids), 14);
                 }});
    c.push_back({"slice_rows", [](std::mt19937_64& r) { return V{random_tensor({5, dim_between(r, 1, 4)}, r)}; },
                 [](const V& v) { return project(ops::slice_rows(v[0], 1, 3), 15); }});
    c.push_back({"take", [](std::mt19937_64& r) { return V{random_tensor({6}, r)}; },
                 [](const V& v) {
                     const std::vector<std::size_t> idx{5, 1, 1, 3};
                     return project(ops::take(v[0], idx), 16);
                 }});
    c.push_back({"concat",
                 [matrix](std::mt19937_64& r) { return V{random_tensor(matrix(r), r), random_tensor({3}, r)}; },
                 [](const V& v) { return project(ops::concat(v), 17); }});
    c.push_back({"sum", [matrix](std::mt19937_64& r) { return V{random_tensor(matrix(r), r)}; },
                 [](const V& v) { return ops::scale(ops::sum(v[0]), 1.3); }});
    c.push_back({"mean", [matrix](std::mt19937_64& r) { return V{random_tensor(matrix(r), r)}; },
                 [](const V& v) { return ops::scale(ops::mean(v[0]), -0.8); }});
    c.push_back({"segment_sum", [](std::mt19937_64& r) { return V{random_tensor({7}, r)}; },
                 [](const V& v) {
                     const std::vector<std::size_t> lengths{2, 4, 1};
                     return project(ops::segment_sum(v[0], lengths), 18);
                 }});
    c.push_back({"masked_fill", [](std::mt19937_64& r) { return V{random_tensor({2, 3}, r)}; },
                 [](const V& v) {
                     const std::vector<std::uint8_t> mask{0, 1, 0, 0, 0, 1};
                     return project(ops::masked_fill(v[0], mask, -2.0), 19);
                 }});
    for (bool causal : {false, true}) {
        c.push_back({causal ? "attention_causal" : "attention",
                     [](std::mt19937_64& r) {
                         return V{random_tensor({5, 4}, r), random_tensor({6, 4}, r), random_tensor({6, 4}, r)};
                     },
                     [causal](const V& v) {
                         // Two packed problems: queries 0..1 over keys 0..2, queries 2..4 over keys 3..5.
                         const std::vector<slic::ops::AttentionSegment> seg{{0, 2, 0, 3}, {2, 3, 3, 3}};
                         return project(ops::multi_head_attention(v[0], v[1], v[2], 2, seg, causal), 20);
                     }});
    }
    return c;
}

}  // namespace testutil
