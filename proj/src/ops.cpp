#include "slic/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "slic/kernels.hpp"

namespace slic::ops {
namespace {

using detail::Node;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                                shape_str(b));
}

void require_matrix(const char* op, const Tensor& t) {
    if (t.shape().size() != 2)
        throw std::invalid_argument(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

// Gradient buffer of parent i, or nullptr when it takes no gradient.
double* pgrad(Node& self, std::size_t i) {
    auto& p = *self.parents[i];
    return p.requires_grad ? p.grad.data() : nullptr;
}

const std::vector<double>& pval(const Node& self, std::size_t i) { return self.parents[i]->value; }


}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix("matmul", a);
    require_matrix("matmul", b);
    if (a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n);
    kernels::gemm_nn(m, n, k, a.data(), b.data(), out);
    return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, n, k](Node& self) {
        if (double* ga = pgrad(self, 0))
            kernels::gemm_nt(m, k, n, self.grad, pval(self, 1), {ga, m * k}, true);
        if (double* gb = pgrad(self, 1))
            kernels::gemm_tn(k, n, m, pval(self, 0), self.grad, {gb, k * n}, true);
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix("matmul_nt", a);
    require_matrix("matmul_nt", b);
    if (a.dim(1) != b.dim(1)) shape_error("matmul_nt", a.shape(), b.shape());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<double> out(m * n);
    kernels::gemm_nt(m, n, k, a.data(), b.data(), out);
    return make_result("matmul_nt", {m, n}, std::move(out), {a, b}, [m, n, k](Node& self) {
        if (double* ga = pgrad(self, 0))
            kernels::gemm_nn(m, k, n, self.grad, pval(self, 1), {ga, m * k}, true);
        if (double* gb = pgrad(self, 1))
            kernels::gemm_tn(n, k, m, self.grad, pval(self, 0), {gb, n * k}, true);
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p)
            if (double* g = pgrad(self, p))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
        if (double* g = pgrad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (double* g = pgrad(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
        const auto& av = pval(self, 0);
        const auto& bv = pval(self, 1);
        if (double* g = pgrad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
        if (double* g = pgrad(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
    if (bias.shape().size() != 1 || bias.dim(0) != a.cols() || a.shape().empty())
        shape_error("add_bias", a.shape(), bias.shape());
    const std::size_t rows = a.rows(), cols = a.cols();
    std::vector<double> out(a.numel());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = a.data()[r * cols + c] + bias.data()[c];
    return make_result("add_bias", a.shape(), std::move(out), {a, bias}, [rows, cols](Node& self) {
        if (double* g = pgrad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (double* g = pgrad(self, 1))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
    });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    return make_result("scale", a.shape(), std::move(out), {a}, [c](Node& self) {
        if (double* g = pgrad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * c;
    });
}

Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
    return make_result("add_scalar", a.shape(), std::move(out), {a}, [](Node& self) {
        if (double* g = pgrad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor exp(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
    return make_result("exp", a.shape(), std::move(out), {a}, [](Node& self) {
        if (double* g = pgrad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * self.value[i];
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, a.data()[i]);
    return make_result("relu", a.shape(), std::move(out), {a}, [](Node& self) {
        const auto& x = pval(self, 0);
        if (double* g = pgrad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (x[i] > 0.0) g[i] += self.grad[i];
    });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.data()[i];
        out[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
    }
    return make_result("gelu", a.shape(), std::move(out), {a}, [](Node& self) {
        const auto& xv = pval(self, 0);
        if (double* g = pgrad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double x = xv[i];
                const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
                const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
                g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
            }
    });
}

Tensor softmax(const Tensor& a) {
    if (a.shape().empty()) throw std::invalid_argument("softmax: scalar input");
    const std::size_t rows = a.rows(), cols = a.cols();
    std::vector<double> out(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data().data() + r * cols;
        double* y = out.data() + r * cols;
        const double mx = *std::max_element(x, x + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - mx));
        for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
    }
    return make_result("softmax", a.shape(), std::move(out), {a}, [rows, cols](Node& self) {
        double* g = pgrad(self, 0);
        if (!g) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * cols;
            const double* gy = self.grad.data() + r * cols;
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += gy[c] * y[c];
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (gy[c] - dot);
        }
    });
}

Tensor log_softmax(const Tensor& a) {
    if (a.shape().empty()) throw std::invalid_argument("log_softmax: scalar input");
    const std::size_t rows = a.rows(), cols = a.cols();
    std::vector<double> out(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data().data() + r * cols;
        double* y = out.data() + r * cols;
        const double mx = *std::max_element(x, x + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t c = 0; c < cols; ++c) y[c] = x[c] - lse;
    }
    return make_result("log_softmax", a.shape(), std::move(out), {a}, [rows, cols](Node& self) {
        double* g = pgrad(self, 0);
        if (!g) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * cols;
            const double* gy = self.grad.data() + r * cols;
            double total = 0.0;
            for (std::size_t c = 0; c < cols; ++c) total += gy[c];
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += gy[c] - std::exp(y[c]) * total;
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.shape().empty() || gamma.shape() != Shape{x.cols()} || beta.shape() != gamma.shape())
        shape_error("layer_norm", x.shape(), gamma.shape());
    const std::size_t rows = x.rows(), cols = x.cols();
    std::vector<double> out(x.numel());
    // Normalized values and inverse std are kept for the backward rule.
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * cols;
        double mu = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= static_cast<double>(cols);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t c = 0; c < cols; ++c) {
            const double h = (xr[c] - mu) * is;
            (*xhat)[r * cols + c] = h;
            out[r * cols + c] = h * gamma.data()[c] + beta.data()[c];
        }
    }
    return make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                       [rows, cols, xhat, inv_std](Node& self) {
                           const auto& gam = pval(self, 1);
                           double* gx = pgrad(self, 0);
                           double* gg = pgrad(self, 1);
                           double* gb = pgrad(self, 2);
                           const double n = static_cast<double>(cols);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* gy = self.grad.data() + r * cols;
                               const double* h = xhat->data() + r * cols;
                               double sum_d = 0.0, sum_dh = 0.0;
                               for (std::size_t c = 0; c < cols; ++c) {
                                   const double d = gy[c] * gam[c];
                                   sum_d += d;
                                   sum_dh += d * h[c];
                                   if (gg) gg[c] += gy[c] * h[c];
                                   if (gb) gb[c] += gy[c];
                               }
                               if (!gx) continue;
                               const double is = (*inv_std)[r];
                               for (std::size_t c = 0; c < cols; ++c) {
                                   const double d = gy[c] * gam[c];
                                   gx[r * cols + c] += is * (d - sum_d / n - h[c] * sum_dh / n);
                               }
                           }
                       });
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
    require_matrix("embedding", table);
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
            throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table " +
                                    shape_str(table.shape()));
        std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    std::vector<std::int32_t> saved(ids.begin(), ids.end());
    return make_result("embedding", {ids.size(), d}, std::move(out), {table},
                       [saved = std::move(saved), d](Node& self) {
                           double* g = pgrad(self, 0);
                           if (!g) return;
                           for (std::size_t i = 0; i < saved.size(); ++i) {
                               double* row = g + static_cast<std::size_t>(saved[i]) * d;
                               for (std::size_t c = 0; c < d; ++c) row[c] += self.grad[i * d + c];
                           }
                       });
}

Tensor gather(const Tensor& a, std::span<const std::int32_t> ids) {
    require_matrix("gather", a);
    const std::size_t n = a.dim(0), v = a.dim(1);
    if (ids.size() != n) shape_error("gather", a.shape(), Shape{ids.size()});
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
            throw std::out_of_range("gather: id " + std::to_string(ids[i]) + " outside row width " +
                                    std::to_string(v));
        out[i] = a.data()[i * v + static_cast<std::size_t>(ids[i])];
    }
    std::vector<std::int32_t> saved(ids.begin(), ids.end());
    return make_result("gather", {n}, std::move(out), {a}, [saved = std::move(saved), v](Node& self) {
        if (double* g = pgrad(self, 0))
            for (std::size_t i = 0; i < saved.size(); ++i)
                g[i * v + static_cast<std::size_t>(saved[i])] += self.grad[i];
    });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
    require_matrix("slice_rows", a);
    if (begin + count > a.dim(0)) shape_error("slice_rows", a.shape(), Shape{begin + count, a.dim(1)});
    const std::size_t cols = a.dim(1);
    std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                            a.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * cols));
    return make_result("slice_rows", {count, cols}, std::move(out), {a}, [begin, cols](Node& self) {
        if (double* g = pgrad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * cols + i] += self.grad[i];
    });
}

Tensor take(const Tensor& a, std::span<const std::size_t> indices) {
    std::vector<double> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= a.numel())
            throw std::out_of_range("take: index " + std::to_string(indices[i]) + " outside " +
                                    shape_str(a.shape()));
        out[i] = a.data()[indices[i]];
    }
    std::vector<std::size_t> saved(indices.begin(), indices.end());
    return make_result("take", {indices.size()}, std::move(out), {a},
                       [saved = std::move(saved)](Node& self) {
                           if (double* g = pgrad(self, 0))
                               for (std::size_t i = 0; i < saved.size(); ++i) g[saved[i]] += self.grad[i];
                       });
}

Tensor concat(std::span<const Tensor> parts) {
    std::vector<double> out;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        sizes.push_back(p.numel());
    }
    const std::size_t total = out.size();
    return make_result("concat", {total}, std::move(out), {parts.begin(), parts.end()},
                       [sizes = std::move(sizes)](Node& self) {
                           std::size_t off = 0;
                           for (std::size_t p = 0; p < sizes.size(); ++p) {
                               if (double* g = pgrad(self, p))
                                   for (std::size_t i = 0; i < sizes[p]; ++i) g[i] += self.grad[off + i];
                               off += sizes[p];
                           }
                       });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x;
    return make_result("sum", {}, {s}, {a}, [](Node& self) {
        if (double* g = pgrad(self, 0)) {
            const std::size_t n = self.parents[0]->value.size();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor segment_sum(const Tensor& a, std::span<const std::size_t> lengths) {
    std::size_t total = 0;
    for (auto l : lengths) total += l;
    if (total != a.numel()) shape_error("segment_sum", a.shape(), Shape{total});
    std::vector<double> out(lengths.size(), 0.0);
    std::size_t off = 0;
    for (std::size_t s = 0; s < lengths.size(); ++s)
        for (std::size_t i = 0; i < lengths[s]; ++i) out[s] += a.data()[off++];
    std::vector<std::size_t> saved(lengths.begin(), lengths.end());
    return make_result("segment_sum", {lengths.size()}, std::move(out), {a},
                       [saved = std::move(saved)](Node& self) {
                           double* g = pgrad(self, 0);
                           if (!g) return;
                           std::size_t o = 0;
                           for (std::size_t s = 0; s < saved.size(); ++s)
                               for (std::size_t i = 0; i < saved[s]; ++i) g[o++] += self.grad[s];
                       });
}

Tensor masked_fill(const Tensor& a, std::span<const std::uint8_t> mask, double value) {
    if (mask.size() != a.numel()) shape_error("masked_fill", a.shape(), Shape{mask.size()});
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < out.size(); ++i)
        if (mask[i]) out[i] = value;
    std::vector<std::uint8_t> saved(mask.begin(), mask.end());
    return make_result("masked_fill", a.shape(), std::move(out), {a},
                       [saved = std::move(saved)](Node& self) {
                           if (double* g = pgrad(self, 0))
                               for (std::size_t i = 0; i < saved.size(); ++i)
                                   if (!saved[i]) g[i] += self.grad[i];
                       });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            std::span<const AttentionSegment> segments, bool causal) {
    require_matrix("multi_head_attention", q);
    require_matrix("multi_head_attention", k);
    require_matrix("multi_head_attention", v);
    if (k.shape() != v.shape() || q.dim(1) != k.dim(1)) shape_error("multi_head_attention", q.shape(), k.shape());
    const std::size_t d = q.dim(1);
    if (heads == 0 || d % heads != 0)
        throw std::invalid_argument("multi_head_attention: width " + std::to_string(d) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (const auto& s : segments) {
        if (s.q_begin + s.q_len > q.dim(0) || s.k_begin + s.k_len > k.dim(0) || s.k_len == 0)
            throw std::out_of_range("multi_head_attention: segment outside packed rows");
        if (causal && s.q_len > s.k_len)
            throw std::invalid_argument("multi_head_attention: causal segment has more queries than keys");
    }

    // Attention probabilities per segment/head, row-major q_len x k_len.
    auto probs = std::make_shared<std::vector<double>>();
    std::vector<std::size_t> prob_off(segments.size());
    std::size_t total = 0;
    for (std::size_t s = 0; s < segments.size(); ++s) {
        prob_off[s] = total;
        total += heads * segments[s].q_len * segments[s].k_len;
    }
    probs->assign(total, 0.0);

    const double* qv = q.data().data();
    const double* kv = k.data().data();
    const double* vv = v.data().data();
    std::vector<double> out(q.numel(), 0.0);
    for (std::size_t s = 0; s < segments.size(); ++s) {
        const auto& seg = segments[s];
        for (std::size_t h = 0; h < heads; ++h) {
            double* p = probs->data() + prob_off[s] + h * seg.q_len * seg.k_len;
            for (std::size_t i = 0; i < seg.q_len; ++i) {
                const double* qi = qv + (seg.q_begin + i) * d + h * dh;
                const std::size_t visible = causal ? i + 1 : seg.k_len;
                double* pi = p + i * seg.k_len;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < visible; ++j) {
                    const double* kj = kv + (seg.k_begin + j) * d + h * dh;
                    double dot = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
                    pi[j] = dot * inv_sqrt;
                    mx = std::max(mx, pi[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < visible; ++j) z += (pi[j] = std::exp(pi[j] - mx));
                for (std::size_t j = 0; j < visible; ++j) pi[j] /= z;
                double* oi = out.data() + (seg.q_begin + i) * d + h * dh;
                for (std::size_t j = 0; j < visible; ++j) {
                    const double* vj = vv + (seg.k_begin + j) * d + h * dh;
                    for (std::size_t c = 0; c < dh; ++c) oi[c] += pi[j] * vj[c];
                }
            }
        }
    }

    std::vector<AttentionSegment> segs(segments.begin(), segments.end());
    return make_result(
        "multi_head_attention", q.shape(), std::move(out), {q, k, v},
        [segs = std::move(segs), prob_off = std::move(prob_off), probs, heads, d, dh, inv_sqrt,
         causal](Node& self) {
            const double* qv = self.parents[0]->value.data();
            const double* kv = self.parents[1]->value.data();
            const double* vv = self.parents[2]->value.data();
            double* gq = pgrad(self, 0);
            double* gk = pgrad(self, 1);
            double* gv = pgrad(self, 2);
            std::vector<double> dp;
            for (std::size_t s = 0; s < segs.size(); ++s) {
                const auto& seg = segs[s];
                dp.resize(seg.k_len);
                for (std::size_t h = 0; h < heads; ++h) {
                    const double* p = probs->data() + prob_off[s] + h * seg.q_len * seg.k_len;
                    for (std::size_t i = 0; i < seg.q_len; ++i) {
                        const std::size_t visible = causal ? i + 1 : seg.k_len;
                        const double* pi = p + i * seg.k_len;
                        const double* go = self.grad.data() + (seg.q_begin + i) * d + h * dh;
                        double dot = 0.0;
                        for (std::size_t j = 0; j < visible; ++j) {
                            const double* vj = vv + (seg.k_begin + j) * d + h * dh;
                            double acc = 0.0;
                            for (std::size_t c = 0; c < dh; ++c) acc += go[c] * vj[c];
                            dp[j] = acc;
                            dot += acc * pi[j];
                            if (gv) {
                                double* gvj = gv + (seg.k_begin + j) * d + h * dh;
                                for (std::size_t c = 0; c < dh; ++c) gvj[c] += pi[j] * go[c];
                            }
                        }
                        const double* qi = qv + (seg.q_begin + i) * d + h * dh;
                        double* gqi = gq ? gq + (seg.q_begin + i) * d + h * dh : nullptr;
                        for (std::size_t j = 0; j < visible; ++j) {
                            const double ds = pi[j] * (dp[j] - dot) * inv_sqrt;
                            if (ds == 0.0) continue;
                            const double* kj = kv + (seg.k_begin + j) * d + h * dh;
                            if (gqi)
                                for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                            if (gk) {
                                double* gkj = gk + (seg.k_begin + j) * d + h * dh;
                                for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                            }
                        }
                    }
                }
            }
        });
}

}  // namespace slic::ops
