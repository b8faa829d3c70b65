#include "slic/tensor.hpp"

#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace slic {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = numel_of(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel_of(shape) != values.size())
        throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) + " needs " +
                                    std::to_string(numel_of(shape)) + " values, got " +
                                    std::to_string(values.size()));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

std::size_t Tensor::rows() const {
    const auto& s = shape();
    if (s.size() <= 1) return 1;
    return numel() / s.back();
}

std::size_t Tensor::cols() const {
    const auto& s = shape();
    if (s.empty()) return 1;
    return s.back();
}

std::span<double> Tensor::mutable_data() {
    if (!node_->is_leaf) throw std::logic_error("mutable_data: tensor is not a leaf");
    return node_->value;
}

double Tensor::item() const {
    if (numel() != 1)
        throw std::invalid_argument("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
}

void Tensor::zero_grad() { node_->accumulated.clear(); }

void Tensor::backward() const {
    if (numel() != 1)
        throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_str(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order with each node once.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (auto* n : order) n->grad.assign(n->value.size(), 0.0);
    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
    for (auto* n : order) {
        if (n->is_leaf) {
            if (n->accumulated.empty()) n->accumulated.assign(n->value.size(), 0.0);
            for (std::size_t i = 0; i < n->grad.size(); ++i) n->accumulated[i] += n->grad[i];
        }
        n->grad.clear();
        n->grad.shrink_to_fit();
    }
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor Tensor::clone(bool requires_grad) const { return from(shape(), node_->value, requires_grad); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents, std::function<void(detail::Node&)> backward_fn) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        node->is_leaf = false;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node_ptr());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

}  // namespace slic
