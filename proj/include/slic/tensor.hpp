#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace slic {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One record of the dynamic tape. Non-leaf nodes keep their parents alive, so
// a graph lives exactly as long as some handle to its output does.
struct Node {
    Shape shape;
    std::vector<double> value;
    // Working buffer filled during a backward pass.
    std::vector<double> grad;
    // Leaves only: gradient accumulated across backward passes.
    std::vector<double> accumulated;
    bool requires_grad = false;
    bool is_leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
};

}  // namespace detail

// Handle to a tape node. Copies share the node; use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    // Row/column view used by the matrix ops; a 1-D tensor is a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const { return node_->value; }
    // Only leaves may be mutated in place (optimizer updates, test perturbations).
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t i) const { return node_->value.at(i); }

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->is_leaf; }
    const char* op_name() const { return node_->op; }

    // Accumulated gradient of a leaf; empty until a backward pass reaches it.
    std::span<const double> grad() const { return node_->accumulated; }
    void zero_grad();

    // Reverse-mode sweep from this scalar. Leaf gradients add to whatever they
    // already hold; running it twice on the same graph doubles them.
    void backward() const;

    // New leaf sharing no history, with a copy of the values.
    Tensor detach() const;
    Tensor clone(bool requires_grad) const;

    detail::Node& node() const { return *node_; }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

// While alive on a thread, ops on that thread record no history.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Builds an op result. History and the backward rule are attached only when
// grad mode is on and some parent requires a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents, std::function<void(detail::Node&)> backward_fn);

}  // namespace slic
