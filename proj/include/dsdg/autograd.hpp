#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dsdg/tensor.hpp"

namespace dsdg {

// One value in the computation graph. Non-leaf nodes own their parents and a
// closure that pushes this node's gradient into them.
struct Node {
    Tensor value;
    Tensor grad;  // empty until a backward pass reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor& grad_buffer();
};

// Handle to a graph node. Copying a Var shares the node.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Tensor value);
    static Var parameter(Tensor value);

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad_buffer() { return node_->grad_buffer(); }
    bool requires_grad() const { return node_->requires_grad; }
    const Shape& shape() const { return node_->value.shape(); }
    double item() const;

    void zero_grad();
    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared_node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Whether new ops record parents and backward closures (thread-local).
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Builds a node for an op result. When no parent requires grad (or grad
// recording is off) the closure and parents are dropped.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

// Reverse-mode sweep from a scalar output; accumulates into leaf grads.
void backward(const Var& output);

}  // namespace dsdg
