#include "dsdg/autograd.hpp"

#include <unordered_set>

#include "dsdg/error.hpp"

namespace dsdg {

namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var Var::constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var Var::parameter(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
}

double Var::item() const {
    if (value().size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return value()[0];
}

void Var::zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(0.0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (g_grad_enabled) {
        for (const auto& p : parents) {
            if (p.requires_grad()) {
                n->requires_grad = true;
                break;
            }
        }
    }
    if (n->requires_grad) {
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.shared_node());
        n->backward = std::move(backward);
    }
    return Var(std::move(n));
}

void backward(const Var& output) {
    if (output.value().size() != 1)
        throw ShapeError("backward() needs a scalar output, got " + to_string(output.shape()));
    if (!output.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{output.node(), 0}};
    visited.insert(output.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    output.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backward) continue;
        for (auto& p : n->parents)
            if (p->requires_grad) p->grad_buffer();
        n->backward(*n);
        // Intermediate gradients are not needed once propagated.
        n->grad = Tensor();
    }
}

}  // namespace dsdg
