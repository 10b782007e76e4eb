#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "orbit/tensor.hpp"

namespace orbit {

// Define-by-run reverse-mode tape. Each op returns a node holding its value;
// nodes that need gradients keep shared_ptr links to their parents plus a
// closure that scatters the node's gradient into them. Releasing the loss
// node frees the whole graph.

template <typename T>
struct VarNode {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<VarNode>> parents;
    std::function<void(VarNode&)> backward_fn;

    explicit VarNode(Tensor<T> v, bool rg = false) : value(std::move(v)), requires_grad(rg) {}

    Tensor<T>& ensure_grad() {
        if (grad.numel() != value.numel()) grad = Tensor<T>(value.shape());
        return grad;
    }

    void zero_grad() {
        if (grad.numel()) grad.fill(T(0));
    }
};

template <typename T>
using Var = std::shared_ptr<VarNode<T>>;

template <typename T>
Var<T> make_var(Tensor<T> value, bool requires_grad = false) {
    return std::make_shared<VarNode<T>>(std::move(value), requires_grad);
}

// Gradient recording switch (per thread). Eval-mode forwards run inside
// NoGradGuard so no graph is built and activations die immediately.
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

struct NoGradGuard {
    bool saved;
    NoGradGuard() : saved(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = saved; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Wires up an op result: the node records parents and a backward closure
// only when some parent needs a gradient (and recording is on).
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(VarNode<T>&)> backward_fn) {
    bool rg = false;
    if (grad_enabled()) {
        for (const Var<T>& p : parents) rg = rg || (p && p->requires_grad);
    }
    Var<T> node = make_var(std::move(value), rg);
    if (rg) {
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return node;
}

// Reverse-mode sweep from a scalar root. Gradients accumulate, so callers
// zero parameter grads between steps.
template <typename T>
void backward(const Var<T>& root) {
    if (!root->requires_grad) throw Error("backward: root does not require grad");
    if (root->value.numel() != 1) throw ShapeError("backward: root must be scalar");

    // Post-order over the requires_grad subgraph, iterative to keep deep
    // UNets off the call stack.
    std::vector<VarNode<T>*> order;
    std::unordered_set<VarNode<T>*> visited;
    std::vector<std::pair<VarNode<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            VarNode<T>* child = node->parents[next_child].get();
            ++next_child;
            if (child && child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (VarNode<T>* node : order) node->ensure_grad();
    root->grad.fill(T(0));
    root->grad[0] = T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

}  // namespace orbit
