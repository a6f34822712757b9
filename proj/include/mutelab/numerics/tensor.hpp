#pragma once

// Dense row-major tensors with a dynamic reverse-mode tape.
//
// Every op result keeps shared handles to its parents and a backward closure,
// but only when at least one parent requires a gradient. The tape is therefore
// rebuilt on every forward pass and released together with the last handle to
// the result. Leaves (parameters, adversarial samples) are never written by
// backward(): their gradients are returned in a Gradients map, so several
// threads may run forward/backward concurrently over the same read-only leaves.

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mutelab/error.hpp"

namespace mutelab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s += (i ? "," : "") + std::to_string(shape[i]);
    }
    return s + "]";
}

template <typename T>
class GradAccess;

template <typename T>
struct Node {
    using BackwardFn = std::function<void(const Node&, std::span<const T>, GradAccess<T>&)>;

    Shape shape;
    std::vector<T> value;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;
};

namespace detail {
inline bool& no_grad_flag() {
    thread_local bool flag = false;
    return flag;
}
}  // namespace detail

// Within scope, op results on this thread never record a tape.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::no_grad_flag()) { detail::no_grad_flag() = true; }
    ~NoGradGuard() { detail::no_grad_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    static BasicTensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static BasicTensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        expects(data.size() == shape_numel(shape),
                "tensor data length " + std::to_string(data.size()) + " does not match shape " +
                    shape_str(shape));
        auto node = std::make_shared<Node<T>>();
        node->shape = std::move(shape);
        node->value = std::move(data);
        node->requires_grad = requires_grad;
        return BasicTensor(std::move(node));
    }

    static BasicTensor scalar(T v) { return from({}, {v}); }

    explicit BasicTensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->value.size(); }
    std::span<const T> data() const { return node_->value; }
    const std::vector<T>& values() const { return node_->value; }

    // Direct write access for initializers and optimizers only; never call on
    // a tensor that is part of a live tape.
    std::span<T> mutable_data() { return node_->value; }

    T item() const {
        expects(numel() == 1, "item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    // A copy of the value with no tape attached.
    BasicTensor detach() const { return from(shape(), node_->value, false); }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

    template <typename U>
    BasicTensor<U> cast(bool requires_grad = false) const {
        std::vector<U> out(node_->value.begin(), node_->value.end());
        return BasicTensor<U>::from(shape(), std::move(out), requires_grad);
    }

private:
    std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<float>;

// Per-backward storage of gradients keyed by node.
template <typename T>
class GradAccess {
public:
    GradAccess(const Node<T>& node, std::unordered_map<const Node<T>*, std::vector<T>>& store)
        : node_(node), store_(store) {}

    // Accumulation buffer for parent i; empty when that parent needs no gradient.
    std::span<T> operator[](std::size_t i) {
        const auto& parent = node_.parents.at(i);
        if (!parent->requires_grad) {
            return {};
        }
        auto [it, inserted] = store_.try_emplace(parent.get());
        if (inserted) {
            it->second.assign(parent->value.size(), T(0));
        }
        return it->second;
    }

private:
    const Node<T>& node_;
    std::unordered_map<const Node<T>*, std::vector<T>>& store_;
};

// Gradients of a scalar loss with respect to the leaves reachable from it.
template <typename T>
class Gradients {
public:
    // Gradient for a leaf; zeros when the leaf did not influence the loss.
    std::vector<T> operator[](const BasicTensor<T>& leaf) const {
        if (auto it = grads_.find(leaf.node()); it != grads_.end()) {
            return it->second;
        }
        return std::vector<T>(leaf.numel(), T(0));
    }

    const std::vector<T>* find(const BasicTensor<T>& leaf) const {
        auto it = grads_.find(leaf.node());
        return it == grads_.end() ? nullptr : &it->second;
    }

    bool contains(const BasicTensor<T>& leaf) const { return grads_.count(leaf.node()) > 0; }

    std::size_t size() const { return grads_.size(); }

private:
    template <typename U>
    friend Gradients<U> backward(const BasicTensor<U>& loss);

    std::unordered_map<const Node<T>*, std::vector<T>> grads_;
    std::vector<std::shared_ptr<Node<T>>> keep_alive_;
};

template <typename T>
Gradients<T> backward(const BasicTensor<T>& loss) {
    expects(loss.defined() && loss.numel() == 1 && loss.rank() <= 1,
            "backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
    Gradients<T> result;
    if (!loss.requires_grad()) {
        return result;
    }

    // Iterative post-order DFS over the requires_grad subgraph.
    std::vector<Node<T>*> order;
    std::unordered_set<const Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
    result.keep_alive_.push_back(loss.node_ptr());
    visited.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            const auto& parent = node->parents[next++];
            if (parent->requires_grad && visited.insert(parent.get()).second) {
                if (!parent->backward) {
                    result.keep_alive_.push_back(parent);
                }
                stack.emplace_back(parent.get(), 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    std::unordered_map<const Node<T>*, std::vector<T>> store;
    store[loss.node()].assign(1, T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        auto found = store.find(node);
        if (found == store.end()) {
            continue;
        }
        if (!node->backward) {
            // Leaf: move gradient to the result.
            result.grads_.emplace(node, std::move(found->second));
            store.erase(found);
            continue;
        }
        std::vector<T> gout = std::move(found->second);
        store.erase(found);
        GradAccess<T> access(*node, store);
        node->backward(*node, gout, access);
    }
    return result;
}

namespace detail {

// Builds an op result, attaching the tape only when some parent needs it.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> value,
                           std::vector<BasicTensor<T>> parents,
                           typename Node<T>::BackwardFn fn) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool needs = false;
    if (!no_grad_flag()) {
        for (const auto& p : parents) {
            needs = needs || p.requires_grad();
        }
    }
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) {
            node->parents.push_back(p.node_ptr());
        }
        node->backward = std::move(fn);
    }
    return BasicTensor<T>(std::move(node));
}

}  // namespace detail

}  // namespace mutelab
