#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <unordered_map>
#include <vector>

#include "maskmatch/numerics/parameters.hpp"
#include "maskmatch/numerics/tensor.hpp"

namespace maskmatch {

template <typename T>
class Tape;

// Handle to a value recorded on a tape.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return tape->value(id); }
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const { return tape->requires_grad(id); }
};

// Reverse-mode gradient tape. Nodes are appended in evaluation order, so a
// single reverse sweep visits every node after all of its consumers.
template <typename T>
class Tape {
   public:
    // Called during the backward sweep with the node's own index; reads the
    // node's gradient and accumulates into its inputs via grad_target().
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }

    // Free leaf whose gradient is kept on the tape (see grad()).
    Var<T> leaf(Tensor<T> value) { return push(std::move(value), true, {}); }

    // Tracked parameter: gradient is added into p.grad during backward.
    Var<T> parameter(Parameter<T>& p) { return bind(p.value, &p.grad); }

    // Untracked parameter view (evaluation).
    Var<T> parameter(const Parameter<T>& p) { return bind(p.value, nullptr); }

    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
        bool needs = false;
        for (const auto& in : inputs) needs = needs || nodes_[in.id].requires_grad;
        return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
    }

    Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
        bool needs = false;
        for (const auto& in : inputs) needs = needs || nodes_[in.id].requires_grad;
        return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
    }

    const Tensor<T>& value(std::size_t id) const {
        const Node& n = nodes_.at(id);
        return n.external ? *n.external : n.value;
    }

    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    // Gradient of the current node during backward.
    const Tensor<T>& grad_of(std::size_t id) const { return nodes_[id].grad; }

    // Lazily allocated gradient accumulator of an input, or nullptr when the
    // input does not participate in differentiation.
    Tensor<T>* grad_target(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return nullptr;
        if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
        return &n.grad;
    }

    // Gradient of a leaf after backward; nullptr if it was not reached.
    const Tensor<T>* grad(Var<T> v) const {
        const Node& n = nodes_.at(v.id);
        return n.grad.empty() ? nullptr : &n.grad;
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    bool consumed() const noexcept { return consumed_; }
    std::size_t visited() const noexcept { return visited_; }

    void backward(Var<T> loss) {
        if (consumed_) fail(ErrorKind::kTapeState, "backward called on a consumed tape");
        if (loss.tape != this) fail(ErrorKind::kTapeState, "loss was recorded on another tape");
        if (value(loss.id).size() != 1) {
            fail(ErrorKind::kDimension,
                 "backward expects a scalar loss, got " + shape_string(value(loss.id).shape()));
        }
        consumed_ = true;
        visited_ = 0;
        if (!nodes_[loss.id].requires_grad) return;
        nodes_[loss.id].grad = Tensor<T>(value(loss.id).shape(), T{1});
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.empty()) continue;
            ++visited_;
            if (n.fn) n.fn(*this, i);
            if (n.sink) *n.sink += n.grad;
        }
    }

   private:
    struct Node {
        Tensor<T> value;
        const Tensor<T>* external = nullptr;
        Tensor<T> grad;
        Tensor<T>* sink = nullptr;
        bool requires_grad = false;
        BackwardFn fn;
    };

    Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
        if (consumed_) fail(ErrorKind::kTapeState, "cannot record on a consumed tape");
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.fn = std::move(fn);
        nodes_.push_back(std::move(n));
        return Var<T>{this, nodes_.size() - 1};
    }

    Var<T> bind(const Tensor<T>& value, Tensor<T>* sink) {
        auto it = bound_.find(&value);
        if (it != bound_.end()) return Var<T>{this, it->second};
        if (consumed_) fail(ErrorKind::kTapeState, "cannot record on a consumed tape");
        Node n;
        n.external = &value;
        n.sink = sink;
        n.requires_grad = sink != nullptr;
        nodes_.push_back(std::move(n));
        bound_.emplace(&value, nodes_.size() - 1);
        return Var<T>{this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
    std::unordered_map<const Tensor<T>*, std::size_t> bound_;
    bool consumed_ = false;
    std::size_t visited_ = 0;
};

}  // namespace maskmatch
