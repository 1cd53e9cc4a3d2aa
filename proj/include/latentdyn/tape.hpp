#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace latentdyn::diff {

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Dims& dims() const { return value().dims; }
};

/// Reverse-mode differentiation record. Nodes are appended in execution order,
/// so parents always precede children and a single reverse sweep visits each
/// node once.
class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor t) { return push(std::move(t), false, {}, nullptr, "constant"); }

    Var leaf(Tensor t) {
        const bool grad = t.requires_grad;
        return push(std::move(t), grad, {}, nullptr, "leaf");
    }

    Var param(Tensor t) {
        t.requires_grad = true;
        return push(std::move(t), true, {}, nullptr, "param");
    }

    /// Append the result of an operation. `backward` reads this node's gradient
    /// and accumulates into the parents via `accumulate`.
    Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward, const char* op) {
        bool grad = false;
        for (auto p : parents) grad = grad || nodes_[p].requires_grad;
        return push(std::move(value), grad, std::move(parents), grad ? std::move(backward) : nullptr, op);
    }

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    /// Gradient of the last backward() target with respect to node `id`
    /// (zeros when the node received no gradient).
    std::vector<double> grad(std::size_t id) const {
        const auto& n = nodes_.at(id);
        if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
        return n.grad;
    }
    std::vector<double> grad(Var v) const { return grad(v.id); }

    /// Gradient buffer of an output node during backward; empty if unreached.
    const std::vector<double>& out_grad(std::size_t id) const { return nodes_[id].grad; }

    /// Mutable gradient buffer for a parent, allocated on first use. Returns
    /// nullptr for nodes that do not require gradients.
    std::vector<double>* accumulate(std::size_t id) {
        auto& n = nodes_[id];
        if (!n.requires_grad) return nullptr;
        if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
        return &n.grad;
    }

    void backward(Var target) {
        if (target.tape != this) throw std::invalid_argument("backward target belongs to another tape");
        auto& t = nodes_.at(target.id);
        if (t.value.size() != 1)
            throw ShapeError("backward requires a scalar target, got " + shape_string(t.value.dims));
        for (auto& n : nodes_) n.grad.clear();
        if (!t.requires_grad) return;
        t.grad.assign(1, 1.0);
        for (std::size_t i = target.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (n.backward && !n.grad.empty()) n.backward(*this, i);
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        bool requires_grad = false;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        std::vector<double> grad;
    };

    Var push(Tensor value, bool grad, std::vector<std::size_t> parents, BackwardFn fn, const char* op) {
#ifndef NDEBUG
        if (!value.all_finite())
            throw NumericalError(std::string("non-finite value produced by ") + op + " " +
                                 shape_string(value.dims));
#else
        (void)op;
#endif
        value.requires_grad = grad;
        nodes_.push_back(Node{std::move(value), grad, std::move(parents), std::move(fn), {}});
        return Var{this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

} // namespace latentdyn::diff
