#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "metor/common.hpp"
#include "metor/rng.hpp"

namespace metor {

using Shape = std::vector<long>;

inline long shape_numel(const Shape& shape) {
    long n = 1;
    for (long d : shape) n *= d;
    return n;
}

inline Shape shape_strides(const Shape& shape) {
    Shape st(shape.size());
    long acc = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        st[i] = acc;
        acc *= shape[i];
    }
    return st;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

template <typename T>
class Tape;

// Dense n-dimensional array. Value semantics; the payload is shared, so
// copies are cheap and op results are treated as immutable once created.
// A tensor optionally carries a node handle on a Tape, in which case
// gradients flow through it during Tape::backward.
template <typename T>
class Tensor {
public:
    Tensor() : shape_{}, data_(std::make_shared<std::vector<T>>(1, T(0))) {}

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<T>>(shape_numel(shape_), T(0))) {}

    Tensor(Shape shape, std::vector<T> values)
        : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(std::move(values))) {
        if (shape_numel(shape_) != static_cast<long>(data_->size()))
            throw std::invalid_argument("tensor: shape " + shape_str(shape_) +
                                        " does not match data length " +
                                        std::to_string(data_->size()));
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_->begin(), t.data_->end(), v);
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), T mean = T(0)) {
        Tensor t(std::move(shape));
        for (auto& v : *t.data_) v = static_cast<T>(rng.normal(mean, stddev));
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    long dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    long numel() const { return static_cast<long>(data_->size()); }

    const std::vector<T>& data() const { return *data_; }
    const std::shared_ptr<std::vector<T>>& data_ptr() const { return data_; }

    // Only valid off-tape: recorded values must stay immutable so saved
    // activations remain consistent with the backward pass.
    std::vector<T>& mutable_data() {
        assert(node_ < 0 && "mutating a tensor that is recorded on a tape");
        return *data_;
    }

    T operator[](long i) const { return (*data_)[static_cast<size_t>(i)]; }

    T value() const {
        if (numel() != 1)
            throw std::invalid_argument("value(): tensor is not a scalar, shape " +
                                        shape_str(shape_));
        return (*data_)[0];
    }

    bool on_tape() const { return node_ >= 0; }
    Tape<T>* tape() const { return tape_; }
    long node() const { return node_; }
    bool requires_grad() const { return requires_grad_; }

    bool all_finite() const {
        for (const T& v : *data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    Tape<T>* tape_ = nullptr;
    long node_ = -1;
    bool requires_grad_ = false;

    friend class Tape<T>;
};

// Reverse-mode gradient tape. Nodes are appended in construction order,
// which is already topological (an op's inputs exist before its output),
// so backward is a single reverse sweep. A tape is single-use: one forward
// pass, one backward call, then read leaf gradients.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers an existing value as a leaf. The returned tensor aliases the
    // input payload.
    Tensor<T> leaf(const Tensor<T>& value, bool requires_grad) {
        Tensor<T> out = value;
        out.tape_ = this;
        out.node_ = static_cast<long>(nodes_.size());
        out.requires_grad_ = requires_grad;
        nodes_.push_back(Node{value.numel(), {}, requires_grad, true, nullptr});
        return out;
    }

    // Two-step registration: emit the value first so the backward closure
    // can capture the new node's id, then attach it with set_backward.
    Tensor<T> emit(Shape shape, std::vector<T> values) {
        Tensor<T> out(std::move(shape), std::move(values));
        out.tape_ = this;
        out.node_ = static_cast<long>(nodes_.size());
        out.requires_grad_ = true;
        nodes_.push_back(Node{out.numel(), {}, true, false, nullptr});
        return out;
    }

    void set_backward(long node, BackwardFn fn) {
        nodes_[static_cast<size_t>(node)].backward = std::move(fn);
    }

    bool wants_grad(long node) const { return nodes_[static_cast<size_t>(node)].needs_grad; }

    // Gradient accumulator for a node, zero-initialized on first touch.
    std::vector<T>& grad_buffer(long node) {
        Node& n = nodes_[static_cast<size_t>(node)];
        if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.numel), T(0));
        return n.grad;
    }

    bool has_grad(long node) const { return !nodes_[static_cast<size_t>(node)].grad.empty(); }

    void backward(const Tensor<T>& loss) {
        if (loss.tape_ != this || loss.node_ < 0)
            throw std::invalid_argument("backward: loss is not recorded on this tape");
        if (loss.numel() != 1)
            throw std::invalid_argument("backward: loss must be a scalar, shape " +
                                        shape_str(loss.shape()));
        if (backward_done_)
            throw std::logic_error("backward: tape already swept; use a fresh tape per step");
        backward_done_ = true;

        grad_buffer(loss.node_)[0] = T(1);
        for (long i = loss.node_; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.grad.empty()) continue;  // not on any path from the loss
            if (n.backward) n.backward(*this);
        }
        // Leaves off the loss path still expose a zero gradient of the
        // right shape.
        for (auto& n : nodes_)
            if (n.is_leaf && n.needs_grad && n.grad.empty())
                n.grad.assign(static_cast<size_t>(n.numel), T(0));
    }

    const std::vector<T>& grad(const Tensor<T>& t) const {
        if (t.tape_ != this || t.node_ < 0)
            throw std::invalid_argument("grad: tensor is not recorded on this tape");
        const Node& n = nodes_[static_cast<size_t>(t.node_)];
        if (n.grad.empty())
            throw std::logic_error("grad: backward has not populated this node");
        return n.grad;
    }

    size_t size() const { return nodes_.size(); }
    bool swept() const { return backward_done_; }

private:
    struct Node {
        long numel;
        std::vector<T> grad;
        bool needs_grad;
        bool is_leaf;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

}  // namespace metor
