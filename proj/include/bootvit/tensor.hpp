#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bootvit/common.hpp"

namespace bootvit {

// Which network's forward pass a graph node belongs to. Used by the joint
// trainer to run one backward sweep per network over a single shared graph.
enum class Path : unsigned char { none = 0, vit = 1, agent = 2 };

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

// One record of the computation graph: value, optional gradient buffer and a
// backward closure that scatters this node's gradient into its inputs.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated on first touch, same length as value
    bool requires_grad = false;
    bool grad_dirty = false;  // true once any gradient has been accumulated
    Path path = Path::none;
    std::string name;
    std::vector<NodePtr<T>> inputs;
    std::function<void(Node<T>&)> backward;

    std::size_t numel() const { return value.size(); }

    // Returns a writable gradient buffer, zero-initialized on first use.
    T* grad_ptr() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
        grad_dirty = true;
        return grad.data();
    }

    void clear_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
        grad_dirty = false;
    }
};

template <typename T>
class Tensor;

// Append-only list of graph nodes in creation order. Backward visits the
// list in reverse exactly once, so gradients from multiple consumers of a
// tensor accumulate additively before that tensor's own backward runs.
template <typename T>
class Tape {
public:
    void record(NodePtr<T> n) { nodes_.push_back(std::move(n)); }

    std::size_t size() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    // Runs reverse-mode accumulation from a scalar loss. Gradients of tape
    // nodes are zeroed here; leaf (parameter) gradients are the caller's to
    // zero, which lets one graph serve several sweeps.
    // Nodes tagged with `skip` do not propagate: the sweep treats everything
    // computed on that path as constant.
    void backward(const Tensor<T>& loss, Path skip = Path::none);

private:
    std::vector<NodePtr<T>> nodes_;
};

namespace detail {

template <typename T>
inline Tape<T>*& active_tape_slot() {
    thread_local Tape<T>* tape = nullptr;
    return tape;
}

inline Path& current_path_slot() {
    thread_local Path p = Path::none;
    return p;
}

}  // namespace detail

template <typename T>
inline Tape<T>* active_tape() {
    return detail::active_tape_slot<T>();
}

inline Path current_path() { return detail::current_path_slot(); }

// Binds a tape for the duration of a scope; ops record onto it.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : prev_(detail::active_tape_slot<T>()) {
        detail::active_tape_slot<T>() = &tape;
    }
    ~TapeScope() { detail::active_tape_slot<T>() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* prev_;
};

// Tags nodes created within the scope as belonging to one network's pass.
class PathScope {
public:
    explicit PathScope(Path p) : prev_(detail::current_path_slot()) { detail::current_path_slot() = p; }
    ~PathScope() { detail::current_path_slot() = prev_; }
    PathScope(const PathScope&) = delete;
    PathScope& operator=(const PathScope&) = delete;

private:
    Path prev_;
};

// Value handle over a graph node. Copies share the node.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(NodePtr<T> n) : n_(std::move(n)) {}

    static Tensor zeros(Shape shape) {
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->value.assign(shape_numel(n->shape), T(0));
        return Tensor(std::move(n));
    }

    static Tensor full(Shape shape, T v) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }

    static Tensor scalar(T v) { return full({1}, v); }

    static Tensor from_data(Shape shape, std::vector<T> data) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("from_data: " + shape_str(shape) + " cannot hold " +
                             std::to_string(data.size()) + " elements");
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return Tensor(std::move(n));
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::size_t numel() const { return n_->numel(); }
    std::size_t dim(std::size_t i) const { return n_->shape.at(i); }

    std::vector<T>& data() { return n_->value; }
    const std::vector<T>& data() const { return n_->value; }

    bool has_grad() const { return n_->grad_dirty; }
    const std::vector<T>& grad() const { return n_->grad; }

    T item() const {
        if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
        return n_->value[0];
    }

    T at(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != n_->shape.size()) throw ShapeError("at: rank mismatch");
        std::size_t off = 0, i = 0;
        for (std::size_t v : idx) {
            if (v >= n_->shape[i]) throw ShapeError("at: index out of bounds");
            off = off * n_->shape[i] + v;
            ++i;
        }
        return n_->value[off];
    }

    Tensor& set_requires_grad(bool rg) {
        n_->requires_grad = rg;
        return *this;
    }
    bool requires_grad() const { return n_->requires_grad; }

    Tensor& set_name(std::string name) {
        n_->name = std::move(name);
        return *this;
    }
    const std::string& name() const { return n_->name; }

    void zero_grad() { n_->clear_grad(); }

    // Stop-gradient: a fresh constant leaf holding a copy of the values.
    Tensor detach() const {
        auto n = std::make_shared<Node<T>>();
        n->shape = n_->shape;
        n->value = n_->value;
        return Tensor(std::move(n));
    }

    NodePtr<T> node() const { return n_; }

private:
    NodePtr<T> n_;
};

namespace detail {

// Creates the result node of an op. The node is recorded (and given a
// backward) only when a tape is active and some input carries gradient;
// otherwise the op is a plain value computation.
template <typename T>
inline NodePtr<T> make_result(Shape shape, std::vector<NodePtr<T>> inputs) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value.assign(shape_numel(n->shape), T(0));
    bool any_rg = false;
    for (const auto& in : inputs)
        if (in->requires_grad) any_rg = true;
    if (any_rg && active_tape<T>() != nullptr) {
        n->requires_grad = true;
        n->path = current_path();
        n->inputs = std::move(inputs);
    }
    return n;
}

template <typename T, typename F>
inline void finish_op(const NodePtr<T>& n, F&& backward) {
    if (n->requires_grad) {
        n->backward = std::forward<F>(backward);
        active_tape<T>()->record(n);
    }
}

}  // namespace detail

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss, Path skip) {
    if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    for (auto& n : nodes_) n->clear_grad();
    NodePtr<T> root = loss.node();
    if (!root->requires_grad) return;  // loss disconnected from any parameter
    root->grad_ptr()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node<T>& n = **it;
        if (!n.backward) continue;
        if (skip != Path::none && n.path == skip) continue;
        if (!n.grad_dirty) continue;  // not reachable from this loss
        n.backward(n);
    }
}

}  // namespace bootvit
