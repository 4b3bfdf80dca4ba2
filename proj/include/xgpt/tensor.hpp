#pragma once

// Reverse-mode autodiff tensors.  A Tensor<T> is a shared handle onto dense
// row-major storage plus an optional graph node recorded by the op that
// produced it.  backward() walks the recorded nodes in reverse topological
// order; gradient accumulation order is fixed by construction order, so
// single-threaded runs are bit-reproducible.

#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace xgpt {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

template <typename T> struct Node;

template <typename T>
struct TensorStorage {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;   // empty until first accumulation
    bool requires_grad = false;
};

// Autograd recording is on by default; scopes that only need values (decoding,
// finite differences) disable it to skip node construction entirely.
inline bool& autograd_flag() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(autograd_flag()) { autograd_flag() = false; }
    ~NoGradGuard() { autograd_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.st_ = std::make_shared<TensorStorage<T>>();
        t.st_->shape = std::move(shape);
        t.st_->values.assign(shape_size(t.st_->shape), T(0));
        t.st_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from_values(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (shape_size(shape) != values.size()) {
            throw std::invalid_argument("Tensor::from_values: shape " + shape_str(shape) +
                                        " does not match value count " + std::to_string(values.size()));
        }
        Tensor t;
        t.st_ = std::make_shared<TensorStorage<T>>();
        t.st_->shape = std::move(shape);
        t.st_->values = std::move(values);
        t.st_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(T v) { return from_values({1}, {v}); }

    bool defined() const { return static_cast<bool>(st_); }
    const Shape& shape() const { return st_->shape; }
    std::size_t rank() const { return st_->shape.size(); }
    std::size_t size() const { return st_->values.size(); }
    std::size_t extent(std::size_t axis) const { return st_->shape.at(axis); }
    bool is_scalar() const { return size() == 1; }

    std::vector<T>& values() { return st_->values; }
    const std::vector<T>& values() const { return st_->values; }
    T item() const {
        if (!is_scalar()) throw std::logic_error("Tensor::item: tensor " + shape_str(shape()) + " is not scalar");
        return st_->values[0];
    }

    bool requires_grad() const { return st_->requires_grad; }
    void set_requires_grad(bool v) { st_->requires_grad = v; }

    bool has_grad() const { return !st_->grad.empty(); }
    std::vector<T>& grad() {
        if (st_->grad.empty()) st_->grad.assign(st_->values.size(), T(0));
        return st_->grad;
    }
    const std::vector<T>& grad_view() const { return st_->grad; }
    void zero_grad() {
        if (!st_->grad.empty()) st_->grad.assign(st_->values.size(), T(0));
    }

    std::shared_ptr<TensorStorage<T>> storage() const { return st_; }
    std::shared_ptr<Node<T>> node() const { return node_; }
    void set_node(std::shared_ptr<Node<T>> n) { node_ = std::move(n); }

    // Same values, no graph linkage, no gradient flow.
    Tensor detach() const {
        Tensor t;
        t.st_ = std::make_shared<TensorStorage<T>>();
        t.st_->shape = st_->shape;
        t.st_->values = st_->values;
        t.st_->requires_grad = false;
        return t;
    }

private:
    std::shared_ptr<TensorStorage<T>> st_;
    std::shared_ptr<Node<T>> node_;
};

template <typename T>
struct Node {
    std::vector<Tensor<T>> parents;
    std::shared_ptr<TensorStorage<T>> out;
    // Accumulates parent gradients from out->grad.
    std::function<void(Node<T>&)> run;
};

// Record a node for `out` if autograd is active and any parent needs gradients.
template <typename T, typename Fn>
void record_op(Tensor<T>& out, std::vector<Tensor<T>> parents, Fn&& backward_fn) {
    if (!autograd_flag()) return;
    bool any = false;
    for (const auto& p : parents) {
        if (p.requires_grad()) { any = true; break; }
    }
    if (!any) return;
    out.set_requires_grad(true);
    auto node = std::make_shared<Node<T>>();
    node->parents = std::move(parents);
    node->out = out.storage();
    node->run = std::forward<Fn>(backward_fn);
    out.set_node(std::move(node));
}

// Reverse pass from a scalar loss.  Seeds d(loss)/d(loss) = 1 and runs every
// recorded node exactly once, consumers before producers.
template <typename T>
void backward(Tensor<T>& loss) {
    if (!loss.is_scalar()) {
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad() || !loss.node()) {
        throw std::logic_error("backward: loss does not depend on any tracked parameter");
    }
    loss.grad()[0] = T(1);

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    struct Frame { Node<T>* n; std::size_t next_parent; };
    std::vector<Frame> stack;
    seen.insert(loss.node().get());
    stack.push_back({loss.node().get(), 0});
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.n->parents.size()) {
            Node<T>* child = f.n->parents[f.next_parent].node().get();
            ++f.next_parent;
            if (child && !seen.count(child)) {
                seen.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>& n = **it;
        if (n.out->grad.empty()) n.out->grad.assign(n.out->values.size(), T(0));
        n.run(n);
    }
}

} // namespace xgpt
