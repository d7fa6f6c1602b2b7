#include "tpp/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace tpp {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_recording_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace {
void validate_shape(const Shape& shape) {
    for (std::int64_t d : shape) {
        if (d < 1) {
            throw DimensionError("invalid shape " + shape_str(shape) + ": extents must be >= 1");
        }
    }
}
}  // namespace

void Tensor::Node::ensure_grad() {
    if (grad.size() != values.size()) {
        grad.assign(values.size(), 0.0);
    }
}

void Tensor::Node::accumulate_grad(std::span<const double> contribution) {
    ensure_grad();
    if (contribution.size() != grad.size()) {
        throw ContractError("gradient size mismatch: " + std::to_string(contribution.size()) +
                            " vs " + std::to_string(grad.size()));
    }
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += contribution[i];
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    validate_shape(shape);
    auto node = std::make_shared<Node>();
    node->values.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->values.begin(), t.node_->values.end(), value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    validate_shape(shape);
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->shape;
}

std::int64_t Tensor::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    return s[axis];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(values().size()); }

std::span<const double> Tensor::values() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->values;
}

std::span<double> Tensor::values_mut() {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->values;
}

double Tensor::value_at(std::int64_t flat_index) const { return values()[static_cast<std::size_t>(flat_index)]; }

double Tensor::scalar_value() const {
    if (numel() != 1) throw ContractError("scalar_value() on tensor of shape " + shape_str(shape()));
    return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool requires_grad) {
    if (!node_) throw ContractError("use of undefined tensor");
    node_->requires_grad = requires_grad;
    return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!node_) throw ContractError("use of undefined tensor");
    if (node_->grad.empty()) throw ContractError("grad() on tensor with no accumulated gradient");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_) throw ContractError("use of undefined tensor");
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

namespace {

// Iterative post-order over parents. Returns nodes in topological order
// (inputs before consumers).
std::vector<Tensor::Node*> topo_order(Tensor::Node* seed) {
    std::vector<Tensor::Node*> order;
    std::unordered_set<Tensor::Node*> visited;
    struct Frame {
        Tensor::Node* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({seed, 0});
    visited.insert(seed);
    while (!stack.empty()) {
        Frame& frame = stack.back();
        if (frame.next_parent < frame.node->parents.size()) {
            Tensor::Node* parent = frame.node->parents[frame.next_parent++].get();
            if (visited.insert(parent).second) {
                stack.push_back({parent, 0});
            }
        } else {
            order.push_back(frame.node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace

void Tensor::backward() {
    if (!node_) throw ContractError("backward() on undefined tensor");
    if (numel() != 1) {
        throw ContractError("backward() seed must be scalar, got shape " + shape_str(shape()));
    }
    std::vector<Node*> order = topo_order(node_.get());
    for (Node* n : order) {
        if (!n->is_leaf() && n->backward_done) {
            throw ContractError("backward() through a graph already consumed; reset it first");
        }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    // Reverse topological order: consumers before producers.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->is_leaf()) continue;
        if (!n->grad.empty()) {
            n->backward_fn(*n);
        }
        n->backward_done = true;
    }
}

void reset_graph(const Tensor& seed) {
    if (!seed.defined()) return;
    std::vector<Tensor::Node*> order = topo_order(seed.node().get());
    for (Tensor::Node* n : order) {
        n->backward_done = false;
        std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
}

}  // namespace tpp
