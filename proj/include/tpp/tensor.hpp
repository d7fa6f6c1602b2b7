#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tpp/errors.hpp"

namespace tpp {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense 64-bit tensor with reverse-mode autodiff.
///
/// A Tensor is a cheap shared handle onto a node holding row-major flat
/// storage, an optional gradient buffer, and the links recorded by the op
/// that produced it. Values are immutable once a node has been consumed by
/// downstream ops; the grad slot and leaf parameter updates between steps
/// are the only sanctioned mutations.
class Tensor {
  public:
    struct Node {
        Shape shape;
        std::vector<double> values;
        bool requires_grad = false;
        std::vector<double> grad;  // empty until first accumulation
        // Recorded graph: inputs of the producing op plus the rule that
        // pushes this node's grad into theirs.
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_fn;
        bool backward_done = false;

        bool is_leaf() const { return !backward_fn; }
        void ensure_grad();
        void accumulate_grad(std::span<const double> contribution);
    };

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::int64_t dim(std::size_t axis) const;
    std::int64_t numel() const;

    std::span<const double> values() const;
    /// Mutable leaf storage, for optimizer updates and finite-difference
    /// probes between graph constructions. Mutating a node already captured
    /// by a recorded graph invalidates that graph.
    std::span<double> values_mut();
    double value_at(std::int64_t flat_index) const;
    double scalar_value() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool requires_grad);
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    /// Reverse pass seeded at this scalar. Gradients sum into every
    /// requires_grad leaf reachable through the recorded ops. Throws
    /// ContractError for a non-scalar seed or when any node of the graph
    /// was already consumed by a previous backward.
    void backward();

    std::shared_ptr<Node>& node() { return node_; }
    const std::shared_ptr<Node>& node() const { return node_; }

  private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    std::shared_ptr<Node> node_;
};

/// Clears grads and backward-done marks on every node reachable from seed,
/// permitting a fresh backward over the same recorded graph.
void reset_graph(const Tensor& seed);

/// While alive, newly created ops record no graph (pure value computation).
/// Used on inference-only paths to keep memory flat.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

bool grad_recording_enabled();

}  // namespace tpp
