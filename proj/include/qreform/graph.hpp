#pragma once

// Reverse-mode differentiation over a tape of eagerly evaluated nodes.
//
// Every op computes its value immediately and, when the graph is recording,
// appends a closure that propagates the node's gradient to its inputs. Node
// ids are assigned in creation order, so reverse id order is a valid
// topological order and backward() is deterministic for a fixed graph.
//
// Parameter leaves write straight into Parameter::grad. Gradients always
// accumulate; zeroing is the caller's job.

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "qreform/tensor.hpp"

namespace qreform {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  double scalar() const;
  std::size_t size() const { return value().size(); }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, Var self)>;

  /// A non-recording graph evaluates values only (inference).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient buffer of a node, allocated on first use.
  std::span<double> grad(Var v);
  /// Read-only view; empty if nothing has flowed into the node.
  std::span<const double> grad_view(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable parameter.
  void backward(Var loss);

  /// Appends an op node. `fn` is dropped when not recording or when no input
  /// requires a gradient.
  Var push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var push(Tensor value, std::span<const Var> inputs, BackwardFn fn);

 private:
  struct Node {
    Tensor own;
    Parameter* param = nullptr;
    std::vector<double> grad;
    bool needs_grad = false;
    BackwardFn backward;
  };

  bool record_;
  bool backward_done_ = false;
  std::deque<Node> nodes_;
};

namespace ad {

enum class Unary { sigmoid, tanh, log };
enum class Binary { add, mul };

/// W*x + b.
Var affine(Var x, Var W, Var b);
/// W*x.
Var matvec(Var W, Var x);
/// M^T * x.
Var matvec_t(Var M, Var x);

Var elementwise(Var x, Unary kind);
Var elementwise(Var a, Var b, Binary kind);
Var sigmoid(Var x);
Var tanh(Var x);
/// Natural log; throws UsageError on non-positive input.
Var log(Var x);
/// log(sigmoid(x)), evaluated without overflow for large |x|.
Var log_sigmoid(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var divide(Var x, double divisor);
Var add_n(std::span<const Var> terms);

Var softmax(Var logits);
Var log_softmax(Var logits);

Var concat(Var a, Var b);
/// Concatenates 1-D tensors (or scalars) into one vector.
Var concat(std::span<const Var> parts);
Var slice(Var x, std::size_t offset, std::size_t length);
/// Stacks equally sized vectors into a T x d matrix.
Var stack(std::span<const Var> rows);
/// Column-wise max over the rows of a T x d matrix. The subgradient goes to
/// the lowest row index among tied maximizers.
Var maxpool_over_steps(Var H);

/// Cosine similarity; zero-norm operands give 0 with zero gradient.
Var cosine(Var u, Var v);
Var dot(Var a, Var b);
Var sum(Var x);
/// Scalar node holding x[index].
Var pick(Var x, std::size_t index);

/// Row `id` of an embedding table; the gradient lands in that row only.
Var embedding_lookup(Graph& g, Parameter& table, std::size_t id);

}  // namespace ad
}  // namespace qreform
