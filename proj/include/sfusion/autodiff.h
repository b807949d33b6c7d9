#pragma once

// Minimal tape-based reverse-mode automatic differentiation.
//
// A Graph records every op in creation order, which is a topological order
// by construction (inputs always exist before their consumers). backward()
// sweeps the tape once in reverse. All graph ops work on rank-2 tensors;
// a row vector is 1 x n and a scalar is 1 x 1.

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace sfusion::ad {

using Shape = std::vector<std::size_t>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor row(std::vector<double> values);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  // Rank 0 and 1 tensors read as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }

  // The gradient slot is allocated on first mutable access.
  bool has_grad() const { return !grad_.empty(); }
  std::span<const double> grad() const { return grad_; }
  std::span<double> mutable_grad();
  void clear_grad() { grad_.clear(); }

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> values_;
  std::vector<double> grad_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class OpKind {
  kConstant,
  kInput,
  kParam,
  kMatmul,
  kAdd,
  kMul,
  kTanh,
  kSigmoid,
  kSoftmax,
  kLogSoftmax,
  kConcat,
  kSlice,
  kSum,
  kEmbedLookup,
  kStopGradient,
};

std::string_view op_name(OpKind kind);

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf that never receives a gradient.
  Var constant(Tensor value);
  // Leaf that receives a gradient, readable through gradient().
  Var input(Tensor value);
  // Leaf bound to an external tensor. backward() accumulates into its grad
  // slot. The tensor must outlive the graph and must not be resized.
  Var param(Tensor& bound);

  // a: m x k, b: k x n (or n x k when transpose_b) -> m x n.
  Var matmul(Var a, Var b, bool transpose_b = false);
  // Same shapes, or b a 1 x n row broadcast over the rows of a.
  Var add(Var a, Var b);
  // Same shapes elementwise, or b a 1 x 1 scalar broadcast.
  Var mul(Var a, Var b);
  Var tanh(Var a);
  Var sigmoid(Var a);
  // Row-wise, max-shifted.
  Var softmax(Var a);
  Var log_softmax(Var a);
  // axis 0 stacks rows (equal cols); axis 1 joins columns (equal rows).
  Var concat(std::span<const Var> parts, int axis);
  // Half-open [begin, end) along the axis.
  Var slice(Var a, int axis, std::size_t begin, std::size_t end);
  // Sum of all elements -> 1 x 1.
  Var sum(Var a);
  // table: V x d, ids in [0, V) -> ids.size() x d.
  Var embed_lookup(Var table, std::span<const int> ids);
  // Identity whose input edge is cut for backward.
  Var stop_gradient(Var a);

  const Tensor& value(Var v) const;
  double scalar(Var v) const;
  OpKind kind(Var v) const;
  // Zeros when no gradient reached the node.
  Tensor gradient(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // root must be 1 x 1. May be called once per graph.
  void backward(Var root);

 private:
  struct Edge {
    int id;
    bool stopped;
  };
  struct Node {
    OpKind kind;
    std::vector<Edge> inputs;
    Tensor value;
    Tensor* bound = nullptr;
    std::vector<double> grad;
    bool requires_grad = false;
    int axis = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
    bool transpose_b = false;
    std::vector<int> ids;
  };

  const Node& node(Var v) const;
  const Tensor& val(int id) const;
  Var push(Node n);
  void backprop_node(int id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Central finite-difference check of every coordinate of every parameter.
// loss_fn must build a deterministic scalar loss from g.param(*p) leaves.
// Returns max |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|). Leaves the AD
// gradient in each parameter's grad slot.
double grad_check(const std::function<Var(Graph&)>& loss_fn,
                  std::span<Tensor* const> params, double epsilon = 1e-5);

}  // namespace sfusion::ad
