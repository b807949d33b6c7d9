#include "sfusion/autodiff.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sfusion/error.h"

namespace sfusion::ad {

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < t.rank(); ++i) {
    if (i) os << 'x';
    os << t.shape()[i];
  }
  os << ']';
  return os.str();
}

[[noreturn]] void shape_fail(OpKind kind, const Tensor& a, const Tensor* b,
                             std::string_view detail = {}) {
  std::ostringstream os;
  os << op_name(kind) << ": shape mismatch " << shape_str(a);
  if (b) os << " vs " << shape_str(*b);
  if (!detail.empty()) os << " (" << detail << ")";
  throw DimensionError(os.str());
}

void row_softmax(std::span<const double> in, std::span<double> out,
                 std::size_t rows, std::size_t cols, bool log_space) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in.data() + r * cols;
    double* y = out.data() + r * cols;
    double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    if (log_space) {
      double lz = mx + std::log(z);
      for (std::size_t c = 0; c < cols; ++c) y[c] = x[c] - lz;
    } else {
      for (std::size_t c = 0; c < cols; ++c) y[c] = std::exp(x[c] - mx) / z;
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != product(shape_)) {
    throw DimensionError("tensor: " + std::to_string(values_.size()) +
                         " values do not fill the declared shape");
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor({rows, cols}, fill);
}

Tensor Tensor::row(std::vector<double> values) {
  std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, {value}); }

std::size_t Tensor::rows() const {
  return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

std::span<double> Tensor::mutable_grad() {
  if (grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0);
  return grad_;
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kInput: return "input";
    case OpKind::kParam: return "param";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kSum: return "sum";
    case OpKind::kEmbedLookup: return "embed_lookup";
    case OpKind::kStopGradient: return "stop_gradient";
  }
  return "unknown";
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ContractError("graph: variable does not belong to this graph");
  }
  return nodes_[v.id];
}

const Tensor& Graph::val(int id) const {
  const Node& n = nodes_[id];
  return n.bound ? *n.bound : n.value;
}

const Tensor& Graph::value(Var v) const {
  node(v);
  return val(v.id);
}

double Graph::scalar(Var v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) throw ContractError("graph: value is not a scalar");
  return t[0];
}

OpKind Graph::kind(Var v) const { return node(v).kind; }

Tensor Graph::gradient(Var v) const {
  const Node& n = node(v);
  Tensor out(val(v.id).shape());
  if (!n.grad.empty()) std::copy(n.grad.begin(), n.grad.end(), out.values().begin());
  return out;
}

Var Graph::push(Node n) {
  if (n.kind != OpKind::kConstant && n.kind != OpKind::kInput &&
      n.kind != OpKind::kParam && !n.value.all_finite()) {
    throw NumericError(std::string(op_name(n.kind)) +
                       ": produced a non-finite value");
  }
  if (n.kind != OpKind::kConstant && n.kind != OpKind::kInput &&
      n.kind != OpKind::kParam) {
    n.requires_grad = std::any_of(n.inputs.begin(), n.inputs.end(),
                                  [this](const Edge& e) {
                                    return !e.stopped && nodes_[e.id].requires_grad;
                                  });
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor value) {
  Node n{.kind = OpKind::kConstant, .value = std::move(value)};
  return push(std::move(n));
}

Var Graph::input(Tensor value) {
  Node n{.kind = OpKind::kInput, .value = std::move(value)};
  n.requires_grad = true;
  return push(std::move(n));
}

Var Graph::param(Tensor& bound) {
  Node n{.kind = OpKind::kParam};
  n.bound = &bound;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Graph::matmul(Var a, Var b, bool transpose_b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  std::size_t m = x.rows(), k = x.cols();
  std::size_t yk = transpose_b ? y.cols() : y.rows();
  std::size_t n = transpose_b ? y.rows() : y.cols();
  if (k != yk) shape_fail(OpKind::kMatmul, x, &y, transpose_b ? "b transposed" : "");
  Tensor out = Tensor::matrix(m, n);
  const double* xv = x.values().data();
  const double* yv = y.values().data();
  double* ov = out.values().data();
  if (!transpose_b) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        double s = xv[i * k + p];
        if (s == 0.0) continue;
        const double* yr = yv + p * n;
        double* orow = ov + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += s * yr[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += xv[i * k + p] * yv[j * k + p];
        ov[i * n + j] = s;
      }
    }
  }
  Node node_{.kind = OpKind::kMatmul, .inputs = {{a.id, false}, {b.id, false}},
             .value = std::move(out)};
  node_.transpose_b = transpose_b;
  return push(std::move(node_));
}

Var Graph::add(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  Tensor out = Tensor::matrix(x.rows(), x.cols());
  if (x.rows() == y.rows() && x.cols() == y.cols()) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  } else if (y.rows() == 1 && y.cols() == x.cols()) {
    std::size_t c = x.cols();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i % c];
  } else {
    shape_fail(OpKind::kAdd, x, &y);
  }
  return push({.kind = OpKind::kAdd, .inputs = {{a.id, false}, {b.id, false}},
               .value = std::move(out)});
}

Var Graph::mul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  Tensor out = Tensor::matrix(x.rows(), x.cols());
  if (x.rows() == y.rows() && x.cols() == y.cols()) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  } else if (y.size() == 1) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[0];
  } else {
    shape_fail(OpKind::kMul, x, &y);
  }
  return push({.kind = OpKind::kMul, .inputs = {{a.id, false}, {b.id, false}},
               .value = std::move(out)});
}

Var Graph::tanh(Var a) {
  const Tensor& x = value(a);
  Tensor out = Tensor::matrix(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
  return push({.kind = OpKind::kTanh, .inputs = {{a.id, false}}, .value = std::move(out)});
}

Var Graph::sigmoid(Var a) {
  const Tensor& x = value(a);
  Tensor out = Tensor::matrix(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    // Split by sign so exp never overflows.
    double v = x[i];
    if (v >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return push({.kind = OpKind::kSigmoid, .inputs = {{a.id, false}}, .value = std::move(out)});
}

Var Graph::softmax(Var a) {
  const Tensor& x = value(a);
  Tensor out = Tensor::matrix(x.rows(), x.cols());
  row_softmax(x.values(), out.values(), x.rows(), x.cols(), false);
  return push({.kind = OpKind::kSoftmax, .inputs = {{a.id, false}}, .value = std::move(out)});
}

Var Graph::log_softmax(Var a) {
  const Tensor& x = value(a);
  Tensor out = Tensor::matrix(x.rows(), x.cols());
  row_softmax(x.values(), out.values(), x.rows(), x.cols(), true);
  return push({.kind = OpKind::kLogSoftmax, .inputs = {{a.id, false}}, .value = std::move(out)});
}

Var Graph::concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (axis != 0 && axis != 1) throw DimensionError("concat: axis must be 0 or 1");
  const Tensor& first = value(parts[0]);
  std::size_t rows = 0, cols = 0;
  for (Var p : parts) {
    const Tensor& t = value(p);
    if (axis == 0) {
      if (t.cols() != first.cols()) shape_fail(OpKind::kConcat, first, &t, "axis 0");
      rows += t.rows();
      cols = t.cols();
    } else {
      if (t.rows() != first.rows()) shape_fail(OpKind::kConcat, first, &t, "axis 1");
      cols += t.cols();
      rows = t.rows();
    }
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  Node n{.kind = OpKind::kConcat};
  n.axis = axis;
  for (Var p : parts) {
    const Tensor& t = value(p);
    if (axis == 0) {
      std::copy(t.values().begin(), t.values().end(), out.values().begin() + offset * cols);
      offset += t.rows();
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < t.cols(); ++c) out.at(r, offset + c) = t.at(r, c);
      }
      offset += t.cols();
    }
    n.inputs.push_back({p.id, false});
  }
  n.value = std::move(out);
  return push(std::move(n));
}

Var Graph::slice(Var a, int axis, std::size_t begin, std::size_t end) {
  const Tensor& x = value(a);
  if (axis != 0 && axis != 1) throw DimensionError("slice: axis must be 0 or 1");
  std::size_t extent = axis == 0 ? x.rows() : x.cols();
  if (begin >= end || end > extent) {
    shape_fail(OpKind::kSlice, x, nullptr,
               "range [" + std::to_string(begin) + "," + std::to_string(end) + ")");
  }
  std::size_t rows = axis == 0 ? end - begin : x.rows();
  std::size_t cols = axis == 1 ? end - begin : x.cols();
  Tensor out = Tensor::matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out.at(r, c) = axis == 0 ? x.at(begin + r, c) : x.at(r, begin + c);
    }
  }
  Node n{.kind = OpKind::kSlice, .inputs = {{a.id, false}}, .value = std::move(out)};
  n.axis = axis;
  n.begin = begin;
  n.end = end;
  return push(std::move(n));
}

Var Graph::sum(Var a) {
  const Tensor& x = value(a);
  double s = 0.0;
  for (double v : x.values()) s += v;
  return push({.kind = OpKind::kSum, .inputs = {{a.id, false}}, .value = Tensor::scalar(s)});
}

Var Graph::embed_lookup(Var table, std::span<const int> ids) {
  const Tensor& t = value(table);
  std::size_t d = t.cols();
  Tensor out = Tensor::matrix(ids.size(), d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= t.rows()) {
      shape_fail(OpKind::kEmbedLookup, t, nullptr, "id " + std::to_string(ids[r]) + " out of range");
    }
    std::copy_n(t.values().begin() + ids[r] * d, d, out.values().begin() + r * d);
  }
  Node n{.kind = OpKind::kEmbedLookup, .inputs = {{table.id, false}}, .value = std::move(out)};
  n.ids.assign(ids.begin(), ids.end());
  return push(std::move(n));
}

Var Graph::stop_gradient(Var a) {
  Tensor copy = value(a);
  copy.clear_grad();
  return push({.kind = OpKind::kStopGradient, .inputs = {{a.id, true}}, .value = std::move(copy)});
}

void Graph::backward(Var root) {
  const Tensor& r = value(root);
  if (r.size() != 1) {
    throw ContractError("backward: root must be a scalar, got " + shape_str(r));
  }
  if (backward_done_) throw ContractError("backward: already run on this graph");
  backward_done_ = true;
  nodes_[root.id].grad.assign(1, 1.0);
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.kind == OpKind::kParam) {
      auto g = n.bound->mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
      continue;
    }
    backprop_node(id);
  }
}

void Graph::backprop_node(int id) {
  // Inputs always have smaller ids, so references into nodes_ stay valid.
  Node& n = nodes_[id];
  const std::vector<double>& dy = n.grad;
  auto grad_of = [this](const Edge& e) -> double* {
    Node& in = nodes_[e.id];
    if (e.stopped || !in.requires_grad) return nullptr;
    if (in.grad.empty()) in.grad.assign(val(e.id).size(), 0.0);
    return in.grad.data();
  };
  const Tensor& y = n.value;

  switch (n.kind) {
    case OpKind::kConstant:
    case OpKind::kInput:
    case OpKind::kParam:
    case OpKind::kStopGradient:
      return;
    case OpKind::kMatmul: {
      const Tensor& a = val(n.inputs[0].id);
      const Tensor& b = val(n.inputs[1].id);
      std::size_t m = a.rows(), k = a.cols(), cols = y.cols();
      if (double* da = grad_of(n.inputs[0])) {
        // da = dy * b^T  (or dy * b when b was transposed)
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            double g = dy[i * cols + j];
            if (g == 0.0) continue;
            if (!n.transpose_b) {
              for (std::size_t p = 0; p < k; ++p) da[i * k + p] += g * b[p * cols + j];
            } else {
              for (std::size_t p = 0; p < k; ++p) da[i * k + p] += g * b[j * k + p];
            }
          }
        }
      }
      if (double* db = grad_of(n.inputs[1])) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            double g = dy[i * cols + j];
            if (g == 0.0) continue;
            if (!n.transpose_b) {
              for (std::size_t p = 0; p < k; ++p) db[p * cols + j] += a[i * k + p] * g;
            } else {
              for (std::size_t p = 0; p < k; ++p) db[j * k + p] += g * a[i * k + p];
            }
          }
        }
      }
      return;
    }
    case OpKind::kAdd: {
      const Tensor& b = val(n.inputs[1].id);
      if (double* da = grad_of(n.inputs[0])) {
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (double* db = grad_of(n.inputs[1])) {
        if (b.size() == dy.size()) {
          for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
        } else {
          std::size_t c = b.cols();
          for (std::size_t i = 0; i < dy.size(); ++i) db[i % c] += dy[i];
        }
      }
      return;
    }
    case OpKind::kMul: {
      const Tensor& a = val(n.inputs[0].id);
      const Tensor& b = val(n.inputs[1].id);
      bool broadcast = b.size() != a.size();
      if (double* da = grad_of(n.inputs[0])) {
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * (broadcast ? b[0] : b[i]);
      }
      if (double* db = grad_of(n.inputs[1])) {
        if (broadcast) {
          double s = 0.0;
          for (std::size_t i = 0; i < dy.size(); ++i) s += dy[i] * a[i];
          db[0] += s;
        } else {
          for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * a[i];
        }
      }
      return;
    }
    case OpKind::kTanh:
      if (double* da = grad_of(n.inputs[0])) {
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * (1.0 - y[i] * y[i]);
      }
      return;
    case OpKind::kSigmoid:
      if (double* da = grad_of(n.inputs[0])) {
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * y[i] * (1.0 - y[i]);
      }
      return;
    case OpKind::kSoftmax:
      if (double* da = grad_of(n.inputs[0])) {
        std::size_t cols = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += dy[r * cols + c] * y[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) {
            da[r * cols + c] += y[r * cols + c] * (dy[r * cols + c] - dot);
          }
        }
      }
      return;
    case OpKind::kLogSoftmax:
      if (double* da = grad_of(n.inputs[0])) {
        std::size_t cols = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double total = 0.0;
          for (std::size_t c = 0; c < cols; ++c) total += dy[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) {
            da[r * cols + c] += dy[r * cols + c] - std::exp(y[r * cols + c]) * total;
          }
        }
      }
      return;
    case OpKind::kConcat: {
      std::size_t offset = 0;
      std::size_t cols = y.cols();
      for (const Edge& e : n.inputs) {
        const Tensor& t = val(e.id);
        double* dt = grad_of(e);
        if (n.axis == 0) {
          if (dt) {
            for (std::size_t i = 0; i < t.size(); ++i) dt[i] += dy[offset * cols + i];
          }
          offset += t.rows();
        } else {
          if (dt) {
            for (std::size_t r = 0; r < t.rows(); ++r) {
              for (std::size_t c = 0; c < t.cols(); ++c) {
                dt[r * t.cols() + c] += dy[r * cols + offset + c];
              }
            }
          }
          offset += t.cols();
        }
      }
      return;
    }
    case OpKind::kSlice:
      if (double* da = grad_of(n.inputs[0])) {
        const Tensor& a = val(n.inputs[0].id);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          for (std::size_t c = 0; c < y.cols(); ++c) {
            std::size_t src = n.axis == 0 ? (n.begin + r) * a.cols() + c
                                          : r * a.cols() + n.begin + c;
            da[src] += dy[r * y.cols() + c];
          }
        }
      }
      return;
    case OpKind::kSum:
      if (double* da = grad_of(n.inputs[0])) {
        std::size_t len = val(n.inputs[0].id).size();
        for (std::size_t i = 0; i < len; ++i) da[i] += dy[0];
      }
      return;
    case OpKind::kEmbedLookup:
      if (double* dt = grad_of(n.inputs[0])) {
        std::size_t d = y.cols();
        for (std::size_t r = 0; r < n.ids.size(); ++r) {
          for (std::size_t c = 0; c < d; ++c) dt[n.ids[r] * d + c] += dy[r * d + c];
        }
      }
      return;
  }
}

double grad_check(const std::function<Var(Graph&)>& loss_fn,
                  std::span<Tensor* const> params, double epsilon) {
  for (Tensor* p : params) p->clear_grad();
  {
    Graph g;
    Var loss = loss_fn(g);
    g.backward(loss);
  }
  auto eval = [&loss_fn]() {
    Graph g;
    return g.scalar(loss_fn(g));
  };
  double worst = 0.0;
  for (Tensor* p : params) {
    p->mutable_grad();
    for (std::size_t i = 0; i < p->size(); ++i) {
      double saved = (*p)[i];
      (*p)[i] = saved + epsilon;
      double up = eval();
      (*p)[i] = saved - epsilon;
      double down = eval();
      (*p)[i] = saved;
      double fd = (up - down) / (2.0 * epsilon);
      double ad = p->grad()[i];
      double rel = std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace sfusion::ad
