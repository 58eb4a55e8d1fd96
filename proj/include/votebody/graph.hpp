#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "votebody/tensor.hpp"

namespace votebody {

enum class OpKind {
  kLeaf,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kBiasAdd,
  kConcat,
  kRelu,
  kSoftmax,
  kReduceMax,
  kReduceMean,
  kReduceSum,
  kGatherRows,
  kScatterWeightedSum,
  kScatterWeightedMean,
  kScaleRows,
  kSmoothL1,
  kL1Norm,
  kL2Norm,
  kFrobeniusNorm,
  kLog,
  kScale,
  kReshape,
  kTranspose,
  kChamfer,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "elementwise-mul";
    case OpKind::kDiv: return "elementwise-div";
    case OpKind::kBiasAdd: return "bias-add";
    case OpKind::kConcat: return "concat";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftmax: return "softmax-over-axis";
    case OpKind::kReduceMax: return "reduce-max-over-set";
    case OpKind::kReduceMean: return "reduce-mean";
    case OpKind::kReduceSum: return "reduce-sum";
    case OpKind::kGatherRows: return "gather-rows";
    case OpKind::kScatterWeightedSum: return "scatter-weighted-sum";
    case OpKind::kScatterWeightedMean: return "scatter-weighted-mean";
    case OpKind::kScaleRows: return "scale-rows";
    case OpKind::kSmoothL1: return "smooth-l1";
    case OpKind::kL1Norm: return "l1-norm";
    case OpKind::kL2Norm: return "l2-norm";
    case OpKind::kFrobeniusNorm: return "frobenius-norm";
    case OpKind::kLog: return "log";
    case OpKind::kScale: return "scale";
    case OpKind::kReshape: return "reshape";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kChamfer: return "chamfer-halfterm";
  }
  return "?";
}

// Reverse-mode computation graph over dense tensors. Nodes are appended in
// topological order by construction; backward walks them once in reverse.
// Tensors handed to the graph are copied, never aliased or mutated.
template <typename S>
class Graph {
 public:
  using Id = int32_t;

  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::vector<Id> inputs;
    Tensor<S> value;
    Tensor<S> grad;  // allocated on demand during backward
    bool requires_grad = false;
    // op attributes
    int axis = -1;
    double alpha = 0.0;
    std::vector<int64_t> indices;  // gather indices / recorded arg positions
    std::vector<double> aux;       // op-specific forward records (e.g. mean denominators)
    Shape target_shape;
  };

  Id input(Tensor<S> t) {
    Node n;
    n.kind = OpKind::kLeaf;
    n.requires_grad = t.requires_grad;
    n.value = std::move(t);
    return push(std::move(n));
  }

  Id constant(Tensor<S> t) {
    t.requires_grad = false;
    return input(std::move(t));
  }

  // Trainable leaf; recorded by name so backward can report a gradient map.
  Id param(const std::string& name, Tensor<S> t) {
    t.requires_grad = true;
    Id id = input(std::move(t));
    param_nodes_.emplace_back(name, id);
    return id;
  }

  const Tensor<S>& value(Id id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Tensor<S>& grad(Id id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty()) throw std::runtime_error("gradient not materialized; run backward first");
    return n.grad;
  }
  size_t size() const { return nodes_.size(); }

  const std::vector<std::pair<std::string, Id>>& params() const { return param_nodes_; }

  std::unordered_map<std::string, const Tensor<S>*> param_grads() const {
    std::unordered_map<std::string, const Tensor<S>*> out;
    for (const auto& [name, id] : param_nodes_) out[name] = &grad(id);
    return out;
  }

  // ---- op wrappers -------------------------------------------------------

  Id matmul(Id a, Id b) { return apply(OpKind::kMatmul, {a, b}); }
  Id add(Id a, Id b) { return apply(OpKind::kAdd, {a, b}); }
  Id sub(Id a, Id b) { return apply(OpKind::kSub, {a, b}); }
  Id mul(Id a, Id b) { return apply(OpKind::kMul, {a, b}); }
  Id div(Id a, Id b) { return apply(OpKind::kDiv, {a, b}); }
  Id bias_add(Id a, Id b) { return apply(OpKind::kBiasAdd, {a, b}); }
  Id concat(std::vector<Id> xs, int axis) {
    Node n;
    n.axis = axis;
    return apply_node(OpKind::kConcat, std::move(xs), std::move(n));
  }
  Id relu(Id x) { return apply(OpKind::kRelu, {x}); }
  Id softmax(Id x, int axis) {
    Node n;
    n.axis = axis;
    return apply_node(OpKind::kSoftmax, {x}, std::move(n));
  }
  Id reduce_max(Id x, int axis) {
    Node n;
    n.axis = axis;
    return apply_node(OpKind::kReduceMax, {x}, std::move(n));
  }
  Id reduce_mean(Id x) { return apply(OpKind::kReduceMean, {x}); }
  Id reduce_sum(Id x) { return apply(OpKind::kReduceSum, {x}); }
  Id gather_rows(Id x, std::vector<int64_t> idx) {
    Node n;
    n.indices = std::move(idx);
    return apply_node(OpKind::kGatherRows, {x}, std::move(n));
  }
  Id scatter_weighted_sum(Id values, Id weights) {
    return apply(OpKind::kScatterWeightedSum, {values, weights});
  }
  // out[k] = sum_i w[i,k] v[i] / sum_i w[i,k]; zero weight column -> zero row.
  // Numerator, denominator, and their quotient are all evaluated in double so
  // a group of identical values averages to exactly that value.
  Id scatter_weighted_mean(Id values, Id weights) {
    return apply(OpKind::kScatterWeightedMean, {values, weights});
  }
  Id scale_rows(Id a, Id r) { return apply(OpKind::kScaleRows, {a, r}); }
  Id smooth_l1(Id x) { return apply(OpKind::kSmoothL1, {x}); }
  Id l1_norm(Id x) { return apply(OpKind::kL1Norm, {x}); }
  Id l2_norm(Id x) { return apply(OpKind::kL2Norm, {x}); }
  Id frobenius_norm(Id x) { return apply(OpKind::kFrobeniusNorm, {x}); }
  Id log_clamped(Id x) { return apply(OpKind::kLog, {x}); }
  Id scale(Id x, double c) {
    Node n;
    n.alpha = c;
    return apply_node(OpKind::kScale, {x}, std::move(n));
  }
  Id reshape(Id x, Shape target) {
    Node n;
    n.target_shape = std::move(target);
    return apply_node(OpKind::kReshape, {x}, std::move(n));
  }
  Id transpose(Id x) { return apply(OpKind::kTranspose, {x}); }
  Id chamfer(Id points, Id verts) { return apply(OpKind::kChamfer, {points, verts}); }

  Id apply(OpKind kind, std::vector<Id> inputs) { return apply_node(kind, std::move(inputs), Node{}); }

  // ---- backward ----------------------------------------------------------

  void backward(Id loss) {
    Node& ln = nodes_[static_cast<size_t>(loss)];
    if (ln.value.numel() != 1) {
      throw std::invalid_argument(std::string("backward requires a scalar loss, got shape ") +
                                  shape_str(ln.value.shape));
    }
    ensure_grad(loss);
    ln.grad.data[0] = S(1);
    for (int64_t i = loss; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.requires_grad || n.grad.data.empty() || n.kind == OpKind::kLeaf) continue;
      backward_node(n);
    }
    // guarantee every parameter has a (possibly zero) gradient
    for (const auto& [name, id] : param_nodes_) ensure_grad(id);
  }

 private:
  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, Id>> param_nodes_;

  Id push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  void ensure_grad(Id id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty()) n.grad = Tensor<S>(n.value.shape);
  }

  [[noreturn]] void fail(OpKind kind, const std::string& detail) const {
    throw std::invalid_argument(std::string(op_name(kind)) + ": " + detail);
  }

  const Tensor<S>& in(const Node& n, size_t i) const {
    return nodes_[static_cast<size_t>(n.inputs[i])].value;
  }

  Id apply_node(OpKind kind, std::vector<Id> inputs, Node n) {
    n.kind = kind;
    n.inputs = std::move(inputs);
    for (Id id : n.inputs) {
      if (id < 0 || id >= static_cast<Id>(nodes_.size())) fail(kind, "input id out of range");
      n.requires_grad |= nodes_[static_cast<size_t>(id)].requires_grad;
    }
    forward_node(n);
    return push(std::move(n));
  }

  // ---- forward kernels ---------------------------------------------------

  void forward_node(Node& n) {
    switch (n.kind) {
      case OpKind::kMatmul: {
        const Tensor<S>& a = in(n, 0);
        const Tensor<S>& b = in(n, 1);
        if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
          fail(n.kind, "incompatible shapes " + shape_str(a.shape) + " and " + shape_str(b.shape));
        const int64_t R = a.shape[0], K = a.shape[1], C = b.shape[1];
        Tensor<S> out({R, C});
        for (int64_t i = 0; i < R; ++i) {
          S* orow = &out.data[static_cast<size_t>(i * C)];
          for (int64_t k = 0; k < K; ++k) {
            const S av = a.at(i, k);
            const S* brow = &b.data[static_cast<size_t>(k * C)];
            for (int64_t j = 0; j < C; ++j) orow[j] += av * brow[j];
          }
        }
        n.value = std::move(out);
        break;
      }
      case OpKind::kAdd:
      case OpKind::kSub:
      case OpKind::kMul:
      case OpKind::kDiv: {
        const Tensor<S>& a = in(n, 0);
        const Tensor<S>& b = in(n, 1);
        if (a.shape != b.shape)
          fail(n.kind, "shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
        Tensor<S> out(a.shape);
        const size_t m = a.data.size();
        switch (n.kind) {
          case OpKind::kAdd:
            for (size_t i = 0; i < m; ++i) out.data[i] = a.data[i] + b.data[i];
            break;
          case OpKind::kSub:
            for (size_t i = 0; i < m; ++i) out.data[i] = a.data[i] - b.data[i];
            break;
          case OpKind::kMul:
            for (size_t i = 0; i < m; ++i) out.data[i] = a.data[i] * b.data[i];
            break;
          default:
            for (size_t i = 0; i < m; ++i) out.data[i] = a.data[i] / b.data[i];
        }
        n.value = std::move(out);
        break;
      }
      case OpKind::kBiasAdd: {
        const Tensor<S>& a = in(n, 0);
        const Tensor<S>& b = in(n, 1);
        if (a.rank() != 2 || b.rank() != 1 || b.shape[0] != a.shape[1])
          fail(n.kind, "expected matrix + row vector, got " + shape_str(a.shape) + " and " +
                           shape_str(b.shape));
        Tensor<S> out(a.shape);
        const int64_t R = a.shape[0], C = a.shape[1];
        for (int64_t i = 0; i < R; ++i)
          for (int64_t j = 0; j < C; ++j) out.at(i, j) = a.at(i, j) + b.at(j);
        n.value = std::move(out);
        break;
      }
      case OpKind::kConcat: {
        if (n.inputs.empty()) fail(n.kind, "needs at least one input");
        const Tensor<S>& first = in(n, 0);
        const int rank = first.rank();
        if (n.axis < 0 || n.axis >= rank) fail(n.kind, "axis out of range");
        Shape out_shape = first.shape;
        for (size_t i = 1; i < n.inputs.size(); ++i) {
          const Tensor<S>& t = in(n, i);
          if (t.rank() != rank) fail(n.kind, "rank mismatch");
          for (int d = 0; d < rank; ++d)
            if (d != n.axis && t.shape[static_cast<size_t>(d)] != first.shape[static_cast<size_t>(d)])
              fail(n.kind, "shape mismatch " + shape_str(t.shape) + " vs " + shape_str(first.shape));
          out_shape[static_cast<size_t>(n.axis)] += t.shape[static_cast<size_t>(n.axis)];
        }
        Tensor<S> out(out_shape);
        if (n.axis == 0) {
          size_t off = 0;
          for (size_t i = 0; i < n.inputs.size(); ++i) {
            const Tensor<S>& t = in(n, i);
            std::copy(t.data.begin(), t.data.end(), out.data.begin() + static_cast<int64_t>(off));
            off += t.data.size();
          }
        } else {  // axis == 1, rank 2
          if (rank != 2) fail(n.kind, "axis-1 concat supports rank 2 only");
          const int64_t R = out_shape[0];
          int64_t col_off = 0;
          for (size_t i = 0; i < n.inputs.size(); ++i) {
            const Tensor<S>& t = in(n, i);
            const int64_t C = t.shape[1];
            for (int64_t r = 0; r < R; ++r)
              for (int64_t c = 0; c < C; ++c) out.at(r, col_off + c) = t.at(r, c);
            col_off += C;
          }
        }
        n.value = std::move(out);
        break;
      }
      case OpKind::kRelu: {
        const Tensor<S>& a = in(n, 0);
        Tensor<S> out(a.shape);
        for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] > S(0) ? a.data[i] : S(0);
        n.value = std::move(out);
        break;
      }
      case OpKind::kSoftmax: {
        const Tensor<S>& a = in(n, 0);
        if (n.axis != a.rank() - 1) fail(n.kind, "softmax axis must be the last axis");
        const int64_t C = a.shape.back();
        const int64_t R = a.numel() / C;
        Tensor<S> out(a.shape);
        for (int64_t r = 0; r < R; ++r) {
          const S* x = &a.data[static_cast<size_t>(r * C)];
          S* y = &out.data[static_cast<size_t>(r * C)];
          S m = x[0];
          for (int64_t j = 1; j < C; ++j) m = std::max(m, x[j]);
          double denom = 0.0;
          for (int64_t j = 0; j < C; ++j) {
            y[j] = std::exp(x[j] - m);
            denom += static_cast<double>(y[j]);
          }
          for (int64_t j = 0; j < C; ++j) y[j] = static_cast<S>(y[j] / denom);
        }
        n.value = std::move(out);
        break;
      }
      case OpKind::kReduceMax: {
        const Tensor<S>& a = in(n, 0);
        if (a.rank() == 2 && n.axis == 0) {
          const int64_t R = a.shape[0], C = a.shape[1];
          Tensor<S> out({C});
          n.indices.assign(static_cast<size_t>(C), 0);
          for (int64_t j = 0; j < C; ++j) {
            S best = a.at(0, j);
            int64_t arg = 0;
            for (int64_t i = 1; i < R; ++i)
              if (a.at(i, j) > best) { best = a.at(i, j); arg = i; }
            out.at(j) = best;
            n.indices[static_cast<size_t>(j)] = arg;
          }
          n.value = std::move(out);
        } else if (a.rank() == 3 && n.axis == 1) {
          const int64_t G = a.shape[0], T = a.shape[1], F = a.shape[2];
          Tensor<S> out({G, F});
          n.indices.assign(static_cast<size_t>(G * F), 0);
          for (int64_t g = 0; g < G; ++g)
            for (int64_t f = 0; f < F; ++f) {
              S best = a.at(g, 0, f);
              int64_t arg = 0;
              for (int64_t t = 1; t < T; ++t)
                if (a.at(g, t, f) > best) { best = a.at(g, t, f); arg = t; }
              out.at(g, f) = best;
              n.indices[static_cast<size_t>(g * F + f)] = arg;
            }
          n.value = std::move(out);
        } else {
          fail(n.kind, "supported: rank-2 axis 0 or rank-3 axis 1, got rank " +
                           std::to_string(a.rank()) + " axis " + std::to_string(n.axis));
        }
        break;
      }
      case OpKind::kReduceMean:
      case OpKind::kReduceSum: {
        const Tensor<S>& a = in(n, 0);
        double acc = 0.0;
        for (S x : a.data) acc += static_cast<double>(x);
        if (n.kind == OpKind::kReduceMean) acc /= static_cast<double>(a.numel());
        n.value = Tensor<S>::scalar(static_cast<S>(acc));
        break;
      }
      case OpKind::kGatherRows: {
        const Tensor<S>& a = in(n, 0);
        const int64_t R = a.shape[0];
        const int64_t stride = a.numel() / R;
        for (int64_t idx : n.indices)
          if (idx < 0 || idx >= R)
            fail(n.kind, "index " + std::to_string(idx) + " out of range for " + shape_str(a.shape));
        Shape out_shape = a.shape;
        out_shape[0] = static_cast<int64_t>(n.indices.size());
        Tensor<S> out(out_shape);
        for (size_t i = 0; i < n.indices.size(); ++i)
          std::copy_n(a.data.begin() + n.indices[i] * stride, stride,
                      out.data.begin() + static_cast<int64_t>(i) * stride);
        n.value = std::move(out);
        break;
      }
      case OpKind::kScatterWeightedSum: {
        const Tensor<S>& v = in(n, 0);
        const Tensor<S>& w = in(n, 1);
        if (v.rank() != 2 || w.rank() != 2 || v.shape[0] != w.shape[0])
          fail(n.kind, "expected values NxD and weights NxK, got " + shape_str(v.shape) + " and " +
                           shape_str(w.shape));
        const int64_t N = v.shape[0], D = v.shape[1], K = w.shape[1];
        std::vector<double> acc(static_cast<size_t>(K * D), 0.0);
        for (int64_t i = 0; i < N; ++i)
          for (int64_t k = 0; k < K; ++k) {
            const double wv = static_cast<double>(w.at(i, k));
            if (wv == 0.0) continue;
            double* arow = &acc[static_cast<size_t>(k * D)];
            const S* vrow = &v.data[static_cast<size_t>(i * D)];
            for (int64_t d = 0; d < D; ++d) arow[d] += wv * static_cast<double>(vrow[d]);
          }
        Tensor<S> out({K, D});
        for (size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<S>(acc[i]);
        n.value = std::move(out);
        break;
      }
      case OpKind::kScatterWeightedMean: {
        const Tensor<S>& v = in(n, 0);
        const Tensor<S>& w = in(n, 1);
        if (v.rank() != 2 || w.rank() != 2 || v.shape[0] != w.shape[0])
          fail(n.kind, "expected values NxD and weights NxK, got " + shape_str(v.shape) + " and " +
                           shape_str(w.shape));
        const int64_t N = v.shape[0], D = v.shape[1], K = w.shape[1];
        std::vector<double> num(static_cast<size_t>(K * D), 0.0);
        n.aux.assign(static_cast<size_t>(K), 0.0);  // denominators
        for (int64_t i = 0; i < N; ++i)
          for (int64_t k = 0; k < K; ++k) {
            const double wv = static_cast<double>(w.at(i, k));
            if (wv == 0.0) continue;
            n.aux[static_cast<size_t>(k)] += wv;
            double* nrow = &num[static_cast<size_t>(k * D)];
            const S* vrow = &v.data[static_cast<size_t>(i * D)];
            for (int64_t d = 0; d < D; ++d) nrow[d] += wv * static_cast<double>(vrow[d]);
          }
        Tensor<S> out({K, D});
        for (int64_t k = 0; k < K; ++k) {
          const double den = n.aux[static_cast<size_t>(k)];
          if (den == 0.0) continue;  // empty group stays zero
          for (int64_t d = 0; d < D; ++d)
            out.at(k, d) = static_cast<S>(num[static_cast<size_t>(k * D + d)] / den);
        }
        n.value = std::move(out);
        break;
      }
      case OpKind::kScaleRows: {
        const Tensor<S>& a = in(n, 0);
        const Tensor<S>& r = in(n, 1);
        if (a.rank() != 2 || r.rank() != 1 || r.shape[0] != a.shape[0])
          fail(n.kind, "expected matrix RxC and vector R, got " + shape_str(a.shape) + " and " +
                           shape_str(r.shape));
        Tensor<S> out(a.shape);
        for (int64_t i = 0; i < a.shape[0]; ++i)
          for (int64_t j = 0; j < a.shape[1]; ++j) out.at(i, j) = a.at(i, j) * r.at(i);
        n.value = std::move(out);
        break;
      }
      case OpKind::kSmoothL1: {
        const Tensor<S>& a = in(n, 0);
        Tensor<S> out(a.shape);
        for (size_t i = 0; i < a.data.size(); ++i) {
          const double x = static_cast<double>(a.data[i]);
          const double ax = std::fabs(x);
          out.data[i] = static_cast<S>(ax <= 1.0 ? 0.5 * x * x : ax - 0.5);
        }
        n.value = std::move(out);
        break;
      }
      case OpKind::kL1Norm: {
        const Tensor<S>& a = in(n, 0);
        double acc = 0.0;
        for (S x : a.data) acc += std::fabs(static_cast<double>(x));
        n.value = Tensor<S>::scalar(static_cast<S>(acc));
        break;
      }
      case OpKind::kL2Norm:
      case OpKind::kFrobeniusNorm: {
        const Tensor<S>& a = in(n, 0);
        double acc = 0.0;
        for (S x : a.data) acc += static_cast<double>(x) * static_cast<double>(x);
        n.value = Tensor<S>::scalar(static_cast<S>(std::sqrt(acc)));
        break;
      }
      case OpKind::kLog: {
        const Tensor<S>& a = in(n, 0);
        Tensor<S> out(a.shape);
        for (size_t i = 0; i < a.data.size(); ++i)
          out.data[i] = static_cast<S>(std::log(std::max(static_cast<double>(a.data[i]), 1e-12)));
        n.value = std::move(out);
        break;
      }
      case OpKind::kScale: {
        const Tensor<S>& a = in(n, 0);
        Tensor<S> out(a.shape);
        for (size_t i = 0; i < a.data.size(); ++i)
          out.data[i] = static_cast<S>(static_cast<double>(a.data[i]) * n.alpha);
        n.value = std::move(out);
        break;
      }
      case OpKind::kReshape: {
        const Tensor<S>& a = in(n, 0);
        if (shape_numel(n.target_shape) != a.numel())
          fail(n.kind, "cannot reshape " + shape_str(a.shape) + " to " + shape_str(n.target_shape));
        Tensor<S> out = a;
        out.shape = n.target_shape;
        n.value = std::move(out);
        break;
      }
      case OpKind::kTranspose: {
        const Tensor<S>& a = in(n, 0);
        if (a.rank() != 2) fail(n.kind, "expected rank 2, got " + shape_str(a.shape));
        Tensor<S> out({a.shape[1], a.shape[0]});
        for (int64_t i = 0; i < a.shape[0]; ++i)
          for (int64_t j = 0; j < a.shape[1]; ++j) out.at(j, i) = a.at(i, j);
        n.value = std::move(out);
        break;
      }
      case OpKind::kChamfer: {
        const Tensor<S>& p = in(n, 0);
        const Tensor<S>& v = in(n, 1);
        if (p.rank() != 2 || p.shape[1] != 3 || v.rank() != 2 || v.shape[1] != 3)
          fail(n.kind, "expected Nx3 points and Mx3 vertices, got " + shape_str(p.shape) + " and " +
                           shape_str(v.shape));
        const int64_t N = p.shape[0], M = v.shape[0];
        n.indices.assign(static_cast<size_t>(N), 0);
        double acc = 0.0;
        for (int64_t i = 0; i < N; ++i) {
          double best = -1.0;
          int64_t arg = 0;
          const S* pi = &p.data[static_cast<size_t>(i * 3)];
          for (int64_t j = 0; j < M; ++j) {
            const S* vj = &v.data[static_cast<size_t>(j * 3)];
            const double dx = static_cast<double>(pi[0]) - static_cast<double>(vj[0]);
            const double dy = static_cast<double>(pi[1]) - static_cast<double>(vj[1]);
            const double dz = static_cast<double>(pi[2]) - static_cast<double>(vj[2]);
            const double d2 = dx * dx + dy * dy + dz * dz;
            if (best < 0.0 || d2 < best) { best = d2; arg = j; }
          }
          n.indices[static_cast<size_t>(i)] = arg;
          acc += std::sqrt(best);
        }
        n.value = Tensor<S>::scalar(static_cast<S>(acc / static_cast<double>(N)));
        break;
      }
      case OpKind::kLeaf:
        break;
    }
  }

  // ---- backward kernels --------------------------------------------------

  Tensor<S>* grad_of_input(const Node& n, size_t i) {
    Node& src = nodes_[static_cast<size_t>(n.inputs[i])];
    if (!src.requires_grad) return nullptr;
    if (src.grad.data.empty()) src.grad = Tensor<S>(src.value.shape);
    return &src.grad;
  }

  void backward_node(Node& n) {
    const Tensor<S>& g = n.grad;
    switch (n.kind) {
      case OpKind::kMatmul: {
        const Tensor<S>& a = in(n, 0);
        const Tensor<S>& b = in(n, 1);
        const int64_t R = a.shape[0], K = a.shape[1], C = b.shape[1];
        if (Tensor<S>* ga = grad_of_input(n, 0)) {
          // dA = dC * B^T, via an explicit transpose for stride-1 inner loops
          std::vector<S> bt(static_cast<size_t>(C * K));
          for (int64_t k = 0; k < K; ++k)
            for (int64_t j = 0; j < C; ++j) bt[static_cast<size_t>(j * K + k)] = b.at(k, j);
          for (int64_t i = 0; i < R; ++i) {
            S* garow = &ga->data[static_cast<size_t>(i * K)];
            for (int64_t j = 0; j < C; ++j) {
              const S gv = g.at(i, j);
              const S* btrow = &bt[static_cast<size_t>(j * K)];
              for (int64_t k = 0; k < K; ++k) garow[k] += gv * btrow[k];
            }
          }
        }
        if (Tensor<S>* gb = grad_of_input(n, 1)) {
          for (int64_t i = 0; i < R; ++i) {
            const S* grow = &g.data[static_cast<size_t>(i * C)];
            for (int64_t k = 0; k < K; ++k) {
              const S av = a.at(i, k);
              S* gbrow = &gb->data[static_cast<size_t>(k * C)];
              for (int64_t j = 0; j < C; ++j) gbrow[j] += av * grow[j];
            }
          }
        }
        break;
      }
      case OpKind::kAdd: {
        for (size_t s = 0; s < 2; ++s)
          if (Tensor<S>* gi = grad_of_input(n, s))
            for (size_t i = 0; i < g.data.size(); ++i) gi->data[i] += g.data[i];
        break;
      }
      case OpKind::kSub: {
        if (Tensor<S>* ga = grad_of_input(n, 0))
          for (size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i];
        if (Tensor<S>* gb = grad_of_input(n, 1))
          for (size_t i = 0; i < g.data.size(); ++i) gb->data[i] -= g.data[i];
        break;
      }
      case OpKind::kMul: {
        const Tensor<S>& a = in(n, 0);
        const Tensor<S>& b = in(n, 1);
        if (Tensor<S>* ga = grad_of_input(n, 0))
          for (size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i] * b.data[i];
        if (Tensor<S>* gb = grad_of_input(n, 1))
          for (size_t i = 0; i < g.data.size(); ++i) gb->data[i] += g.data[i] * a.data[i];
        break;
      }
      case OpKind::kDiv: {
        const Tensor<S>& a = in(n, 0);
        const Tensor<S>& b = in(n, 1);
        if (Tensor<S>* ga = grad_of_input(n, 0))
          for (size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i] / b.data[i];
        if (Tensor<S>* gb = grad_of_input(n, 1))
          for (size_t i = 0; i < g.data.size(); ++i)
            gb->data[i] -= g.data[i] * a.data[i] / (b.data[i] * b.data[i]);
        break;
      }
      case OpKind::kBiasAdd: {
        const int64_t R = n.value.shape[0], C = n.value.shape[1];
        if (Tensor<S>* ga = grad_of_input(n, 0))
          for (size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i];
        if (Tensor<S>* gb = grad_of_input(n, 1))
          for (int64_t i = 0; i < R; ++i)
            for (int64_t j = 0; j < C; ++j) gb->at(j) += g.at(i, j);
        break;
      }
      case OpKind::kConcat: {
        if (n.axis == 0) {
          int64_t off = 0;
          for (size_t s = 0; s < n.inputs.size(); ++s) {
            const int64_t m = in(n, s).numel();
            if (Tensor<S>* gi = grad_of_input(n, s))
              for (int64_t i = 0; i < m; ++i) gi->data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(off + i)];
            off += m;
          }
        } else {
          const int64_t R = n.value.shape[0];
          int64_t col_off = 0;
          for (size_t s = 0; s < n.inputs.size(); ++s) {
            const int64_t C = in(n, s).shape[1];
            if (Tensor<S>* gi = grad_of_input(n, s))
              for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c) gi->at(r, c) += g.at(r, col_off + c);
            col_off += C;
          }
        }
        break;
      }
      case OpKind::kRelu: {
        const Tensor<S>& a = in(n, 0);
        if (Tensor<S>* ga = grad_of_input(n, 0))
          for (size_t i = 0; i < g.data.size(); ++i)
            if (a.data[i] > S(0)) ga->data[i] += g.data[i];
        break;
      }
      case OpKind::kSoftmax: {
        const Tensor<S>& y = n.value;
        const int64_t C = y.shape.back();
        const int64_t R = y.numel() / C;
        if (Tensor<S>* ga = grad_of_input(n, 0)) {
          for (int64_t r = 0; r < R; ++r) {
            const S* yr = &y.data[static_cast<size_t>(r * C)];
            const S* gr = &g.data[static_cast<size_t>(r * C)];
            double dot = 0.0;
            for (int64_t j = 0; j < C; ++j) dot += static_cast<double>(gr[j]) * static_cast<double>(yr[j]);
            S* gar = &ga->data[static_cast<size_t>(r * C)];
            for (int64_t j = 0; j < C; ++j)
              gar[j] += static_cast<S>(static_cast<double>(yr[j]) * (static_cast<double>(gr[j]) - dot));
          }
        }
        break;
      }
      case OpKind::kReduceMax: {
        const Tensor<S>& a = in(n, 0);
        Tensor<S>* ga = grad_of_input(n, 0);
        if (!ga) break;
        if (a.rank() == 2) {
          const int64_t C = a.shape[1];
          for (int64_t j = 0; j < C; ++j) ga->at(n.indices[static_cast<size_t>(j)], j) += g.at(j);
        } else {
          const int64_t G = a.shape[0], F = a.shape[2];
          for (int64_t gi = 0; gi < G; ++gi)
            for (int64_t f = 0; f < F; ++f)
              ga->at(gi, n.indices[static_cast<size_t>(gi * F + f)], f) += g.at(gi, f);
        }
        break;
      }
      case OpKind::kReduceMean:
      case OpKind::kReduceSum: {
        const Tensor<S>& a = in(n, 0);
        if (Tensor<S>* ga = grad_of_input(n, 0)) {
          const S gv = n.kind == OpKind::kReduceMean
                           ? static_cast<S>(static_cast<double>(g.data[0]) / static_cast<double>(a.numel()))
                           : g.data[0];
          for (size_t i = 0; i < ga->data.size(); ++i) ga->data[i] += gv;
        }
        break;
      }
      case OpKind::kGatherRows: {
        const Tensor<S>& a = in(n, 0);
        if (Tensor<S>* ga = grad_of_input(n, 0)) {
          const int64_t stride = a.numel() / a.shape[0];
          for (size_t i = 0; i < n.indices.size(); ++i) {
            const S* grow = &g.data[static_cast<size_t>(static_cast<int64_t>(i) * stride)];
            S* garow = &ga->data[static_cast<size_t>(n.indices[i] * stride)];
            for (int64_t j = 0; j < stride; ++j) garow[j] += grow[j];
          }
        }
        break;
      }
      case OpKind::kScatterWeightedSum: {
        const Tensor<S>& v = in(n, 0);
        const Tensor<S>& w = in(n, 1);
        const int64_t N = v.shape[0], D = v.shape[1], K = w.shape[1];
        if (Tensor<S>* gv = grad_of_input(n, 0)) {
          for (int64_t i = 0; i < N; ++i) {
            S* gvrow = &gv->data[static_cast<size_t>(i * D)];
            for (int64_t k = 0; k < K; ++k) {
              const S wv = w.at(i, k);
              if (wv == S(0)) continue;
              const S* grow = &g.data[static_cast<size_t>(k * D)];
              for (int64_t d = 0; d < D; ++d) gvrow[d] += wv * grow[d];
            }
          }
        }
        if (Tensor<S>* gw = grad_of_input(n, 1)) {
          for (int64_t i = 0; i < N; ++i) {
            const S* vrow = &v.data[static_cast<size_t>(i * D)];
            for (int64_t k = 0; k < K; ++k) {
              const S* grow = &g.data[static_cast<size_t>(k * D)];
              double dot = 0.0;
              for (int64_t d = 0; d < D; ++d)
                dot += static_cast<double>(vrow[d]) * static_cast<double>(grow[d]);
              gw->at(i, k) += static_cast<S>(dot);
            }
          }
        }
        break;
      }
      case OpKind::kScatterWeightedMean: {
        const Tensor<S>& v = in(n, 0);
        const Tensor<S>& w = in(n, 1);
        const int64_t N = v.shape[0], D = v.shape[1], K = w.shape[1];
        Tensor<S>* gv = grad_of_input(n, 0);
        Tensor<S>* gw = grad_of_input(n, 1);
        if (!gv && !gw) break;
        for (int64_t k = 0; k < K; ++k) {
          const double den = n.aux[static_cast<size_t>(k)];
          if (den == 0.0) continue;
          const S* grow = &g.data[static_cast<size_t>(k * D)];
          const S* orow = &n.value.data[static_cast<size_t>(k * D)];
          for (int64_t i = 0; i < N; ++i) {
            const double wv = static_cast<double>(w.at(i, k));
            if (gv && wv != 0.0) {
              S* gvrow = &gv->data[static_cast<size_t>(i * D)];
              for (int64_t d = 0; d < D; ++d)
                gvrow[d] += static_cast<S>(static_cast<double>(grow[d]) * wv / den);
            }
            if (gw) {
              const S* vrow = &v.data[static_cast<size_t>(i * D)];
              double acc = 0.0;
              for (int64_t d = 0; d < D; ++d)
                acc += static_cast<double>(grow[d]) *
                       (static_cast<double>(vrow[d]) - static_cast<double>(orow[d]));
              gw->at(i, k) += static_cast<S>(acc / den);
            }
          }
        }
        break;
      }
      case OpKind::kScaleRows: {
        const Tensor<S>& a = in(n, 0);
        const Tensor<S>& r = in(n, 1);
        const int64_t R = a.shape[0], C = a.shape[1];
        if (Tensor<S>* ga = grad_of_input(n, 0))
          for (int64_t i = 0; i < R; ++i)
            for (int64_t j = 0; j < C; ++j) ga->at(i, j) += g.at(i, j) * r.at(i);
        if (Tensor<S>* gr = grad_of_input(n, 1))
          for (int64_t i = 0; i < R; ++i) {
            double dot = 0.0;
            for (int64_t j = 0; j < C; ++j)
              dot += static_cast<double>(g.at(i, j)) * static_cast<double>(a.at(i, j));
            gr->at(i) += static_cast<S>(dot);
          }
        break;
      }
      case OpKind::kSmoothL1: {
        const Tensor<S>& a = in(n, 0);
        if (Tensor<S>* ga = grad_of_input(n, 0))
          for (size_t i = 0; i < g.data.size(); ++i) {
            const double x = static_cast<double>(a.data[i]);
            const double d = std::fabs(x) <= 1.0 ? x : (x > 0.0 ? 1.0 : -1.0);
            ga->data[i] += static_cast<S>(static_cast<double>(g.data[i]) * d);
          }
        break;
      }
      case OpKind::kL1Norm: {
        const Tensor<S>& a = in(n, 0);
        if (Tensor<S>* ga = grad_of_input(n, 0)) {
          const S gv = g.data[0];
          for (size_t i = 0; i < a.data.size(); ++i) {
            if (a.data[i] > S(0)) ga->data[i] += gv;
            else if (a.data[i] < S(0)) ga->data[i] -= gv;
          }
        }
        break;
      }
      case OpKind::kL2Norm:
      case OpKind::kFrobeniusNorm: {
        const Tensor<S>& a = in(n, 0);
        if (Tensor<S>* ga = grad_of_input(n, 0)) {
          const double norm = static_cast<double>(n.value.data[0]);
          if (norm > 1e-20) {
            const double gv = static_cast<double>(g.data[0]) / norm;
            for (size_t i = 0; i < a.data.size(); ++i)
              ga->data[i] += static_cast<S>(gv * static_cast<double>(a.data[i]));
          }
        }
        break;
      }
      case OpKind::kLog: {
        const Tensor<S>& a = in(n, 0);
        if (Tensor<S>* ga = grad_of_input(n, 0))
          for (size_t i = 0; i < g.data.size(); ++i)
            ga->data[i] += static_cast<S>(static_cast<double>(g.data[i]) /
                                          std::max(static_cast<double>(a.data[i]), 1e-12));
        break;
      }
      case OpKind::kScale: {
        if (Tensor<S>* ga = grad_of_input(n, 0))
          for (size_t i = 0; i < g.data.size(); ++i)
            ga->data[i] += static_cast<S>(static_cast<double>(g.data[i]) * n.alpha);
        break;
      }
      case OpKind::kReshape: {
        if (Tensor<S>* ga = grad_of_input(n, 0))
          for (size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i];
        break;
      }
      case OpKind::kTranspose: {
        const Tensor<S>& a = in(n, 0);
        if (Tensor<S>* ga = grad_of_input(n, 0))
          for (int64_t i = 0; i < a.shape[0]; ++i)
            for (int64_t j = 0; j < a.shape[1]; ++j) ga->at(i, j) += g.at(j, i);
        break;
      }
      case OpKind::kChamfer: {
        const Tensor<S>& p = in(n, 0);
        const Tensor<S>& v = in(n, 1);
        const int64_t N = p.shape[0];
        const double gv = static_cast<double>(g.data[0]) / static_cast<double>(N);
        Tensor<S>* gp = grad_of_input(n, 0);
        Tensor<S>* gvv = grad_of_input(n, 1);
        if (!gp && !gvv) break;
        for (int64_t i = 0; i < N; ++i) {
          const int64_t j = n.indices[static_cast<size_t>(i)];
          double d[3];
          double norm = 0.0;
          for (int c = 0; c < 3; ++c) {
            d[c] = static_cast<double>(p.at(i, c)) - static_cast<double>(v.at(j, c));
            norm += d[c] * d[c];
          }
          norm = std::sqrt(norm);
          if (norm < 1e-12) continue;  // subgradient zero at coincidence
          for (int c = 0; c < 3; ++c) {
            const double dir = d[c] / norm;
            if (gp) gp->at(i, c) += static_cast<S>(gv * dir);
            if (gvv) gvv->at(j, c) -= static_cast<S>(gv * dir);
          }
        }
        break;
      }
      case OpKind::kLeaf:
        break;
    }
  }
};

}  // namespace votebody
