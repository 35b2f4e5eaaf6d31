#include "iglab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "iglab/kernels.hpp"

namespace iglab {

namespace {

namespace kn = iglab::kernels;

constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / 3.14159265358979323846);

[[noreturn]] void shape_error(OpKind kind, const std::string& detail) {
  throw std::invalid_argument(std::string(op_name(kind)) + ": " + detail);
}

void require(bool cond, OpKind kind, const std::string& detail) {
  if (!cond) shape_error(kind, detail);
}

}  // namespace

Tensor::Tensor(std::vector<long> s, std::vector<double> values)
    : shape(std::move(s)), v(std::move(values)) {
  if (shape_numel(shape) != static_cast<long>(v.size()))
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(v.size()) + " values");
}

Tensor Tensor::zeros(std::vector<long> s) {
  const long n = shape_numel(s);
  return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<long> s, double value) {
  const long n = shape_numel(s);
  return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector1d(std::vector<double> values) {
  const long n = static_cast<long>(values.size());
  return Tensor({n}, std::move(values));
}

long Tensor::numel() const { return static_cast<long>(v.size()); }

double Tensor::item() const {
  if (v.size() != 1)
    throw std::invalid_argument("item: tensor of shape " + shape_str(shape) + " is not a scalar");
  return v[0];
}

bool Tensor::all_finite() const {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::string shape_str(std::span<const long> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

long shape_numel(std::span<const long> shape) {
  long n = 1;
  for (const long d : shape) {
    if (d <= 0) throw std::invalid_argument("shape " + shape_str(shape) + " has a non-positive dim");
    n *= d;
  }
  return n;
}

Tensor t_add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("t_add: shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor out = a;
  kn::add(out.v.data(), a.v.data(), b.v.data(), a.v.size());
  return out;
}

Tensor t_mul(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("t_mul: shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor out = a;
  kn::mul(out.v.data(), a.v.data(), b.v.data(), a.v.size());
  return out;
}

Tensor t_scale(const Tensor& a, double c) {
  Tensor out = a;
  kn::scale(out.v.data(), a.v.data(), c, a.v.size());
  return out;
}

void t_add_inplace(Tensor& dst, const Tensor& a) {
  if (!dst.same_shape(a))
    throw std::invalid_argument("t_add_inplace: shapes " + shape_str(dst.shape) + " vs " + shape_str(a.shape));
  kn::add(dst.v.data(), dst.v.data(), a.v.data(), a.v.size());
}

void t_axpy_inplace(Tensor& dst, double c, const Tensor& a) {
  if (!dst.same_shape(a))
    throw std::invalid_argument("t_axpy_inplace: shapes " + shape_str(dst.shape) + " vs " + shape_str(a.shape));
  kn::axpy(dst.v.data(), c, a.v.data(), a.v.size());
}

double t_sum(const Tensor& a) { return kn::sum(a.v.data(), a.v.size()); }

double t_dot(const Tensor& a, const Tensor& b) {
  if (a.v.size() != b.v.size())
    throw std::invalid_argument("t_dot: sizes " + std::to_string(a.v.size()) + " vs " + std::to_string(b.v.size()));
  return kn::dot(a.v.data(), b.v.data(), a.v.size());
}

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::reshape: return "reshape";
    case OpKind::slice: return "slice";
    case OpKind::concat: return "concat";
    case OpKind::scale: return "scale";
    case OpKind::softmax: return "softmax";
    case OpKind::layer_norm: return "layer-norm";
    case OpKind::gelu: return "gelu";
    case OpKind::tanh_fn: return "tanh";
    case OpKind::embedding: return "embedding-lookup";
    case OpKind::masked_fill: return "masked-fill";
    case OpKind::reduce_sum: return "sum";
    case OpKind::reduce_mean: return "mean";
    case OpKind::log_fn: return "log";
    case OpKind::exp_fn: return "exp";
    case OpKind::cross_entropy: return "cross-entropy-with-index";
  }
  return "?";
}

const Tensor& GradientMap::at(NodeRef n) const {
  if (n.id < 0 || static_cast<std::size_t>(n.id) >= grads_.size())
    throw std::invalid_argument("gradient map: node " + std::to_string(n.id) + " out of range");
  return grads_[static_cast<std::size_t>(n.id)];
}

Tensor GradientMap::take(NodeRef n) {
  at(n);  // range check
  return std::move(grads_[static_cast<std::size_t>(n.id)]);
}

void Recording::check_ref(NodeRef n, const char* where) const {
  if (!n.valid() || static_cast<std::size_t>(n.id) >= nodes_.size())
    throw std::invalid_argument(std::string(where) + ": node " + std::to_string(n.id) +
                                " is not in this recording");
}

const Tensor& Recording::value(NodeRef n) const {
  check_ref(n, "value");
  return nodes_[static_cast<std::size_t>(n.id)].value;
}

const Recording::Node& Recording::node(NodeRef n) const {
  check_ref(n, "node");
  return nodes_[static_cast<std::size_t>(n.id)];
}

NodeRef Recording::leaf(Tensor value) {
  Node n{OpKind::leaf, {}, {}, std::move(value)};
  nodes_.push_back(std::move(n));
  return NodeRef{static_cast<std::int32_t>(nodes_.size() - 1)};
}

namespace {

// Forward evaluation of one record given its input values. Shared by apply()
// and replay() so recorded values and replayed values go through identical
// arithmetic.
Tensor compute(OpKind kind, const OpAttrs& attrs, std::span<const Tensor* const> in) {
  switch (kind) {
    case OpKind::leaf:
      throw std::logic_error("compute: leaf has no inputs");

    case OpKind::add: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.same_shape(b)) {
        Tensor out = a;
        kn::add(out.v.data(), a.v.data(), b.v.data(), a.v.size());
        return out;
      }
      // bias broadcast over the last axis
      require(b.rank() == 1 && a.rank() == 2 && a.shape[1] == b.shape[0], OpKind::add,
              "shapes " + shape_str(a.shape) + " and " + shape_str(b.shape) +
                  " (only same-shape or [n,d]+[d] supported)");
      Tensor out = a;
      const long rows = a.shape[0], d = a.shape[1];
      for (long i = 0; i < rows; ++i)
        kn::add(out.v.data() + i * d, a.v.data() + i * d, b.v.data(), static_cast<std::size_t>(d));
      return out;
    }

    case OpKind::mul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      require(a.same_shape(b), OpKind::mul,
              "shapes " + shape_str(a.shape) + " and " + shape_str(b.shape));
      Tensor out = a;
      kn::mul(out.v.data(), a.v.data(), b.v.data(), a.v.size());
      return out;
    }

    case OpKind::matmul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      require(a.rank() == 2 && b.rank() == 2 && a.shape[1] == b.shape[0], OpKind::matmul,
              "incompatible shapes " + shape_str(a.shape) + " and " + shape_str(b.shape));
      const long m = a.shape[0], k = a.shape[1], n = b.shape[1];
      Tensor out = Tensor::zeros({m, n});
      kn::matmul_nn(out.v.data(), a.v.data(), b.v.data(), static_cast<std::size_t>(m),
                    static_cast<std::size_t>(k), static_cast<std::size_t>(n), false);
      return out;
    }

    case OpKind::transpose: {
      const Tensor& a = *in[0];
      require(a.rank() == 2, OpKind::transpose, "needs rank 2, got " + shape_str(a.shape));
      const long m = a.shape[0], n = a.shape[1];
      Tensor out = Tensor::zeros({n, m});
      for (long i = 0; i < m; ++i)
        for (long j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
      return out;
    }

    case OpKind::reshape: {
      const Tensor& a = *in[0];
      std::vector<long> ns(attrs.ints.begin(), attrs.ints.end());
      require(shape_numel(ns) == a.numel(), OpKind::reshape,
              "cannot reshape " + shape_str(a.shape) + " to " + shape_str(ns));
      Tensor out = a;
      out.shape = std::move(ns);
      return out;
    }

    case OpKind::slice: {
      const Tensor& a = *in[0];
      if (a.rank() == 1) {
        require(attrs.ints.size() == 2, OpKind::slice, "rank-1 slice needs {r0,r1}");
        const long r0 = attrs.ints[0], r1 = attrs.ints[1];
        require(0 <= r0 && r0 < r1 && r1 <= a.shape[0], OpKind::slice,
                "range [" + std::to_string(r0) + "," + std::to_string(r1) + ") out of " +
                    shape_str(a.shape));
        Tensor out = Tensor::zeros({r1 - r0});
        std::copy(a.v.begin() + r0, a.v.begin() + r1, out.v.begin());
        return out;
      }
      require(a.rank() == 2 && attrs.ints.size() == 4, OpKind::slice,
              "rank-2 slice needs {r0,r1,c0,c1}, got " + shape_str(a.shape));
      const long r0 = attrs.ints[0], r1 = attrs.ints[1], c0 = attrs.ints[2], c1 = attrs.ints[3];
      require(0 <= r0 && r0 < r1 && r1 <= a.shape[0] && 0 <= c0 && c0 < c1 && c1 <= a.shape[1],
              OpKind::slice, "window out of " + shape_str(a.shape));
      Tensor out = Tensor::zeros({r1 - r0, c1 - c0});
      for (long i = r0; i < r1; ++i)
        std::copy(a.v.begin() + i * a.shape[1] + c0, a.v.begin() + i * a.shape[1] + c1,
                  out.v.begin() + (i - r0) * (c1 - c0));
      return out;
    }

    case OpKind::concat: {
      require(!in.empty() && !attrs.ints.empty(), OpKind::concat, "needs inputs and an axis");
      const int axis = static_cast<int>(attrs.ints[0]);
      const Tensor& first = *in[0];
      if (first.rank() == 1) {
        require(axis == 0, OpKind::concat, "rank-1 concat must use axis 0");
        long total = 0;
        for (const Tensor* t : in) {
          require(t->rank() == 1, OpKind::concat, "mixed ranks");
          total += t->shape[0];
        }
        Tensor out = Tensor::zeros({total});
        long off = 0;
        for (const Tensor* t : in) {
          std::copy(t->v.begin(), t->v.end(), out.v.begin() + off);
          off += t->shape[0];
        }
        return out;
      }
      require(first.rank() == 2 && (axis == 0 || axis == 1), OpKind::concat,
              "rank-2 concat needs axis 0 or 1");
      if (axis == 0) {
        long rows = 0;
        for (const Tensor* t : in) {
          require(t->rank() == 2 && t->shape[1] == first.shape[1], OpKind::concat,
                  "column mismatch: " + shape_str(t->shape) + " vs " + shape_str(first.shape));
          rows += t->shape[0];
        }
        Tensor out = Tensor::zeros({rows, first.shape[1]});
        long off = 0;
        for (const Tensor* t : in) {
          std::copy(t->v.begin(), t->v.end(), out.v.begin() + off);
          off += t->numel();
        }
        return out;
      }
      long cols = 0;
      for (const Tensor* t : in) {
        require(t->rank() == 2 && t->shape[0] == first.shape[0], OpKind::concat,
                "row mismatch: " + shape_str(t->shape) + " vs " + shape_str(first.shape));
        cols += t->shape[1];
      }
      const long rows = first.shape[0];
      Tensor out = Tensor::zeros({rows, cols});
      long coff = 0;
      for (const Tensor* t : in) {
        const long tc = t->shape[1];
        for (long i = 0; i < rows; ++i)
          std::copy(t->v.begin() + i * tc, t->v.begin() + (i + 1) * tc,
                    out.v.begin() + i * cols + coff);
        coff += tc;
      }
      return out;
    }

    case OpKind::scale: {
      const Tensor& a = *in[0];
      Tensor out = a;
      kn::scale(out.v.data(), a.v.data(), attrs.scalar, a.v.size());
      return out;
    }

    case OpKind::softmax: {
      const Tensor& a = *in[0];
      require(a.rank() == 1 || a.rank() == 2, OpKind::softmax,
              "needs rank 1 or 2, got " + shape_str(a.shape));
      const long d = a.shape.back();
      const long rows = a.numel() / d;
      Tensor out = a;
      for (long i = 0; i < rows; ++i) {
        double* row = out.v.data() + i * d;
        const double m = kn::max_value(row, static_cast<std::size_t>(d));
        double s = 0.0;
        for (long j = 0; j < d; ++j) {
          row[j] = std::exp(row[j] - m);
          s += row[j];
        }
        kn::scale(row, row, 1.0 / s, static_cast<std::size_t>(d));
      }
      return out;
    }

    case OpKind::layer_norm: {
      const Tensor& x = *in[0];
      const Tensor& g = *in[1];
      const Tensor& b = *in[2];
      require(x.rank() >= 1, OpKind::layer_norm, "empty input");
      const long d = x.shape.back();
      require(g.rank() == 1 && g.shape[0] == d && b.rank() == 1 && b.shape[0] == d,
              OpKind::layer_norm,
              "gain/bias " + shape_str(g.shape) + "/" + shape_str(b.shape) +
                  " do not match last axis of " + shape_str(x.shape));
      const long rows = x.numel() / d;
      Tensor out = x;
      for (long i = 0; i < rows; ++i) {
        const double* xr = x.v.data() + i * d;
        double* yr = out.v.data() + i * d;
        const double mean = kn::sum(xr, static_cast<std::size_t>(d)) / static_cast<double>(d);
        double var = 0.0;
        for (long j = 0; j < d; ++j) {
          const double c = xr[j] - mean;
          var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        for (long j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * inv * g.v[j] + b.v[j];
      }
      return out;
    }

    case OpKind::gelu: {
      const Tensor& a = *in[0];
      Tensor out = a;
      for (double& x : out.v) {
        const double inner = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
        x = 0.5 * x * (1.0 + std::tanh(inner));
      }
      return out;
    }

    case OpKind::tanh_fn: {
      Tensor out = *in[0];
      for (double& x : out.v) x = std::tanh(x);
      return out;
    }

    case OpKind::embedding: {
      const Tensor& table = *in[0];
      require(table.rank() == 2, OpKind::embedding, "table must be rank 2, got " + shape_str(table.shape));
      const long n = static_cast<long>(attrs.ints.size());
      require(n > 0, OpKind::embedding, "empty id list");
      const long d = table.shape[1];
      Tensor out = Tensor::zeros({n, d});
      for (long i = 0; i < n; ++i) {
        const long id = attrs.ints[static_cast<std::size_t>(i)];
        require(0 <= id && id < table.shape[0], OpKind::embedding,
                "id " + std::to_string(id) + " out of table " + shape_str(table.shape));
        std::copy(table.v.begin() + id * d, table.v.begin() + (id + 1) * d, out.v.begin() + i * d);
      }
      return out;
    }

    case OpKind::masked_fill: {
      const Tensor& a = *in[0];
      require(static_cast<long>(attrs.ints.size()) == a.numel(), OpKind::masked_fill,
              "mask length " + std::to_string(attrs.ints.size()) + " vs tensor " + shape_str(a.shape));
      Tensor out = a;
      for (std::size_t i = 0; i < out.v.size(); ++i)
        if (attrs.ints[i]) out.v[i] = attrs.scalar;
      return out;
    }

    case OpKind::reduce_sum:
      return Tensor::scalar(kn::sum(in[0]->v.data(), in[0]->v.size()));

    case OpKind::reduce_mean:
      return Tensor::scalar(kn::sum(in[0]->v.data(), in[0]->v.size()) /
                            static_cast<double>(in[0]->numel()));

    case OpKind::log_fn: {
      Tensor out = *in[0];
      for (double& x : out.v) {
        if (x <= 0.0)
          throw std::domain_error("log: non-positive input " + std::to_string(x));
        x = std::log(x);
      }
      return out;
    }

    case OpKind::exp_fn: {
      Tensor out = *in[0];
      for (double& x : out.v) x = std::exp(x);
      return out;
    }

    case OpKind::cross_entropy: {
      const Tensor& logits = *in[0];
      require(logits.rank() == 1 && !attrs.ints.empty(), OpKind::cross_entropy,
              "needs rank-1 logits and a target index, got " + shape_str(logits.shape));
      const long t = attrs.ints[0];
      require(0 <= t && t < logits.shape[0], OpKind::cross_entropy,
              "target " + std::to_string(t) + " out of " + shape_str(logits.shape));
      const double m = kn::max_value(logits.v.data(), logits.v.size());
      double s = 0.0;
      for (const double x : logits.v) s += std::exp(x - m);
      const double lse = m + std::log(s);
      return Tensor::scalar(lse - logits.v[static_cast<std::size_t>(t)]);
    }
  }
  throw std::logic_error("compute: unknown op");
}

}  // namespace

NodeRef Recording::apply(OpKind kind, std::span<const NodeRef> inputs, OpAttrs attrs) {
  if (kind == OpKind::leaf) throw std::invalid_argument("apply: use leaf() to add leaves");
  std::vector<const Tensor*> vals;
  vals.reserve(inputs.size());
  std::vector<NodeRef> in(inputs.begin(), inputs.end());
  for (const NodeRef r : in) {
    check_ref(r, op_name(kind));
    vals.push_back(&nodes_[static_cast<std::size_t>(r.id)].value);
  }
  Tensor out = compute(kind, attrs, vals);
  nodes_.push_back(Node{kind, std::move(in), std::move(attrs), std::move(out)});
  return NodeRef{static_cast<std::int32_t>(nodes_.size() - 1)};
}

NodeRef Recording::add(NodeRef a, NodeRef b) {
  const NodeRef in[] = {a, b};
  return apply(OpKind::add, in);
}

NodeRef Recording::mul(NodeRef a, NodeRef b) {
  const NodeRef in[] = {a, b};
  return apply(OpKind::mul, in);
}

NodeRef Recording::matmul(NodeRef a, NodeRef b) {
  const NodeRef in[] = {a, b};
  return apply(OpKind::matmul, in);
}

NodeRef Recording::transpose(NodeRef a) {
  const NodeRef in[] = {a};
  return apply(OpKind::transpose, in);
}

NodeRef Recording::reshape(NodeRef a, std::vector<long> new_shape) {
  const NodeRef in[] = {a};
  OpAttrs attrs;
  attrs.ints = std::move(new_shape);
  return apply(OpKind::reshape, in, std::move(attrs));
}

NodeRef Recording::slice(NodeRef a, long r0, long r1) {
  const NodeRef in[] = {a};
  OpAttrs attrs;
  attrs.ints = {r0, r1};
  return apply(OpKind::slice, in, std::move(attrs));
}

NodeRef Recording::slice(NodeRef a, long r0, long r1, long c0, long c1) {
  const NodeRef in[] = {a};
  OpAttrs attrs;
  attrs.ints = {r0, r1, c0, c1};
  return apply(OpKind::slice, in, std::move(attrs));
}

NodeRef Recording::concat(std::span<const NodeRef> parts, int axis) {
  OpAttrs attrs;
  attrs.ints = {axis};
  return apply(OpKind::concat, parts, std::move(attrs));
}

NodeRef Recording::scale(NodeRef a, double c) {
  const NodeRef in[] = {a};
  OpAttrs attrs;
  attrs.scalar = c;
  return apply(OpKind::scale, in, std::move(attrs));
}

NodeRef Recording::softmax(NodeRef a) {
  const NodeRef in[] = {a};
  return apply(OpKind::softmax, in);
}

NodeRef Recording::layer_norm(NodeRef x, NodeRef gain, NodeRef bias) {
  const NodeRef in[] = {x, gain, bias};
  return apply(OpKind::layer_norm, in);
}

NodeRef Recording::gelu(NodeRef a) {
  const NodeRef in[] = {a};
  return apply(OpKind::gelu, in);
}

NodeRef Recording::tanh_fn(NodeRef a) {
  const NodeRef in[] = {a};
  return apply(OpKind::tanh_fn, in);
}

NodeRef Recording::embedding(NodeRef table, const std::vector<long>& ids) {
  const NodeRef in[] = {table};
  OpAttrs attrs;
  attrs.ints = ids;
  return apply(OpKind::embedding, in, std::move(attrs));
}

NodeRef Recording::masked_fill(NodeRef a, const std::vector<long>& mask, double fill) {
  const NodeRef in[] = {a};
  OpAttrs attrs;
  attrs.scalar = fill;
  attrs.ints = mask;
  return apply(OpKind::masked_fill, in, std::move(attrs));
}

NodeRef Recording::reduce_sum(NodeRef a) {
  const NodeRef in[] = {a};
  return apply(OpKind::reduce_sum, in);
}

NodeRef Recording::reduce_mean(NodeRef a) {
  const NodeRef in[] = {a};
  return apply(OpKind::reduce_mean, in);
}

NodeRef Recording::log_fn(NodeRef a) {
  const NodeRef in[] = {a};
  return apply(OpKind::log_fn, in);
}

NodeRef Recording::exp_fn(NodeRef a) {
  const NodeRef in[] = {a};
  return apply(OpKind::exp_fn, in);
}

NodeRef Recording::cross_entropy(NodeRef logits, long target) {
  const NodeRef in[] = {logits};
  OpAttrs attrs;
  attrs.ints = {target};
  return apply(OpKind::cross_entropy, in, std::move(attrs));
}

std::vector<Tensor> Recording::replay() const {
  std::vector<Tensor> vals;
  vals.reserve(nodes_.size());
  for (const Node& n : nodes_) {
    if (n.kind == OpKind::leaf) {
      vals.push_back(n.value);
      continue;
    }
    std::vector<const Tensor*> in;
    in.reserve(n.inputs.size());
    for (const NodeRef r : n.inputs) in.push_back(&vals[static_cast<std::size_t>(r.id)]);
    vals.push_back(compute(n.kind, n.attrs, in));
  }
  return vals;
}

GradientMap Recording::backward(NodeRef scalar_node) const {
  check_ref(scalar_node, "backward");
  const Tensor& sv = nodes_[static_cast<std::size_t>(scalar_node.id)].value;
  if (sv.numel() != 1)
    throw std::invalid_argument("backward: node has shape " + shape_str(sv.shape) +
                                ", expected a scalar");

  std::vector<Tensor> grad(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) grad[i] = Tensor::zeros(nodes_[i].value.shape);
  grad[static_cast<std::size_t>(scalar_node.id)].v[0] = 1.0;

  for (std::int32_t id = scalar_node.id; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.kind == OpKind::leaf) continue;
    const Tensor& g = grad[static_cast<std::size_t>(id)];
    const Tensor& y = n.value;
    auto gin = [&](int i) -> Tensor& { return grad[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(i)].id)]; };
    auto vin = [&](int i) -> const Tensor& { return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(i)].id)].value; };

    switch (n.kind) {
      case OpKind::leaf:
        break;

      case OpKind::add: {
        t_add_inplace(gin(0), g);
        Tensor& gb = gin(1);
        if (gb.same_shape(g)) {
          t_add_inplace(gb, g);
        } else {
          const long rows = g.shape[0], d = g.shape[1];
          for (long i = 0; i < rows; ++i)
            kn::add(gb.v.data(), gb.v.data(), g.v.data() + i * d, static_cast<std::size_t>(d));
        }
        break;
      }

      case OpKind::mul: {
        Tensor tmp = t_mul(g, vin(1));
        t_add_inplace(gin(0), tmp);
        tmp = t_mul(g, vin(0));
        t_add_inplace(gin(1), tmp);
        break;
      }

      case OpKind::matmul: {
        const Tensor& a = vin(0);
        const Tensor& b = vin(1);
        const long m = a.shape[0], k = a.shape[1], nn = b.shape[1];
        // dA += g * B^T ; dB += A^T * g
        kn::matmul_nt(gin(0).v.data(), g.v.data(), b.v.data(), static_cast<std::size_t>(m),
                      static_cast<std::size_t>(nn), static_cast<std::size_t>(k), true);
        kn::matmul_tn(gin(1).v.data(), a.v.data(), g.v.data(), static_cast<std::size_t>(m),
                      static_cast<std::size_t>(k), static_cast<std::size_t>(nn), true);
        break;
      }

      case OpKind::transpose: {
        Tensor& ga = gin(0);
        const long m = ga.shape[0], nn = ga.shape[1];
        for (long i = 0; i < m; ++i)
          for (long j = 0; j < nn; ++j) ga.at(i, j) += g.at(j, i);
        break;
      }

      case OpKind::reshape: {
        Tensor& ga = gin(0);
        kn::add(ga.v.data(), ga.v.data(), g.v.data(), g.v.size());
        break;
      }

      case OpKind::slice: {
        Tensor& ga = gin(0);
        if (ga.rank() == 1) {
          const long r0 = n.attrs.ints[0];
          kn::add(ga.v.data() + r0, ga.v.data() + r0, g.v.data(), g.v.size());
        } else {
          const long r0 = n.attrs.ints[0], r1 = n.attrs.ints[1];
          const long c0 = n.attrs.ints[2], c1 = n.attrs.ints[3];
          const long w = c1 - c0, cols = ga.shape[1];
          for (long i = r0; i < r1; ++i)
            kn::add(ga.v.data() + i * cols + c0, ga.v.data() + i * cols + c0,
                    g.v.data() + (i - r0) * w, static_cast<std::size_t>(w));
        }
        break;
      }

      case OpKind::concat: {
        const int axis = static_cast<int>(n.attrs.ints[0]);
        if (vin(0).rank() == 1 || axis == 0) {
          long off = 0;
          for (std::size_t p = 0; p < n.inputs.size(); ++p) {
            Tensor& gp = gin(static_cast<int>(p));
            kn::add(gp.v.data(), gp.v.data(), g.v.data() + off, gp.v.size());
            off += gp.numel();
          }
        } else {
          const long rows = g.shape[0], cols = g.shape[1];
          long coff = 0;
          for (std::size_t p = 0; p < n.inputs.size(); ++p) {
            Tensor& gp = gin(static_cast<int>(p));
            const long w = gp.shape[1];
            for (long i = 0; i < rows; ++i)
              kn::add(gp.v.data() + i * w, gp.v.data() + i * w, g.v.data() + i * cols + coff,
                      static_cast<std::size_t>(w));
            coff += w;
          }
        }
        break;
      }

      case OpKind::scale:
        t_axpy_inplace(gin(0), n.attrs.scalar, g);
        break;

      case OpKind::softmax: {
        // dx_i = y_i * (g_i - sum_j g_j y_j), rowwise
        Tensor& ga = gin(0);
        const long d = y.shape.back();
        const long rows = y.numel() / d;
        for (long i = 0; i < rows; ++i) {
          const double* yr = y.v.data() + i * d;
          const double* gr = g.v.data() + i * d;
          double* out = ga.v.data() + i * d;
          const double dotgy = kn::dot(gr, yr, static_cast<std::size_t>(d));
          for (long j = 0; j < d; ++j) out[j] += yr[j] * (gr[j] - dotgy);
        }
        break;
      }

      case OpKind::layer_norm: {
        const Tensor& x = vin(0);
        const Tensor& gamma = vin(1);
        Tensor& gx = gin(0);
        Tensor& gg = gin(1);
        Tensor& gb = gin(2);
        const long d = x.shape.back();
        const long rows = x.numel() / d;
        const double dd = static_cast<double>(d);
        std::vector<double> xhat(static_cast<std::size_t>(d));
        for (long i = 0; i < rows; ++i) {
          const double* xr = x.v.data() + i * d;
          const double* gr = g.v.data() + i * d;
          const double mean = kn::sum(xr, static_cast<std::size_t>(d)) / dd;
          double var = 0.0;
          for (long j = 0; j < d; ++j) {
            const double c = xr[j] - mean;
            var += c * c;
          }
          var /= dd;
          const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
          double sum_gg = 0.0, sum_ggx = 0.0;  // sums of gamma*g and gamma*g*xhat
          for (long j = 0; j < d; ++j) {
            xhat[static_cast<std::size_t>(j)] = (xr[j] - mean) * inv;
            const double t = gamma.v[static_cast<std::size_t>(j)] * gr[j];
            sum_gg += t;
            sum_ggx += t * xhat[static_cast<std::size_t>(j)];
            gg.v[static_cast<std::size_t>(j)] += gr[j] * xhat[static_cast<std::size_t>(j)];
            gb.v[static_cast<std::size_t>(j)] += gr[j];
          }
          double* gxr = gx.v.data() + i * d;
          for (long j = 0; j < d; ++j) {
            const double t = gamma.v[static_cast<std::size_t>(j)] * gr[j];
            gxr[j] += inv * (t - sum_gg / dd - xhat[static_cast<std::size_t>(j)] * sum_ggx / dd);
          }
        }
        break;
      }

      case OpKind::gelu: {
        const Tensor& x = vin(0);
        Tensor& ga = gin(0);
        for (std::size_t i = 0; i < x.v.size(); ++i) {
          const double xi = x.v[i];
          const double inner = kSqrt2OverPi * (xi + kGeluCoeff * xi * xi * xi);
          const double t = std::tanh(inner);
          const double dinner = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * xi * xi);
          const double dy = 0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * dinner;
          ga.v[i] += g.v[i] * dy;
        }
        break;
      }

      case OpKind::tanh_fn: {
        Tensor& ga = gin(0);
        for (std::size_t i = 0; i < y.v.size(); ++i)
          ga.v[i] += g.v[i] * (1.0 - y.v[i] * y.v[i]);
        break;
      }

      case OpKind::embedding: {
        Tensor& gt = gin(0);
        const long d = gt.shape[1];
        for (std::size_t i = 0; i < n.attrs.ints.size(); ++i) {
          const long id = n.attrs.ints[i];
          kn::add(gt.v.data() + id * d, gt.v.data() + id * d,
                  g.v.data() + static_cast<long>(i) * d, static_cast<std::size_t>(d));
        }
        break;
      }

      case OpKind::masked_fill: {
        Tensor& ga = gin(0);
        for (std::size_t i = 0; i < ga.v.size(); ++i)
          if (!n.attrs.ints[i]) ga.v[i] += g.v[i];
        break;
      }

      case OpKind::reduce_sum: {
        Tensor& ga = gin(0);
        const double gs = g.v[0];
        for (double& x : ga.v) x += gs;
        break;
      }

      case OpKind::reduce_mean: {
        Tensor& ga = gin(0);
        const double gs = g.v[0] / static_cast<double>(ga.numel());
        for (double& x : ga.v) x += gs;
        break;
      }

      case OpKind::log_fn: {
        const Tensor& x = vin(0);
        Tensor& ga = gin(0);
        for (std::size_t i = 0; i < x.v.size(); ++i) ga.v[i] += g.v[i] / x.v[i];
        break;
      }

      case OpKind::exp_fn: {
        Tensor& ga = gin(0);
        for (std::size_t i = 0; i < y.v.size(); ++i) ga.v[i] += g.v[i] * y.v[i];
        break;
      }

      case OpKind::cross_entropy: {
        const Tensor& logits = vin(0);
        Tensor& ga = gin(0);
        const long t = n.attrs.ints[0];
        const double m = kn::max_value(logits.v.data(), logits.v.size());
        double s = 0.0;
        for (const double x : logits.v) s += std::exp(x - m);
        const double gs = g.v[0];
        for (std::size_t i = 0; i < logits.v.size(); ++i) {
          const double p = std::exp(logits.v[i] - m) / s;
          ga.v[i] += gs * (p - (static_cast<long>(i) == t ? 1.0 : 0.0));
        }
        break;
      }
    }
  }
  return GradientMap(std::move(grad));
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                              const Tensor& x, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_difference_grad: eps must be positive");
  Tensor grad = Tensor::zeros(x.shape);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const double orig = probe.v[i];
    probe.v[i] = orig + eps;
    const double fp = f(probe);
    probe.v[i] = orig - eps;
    const double fm = f(probe);
    probe.v[i] = orig;
    grad.v[i] = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

}  // namespace iglab
