#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

// Dense double-precision tensors plus a recording tape with reverse-mode
// gradients. The op catalog is exactly what the transformer forward pass
// and the attribution integrals need; everything records into a Recording
// so a scalar output can be differentiated with respect to any node.
namespace iglab {

struct Tensor {
  std::vector<long> shape;  // empty = scalar
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::vector<long> s, std::vector<double> values);

  static Tensor zeros(std::vector<long> s);
  static Tensor full(std::vector<long> s, double value);
  static Tensor scalar(double value);
  static Tensor vector1d(std::vector<double> values);

  long numel() const;
  int rank() const { return static_cast<int>(shape.size()); }
  long dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  double& at(long i) { return v[static_cast<std::size_t>(i)]; }
  double at(long i) const { return v[static_cast<std::size_t>(i)]; }
  double& at(long i, long j) { return v[static_cast<std::size_t>(i * shape[1] + j)]; }
  double at(long i, long j) const { return v[static_cast<std::size_t>(i * shape[1] + j)]; }

  double item() const;  // numel()==1

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
};

std::string shape_str(std::span<const long> shape);
long shape_numel(std::span<const long> shape);

// Unrecorded tensor arithmetic (used by optimizers and attribution math).
Tensor t_add(const Tensor& a, const Tensor& b);
Tensor t_mul(const Tensor& a, const Tensor& b);
Tensor t_scale(const Tensor& a, double c);
void t_add_inplace(Tensor& dst, const Tensor& a);
void t_axpy_inplace(Tensor& dst, double c, const Tensor& a);
double t_sum(const Tensor& a);
double t_dot(const Tensor& a, const Tensor& b);

enum class OpKind : std::uint8_t {
  leaf,
  add,            // same shape, or [n,d] + [d] bias broadcast
  mul,            // elementwise, same shape
  matmul,         // [m,k] x [k,n]
  transpose,      // rank 2
  reshape,
  slice,          // rank 1: {r0,r1}; rank 2: {r0,r1,c0,c1} (half-open)
  concat,         // axis in attrs.ints[0]
  scale,          // by constant attrs.scalar
  softmax,        // over last axis
  layer_norm,     // over last axis; inputs (x, gain, bias)
  gelu,           // tanh approximation
  tanh_fn,
  embedding,      // inputs (table); row ids in attrs.ints
  masked_fill,    // attrs.ints = 0/1 mask (1 = fill), attrs.scalar = fill value
  reduce_sum,     // full reduction to scalar
  reduce_mean,
  log_fn,
  exp_fn,
  cross_entropy,  // rank-1 logits; target index attrs.ints[0]; out = logsumexp - logit[t]
};

const char* op_name(OpKind k);

struct NodeRef {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

struct OpAttrs {
  double scalar = 0.0;
  std::vector<long> ints;
};

// Gradients for every node of a recording, indexed by node id.
// Nodes unreachable backward from the differentiated scalar hold zeros.
class GradientMap {
 public:
  explicit GradientMap(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
  const Tensor& at(NodeRef n) const;
  std::size_t size() const { return grads_.size(); }
  Tensor take(NodeRef n);  // move out (single use)

 private:
  std::vector<Tensor> grads_;
};

// Topologically ordered tape of operation records. Single-threaded use;
// distinct Recordings over the same frozen parameters may run in parallel.
class Recording {
 public:
  struct Node {
    OpKind kind;
    std::vector<NodeRef> inputs;
    OpAttrs attrs;
    Tensor value;
  };

  NodeRef leaf(Tensor value);

  // Generic entry point: validates shapes, computes the forward value,
  // appends a record. The named wrappers below all funnel through here.
  NodeRef apply(OpKind kind, std::span<const NodeRef> inputs, OpAttrs attrs = {});

  NodeRef add(NodeRef a, NodeRef b);
  NodeRef mul(NodeRef a, NodeRef b);
  NodeRef matmul(NodeRef a, NodeRef b);
  NodeRef transpose(NodeRef a);
  NodeRef reshape(NodeRef a, std::vector<long> new_shape);
  NodeRef slice(NodeRef a, long r0, long r1);                    // rank 1
  NodeRef slice(NodeRef a, long r0, long r1, long c0, long c1);  // rank 2
  NodeRef concat(std::span<const NodeRef> parts, int axis);
  NodeRef scale(NodeRef a, double c);
  NodeRef softmax(NodeRef a);
  NodeRef layer_norm(NodeRef x, NodeRef gain, NodeRef bias);
  NodeRef gelu(NodeRef a);
  NodeRef tanh_fn(NodeRef a);
  NodeRef embedding(NodeRef table, const std::vector<long>& ids);
  NodeRef masked_fill(NodeRef a, const std::vector<long>& mask, double fill);
  NodeRef reduce_sum(NodeRef a);
  NodeRef reduce_mean(NodeRef a);
  NodeRef log_fn(NodeRef a);
  NodeRef exp_fn(NodeRef a);
  NodeRef cross_entropy(NodeRef logits, long target);

  const Tensor& value(NodeRef n) const;
  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeRef n) const;

  // Reverse-mode sweep from a scalar output node. Gradient accumulation at
  // fan-out is summation in fixed record order.
  GradientMap backward(NodeRef scalar_node) const;

  // Recomputes every node value from the leaves; used to check that replay
  // is bit-identical.
  std::vector<Tensor> replay() const;

 private:
  std::vector<Node> nodes_;
  void check_ref(NodeRef n, const char* where) const;
};

// Central finite differences (f(x+eps e_i) - f(x-eps e_i)) / (2 eps).
// Independent of the tape; used as the gradient-check oracle.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                              const Tensor& x, double eps = 1e-5);

constexpr double kLayerNormEps = 1e-5;

}  // namespace iglab
