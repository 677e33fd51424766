#pragma once

// Reverse-mode autodiff over a flat node arena. Nodes are appended in
// topological order by construction; backward walks the arena in exact
// reverse creation order. Storage is T (float for model math, double for
// gradient-check replay); every reduction (matmul inner products, softmax
// normalizers, log-sum-exp, layer-norm moments, gradient accumulation across
// broadcast/batch) runs in 64-bit accumulators regardless of T.

#include <algorithm>
#include <cstring>
#include <functional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "losskern/tensor.hpp"

namespace losskern {

enum class Op : std::uint8_t {
  kInput,
  kParam,
  kConstant,
  kAdd,
  kMul,
  kMatmul,
  kTranspose,
  kReshape,
  kEmbedding,
  kSoftmax,
  kLayerNorm,
  kRelu,
  kGelu,
  kSelect,
  kReduceSum,
  kReduceMean,
  kCrossEntropy,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kMul: return "multiply";
    case Op::kMatmul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kReshape: return "reshape";
    case Op::kEmbedding: return "embedding-lookup";
    case Op::kSoftmax: return "softmax";
    case Op::kLayerNorm: return "layer-norm";
    case Op::kRelu: return "relu";
    case Op::kGelu: return "gelu";
    case Op::kSelect: return "select";
    case Op::kReduceSum: return "reduce-sum";
    case Op::kReduceMean: return "reduce-mean";
    case Op::kCrossEntropy: return "cross-entropy-with-logits";
  }
  return "?";
}

struct NodeId {
  int index = -1;
  bool valid() const { return index >= 0; }
  friend bool operator==(NodeId a, NodeId b) { return a.index == b.index; }
};

// Handle for integer-valued inputs (token ids, labels); these are not graph
// nodes because no gradient flows through them.
struct IntSlotId {
  int index = -1;
  bool valid() const { return index >= 0; }
};

template <typename T>
class Graph {
  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    std::string name;            // inputs and params
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    bool bound = false;          // inputs only
    int touch = -1;              // last backward pass that wrote grad
    // op attributes
    std::vector<int> perm;       // transpose
    Shape reshape_spec;          // reshape (one dim may be -1)
    int axis = 0, sel_index = 0; // select
    int islot = -1;              // embedding / cross-entropy
    double ln_eps = 0.0;         // layer-norm
    Shape decl_tail;             // inputs: declared per-sample shape
    std::vector<double> aux;     // cached row statistics for backward
  };

  struct IntSlot {
    std::string name;
    int tail_rank = 0;
    IntTensor value;
    bool bound = false;
  };

 public:
  // ---- construction ----

  NodeId input(const std::string& name, Shape per_sample_shape = {}) {
    require_fresh_name(name);
    Node n;
    n.op = Op::kInput;
    n.name = name;
    n.decl_tail = std::move(per_sample_shape);
    input_index_[name] = next_id();
    return push(std::move(n));
  }

  IntSlotId int_input(const std::string& name, int per_sample_rank = 0) {
    require_fresh_name(name);
    IntSlot s;
    s.name = name;
    s.tail_rank = per_sample_rank;
    int_index_[name] = static_cast<int>(islots_.size());
    islots_.push_back(std::move(s));
    return {static_cast<int>(islots_.size()) - 1};
  }

  NodeId param(const std::string& name, Shape shape) {
    require_fresh_name(name);
    Node n;
    n.op = Op::kParam;
    n.name = name;
    n.value = Tensor<T>(std::move(shape));
    n.needs_grad = true;
    param_nodes_.push_back(next_id());
    param_count_ += n.value.size();
    return push(std::move(n));
  }

  NodeId constant(Tensor<T> value) {
    Node n;
    n.op = Op::kConstant;
    n.value = std::move(value);
    return push(std::move(n));
  }

  NodeId add(NodeId a, NodeId b) { return binary(Op::kAdd, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::kMul, a, b); }
  NodeId matmul(NodeId a, NodeId b) { return binary(Op::kMatmul, a, b); }

  NodeId transpose(NodeId a, std::vector<int> perm) {
    Node n = unary(Op::kTranspose, a);
    n.perm = std::move(perm);
    return push(std::move(n));
  }

  NodeId reshape(NodeId a, Shape spec) {
    Node n = unary(Op::kReshape, a);
    n.reshape_spec = std::move(spec);
    return push(std::move(n));
  }

  NodeId embedding(NodeId table, IntSlotId indices) {
    Node n = unary(Op::kEmbedding, table);
    n.islot = check_islot(indices);
    return push(std::move(n));
  }

  NodeId softmax(NodeId a) { return push(unary(Op::kSoftmax, a)); }

  NodeId layer_norm(NodeId a, NodeId gain, NodeId bias, double eps = 1e-5) {
    Node n = unary(Op::kLayerNorm, a);
    n.b = check_node(gain);
    n.c = check_node(bias);
    n.needs_grad = n.needs_grad || node(gain).needs_grad || node(bias).needs_grad;
    n.ln_eps = eps;
    return push(std::move(n));
  }

  NodeId relu(NodeId a) { return push(unary(Op::kRelu, a)); }
  NodeId gelu(NodeId a) { return push(unary(Op::kGelu, a)); }

  NodeId select(NodeId a, int axis, int index) {
    Node n = unary(Op::kSelect, a);
    n.axis = axis;
    n.sel_index = index;
    return push(std::move(n));
  }

  NodeId reduce_sum(NodeId a) { return push(unary(Op::kReduceSum, a)); }
  NodeId reduce_mean(NodeId a) { return push(unary(Op::kReduceMean, a)); }

  NodeId cross_entropy(NodeId logits, IntSlotId labels) {
    Node n = unary(Op::kCrossEntropy, logits);
    n.islot = check_islot(labels);
    return push(std::move(n));
  }

  // ---- binding and execution ----

  void bind(const std::string& name, Tensor<T> value) {
    auto it = input_index_.find(name);
    if (it == input_index_.end()) throw GraphError("bind: no input named '" + name + "'");
    Node& n = nodes_[static_cast<size_t>(it->second)];
    const Shape& tail = n.decl_tail;
    bool ok = value.rank() == static_cast<int>(tail.size()) + 1;
    for (size_t i = 0; ok && i < tail.size(); ++i)
      ok = value.dim(static_cast<int>(i) + 1) == tail[i];
    if (!ok)
      throw ShapeError("bind: input '" + name + "' expects [batch]+" + shape_str(tail) +
                       ", got " + shape_str(value.shape()));
    n.value = std::move(value);
    n.bound = true;
    forward_done_ = false;
  }

  void bind_ints(const std::string& name, IntTensor value) {
    auto it = int_index_.find(name);
    if (it == int_index_.end()) throw GraphError("bind_ints: no int input named '" + name + "'");
    IntSlot& s = islots_[static_cast<size_t>(it->second)];
    if (value.rank() != s.tail_rank + 1)
      throw ShapeError("bind_ints: input '" + name + "' expects rank " +
                       std::to_string(s.tail_rank + 1) + ", got " + shape_str(value.shape()));
    s.value = std::move(value);
    s.bound = true;
    forward_done_ = false;
  }

  void forward() {
    for (size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      switch (n.op) {
        case Op::kInput:
          if (!n.bound) throw GraphError("forward: input '" + n.name + "' not bound");
          break;
        case Op::kParam:
        case Op::kConstant:
          break;
        default:
          eval(n);
      }
      if (!n.value.all_finite())
        throw NonFiniteError(std::string("non-finite value in ") + op_name(n.op) + " node #" +
                             std::to_string(i));
    }
    forward_done_ = true;
  }

  const Tensor<T>& value(NodeId id) const {
    if (!forward_done_) throw GraphError("value: forward has not been run");
    return node(id).value;
  }

  void backward(NodeId root_id) {
    if (!forward_done_) throw GraphError("backward: forward has not been run");
    const int root = check_node(root_id);
    if (nodes_[static_cast<size_t>(root)].value.size() != 1)
      throw GraphError("backward: root must be scalar, has shape " +
                       shape_str(nodes_[static_cast<size_t>(root)].value.shape()));
    ++pass_;
    std::vector<char> live(static_cast<size_t>(root) + 1, 0);
    live[static_cast<size_t>(root)] = 1;
    for (int i = root; i >= 0; --i) {
      if (!live[static_cast<size_t>(i)]) continue;
      const Node& n = nodes_[static_cast<size_t>(i)];
      for (int in : {n.a, n.b, n.c})
        if (in >= 0 && nodes_[static_cast<size_t>(in)].needs_grad) live[static_cast<size_t>(in)] = 1;
    }
    for (int i = 0; i <= root; ++i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (live[static_cast<size_t>(i)] && n.needs_grad) {
        n.grad.reset(n.value.shape());
        n.grad.fill(T{});
        n.touch = pass_;
      }
    }
    Node& r = nodes_[static_cast<size_t>(root)];
    if (!r.needs_grad) return;  // no parameters upstream; all gradients stay zero
    r.grad[0] = T(1);
    for (int i = root; i >= 0; --i) {
      if (!live[static_cast<size_t>(i)] || !nodes_[static_cast<size_t>(i)].needs_grad) continue;
      backprop(nodes_[static_cast<size_t>(i)]);
    }
    backward_done_ = true;
  }

  const Tensor<T>& grad(NodeId id) const {
    if (!backward_done_) throw GraphError("grad: backward has not been run");
    const Node& n = node(id);
    if (n.touch != pass_)
      throw GraphError("grad: node did not participate in the last backward pass");
    return n.grad;
  }

  // ---- canonical parameter vector ----
  // Declaration order, each tensor flattened row-major.

  std::int64_t param_count() const { return param_count_; }

  void set_params(std::span<const T> flat) {
    if (static_cast<std::int64_t>(flat.size()) != param_count_)
      throw ShapeError("set_params: expected " + std::to_string(param_count_) + " values, got " +
                       std::to_string(flat.size()));
    std::int64_t off = 0;
    for (int id : param_nodes_) {
      Tensor<T>& v = nodes_[static_cast<size_t>(id)].value;
      std::copy_n(flat.data() + off, v.size(), v.data());
      off += v.size();
    }
    forward_done_ = false;
  }

  std::vector<T> flatten_params() const {
    std::vector<T> out(static_cast<size_t>(param_count_));
    std::int64_t off = 0;
    for (int id : param_nodes_) {
      const Tensor<T>& v = nodes_[static_cast<size_t>(id)].value;
      std::copy_n(v.data(), v.size(), out.data() + off);
      off += v.size();
    }
    return out;
  }

  std::vector<T> flatten_grads() const {
    if (!backward_done_) throw GraphError("flatten_grads: backward has not been run");
    std::vector<T> out(static_cast<size_t>(param_count_), T{});
    std::int64_t off = 0;
    for (int id : param_nodes_) {
      const Node& n = nodes_[static_cast<size_t>(id)];
      if (n.touch == pass_) std::copy_n(n.grad.data(), n.grad.size(), out.data() + off);
      off += n.value.size();
    }
    return out;
  }

  // Mutable access for initializers.
  Tensor<T>& param_value(NodeId id) {
    Node& n = nodes_[static_cast<size_t>(check_node(id))];
    if (n.op != Op::kParam) throw GraphError("param_value: node is not a parameter");
    forward_done_ = false;
    return n.value;
  }

  struct ParamInfo {
    std::string name;
    Shape shape;
    std::int64_t offset;
  };
  std::vector<ParamInfo> param_table() const {
    std::vector<ParamInfo> out;
    std::int64_t off = 0;
    for (int id : param_nodes_) {
      const Node& n = nodes_[static_cast<size_t>(id)];
      out.push_back({n.name, n.value.shape(), off});
      off += n.value.size();
    }
    return out;
  }

  // Locate flat coordinate -> (param node, offset within it).
  std::pair<NodeId, std::int64_t> param_locate(std::int64_t coord) const {
    if (coord < 0 || coord >= param_count_) throw GraphError("param coordinate out of range");
    for (int id : param_nodes_) {
      const std::int64_t sz = nodes_[static_cast<size_t>(id)].value.size();
      if (coord < sz) return {NodeId{id}, coord};
      coord -= sz;
    }
    throw GraphError("param coordinate out of range");
  }

  T read_param(std::int64_t coord) const {
    auto [id, off] = param_locate(coord);
    return node(id).value[off];
  }
  void write_param(std::int64_t coord, T v) {
    auto [id, off] = param_locate(coord);
    nodes_[static_cast<size_t>(id.index)].value[off] = v;
    forward_done_ = false;
  }

  int node_count() const { return static_cast<int>(nodes_.size()); }

 private:
  // ---- bookkeeping helpers ----

  int next_id() const { return static_cast<int>(nodes_.size()); }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  int check_node(NodeId id) const {
    if (id.index < 0 || id.index >= next_id()) throw GraphError("invalid node id");
    return id.index;
  }

  int check_islot(IntSlotId id) const {
    if (id.index < 0 || id.index >= static_cast<int>(islots_.size()))
      throw GraphError("invalid int input id");
    return id.index;
  }

  void require_fresh_name(const std::string& name) {
    if (input_index_.count(name) || int_index_.count(name) || param_names_.count(name))
      throw GraphError("duplicate name '" + name + "'");
    param_names_.insert(name);
  }

  Node& node(NodeId id) { return nodes_[static_cast<size_t>(check_node(id))]; }
  const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(check_node(id))]; }

  Node unary(Op op, NodeId a) {
    Node n;
    n.op = op;
    n.a = check_node(a);
    n.needs_grad = node(a).needs_grad;
    return n;
  }

  NodeId binary(Op op, NodeId a, NodeId b) {
    Node n;
    n.op = op;
    n.a = check_node(a);
    n.b = check_node(b);
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return push(std::move(n));
  }

  [[noreturn]] void shape_fail(const Node& n, const std::string& msg) const {
    throw ShapeError(std::string(op_name(n.op)) + ": " + msg);
  }

  // b broadcasts onto a iff b.shape is a suffix of a.shape (scalar [] always).
  std::int64_t broadcast_reps(const Node& n, const Shape& a, const Shape& b) const {
    if (b.size() > a.size()) shape_fail(n, shape_str(b) + " does not suffix-broadcast onto " + shape_str(a));
    const size_t off = a.size() - b.size();
    for (size_t i = 0; i < b.size(); ++i)
      if (a[off + i] != b[i])
        shape_fail(n, shape_str(b) + " does not suffix-broadcast onto " + shape_str(a));
    std::int64_t reps = 1;
    for (size_t i = 0; i < off; ++i) reps *= a[i];
    return reps;
  }

  // ---- matmul primitives (double accumulation) ----

  static void mm_nn(const T* A, const T* B, T* C, int M, int K, int N, std::vector<double>& acc) {
    acc.resize(static_cast<size_t>(N));
    for (int i = 0; i < M; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const T* arow = A + static_cast<std::int64_t>(i) * K;
      for (int k = 0; k < K; ++k) {
        const double av = static_cast<double>(arow[k]);
        const T* brow = B + static_cast<std::int64_t>(k) * N;
        for (int j = 0; j < N; ++j) acc[static_cast<size_t>(j)] += av * static_cast<double>(brow[j]);
      }
      T* crow = C + static_cast<std::int64_t>(i) * N;
      for (int j = 0; j < N; ++j) crow[j] = static_cast<T>(acc[static_cast<size_t>(j)]);
    }
  }

  // Cacc[M,K] += A[M,N] * B[K,N]^T
  static void mm_nt_acc(const T* A, const T* B, double* Cacc, int M, int N, int K) {
    for (int i = 0; i < M; ++i) {
      const T* arow = A + static_cast<std::int64_t>(i) * N;
      for (int k = 0; k < K; ++k) {
        const T* brow = B + static_cast<std::int64_t>(k) * N;
        double dot = 0.0;
        for (int j = 0; j < N; ++j) dot += static_cast<double>(arow[j]) * static_cast<double>(brow[j]);
        Cacc[static_cast<std::int64_t>(i) * K + k] += dot;
      }
    }
  }

  // Cacc[K,N] += A[M,K]^T * B[M,N]
  static void mm_tn_acc(const T* A, const T* B, double* Cacc, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
      const T* arow = A + static_cast<std::int64_t>(i) * K;
      const T* brow = B + static_cast<std::int64_t>(i) * N;
      for (int k = 0; k < K; ++k) {
        const double av = static_cast<double>(arow[k]);
        double* crow = Cacc + static_cast<std::int64_t>(k) * N;
        for (int j = 0; j < N; ++j) crow[j] += av * static_cast<double>(brow[j]);
      }
    }
  }

  static void add_cast(T* dst, const double* src, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] += static_cast<T>(src[i]);
  }

  // ---- forward ----

  void eval(Node& n) {
    const Tensor<T>* A = n.a >= 0 ? &nodes_[static_cast<size_t>(n.a)].value : nullptr;
    const Tensor<T>* B = n.b >= 0 ? &nodes_[static_cast<size_t>(n.b)].value : nullptr;
    switch (n.op) {
      case Op::kAdd:
      case Op::kMul: {
        const std::int64_t reps = broadcast_reps(n, A->shape(), B->shape());
        (void)reps;
        n.value.reset(A->shape());
        const std::int64_t an = A->size(), bn = B->size();
        const T* a = A->data();
        const T* b = B->data();
        T* o = n.value.data();
        if (n.op == Op::kAdd) {
          for (std::int64_t i = 0; i < an; ++i) o[i] = a[i] + b[bn == an ? i : i % bn];
        } else {
          for (std::int64_t i = 0; i < an; ++i) o[i] = a[i] * b[bn == an ? i : i % bn];
        }
        break;
      }
      case Op::kMatmul: {
        eval_matmul(n, *A, *B);
        break;
      }
      case Op::kTranspose: {
        eval_transpose(n, *A);
        break;
      }
      case Op::kReshape: {
        Shape out = resolve_reshape(n, A->shape());
        n.value.reset(out);
        std::copy_n(A->data(), A->size(), n.value.data());
        break;
      }
      case Op::kEmbedding: {
        eval_embedding(n, *A);
        break;
      }
      case Op::kSoftmax: {
        eval_softmax(n, *A);
        break;
      }
      case Op::kLayerNorm: {
        eval_layer_norm(n, *A, *B, nodes_[static_cast<size_t>(n.c)].value);
        break;
      }
      case Op::kRelu: {
        n.value.reset(A->shape());
        const T* a = A->data();
        T* o = n.value.data();
        for (std::int64_t i = 0; i < A->size(); ++i) o[i] = a[i] > T{} ? a[i] : T{};
        break;
      }
      case Op::kGelu: {
        n.value.reset(A->shape());
        const T* a = A->data();
        T* o = n.value.data();
        for (std::int64_t i = 0; i < A->size(); ++i) {
          const double x = static_cast<double>(a[i]);
          o[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * 0.7071067811865475)));
        }
        break;
      }
      case Op::kSelect: {
        eval_select(n, *A);
        break;
      }
      case Op::kReduceSum:
      case Op::kReduceMean: {
        double acc = 0.0;
        const T* a = A->data();
        for (std::int64_t i = 0; i < A->size(); ++i) acc += static_cast<double>(a[i]);
        if (n.op == Op::kReduceMean) {
          if (A->size() == 0) shape_fail(n, "mean of empty tensor");
          acc /= static_cast<double>(A->size());
        }
        n.value.reset({});
        n.value[0] = static_cast<T>(acc);
        break;
      }
      case Op::kCrossEntropy: {
        eval_cross_entropy(n, *A);
        break;
      }
      default:
        throw GraphError("eval: leaf op");
    }
  }

  void eval_matmul(Node& n, const Tensor<T>& A, const Tensor<T>& B) {
    const Shape& sa = A.shape();
    const Shape& sb = B.shape();
    if (sa.size() < 2 || sb.size() < 2) shape_fail(n, "operands must have rank >= 2");
    const int M = sa[sa.size() - 2], K = sa[sa.size() - 1];
    const int Kb = sb[sb.size() - 2], N = sb[sb.size() - 1];
    if (K != Kb) shape_fail(n, "inner dimensions disagree: " + shape_str(sa) + " x " + shape_str(sb));
    const bool shared_b = sb.size() == 2;
    if (!shared_b) {
      if (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()))
        shape_fail(n, "batch dimensions disagree: " + shape_str(sa) + " x " + shape_str(sb));
    }
    Shape out(sa.begin(), sa.end() - 2);
    std::int64_t groups = 1;
    for (int d : out) groups *= d;
    out.push_back(M);
    out.push_back(N);
    n.value.reset(out);
    std::vector<double> acc;
    for (std::int64_t g = 0; g < groups; ++g) {
      const T* a = A.data() + g * static_cast<std::int64_t>(M) * K;
      const T* b = B.data() + (shared_b ? 0 : g * static_cast<std::int64_t>(K) * N);
      mm_nn(a, b, n.value.data() + g * static_cast<std::int64_t>(M) * N, M, K, N, acc);
    }
  }

  static std::vector<std::int64_t> row_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
      st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * s[static_cast<size_t>(i) + 1];
    return st;
  }

  void eval_transpose(Node& n, const Tensor<T>& A) {
    const Shape& sa = A.shape();
    const int r = static_cast<int>(sa.size());
    if (static_cast<int>(n.perm.size()) != r) shape_fail(n, "permutation rank mismatch");
    std::vector<char> seen(static_cast<size_t>(r), 0);
    for (int p : n.perm) {
      if (p < 0 || p >= r || seen[static_cast<size_t>(p)]) shape_fail(n, "invalid permutation");
      seen[static_cast<size_t>(p)] = 1;
    }
    Shape out(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) out[static_cast<size_t>(i)] = sa[static_cast<size_t>(n.perm[static_cast<size_t>(i)])];
    n.value.reset(out);
    const auto ist = row_strides(sa);
    const auto ost = row_strides(out);
    const T* a = A.data();
    T* o = n.value.data();
    const std::int64_t total = A.size();
    // dst flat index -> src flat index via permuted coordinates
    for (std::int64_t di = 0; di < total; ++di) {
      std::int64_t rem = di, si = 0;
      for (int i = 0; i < r; ++i) {
        const std::int64_t c = rem / ost[static_cast<size_t>(i)];
        rem %= ost[static_cast<size_t>(i)];
        si += c * ist[static_cast<size_t>(n.perm[static_cast<size_t>(i)])];
      }
      o[di] = a[si];
    }
  }

  Shape resolve_reshape(const Node& n, const Shape& in) const {
    Shape out = n.reshape_spec;
    std::int64_t known = 1;
    int wild = -1;
    for (size_t i = 0; i < out.size(); ++i) {
      if (out[i] == -1) {
        if (wild >= 0) shape_fail(n, "more than one -1 in target shape");
        wild = static_cast<int>(i);
      } else {
        known *= out[i];
      }
    }
    const std::int64_t total = numel(in);
    if (wild >= 0) {
      if (known == 0 || total % known != 0)
        shape_fail(n, "cannot infer -1 for " + shape_str(in) + " -> " + shape_str(n.reshape_spec));
      out[static_cast<size_t>(wild)] = static_cast<int>(total / known);
    } else if (known != total) {
      shape_fail(n, "element count changes: " + shape_str(in) + " -> " + shape_str(out));
    }
    return out;
  }

  const IntTensor& islot_value(const Node& n) const {
    const IntSlot& s = islots_[static_cast<size_t>(n.islot)];
    if (!s.bound) throw GraphError(std::string(op_name(n.op)) + ": int input '" + s.name + "' not bound");
    return s.value;
  }

  void eval_embedding(Node& n, const Tensor<T>& table) {
    if (table.rank() != 2) shape_fail(n, "table must be rank 2");
    const IntTensor& idx = islot_value(n);
    const int V = table.dim(0), D = table.dim(1);
    Shape out = idx.shape();
    out.push_back(D);
    n.value.reset(out);
    const T* tab = table.data();
    T* o = n.value.data();
    for (std::int64_t i = 0; i < idx.size(); ++i) {
      const std::int32_t row = idx[i];
      if (row < 0 || row >= V)
        shape_fail(n, "index " + std::to_string(row) + " out of range for table with " +
                          std::to_string(V) + " rows");
      std::copy_n(tab + static_cast<std::int64_t>(row) * D, D, o + i * D);
    }
  }

  void eval_softmax(Node& n, const Tensor<T>& A) {
    if (A.rank() < 1) shape_fail(n, "needs rank >= 1");
    const int D = A.dim(A.rank() - 1);
    if (D == 0) shape_fail(n, "empty last axis");
    const std::int64_t rows = A.size() / D;
    n.value.reset(A.shape());
    const T* a = A.data();
    T* o = n.value.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* x = a + r * D;
      T* y = o + r * D;
      double m = static_cast<double>(x[0]);
      for (int j = 1; j < D; ++j) m = std::max(m, static_cast<double>(x[j]));
      double z = 0.0;
      for (int j = 0; j < D; ++j) z += std::exp(static_cast<double>(x[j]) - m);
      for (int j = 0; j < D; ++j)
        y[j] = static_cast<T>(std::exp(static_cast<double>(x[j]) - m) / z);
    }
  }

  void eval_layer_norm(Node& n, const Tensor<T>& A, const Tensor<T>& gain, const Tensor<T>& bias) {
    if (A.rank() < 1) shape_fail(n, "needs rank >= 1");
    const int D = A.dim(A.rank() - 1);
    if (gain.rank() != 1 || gain.dim(0) != D || bias.rank() != 1 || bias.dim(0) != D)
      shape_fail(n, "gain/bias must have shape [" + std::to_string(D) + "]");
    const std::int64_t rows = A.size() / D;
    n.value.reset(A.shape());
    n.aux.assign(static_cast<size_t>(rows) * 2, 0.0);
    const T* a = A.data();
    const T* g = gain.data();
    const T* b = bias.data();
    T* o = n.value.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* x = a + r * D;
      double mean = 0.0;
      for (int j = 0; j < D; ++j) mean += static_cast<double>(x[j]);
      mean /= D;
      double var = 0.0;
      for (int j = 0; j < D; ++j) {
        const double d = static_cast<double>(x[j]) - mean;
        var += d * d;
      }
      var /= D;
      const double rstd = 1.0 / std::sqrt(var + n.ln_eps);
      n.aux[static_cast<size_t>(r) * 2] = mean;
      n.aux[static_cast<size_t>(r) * 2 + 1] = rstd;
      T* y = o + r * D;
      for (int j = 0; j < D; ++j) {
        const double xhat = (static_cast<double>(x[j]) - mean) * rstd;
        y[j] = static_cast<T>(xhat * static_cast<double>(g[j]) + static_cast<double>(b[j]));
      }
    }
  }

  void eval_select(Node& n, const Tensor<T>& A) {
    const Shape& sa = A.shape();
    const int r = static_cast<int>(sa.size());
    if (n.axis < 0 || n.axis >= r) shape_fail(n, "axis out of range");
    const int dim = sa[static_cast<size_t>(n.axis)];
    if (n.sel_index < 0 || n.sel_index >= dim) shape_fail(n, "index out of range");
    Shape out;
    for (int i = 0; i < r; ++i)
      if (i != n.axis) out.push_back(sa[static_cast<size_t>(i)]);
    n.value.reset(out);
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < n.axis; ++i) outer *= sa[static_cast<size_t>(i)];
    for (int i = n.axis + 1; i < r; ++i) inner *= sa[static_cast<size_t>(i)];
    const T* a = A.data();
    T* o = n.value.data();
    for (std::int64_t u = 0; u < outer; ++u)
      std::copy_n(a + (u * dim + n.sel_index) * inner, inner, o + u * inner);
  }

  void eval_cross_entropy(Node& n, const Tensor<T>& logits) {
    if (logits.rank() != 2) shape_fail(n, "logits must be [batch, classes]");
    const IntTensor& labels = islot_value(n);
    const int Bn = logits.dim(0), V = logits.dim(1);
    if (labels.rank() != 1 || labels.dim(0) != Bn)
      shape_fail(n, "labels must be [batch], got " + shape_str(labels.shape()));
    if (V == 0) shape_fail(n, "no classes");
    n.value.reset({Bn});
    n.aux.assign(static_cast<size_t>(Bn), 0.0);
    const T* x = logits.data();
    T* o = n.value.data();
    for (int r = 0; r < Bn; ++r) {
      const std::int32_t lab = labels[r];
      if (lab < 0 || lab >= V)
        shape_fail(n, "label " + std::to_string(lab) + " out of range for " + std::to_string(V) +
                          " classes");
      const T* row = x + static_cast<std::int64_t>(r) * V;
      double m = static_cast<double>(row[0]);
      for (int j = 1; j < V; ++j) m = std::max(m, static_cast<double>(row[j]));
      double z = 0.0;
      for (int j = 0; j < V; ++j) z += std::exp(static_cast<double>(row[j]) - m);
      const double lse = m + std::log(z);
      n.aux[static_cast<size_t>(r)] = lse;
      o[r] = static_cast<T>(lse - static_cast<double>(row[lab]));
    }
  }

  // ---- backward ----

  void backprop(Node& n) {
    Node* A = n.a >= 0 ? &nodes_[static_cast<size_t>(n.a)] : nullptr;
    Node* B = n.b >= 0 ? &nodes_[static_cast<size_t>(n.b)] : nullptr;
    Node* C = n.c >= 0 ? &nodes_[static_cast<size_t>(n.c)] : nullptr;
    const bool da = A && A->needs_grad && A->touch == pass_;
    const bool db = B && B->needs_grad && B->touch == pass_;
    const bool dc = C && C->needs_grad && C->touch == pass_;
    const T* g = n.grad.data();
    switch (n.op) {
      case Op::kInput:
      case Op::kParam:
      case Op::kConstant:
        break;
      case Op::kAdd: {
        const std::int64_t an = A->value.size(), bn = B->value.size();
        if (da) {
          T* ga = A->grad.data();
          for (std::int64_t i = 0; i < an; ++i) ga[i] += g[i];
        }
        if (db) {
          std::vector<double> acc(static_cast<size_t>(bn), 0.0);
          for (std::int64_t i = 0; i < an; ++i) acc[static_cast<size_t>(bn == an ? i : i % bn)] += static_cast<double>(g[i]);
          add_cast(B->grad.data(), acc.data(), bn);
        }
        break;
      }
      case Op::kMul: {
        const std::int64_t an = A->value.size(), bn = B->value.size();
        const T* av = A->value.data();
        const T* bv = B->value.data();
        if (da) {
          T* ga = A->grad.data();
          for (std::int64_t i = 0; i < an; ++i) ga[i] += g[i] * bv[bn == an ? i : i % bn];
        }
        if (db) {
          std::vector<double> acc(static_cast<size_t>(bn), 0.0);
          for (std::int64_t i = 0; i < an; ++i)
            acc[static_cast<size_t>(bn == an ? i : i % bn)] += static_cast<double>(g[i]) * static_cast<double>(av[i]);
          add_cast(B->grad.data(), acc.data(), bn);
        }
        break;
      }
      case Op::kMatmul:
        backprop_matmul(n, *A, *B, da, db);
        break;
      case Op::kTranspose: {
        if (!da) break;
        const Shape& so = n.value.shape();
        const auto ist = row_strides(A->value.shape());
        const auto ost = row_strides(so);
        const int r = static_cast<int>(so.size());
        T* ga = A->grad.data();
        for (std::int64_t di = 0; di < n.value.size(); ++di) {
          std::int64_t rem = di, si = 0;
          for (int i = 0; i < r; ++i) {
            const std::int64_t c = rem / ost[static_cast<size_t>(i)];
            rem %= ost[static_cast<size_t>(i)];
            si += c * ist[static_cast<size_t>(n.perm[static_cast<size_t>(i)])];
          }
          ga[si] += g[di];
        }
        break;
      }
      case Op::kReshape: {
        if (!da) break;
        T* ga = A->grad.data();
        for (std::int64_t i = 0; i < n.value.size(); ++i) ga[i] += g[i];
        break;
      }
      case Op::kEmbedding: {
        if (!da) break;
        const IntTensor& idx = islot_value(n);
        const int D = A->value.dim(1);
        std::vector<double> acc(static_cast<size_t>(A->value.size()), 0.0);
        for (std::int64_t i = 0; i < idx.size(); ++i) {
          double* arow = acc.data() + static_cast<std::int64_t>(idx[i]) * D;
          const T* grow = g + i * D;
          for (int j = 0; j < D; ++j) arow[j] += static_cast<double>(grow[j]);
        }
        add_cast(A->grad.data(), acc.data(), A->value.size());
        break;
      }
      case Op::kSoftmax: {
        if (!da) break;
        const int D = n.value.dim(n.value.rank() - 1);
        const std::int64_t rows = n.value.size() / D;
        const T* y = n.value.data();
        T* ga = A->grad.data();
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* yr = y + r * D;
          const T* gr = g + r * D;
          double s = 0.0;
          for (int j = 0; j < D; ++j) s += static_cast<double>(gr[j]) * static_cast<double>(yr[j]);
          T* gar = ga + r * D;
          for (int j = 0; j < D; ++j)
            gar[j] += static_cast<T>(static_cast<double>(yr[j]) * (static_cast<double>(gr[j]) - s));
        }
        break;
      }
      case Op::kLayerNorm:
        backprop_layer_norm(n, *A, *B, *C, da, db, dc);
        break;
      case Op::kRelu: {
        if (!da) break;
        const T* av = A->value.data();
        T* ga = A->grad.data();
        for (std::int64_t i = 0; i < n.value.size(); ++i)
          if (av[i] > T{}) ga[i] += g[i];
        break;
      }
      case Op::kGelu: {
        if (!da) break;
        const T* av = A->value.data();
        T* ga = A->grad.data();
        for (std::int64_t i = 0; i < n.value.size(); ++i) {
          const double x = static_cast<double>(av[i]);
          const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475));
          const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
          ga[i] += static_cast<T>(static_cast<double>(g[i]) * (cdf + x * pdf));
        }
        break;
      }
      case Op::kSelect: {
        if (!da) break;
        const Shape& sa = A->value.shape();
        const int dim = sa[static_cast<size_t>(n.axis)];
        std::int64_t outer = 1, inner = 1;
        for (int i = 0; i < n.axis; ++i) outer *= sa[static_cast<size_t>(i)];
        for (int i = n.axis + 1; i < static_cast<int>(sa.size()); ++i) inner *= sa[static_cast<size_t>(i)];
        T* ga = A->grad.data();
        for (std::int64_t u = 0; u < outer; ++u) {
          T* dst = ga + (u * dim + n.sel_index) * inner;
          const T* src = g + u * inner;
          for (std::int64_t j = 0; j < inner; ++j) dst[j] += src[j];
        }
        break;
      }
      case Op::kReduceSum: {
        if (!da) break;
        const T gv = g[0];
        T* ga = A->grad.data();
        for (std::int64_t i = 0; i < A->value.size(); ++i) ga[i] += gv;
        break;
      }
      case Op::kReduceMean: {
        if (!da) break;
        const T gv = static_cast<T>(static_cast<double>(g[0]) / static_cast<double>(A->value.size()));
        T* ga = A->grad.data();
        for (std::int64_t i = 0; i < A->value.size(); ++i) ga[i] += gv;
        break;
      }
      case Op::kCrossEntropy: {
        if (!da) break;
        const IntTensor& labels = islot_value(n);
        const int Bn = A->value.dim(0), V = A->value.dim(1);
        const T* x = A->value.data();
        T* ga = A->grad.data();
        for (int r = 0; r < Bn; ++r) {
          const double gr = static_cast<double>(g[r]);
          if (gr == 0.0) continue;
          const double lse = n.aux[static_cast<size_t>(r)];
          const T* xr = x + static_cast<std::int64_t>(r) * V;
          T* gar = ga + static_cast<std::int64_t>(r) * V;
          const std::int32_t lab = labels[r];
          for (int j = 0; j < V; ++j) {
            const double p = std::exp(static_cast<double>(xr[j]) - lse);
            gar[j] += static_cast<T>(gr * (p - (j == lab ? 1.0 : 0.0)));
          }
        }
        break;
      }
    }
  }

  void backprop_matmul(Node& n, Node& A, Node& B, bool da, bool db) {
    const Shape& sa = A.value.shape();
    const Shape& sb = B.value.shape();
    const int M = sa[sa.size() - 2], K = sa[sa.size() - 1];
    const int N = sb[sb.size() - 1];
    const bool shared_b = sb.size() == 2;
    std::int64_t groups = 1;
    for (size_t i = 0; i + 2 < sa.size(); ++i) groups *= sa[i];
    const T* g = n.grad.data();
    if (da) {
      std::vector<double> acc(static_cast<size_t>(M) * K);
      for (std::int64_t gi = 0; gi < groups; ++gi) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const T* bv = B.value.data() + (shared_b ? 0 : gi * static_cast<std::int64_t>(K) * N);
        mm_nt_acc(g + gi * static_cast<std::int64_t>(M) * N, bv, acc.data(), M, N, K);
        add_cast(A.grad.data() + gi * static_cast<std::int64_t>(M) * K, acc.data(),
                 static_cast<std::int64_t>(M) * K);
      }
    }
    if (db) {
      if (shared_b) {
        std::vector<double> acc(static_cast<size_t>(K) * N, 0.0);
        for (std::int64_t gi = 0; gi < groups; ++gi)
          mm_tn_acc(A.value.data() + gi * static_cast<std::int64_t>(M) * K,
                    g + gi * static_cast<std::int64_t>(M) * N, acc.data(), M, K, N);
        add_cast(B.grad.data(), acc.data(), static_cast<std::int64_t>(K) * N);
      } else {
        std::vector<double> acc(static_cast<size_t>(K) * N);
        for (std::int64_t gi = 0; gi < groups; ++gi) {
          std::fill(acc.begin(), acc.end(), 0.0);
          mm_tn_acc(A.value.data() + gi * static_cast<std::int64_t>(M) * K,
                    g + gi * static_cast<std::int64_t>(M) * N, acc.data(), M, K, N);
          add_cast(B.grad.data() + gi * static_cast<std::int64_t>(K) * N, acc.data(),
                   static_cast<std::int64_t>(K) * N);
        }
      }
    }
  }

  void backprop_layer_norm(Node& n, Node& A, Node& B, Node& C, bool da, bool db, bool dc) {
    const int D = n.value.dim(n.value.rank() - 1);
    const std::int64_t rows = n.value.size() / D;
    const T* g = n.grad.data();
    const T* x = A.value.data();
    const T* gain = B.value.data();
    std::vector<double> dgain(db ? static_cast<size_t>(D) : 0, 0.0);
    std::vector<double> dbias(dc ? static_cast<size_t>(D) : 0, 0.0);
    for (std::int64_t r = 0; r < rows; ++r) {
      const double mean = n.aux[static_cast<size_t>(r) * 2];
      const double rstd = n.aux[static_cast<size_t>(r) * 2 + 1];
      const T* xr = x + r * D;
      const T* gr = g + r * D;
      if (da) {
        double s1 = 0.0, s2 = 0.0;
        for (int j = 0; j < D; ++j) {
          const double gh = static_cast<double>(gr[j]) * static_cast<double>(gain[j]);
          const double xh = (static_cast<double>(xr[j]) - mean) * rstd;
          s1 += gh;
          s2 += gh * xh;
        }
        T* gar = A.grad.data() + r * D;
        for (int j = 0; j < D; ++j) {
          const double gh = static_cast<double>(gr[j]) * static_cast<double>(gain[j]);
          const double xh = (static_cast<double>(xr[j]) - mean) * rstd;
          gar[j] += static_cast<T>(rstd * (gh - (s1 + xh * s2) / D));
        }
      }
      if (db || dc) {
        for (int j = 0; j < D; ++j) {
          const double gv = static_cast<double>(gr[j]);
          if (db) {
            const double xh = (static_cast<double>(xr[j]) - mean) * rstd;
            dgain[static_cast<size_t>(j)] += gv * xh;
          }
          if (dc) dbias[static_cast<size_t>(j)] += gv;
        }
      }
    }
    if (db) add_cast(B.grad.data(), dgain.data(), D);
    if (dc) add_cast(C.grad.data(), dbias.data(), D);
  }

  std::vector<Node> nodes_;
  std::vector<IntSlot> islots_;
  std::unordered_map<std::string, int> input_index_;
  std::unordered_map<std::string, int> int_index_;
  std::unordered_set<std::string> param_names_;
  std::vector<int> param_nodes_;
  std::int64_t param_count_ = 0;
  bool forward_done_ = false;
  bool backward_done_ = false;
  int pass_ = 0;
};

// ---- free-function surface used by tests and tooling ----

template <typename T>
std::unordered_map<std::string, Tensor<T>> forward_eval(
    Graph<T>& g, const std::unordered_map<std::string, Tensor<T>>& inputs,
    const std::unordered_map<std::string, IntTensor>& int_inputs,
    const std::vector<std::pair<std::string, NodeId>>& outputs) {
  for (const auto& [name, v] : inputs) g.bind(name, v);
  for (const auto& [name, v] : int_inputs) g.bind_ints(name, v);
  g.forward();
  std::unordered_map<std::string, Tensor<T>> out;
  for (const auto& [name, id] : outputs) out.emplace(name, g.value(id));
  return out;
}

template <typename T>
std::vector<T> backward_grad(Graph<T>& g, NodeId scalar_root) {
  g.backward(scalar_root);
  return g.flatten_grads();
}

struct GradCheckEntry {
  std::int64_t coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool ok(double tol) const { return max_rel_err < tol; }
};

// Central finite differences against the analytic gradient at the current
// parameter point. Relative error uses max(1, |analytic|, |numeric|) in the
// denominator so near-zero coordinates are judged on absolute error.
template <typename T>
GradCheckReport check_gradient(Graph<T>& g, NodeId root, const std::vector<std::int64_t>& coords,
                               double step = 1e-5) {
  g.forward();
  g.backward(root);
  const std::vector<T> analytic = g.flatten_grads();
  GradCheckReport report;
  for (std::int64_t coord : coords) {
    const T orig = g.read_param(coord);
    g.write_param(coord, static_cast<T>(static_cast<double>(orig) + step));
    g.forward();
    const double fp = static_cast<double>(g.value(root)[0]);
    g.write_param(coord, static_cast<T>(static_cast<double>(orig) - step));
    g.forward();
    const double fm = static_cast<double>(g.value(root)[0]);
    g.write_param(coord, orig);
    const double numeric = (fp - fm) / (2.0 * step);
    const double an = static_cast<double>(analytic[static_cast<size_t>(coord)]);
    const double denom = std::max({1.0, std::abs(an), std::abs(numeric)});
    const double err = std::abs(an - numeric) / denom;
    report.entries.push_back({coord, an, numeric, err});
    report.max_rel_err = std::max(report.max_rel_err, err);
  }
  g.forward();
  return report;
}

}  // namespace losskern
