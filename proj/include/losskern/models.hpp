#pragma once

// Model zoo. Builders return fully initialized models; initialization draws
// from a seed-derived stream in parameter declaration order, so a (builder,
// seed) pair pins every weight.

#include <cmath>
#include <utility>

#include "losskern/model.hpp"

namespace losskern {

namespace detail {

template <typename T>
void init_normal(Graph<T>& g, NodeId id, double std, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, std);
  Tensor<T>& v = g.param_value(id);
  for (std::int64_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(gauss(rng));
}

template <typename T>
void init_const(Graph<T>& g, NodeId id, double value) {
  Tensor<T>& v = g.param_value(id);
  for (std::int64_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(value);
}

}  // namespace detail

// ---- decoder-only transformer over two modular-arithmetic tasks ----
// Sequence [a, op, b, eq] -> next-token prediction at the final position.
// Token blocks are disjoint per task (see ModularVocab); the label is the
// result digit's token id, so logits span the full doubled vocabulary.

struct TransformerDims {
  int width = 128;
  int heads = 4;
  int layers = 2;
  int mlp_ratio = 4;
};

template <typename T>
ModelT<T> build_multitask_transformer_t(int p, const TransformerDims& dims, std::uint64_t seed) {
  if (!is_prime(p)) throw std::invalid_argument("build_multitask_transformer: p must be prime");
  if (dims.width < 1 || dims.heads < 1 || dims.layers < 1 || dims.mlp_ratio < 1)
    throw std::invalid_argument("build_multitask_transformer: non-positive dimension");
  if (dims.width % dims.heads != 0)
    throw std::invalid_argument("build_multitask_transformer: width must be divisible by heads");
  const ModularVocab vocab(p);
  const int V = vocab.size();
  const int D = dims.width;
  const int H = dims.heads;
  const int hd = D / H;
  constexpr int S = 4;  // [a, op, b, eq]
  const double init_std = 0.02;

  ModelT<T> m;
  m.name = "multitask_transformer";
  Graph<T>& g = m.graph;
  Rng rng = make_rng(seed, 0);

  auto tokens = g.int_input("tokens", 1);
  auto labels = g.int_input("labels");

  auto tok_emb = g.param("tok_emb", {V, D});
  auto pos_emb = g.param("pos_emb", {S, D});
  detail::init_normal(g, tok_emb, init_std, rng);
  detail::init_normal(g, pos_emb, init_std, rng);

  Tensor<T> mask({S, S});
  for (int i = 0; i < S; ++i)
    for (int j = 0; j < S; ++j) mask[i * S + j] = j <= i ? T(0) : T(-1e9);
  auto causal_mask = g.constant(std::move(mask));
  auto attn_scale = g.constant(Tensor<T>::scalar(static_cast<T>(1.0 / std::sqrt(double(hd)))));

  auto x = g.add(g.embedding(tok_emb, tokens), pos_emb);  // [B,S,D]
  for (int l = 0; l < dims.layers; ++l) {
    const std::string lp = "l" + std::to_string(l) + ".";
    auto ln1g = g.param(lp + "ln1.gain", {D});
    auto ln1b = g.param(lp + "ln1.bias", {D});
    detail::init_const(g, ln1g, 1.0);
    auto h = g.layer_norm(x, ln1g, ln1b);
    auto project = [&](const std::string& name) {
      auto w = g.param(lp + name + ".w", {D, D});
      auto b = g.param(lp + name + ".b", {D});
      detail::init_normal(g, w, init_std, rng);
      return g.add(g.matmul(h, w), b);
    };
    auto split = [&](NodeId v) {
      return g.transpose(g.reshape(v, {-1, S, H, hd}), {0, 2, 1, 3});  // [B,H,S,hd]
    };
    auto q = split(project("attn.q"));
    auto k = split(project("attn.k"));
    auto v = split(project("attn.v"));
    auto scores = g.matmul(q, g.transpose(k, {0, 1, 3, 2}));           // [B,H,S,S]
    auto attn = g.softmax(g.add(g.mul(scores, attn_scale), causal_mask));
    auto ctx = g.reshape(g.transpose(g.matmul(attn, v), {0, 2, 1, 3}), {-1, S, D});
    auto wo = g.param(lp + "attn.out.w", {D, D});
    auto bo = g.param(lp + "attn.out.b", {D});
    detail::init_normal(g, wo, init_std, rng);
    x = g.add(x, g.add(g.matmul(ctx, wo), bo));

    auto ln2g = g.param(lp + "ln2.gain", {D});
    auto ln2b = g.param(lp + "ln2.bias", {D});
    detail::init_const(g, ln2g, 1.0);
    auto h2 = g.layer_norm(x, ln2g, ln2b);
    auto w1 = g.param(lp + "mlp.w1", {D, dims.mlp_ratio * D});
    auto b1 = g.param(lp + "mlp.b1", {dims.mlp_ratio * D});
    auto w2 = g.param(lp + "mlp.w2", {dims.mlp_ratio * D, D});
    auto b2 = g.param(lp + "mlp.b2", {D});
    detail::init_normal(g, w1, init_std, rng);
    detail::init_normal(g, w2, init_std, rng);
    x = g.add(x, g.add(g.matmul(g.gelu(g.add(g.matmul(h2, w1), b1)), w2), b2));
  }
  auto lnfg = g.param("final_ln.gain", {D});
  auto lnfb = g.param("final_ln.bias", {D});
  detail::init_const(g, lnfg, 1.0);
  auto xf = g.layer_norm(x, lnfg, lnfb);
  auto head_w = g.param("head.w", {D, V});
  auto head_b = g.param("head.b", {V});
  detail::init_normal(g, head_w, init_std, rng);
  m.logits = g.select(g.add(g.matmul(xf, head_w), head_b), 1, S - 1);  // [B,V]
  m.loss_vec = g.cross_entropy(m.logits, labels);
  m.loss_sum = g.reduce_sum(m.loss_vec);
  m.loss_mean = g.reduce_mean(m.loss_vec);

  m.bind_batch = [V](Graph<T>& gr, std::span<const Sample> batch) {
    const int B = static_cast<int>(batch.size());
    IntTensor toks(Shape{B, S});
    IntTensor labs(Shape{B});
    for (int i = 0; i < B; ++i) {
      const Sample& s = batch[static_cast<size_t>(i)];
      if (static_cast<int>(s.tokens.size()) != S)
        throw SchemaError("multitask_transformer: sample " + std::to_string(s.id) + " has " +
                          std::to_string(s.tokens.size()) + " tokens, expected 4");
      for (int j = 0; j < S; ++j) {
        const auto t = s.tokens[static_cast<size_t>(j)];
        if (t < 0 || t >= V)
          throw SchemaError("multitask_transformer: token " + std::to_string(t) +
                            " outside vocabulary of " + std::to_string(V));
        toks[i * S + j] = t;
      }
      if (s.label < 0 || s.label >= V)
        throw SchemaError("multitask_transformer: label " + std::to_string(s.label) +
                          " outside vocabulary of " + std::to_string(V));
      labs[i] = s.label;
    }
    gr.bind_ints("tokens", std::move(toks));
    gr.bind_ints("labels", std::move(labs));
  };
  return m;
}

inline Model build_multitask_transformer(int p, const TransformerDims& dims, std::uint64_t seed) {
  return build_multitask_transformer_t<float>(p, dims, seed);
}

// ---- two linear regression towers with no shared parameters ----
// Each sample is routed to its task's tower by a 0/1 mask, so the loss (and
// every gradient) of a task-0 sample is structurally independent of tower B.

struct TowersConfig {
  int features = 2;
  double init_std = 0.1;
};

template <typename T>
ModelT<T> build_disjoint_towers_t(const TowersConfig& cfg, std::uint64_t seed) {
  if (cfg.features < 1) throw std::invalid_argument("build_disjoint_towers: features must be >= 1");
  ModelT<T> m;
  m.name = "disjoint_towers";
  Graph<T>& g = m.graph;
  Rng rng = make_rng(seed, 0);
  const int F = cfg.features;

  auto x = g.input("x", {F});
  auto y = g.input("y");
  auto mask_a = g.input("mask_a");
  auto mask_b = g.input("mask_b");
  auto neg1 = g.constant(Tensor<T>::scalar(T(-1)));
  auto neg_y = g.mul(y, neg1);

  auto tower = [&](const std::string& name) {
    auto w = g.param(name + ".w", {F, 1});
    auto b = g.param(name + ".b", {});
    detail::init_normal(g, w, cfg.init_std, rng);
    auto pred = g.add(g.reshape(g.matmul(x, w), {-1}), b);  // [B]
    auto diff = g.add(pred, neg_y);
    return g.mul(diff, diff);
  };
  auto sq_a = tower("tower_a");
  auto sq_b = tower("tower_b");
  m.loss_vec = g.add(g.mul(sq_a, mask_a), g.mul(sq_b, mask_b));
  m.loss_sum = g.reduce_sum(m.loss_vec);
  m.loss_mean = g.reduce_mean(m.loss_vec);
  m.param_blocks = {{"tower_a", 0, F + 1}, {"tower_b", F + 1, 2 * (F + 1)}};

  m.bind_batch = [F](Graph<T>& gr, std::span<const Sample> batch) {
    const int B = static_cast<int>(batch.size());
    Tensor<T> xs(Shape{B, F}), ys(Shape{B}), ma(Shape{B}), mb(Shape{B});
    for (int i = 0; i < B; ++i) {
      const Sample& s = batch[static_cast<size_t>(i)];
      if (static_cast<int>(s.features.size()) != F)
        throw SchemaError("disjoint_towers: sample " + std::to_string(s.id) + " has " +
                          std::to_string(s.features.size()) + " features, expected " +
                          std::to_string(F));
      if (s.task != 0 && s.task != 1)
        throw SchemaError("disjoint_towers: sample " + std::to_string(s.id) + " has task " +
                          std::to_string(s.task) + ", expected 0 or 1");
      for (int j = 0; j < F; ++j) xs[i * F + j] = static_cast<T>(s.features[static_cast<size_t>(j)]);
      ys[i] = static_cast<T>(s.target);
      ma[i] = s.task == 0 ? T(1) : T(0);
      mb[i] = s.task == 1 ? T(1) : T(0);
    }
    gr.bind("x", std::move(xs));
    gr.bind("y", std::move(ys));
    gr.bind("mask_a", std::move(ma));
    gr.bind("mask_b", std::move(mb));
  };
  return m;
}

inline Model build_disjoint_towers(const TowersConfig& cfg, std::uint64_t seed) {
  return build_disjoint_towers_t<float>(cfg, seed);
}

// ---- one-parameter quadratic losses l_i(w) = a_i (w - c_i)^2 ----
// The closed-form Gaussian reference model: coefficients ride along as
// sample features, so the estimators see it like any other model.

template <typename T>
std::pair<ModelT<T>, std::vector<Sample>> build_quadratic_t(
    const std::vector<std::pair<double, double>>& coeffs) {
  if (coeffs.empty()) throw std::invalid_argument("build_quadratic: no coefficients");
  for (const auto& [a, c] : coeffs) {
    (void)c;
    if (!(a > 0)) throw std::invalid_argument("build_quadratic: curvatures a_i must be positive");
  }
  ModelT<T> m;
  m.name = "quadratic";
  Graph<T>& g = m.graph;
  auto a_in = g.input("a");
  auto c_in = g.input("c");
  auto w = g.param("w", {});
  auto neg_c = g.mul(c_in, g.constant(Tensor<T>::scalar(T(-1))));
  auto diff = g.add(neg_c, w);
  m.loss_vec = g.mul(a_in, g.mul(diff, diff));
  m.loss_sum = g.reduce_sum(m.loss_vec);
  m.loss_mean = g.reduce_mean(m.loss_vec);
  m.bind_batch = [](Graph<T>& gr, std::span<const Sample> batch) {
    const int B = static_cast<int>(batch.size());
    Tensor<T> as(Shape{B}), cs(Shape{B});
    for (int i = 0; i < B; ++i) {
      const Sample& s = batch[static_cast<size_t>(i)];
      if (s.features.size() != 2)
        throw SchemaError("quadratic: sample " + std::to_string(s.id) +
                          " must carry features {a, c}");
      as[i] = static_cast<T>(s.features[0]);
      cs[i] = static_cast<T>(s.features[1]);
    }
    gr.bind("a", std::move(as));
    gr.bind("c", std::move(cs));
  };
  std::vector<Sample> samples;
  for (size_t i = 0; i < coeffs.size(); ++i) {
    Sample s;
    s.id = static_cast<std::int64_t>(i);
    s.features = {static_cast<float>(coeffs[i].first), static_cast<float>(coeffs[i].second)};
    samples.push_back(std::move(s));
  }
  return {std::move(m), std::move(samples)};
}

inline std::pair<Model, std::vector<Sample>> build_quadratic(
    const std::vector<std::pair<double, double>>& coeffs) {
  return build_quadratic_t<float>(coeffs);
}

// Minimizer of sum_i a_i (w - c_i)^2.
inline double quadratic_minimizer(const std::vector<std::pair<double, double>>& coeffs) {
  double num = 0.0, den = 0.0;
  for (const auto& [a, c] : coeffs) {
    num += a * c;
    den += a;
  }
  if (den == 0.0) throw std::invalid_argument("quadratic_minimizer: no coefficients");
  return num / den;
}

// ---- two-hidden-layer relu classifier for hierarchical feature data ----

struct MlpDims {
  int hidden1 = 64;
  int hidden2 = 64;
};

template <typename T>
ModelT<T> build_hier_mlp_t(int in_dim, int n_labels, const MlpDims& dims, std::uint64_t seed) {
  if (in_dim < 1 || n_labels < 2 || dims.hidden1 < 1 || dims.hidden2 < 1)
    throw std::invalid_argument("build_hier_mlp: bad dimensions");
  ModelT<T> m;
  m.name = "hier_mlp";
  Graph<T>& g = m.graph;
  Rng rng = make_rng(seed, 0);
  auto x = g.input("x", {in_dim});
  auto labels = g.int_input("labels");
  auto layer = [&](NodeId in, int fan_in, int fan_out, const std::string& name) {
    auto w = g.param(name + ".w", {fan_in, fan_out});
    auto b = g.param(name + ".b", {fan_out});
    detail::init_normal(g, w, std::sqrt(2.0 / fan_in), rng);
    return g.add(g.matmul(in, w), b);
  };
  auto h1 = g.relu(layer(x, in_dim, dims.hidden1, "fc1"));
  auto h2 = g.relu(layer(h1, dims.hidden1, dims.hidden2, "fc2"));
  m.logits = layer(h2, dims.hidden2, n_labels, "fc3");
  m.loss_vec = g.cross_entropy(m.logits, labels);
  m.loss_sum = g.reduce_sum(m.loss_vec);
  m.loss_mean = g.reduce_mean(m.loss_vec);
  m.bind_batch = [in_dim, n_labels](Graph<T>& gr, std::span<const Sample> batch) {
    const int B = static_cast<int>(batch.size());
    Tensor<T> xs(Shape{B, in_dim});
    IntTensor labs(Shape{B});
    for (int i = 0; i < B; ++i) {
      const Sample& s = batch[static_cast<size_t>(i)];
      if (static_cast<int>(s.features.size()) != in_dim)
        throw SchemaError("hier_mlp: sample " + std::to_string(s.id) + " has " +
                          std::to_string(s.features.size()) + " features, expected " +
                          std::to_string(in_dim));
      if (s.label < 0 || s.label >= n_labels)
        throw SchemaError("hier_mlp: label " + std::to_string(s.label) + " outside [0, " +
                          std::to_string(n_labels) + ")");
      for (int j = 0; j < in_dim; ++j)
        xs[i * in_dim + j] = static_cast<T>(s.features[static_cast<size_t>(j)]);
      labs[i] = s.label;
    }
    gr.bind("x", std::move(xs));
    gr.bind_ints("labels", std::move(labs));
  };
  return m;
}

inline Model build_hier_mlp(int in_dim, int n_labels, const MlpDims& dims, std::uint64_t seed) {
  return build_hier_mlp_t<float>(in_dim, n_labels, dims, seed);
}

}  // namespace losskern
