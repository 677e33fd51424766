#pragma once

// Sample records, label hierarchies, and dataset generators. Every generator
// is a pure function of its arguments (seed included), so datasets are
// reproducible and addressable by sample id.

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "losskern/rng.hpp"

namespace losskern {

struct Sample {
  std::int64_t id = 0;
  std::int32_t task = 0;
  std::vector<std::int32_t> tokens;  // token-based models
  std::vector<float> features;       // feature-based models
  std::int32_t label = 0;            // classification target
  float target = 0.f;                // regression target
};

// ---- modular arithmetic vocabulary ----
// Two tasks (0: addition, 1: division mod p) with fully disjoint token blocks:
// task t owns ids [t*(p+2), (t+1)*(p+2)) laid out as digits 0..p-1, op, eq.

struct ModularVocab {
  int p = 0;
  explicit ModularVocab(int p_) : p(p_) {}
  int size() const { return 2 * (p + 2); }
  int digit(int task, int v) const { return task * (p + 2) + v; }
  int op_token(int task) const { return task * (p + 2) + p; }
  int eq_token(int task) const { return task * (p + 2) + p + 1; }
};

inline bool is_prime(int p) {
  if (p < 2) return false;
  for (int d = 2; static_cast<std::int64_t>(d) * d <= p; ++d)
    if (p % d == 0) return false;
  return true;
}

inline std::int64_t modpow(std::int64_t base, std::int64_t exp, std::int64_t mod) {
  std::int64_t r = 1 % mod;
  base %= mod;
  while (exp > 0) {
    if (exp & 1) r = r * base % mod;
    base = base * base % mod;
    exp >>= 1;
  }
  return r;
}

// Multiplicative inverse mod prime p via Fermat's little theorem.
inline int mod_inverse(int b, int p) {
  if (b % p == 0) throw std::invalid_argument("mod_inverse: zero has no inverse");
  return static_cast<int>(modpow(b, p - 2, p));
}

// Equal counts of addition (task 0) and division (task 1) prompts
// [a, op, b, eq] -> result token, sampled uniformly without replacement from
// each task's full (a, b) grid. Division excludes b = 0.
inline std::vector<Sample> gen_modular_dataset(int p, int n_per_task, std::uint64_t seed) {
  if (!is_prime(p)) throw std::invalid_argument("gen_modular_dataset: p must be prime");
  if (n_per_task <= 0) throw std::invalid_argument("gen_modular_dataset: n_per_task must be positive");
  const ModularVocab vocab(p);
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(2 * n_per_task));
  std::int64_t next_id = 0;
  for (int task = 0; task < 2; ++task) {
    const int b_count = task == 0 ? p : p - 1;  // division avoids b = 0
    const int grid = p * b_count;
    if (n_per_task > grid)
      throw std::invalid_argument("gen_modular_dataset: n_per_task exceeds " +
                                  std::to_string(grid) + " distinct pairs for task " +
                                  std::to_string(task));
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(task));
    for (int pick : sample_without_replacement(grid, n_per_task, rng)) {
      const int a = pick / b_count;
      const int b = task == 0 ? pick % b_count : 1 + pick % b_count;
      const int result = task == 0 ? (a + b) % p : static_cast<int>(static_cast<std::int64_t>(a) * mod_inverse(b, p) % p);
      Sample s;
      s.id = next_id++;
      s.task = task;
      s.tokens = {vocab.digit(task, a), vocab.op_token(task), vocab.digit(task, b),
                  vocab.eq_token(task)};
      s.label = vocab.digit(task, result);
      out.push_back(std::move(s));
    }
  }
  return out;
}

// ---- label hierarchy ----

class LabelHierarchy {
 public:
  struct Node {
    std::string name;
    int parent = -1;
    int depth = 0;
    std::vector<int> children;
    int label = -1;  // leaves only
  };

  static LabelHierarchy balanced(int branching, int depth) {
    if (branching < 1 || depth < 1)
      throw std::invalid_argument("LabelHierarchy::balanced: branching and depth must be >= 1");
    LabelHierarchy h;
    h.nodes_.push_back({"root", -1, 0, {}, -1});
    h.grow(0, branching, depth);
    h.finish();
    return h;
  }

  static LabelHierarchy from_edges(const std::vector<std::pair<std::string, std::string>>& edges) {
    if (edges.empty()) throw std::invalid_argument("LabelHierarchy::from_edges: no edges");
    LabelHierarchy h;
    std::unordered_map<std::string, int> index;
    auto intern = [&](const std::string& name) {
      auto [it, fresh] = index.emplace(name, static_cast<int>(h.nodes_.size()));
      if (fresh) h.nodes_.push_back({name, -1, 0, {}, -1});
      return it->second;
    };
    for (const auto& [parent, child] : edges) {
      const int pi = intern(parent), ci = intern(child);
      if (h.nodes_[static_cast<size_t>(ci)].parent != -1)
        throw std::invalid_argument("LabelHierarchy: node '" + child + "' has two parents");
      if (pi == ci) throw std::invalid_argument("LabelHierarchy: self edge at '" + parent + "'");
      h.nodes_[static_cast<size_t>(ci)].parent = pi;
      h.nodes_[static_cast<size_t>(pi)].children.push_back(ci);
    }
    int root = -1;
    for (size_t i = 0; i < h.nodes_.size(); ++i) {
      if (h.nodes_[i].parent == -1) {
        if (root != -1)
          throw std::invalid_argument("LabelHierarchy: multiple roots ('" +
                                      h.nodes_[static_cast<size_t>(root)].name + "', '" +
                                      h.nodes_[i].name + "')");
        root = static_cast<int>(i);
      }
    }
    if (root == -1) throw std::invalid_argument("LabelHierarchy: no root (cycle)");
    if (root != 0) {
      // keep arbitrary edge order working: relabel so the root is node 0
      std::swap(h.nodes_[0], h.nodes_[static_cast<size_t>(root)]);
      auto fix = [&](int& v) {
        if (v == 0)
          v = root;
        else if (v == root)
          v = 0;
      };
      for (auto& n : h.nodes_) {
        fix(n.parent);
        for (int& c : n.children) fix(c);
      }
      h.nodes_[0].parent = -1;
    }
    h.assign_depths();
    h.finish();
    return h;
  }

  int node_count() const { return static_cast<int>(nodes_.size()); }
  int leaf_count() const { return static_cast<int>(leaf_of_label_.size()); }
  int max_depth() const { return max_depth_; }
  const Node& node(int id) const { return nodes_.at(static_cast<size_t>(id)); }

  int node_of_label(int label) const {
    if (label < 0 || label >= leaf_count())
      throw std::out_of_range("LabelHierarchy: label " + std::to_string(label) + " out of range");
    return leaf_of_label_[static_cast<size_t>(label)];
  }

  int depth_of_label(int label) const { return nodes_[static_cast<size_t>(node_of_label(label))].depth; }

  // Ancestor of the label's leaf at the given depth; a node counts as its own
  // ancestor, so d == leaf depth returns the leaf. Returns -1 when d exceeds
  // the leaf depth.
  int ancestor_at_depth(int label, int d) const {
    if (d < 0) throw std::invalid_argument("LabelHierarchy: negative depth");
    int id = node_of_label(label);
    if (d > nodes_[static_cast<size_t>(id)].depth) return -1;
    while (nodes_[static_cast<size_t>(id)].depth > d) id = nodes_[static_cast<size_t>(id)].parent;
    return id;
  }

  // Depth of the deepest common ancestor of two labels' leaves.
  int lca_depth(int label_a, int label_b) const {
    int a = node_of_label(label_a), b = node_of_label(label_b);
    while (nodes_[static_cast<size_t>(a)].depth > nodes_[static_cast<size_t>(b)].depth)
      a = nodes_[static_cast<size_t>(a)].parent;
    while (nodes_[static_cast<size_t>(b)].depth > nodes_[static_cast<size_t>(a)].depth)
      b = nodes_[static_cast<size_t>(b)].parent;
    while (a != b) {
      a = nodes_[static_cast<size_t>(a)].parent;
      b = nodes_[static_cast<size_t>(b)].parent;
    }
    return nodes_[static_cast<size_t>(a)].depth;
  }

  // Parent-child pairs in depth-first order (deterministic round-trip).
  std::vector<std::pair<std::string, std::string>> edges() const {
    std::vector<std::pair<std::string, std::string>> out;
    std::vector<int> stack{0};
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      const Node& n = nodes_[static_cast<size_t>(id)];
      for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
      for (int c : n.children) out.emplace_back(n.name, nodes_[static_cast<size_t>(c)].name);
    }
    return out;
  }

 private:
  void grow(int parent, int branching, int remaining) {
    if (remaining == 0) return;
    for (int i = 0; i < branching; ++i) {
      const std::string& pn = nodes_[static_cast<size_t>(parent)].name;
      Node child;
      child.name = (parent == 0 ? "" : pn + ".") + std::to_string(i);
      child.parent = parent;
      child.depth = nodes_[static_cast<size_t>(parent)].depth + 1;
      const int id = static_cast<int>(nodes_.size());
      nodes_.push_back(std::move(child));
      nodes_[static_cast<size_t>(parent)].children.push_back(id);
      grow(id, branching, remaining - 1);
    }
  }

  void assign_depths() {
    // DFS from root; also validates connectivity and acyclicity.
    std::vector<char> seen(nodes_.size(), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    size_t visited = 0;
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      ++visited;
      for (int c : nodes_[static_cast<size_t>(id)].children) {
        if (seen[static_cast<size_t>(c)])
          throw std::invalid_argument("LabelHierarchy: cycle through '" +
                                      nodes_[static_cast<size_t>(c)].name + "'");
        seen[static_cast<size_t>(c)] = 1;
        nodes_[static_cast<size_t>(c)].depth = nodes_[static_cast<size_t>(id)].depth + 1;
        stack.push_back(c);
      }
    }
    if (visited != nodes_.size())
      throw std::invalid_argument("LabelHierarchy: graph is not connected");
  }

  void finish() {
    // leaves get labels in depth-first order
    std::vector<int> stack{0};
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.children.empty()) {
        n.label = static_cast<int>(leaf_of_label_.size());
        leaf_of_label_.push_back(id);
      }
      for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
      max_depth_ = std::max(max_depth_, n.depth);
    }
  }

  std::vector<Node> nodes_;
  std::vector<int> leaf_of_label_;
  int max_depth_ = 0;
};

// ---- hierarchical feature dataset ----
// Leaf class means follow a random walk down the tree (each edge adds an
// independent N(0, step_scale^2 I) displacement); samples add N(0,
// noise_scale^2 I) around their leaf mean. Nearby leaves therefore share most
// of their mean vector, giving features the same nested structure as labels.

struct HierTreeSpec {
  int branching = 3;
  int depth = 3;
  int feature_dim = 16;
  double step_scale = 1.0;
};

struct HierDataset {
  std::vector<Sample> samples;
  LabelHierarchy hierarchy;
  std::vector<std::vector<float>> leaf_means;  // indexed by label
};

inline HierDataset gen_hier_dataset(const HierTreeSpec& spec, int n_per_leaf, double noise_scale,
                                    std::uint64_t seed) {
  if (spec.feature_dim < 1) throw std::invalid_argument("gen_hier_dataset: feature_dim must be >= 1");
  if (n_per_leaf < 1) throw std::invalid_argument("gen_hier_dataset: n_per_leaf must be >= 1");
  if (noise_scale < 0) throw std::invalid_argument("gen_hier_dataset: negative noise_scale");
  HierDataset out{{}, LabelHierarchy::balanced(spec.branching, spec.depth), {}};
  const int D = spec.feature_dim;
  Rng walk_rng = make_rng(seed, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> mean(static_cast<size_t>(out.hierarchy.node_count()));
  mean[0].assign(static_cast<size_t>(D), 0.0);
  // node ids were assigned in DFS order, so parents precede children
  for (int id = 1; id < out.hierarchy.node_count(); ++id) {
    const auto& n = out.hierarchy.node(id);
    mean[static_cast<size_t>(id)] = mean[static_cast<size_t>(n.parent)];
    for (double& v : mean[static_cast<size_t>(id)]) v += spec.step_scale * gauss(walk_rng);
  }
  out.leaf_means.resize(static_cast<size_t>(out.hierarchy.leaf_count()));
  for (int lab = 0; lab < out.hierarchy.leaf_count(); ++lab) {
    const auto& m = mean[static_cast<size_t>(out.hierarchy.node_of_label(lab))];
    out.leaf_means[static_cast<size_t>(lab)].assign(m.begin(), m.end());
  }
  Rng noise_rng = make_rng(seed, 1);
  std::int64_t next_id = 0;
  for (int lab = 0; lab < out.hierarchy.leaf_count(); ++lab) {
    const auto& m = out.leaf_means[static_cast<size_t>(lab)];
    for (int i = 0; i < n_per_leaf; ++i) {
      Sample s;
      s.id = next_id++;
      s.label = lab;
      s.features.resize(static_cast<size_t>(D));
      for (int j = 0; j < D; ++j)
        s.features[static_cast<size_t>(j)] =
            m[static_cast<size_t>(j)] + static_cast<float>(noise_scale * gauss(noise_rng));
      out.samples.push_back(std::move(s));
    }
  }
  return out;
}

// ---- label corruption ----
// Reassigns k uniformly chosen samples to a uniformly chosen *wrong* label.
// Returns the modified copy plus the sorted ids of corrupted samples.
inline std::pair<std::vector<Sample>, std::vector<std::int64_t>> corrupt_labels(
    const std::vector<Sample>& samples, int k, std::uint64_t seed, int n_labels = -1) {
  const int n = static_cast<int>(samples.size());
  if (k < 0 || k > n) throw std::invalid_argument("corrupt_labels: k out of range");
  if (n_labels < 0) {
    n_labels = 0;
    for (const Sample& s : samples) n_labels = std::max(n_labels, s.label + 1);
  }
  if (n_labels < 2) throw std::invalid_argument("corrupt_labels: need at least two labels");
  std::vector<Sample> out = samples;
  Rng rng = make_rng(seed, 0);
  std::vector<int> picks = sample_without_replacement(n, k, rng);
  std::sort(picks.begin(), picks.end());
  std::vector<std::int64_t> ids;
  std::uniform_int_distribution<int> wrong(0, n_labels - 2);
  for (int i : picks) {
    Sample& s = out[static_cast<size_t>(i)];
    const int w = wrong(rng);
    s.label = w >= s.label ? w + 1 : w;
    ids.push_back(s.id);
  }
  std::sort(ids.begin(), ids.end());
  return {std::move(out), std::move(ids)};
}

// ---- two-task linear regression data (disjoint-tower experiments) ----
// Anisotropic inputs concentrate posterior loss fluctuations along one
// parameter direction, so within-task losses are strongly correlated.

struct TowerDataSpec {
  int features = 2;
  std::vector<double> input_std = {1.0, 0.3};  // padded/truncated to features
  double noise = 0.05;
};

inline std::vector<Sample> gen_tower_regression(const TowerDataSpec& spec, int n_per_task,
                                                std::uint64_t seed) {
  if (spec.features < 1) throw std::invalid_argument("gen_tower_regression: features must be >= 1");
  if (n_per_task < 1) throw std::invalid_argument("gen_tower_regression: n_per_task must be >= 1");
  std::vector<double> sd(static_cast<size_t>(spec.features), 0.3);
  for (size_t i = 0; i < sd.size() && i < spec.input_std.size(); ++i) sd[i] = spec.input_std[i];
  // fixed ground-truth parameters per task; any values work, these keep
  // predictions O(1)
  std::vector<std::vector<double>> w = {{1.0, -0.5}, {-0.7, 0.9}};
  const double bias[2] = {0.2, -0.1};
  for (auto& wt : w) wt.resize(static_cast<size_t>(spec.features), 0.25);
  std::vector<Sample> out;
  std::int64_t next_id = 0;
  for (int task = 0; task < 2; ++task) {
    Rng rng = make_rng(seed, 10 + static_cast<std::uint64_t>(task));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < n_per_task; ++i) {
      Sample s;
      s.id = next_id++;
      s.task = task;
      s.features.resize(static_cast<size_t>(spec.features));
      double y = bias[task];
      for (int j = 0; j < spec.features; ++j) {
        const double x = sd[static_cast<size_t>(j)] * gauss(rng);
        s.features[static_cast<size_t>(j)] = static_cast<float>(x);
        y += w[static_cast<size_t>(task)][static_cast<size_t>(j)] * x;
      }
      s.target = static_cast<float>(y + spec.noise * gauss(rng));
      out.push_back(std::move(s));
    }
  }
  return out;
}

// Deterministic task-balanced subset of size n (for kernel evaluation).
inline std::vector<Sample> balanced_subset(const std::vector<Sample>& samples, int n,
                                           std::uint64_t seed) {
  if (n < 0 || n > static_cast<int>(samples.size()))
    throw std::invalid_argument("balanced_subset: n out of range");
  std::unordered_map<std::int32_t, std::vector<int>> by_task;
  for (size_t i = 0; i < samples.size(); ++i) by_task[samples[i].task].push_back(static_cast<int>(i));
  std::vector<std::int32_t> tasks;
  for (const auto& [t, _] : by_task) tasks.push_back(t);
  std::sort(tasks.begin(), tasks.end());
  std::vector<int> chosen;
  Rng rng = make_rng(seed, 99);
  std::vector<std::vector<int>> pools;
  for (auto t : tasks) {
    const auto& idx = by_task[t];
    std::vector<int> ord;
    for (int p : sample_without_replacement(static_cast<int>(idx.size()),
                                            static_cast<int>(idx.size()), rng))
      ord.push_back(idx[static_cast<size_t>(p)]);
    pools.push_back(std::move(ord));
  }
  std::vector<size_t> cursor(pools.size(), 0);
  bool advanced = true;
  while (static_cast<int>(chosen.size()) < n && advanced) {
    advanced = false;
    for (size_t k = 0; k < pools.size() && static_cast<int>(chosen.size()) < n; ++k) {
      if (cursor[k] < pools[k].size()) {
        chosen.push_back(pools[k][cursor[k]++]);
        advanced = true;
      }
    }
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<Sample> out;
  for (int i : chosen) out.push_back(samples[static_cast<size_t>(i)]);
  return out;
}

}  // namespace losskern
