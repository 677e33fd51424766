#pragma once

// Geometry readouts on top of the estimated kernels: neighbor graphs, lift
// statistics against label structure, farthest-point clustering, leading
// principal component scores, ROC-AUC, and kernel alignment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "losskern/data.hpp"
#include "losskern/kernel.hpp"
#include "losskern/probe.hpp"
#include "losskern/rng.hpp"
#include "losskern/tensor.hpp"

namespace losskern {

// Top-k neighbor lists under a correlation matrix, ordered by decreasing R.
struct NeighborGraph {
  int k = 0;
  bool pruned = false;        // same-label edges removed
  std::vector<int> labels;    // per-sample labels; empty when none were given
  std::vector<std::vector<int>> ids;
  std::vector<std::vector<double>> weights;  // R values matching `ids`
  int short_rows = 0;         // rows left with fewer than k candidates
};

// K most-correlated neighbors of each sample. Self-pairs never appear; ties
// break toward the smaller index. With pruning on, candidates sharing the
// query's label are skipped, so rows can come back short (counted in
// `short_rows` rather than failing).
inline NeighborGraph top_k_neighbors(const Tensor<double>& R, int k,
                                     const std::vector<int>& labels = {},
                                     bool prune_same_label = false) {
  detail::require_square(R, "top_k_neighbors");
  const int n = R.dim(0);
  if (k < 1) throw std::invalid_argument("top_k_neighbors: k must be >= 1");
  if (k >= n) throw std::invalid_argument("top_k_neighbors: k must be smaller than the sample count");
  if (!labels.empty() && static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("top_k_neighbors: label vector length mismatch");
  if (prune_same_label && labels.empty())
    throw std::invalid_argument("top_k_neighbors: pruning requires labels");

  NeighborGraph g;
  g.k = k;
  g.pruned = prune_same_label;
  g.labels = labels;
  g.ids.resize(static_cast<size_t>(n));
  g.weights.resize(static_cast<size_t>(n));
  std::vector<int> cand;
  cand.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    cand.clear();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if (prune_same_label && labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)])
        continue;
      cand.push_back(j);
    }
    const int take = std::min<int>(k, static_cast<int>(cand.size()));
    if (take < k) ++g.short_rows;
    auto more_correlated = [&](int a, int b) {
      const double ra = R[static_cast<std::int64_t>(i) * n + a];
      const double rb = R[static_cast<std::int64_t>(i) * n + b];
      if (ra != rb) return ra > rb;
      return a < b;
    };
    std::partial_sort(cand.begin(), cand.begin() + take, cand.end(), more_correlated);
    auto& ids = g.ids[static_cast<size_t>(i)];
    auto& w = g.weights[static_cast<size_t>(i)];
    ids.assign(cand.begin(), cand.begin() + take);
    w.resize(ids.size());
    for (size_t t = 0; t < ids.size(); ++t)
      w[t] = R[static_cast<std::int64_t>(i) * n + ids[t]];
  }
  return g;
}

// How much more often a neighbor shares an ancestor at depth `ancestor_depth`
// with its query than a uniformly random sample would, restricted to queries
// whose label sits at depth `query_depth`. A value of 1 means the neighbor
// graph is blind to that level of the hierarchy.
inline double taxonomic_lift(const std::vector<std::vector<int>>& nn,
                             const std::vector<int>& labels, const LabelHierarchy& h,
                             int query_depth, int ancestor_depth) {
  const int n = static_cast<int>(labels.size());
  if (static_cast<int>(nn.size()) != n)
    throw std::invalid_argument("taxonomic_lift: neighbor list / label length mismatch");
  if (n < 2) throw std::invalid_argument("taxonomic_lift: need at least two samples");
  if (ancestor_depth < 0) throw std::invalid_argument("taxonomic_lift: negative ancestor depth");

  // lca tables over the handful of distinct labels, not n^2 tree walks
  std::vector<int> distinct(labels);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::unordered_map<int, int> pos;
  for (size_t r = 0; r < distinct.size(); ++r) pos[distinct[r]] = static_cast<int>(r);
  const int L = static_cast<int>(distinct.size());
  std::vector<char> shares(static_cast<size_t>(L) * L);
  for (int a = 0; a < L; ++a)
    for (int b = 0; b < L; ++b)
      shares[static_cast<size_t>(a) * L + b] =
          h.lca_depth(distinct[static_cast<size_t>(a)], distinct[static_cast<size_t>(b)]) >=
          ancestor_depth;

  std::vector<std::int64_t> label_count(static_cast<size_t>(L), 0);
  for (int lab : labels) ++label_count[static_cast<size_t>(pos.at(lab))];

  std::int64_t nn_hits = 0, nn_pairs = 0, all_hits = 0, all_pairs = 0;
  for (int i = 0; i < n; ++i) {
    if (h.depth_of_label(labels[static_cast<size_t>(i)]) != query_depth) continue;
    const int li = pos.at(labels[static_cast<size_t>(i)]);
    for (int j : nn[static_cast<size_t>(i)]) {
      nn_hits += shares[static_cast<size_t>(li) * L + pos.at(labels[static_cast<size_t>(j)])];
      ++nn_pairs;
    }
    for (int b = 0; b < L; ++b) {
      std::int64_t c = label_count[static_cast<size_t>(b)];
      if (b == li) --c;  // exclude the self pair
      if (shares[static_cast<size_t>(li) * L + b]) all_hits += c;
      all_pairs += c;
    }
  }
  if (nn_pairs == 0)
    throw std::invalid_argument("taxonomic_lift: no neighbors at query depth " +
                                std::to_string(query_depth));
  if (all_hits == 0)
    throw std::invalid_argument("taxonomic_lift: no pair shares an ancestor at depth " +
                                std::to_string(ancestor_depth));
  const double nn_rate = static_cast<double>(nn_hits) / static_cast<double>(nn_pairs);
  const double base_rate = static_cast<double>(all_hits) / static_cast<double>(all_pairs);
  return nn_rate / base_rate;
}

inline double taxonomic_lift(const NeighborGraph& g, const LabelHierarchy& h, int query_depth,
                             int ancestor_depth) {
  if (g.labels.empty())
    throw std::invalid_argument("taxonomic_lift: neighbor graph carries no labels");
  return taxonomic_lift(g.ids, g.labels, h, query_depth, ancestor_depth);
}

struct LiftCell {
  int query_depth = 0;
  int ancestor_depth = 0;
  double lift = 0.0;
  std::int64_t nn_pairs = 0;   // neighbor pairs entering the numerator
  std::int64_t all_pairs = 0;  // ordered pairs entering the base rate
};

// Every defined lift cell: one per (query depth present in the labels,
// ancestor depth 1..max). Cells whose base rate is zero are absent from the
// result rather than reported as 0.
inline std::vector<LiftCell> lift_curves(const NeighborGraph& g, const LabelHierarchy& h) {
  if (g.labels.empty())
    throw std::invalid_argument("lift_curves: neighbor graph carries no labels");
  std::vector<int> depths;
  for (int lab : g.labels) depths.push_back(h.depth_of_label(lab));
  std::sort(depths.begin(), depths.end());
  depths.erase(std::unique(depths.begin(), depths.end()), depths.end());

  std::vector<LiftCell> cells;
  for (int d : depths)
    for (int dp = 1; dp <= h.max_depth(); ++dp) {
      LiftCell cell;
      cell.query_depth = d;
      cell.ancestor_depth = dp;
      try {
        cell.lift = taxonomic_lift(g, h, d, dp);
      } catch (const std::invalid_argument&) {
        continue;  // zero base rate or no neighbors: undefined, not zero
      }
      std::int64_t nn_pairs = 0, all_pairs = 0;
      const int n = static_cast<int>(g.labels.size());
      for (int i = 0; i < n; ++i) {
        if (h.depth_of_label(g.labels[static_cast<size_t>(i)]) != d) continue;
        nn_pairs += static_cast<std::int64_t>(g.ids[static_cast<size_t>(i)].size());
        all_pairs += n - 1;
      }
      cell.nn_pairs = nn_pairs;
      cell.all_pairs = all_pairs;
      cells.push_back(cell);
    }
  return cells;
}

// Same idea for a flat categorical attribute: the rate at which neighbors
// share the query's value, against the chance rate sum_v (g_v/n)^2 of a
// uniformly drawn ordered pair agreeing.
inline double attribute_lift(const std::vector<std::vector<int>>& nn,
                             const std::vector<int>& values) {
  const int n = static_cast<int>(values.size());
  if (static_cast<int>(nn.size()) != n)
    throw std::invalid_argument("attribute_lift: neighbor list / value length mismatch");
  if (n < 2) throw std::invalid_argument("attribute_lift: need at least two samples");
  std::int64_t hits = 0, pairs = 0;
  for (int i = 0; i < n; ++i)
    for (int j : nn[static_cast<size_t>(i)]) {
      hits += values[static_cast<size_t>(j)] == values[static_cast<size_t>(i)];
      ++pairs;
    }
  if (pairs == 0) throw std::invalid_argument("attribute_lift: empty neighbor lists");
  std::unordered_map<int, std::int64_t> counts;
  for (int v : values) ++counts[v];
  double base = 0.0;
  for (const auto& [v, g] : counts) {
    (void)v;
    const double p = static_cast<double>(g) / n;
    base += p * p;
  }
  return (static_cast<double>(hits) / static_cast<double>(pairs)) / base;
}

inline double attribute_lift(const NeighborGraph& g, const std::vector<int>& values) {
  return attribute_lift(g.ids, values);
}

enum class FpsSeed {
  kFirst,            // start the greedy selection at point 0
  kFarthestFromMean  // start at the point farthest from the centroid
};

struct FpsResult {
  std::vector<int> centers;     // chosen point indices, in selection order
  std::vector<int> assignment;  // per point: index into `centers` of the nearest one
};

namespace detail {

inline double point_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t t = 0; t < a.size(); ++t) {
    const double diff = a[t] - b[t];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

}  // namespace detail

// Greedy farthest-point clustering: grow the center set by repeatedly adding
// the point farthest from it, then assign every point to its nearest center.
// Ties break toward the smaller index and the earlier-chosen center.
inline FpsResult fps_clusters(const std::vector<std::vector<double>>& points, int k,
                              FpsSeed seed = FpsSeed::kFirst) {
  const int n = static_cast<int>(points.size());
  if (n == 0) throw std::invalid_argument("fps_clusters: no points");
  const size_t dim = points.front().size();
  for (const auto& p : points)
    if (p.size() != dim) throw std::invalid_argument("fps_clusters: ragged points");
  if (k < 1 || k > n) throw std::invalid_argument("fps_clusters: k out of range");

  int start = 0;
  if (seed == FpsSeed::kFarthestFromMean) {
    std::vector<double> mean(dim, 0.0);
    for (const auto& p : points)
      for (size_t t = 0; t < dim; ++t) mean[t] += p[t];
    for (double& m : mean) m /= n;
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
      const double d = detail::point_distance(points[static_cast<size_t>(i)], mean);
      if (d > best) {
        best = d;
        start = i;
      }
    }
  }

  FpsResult out;
  out.centers.push_back(start);
  std::vector<char> chosen(static_cast<size_t>(n), 0);
  chosen[static_cast<size_t>(start)] = 1;
  std::vector<double> best(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    best[static_cast<size_t>(i)] =
        detail::point_distance(points[static_cast<size_t>(i)], points[static_cast<size_t>(start)]);
  out.assignment.assign(static_cast<size_t>(n), 0);
  while (static_cast<int>(out.centers.size()) < k) {
    int far = -1;
    for (int i = 0; i < n; ++i) {
      if (chosen[static_cast<size_t>(i)]) continue;
      if (far < 0 || best[static_cast<size_t>(i)] > best[static_cast<size_t>(far)]) far = i;
    }
    out.centers.push_back(far);
    chosen[static_cast<size_t>(far)] = 1;
    const int c = static_cast<int>(out.centers.size()) - 1;
    for (int i = 0; i < n; ++i) {
      const double d =
          detail::point_distance(points[static_cast<size_t>(i)], points[static_cast<size_t>(far)]);
      if (d < best[static_cast<size_t>(i)]) {
        best[static_cast<size_t>(i)] = d;
        out.assignment[static_cast<size_t>(i)] = c;
      }
    }
  }
  return out;
}

struct Pc1 {
  double lambda = 0.0;          // leading eigenvalue of the sample covariance
  std::vector<double> scores;   // sqrt(lambda) * leading eigenvector
  int iterations = 0;
  bool converged = false;
};

// Leading principal component of a symmetric PSD matrix by power iteration.
// The returned scores are oriented so the largest-magnitude coordinate is
// positive; the starting vector is seeded, so reruns are identical.
inline Pc1 pc1_projection(const Tensor<double>& K, double tol = 1e-9, int max_iters = 10000,
                          std::uint64_t seed = 0) {
  detail::require_square(K, "pc1_projection");
  const int n = K.dim(0);
  Pc1 out;
  out.scores.assign(static_cast<size_t>(n), 0.0);

  Rng rng = make_rng(seed, 0x9c1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(static_cast<size_t>(n)), u(static_cast<size_t>(n));
  double norm = 0.0;
  for (double& x : v) {
    x = gauss(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;

  for (int it = 1; it <= max_iters; ++it) {
    out.iterations = it;
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      const double* row = K.data() + static_cast<std::int64_t>(i) * n;
      for (int j = 0; j < n; ++j) acc += row[j] * v[static_cast<size_t>(j)];
      u[static_cast<size_t>(i)] = acc;
    }
    double rayleigh = 0.0, unorm = 0.0;
    for (int i = 0; i < n; ++i) {
      rayleigh += v[static_cast<size_t>(i)] * u[static_cast<size_t>(i)];
      unorm += u[static_cast<size_t>(i)] * u[static_cast<size_t>(i)];
    }
    unorm = std::sqrt(unorm);
    out.lambda = rayleigh;
    if (unorm == 0.0) {  // K annihilates v: nothing to project onto
      out.lambda = 0.0;
      out.converged = true;
      return out;
    }
    double delta = 0.0;
    for (int i = 0; i < n; ++i) {
      const double next = u[static_cast<size_t>(i)] / unorm;
      delta = std::max(delta, std::abs(next - v[static_cast<size_t>(i)]));
      v[static_cast<size_t>(i)] = next;
    }
    if (delta < tol) {
      out.converged = true;
      break;
    }
  }

  int top = 0;
  for (int i = 1; i < n; ++i)
    if (std::abs(v[static_cast<size_t>(i)]) > std::abs(v[static_cast<size_t>(top)])) top = i;
  const double sign = v[static_cast<size_t>(top)] < 0 ? -1.0 : 1.0;
  const double scale = std::sqrt(std::max(out.lambda, 0.0)) * sign;
  for (int i = 0; i < n; ++i) out.scores[static_cast<size_t>(i)] = scale * v[static_cast<size_t>(i)];
  return out;
}

// PC1 scores straight from recorded losses: each sample's coefficient along
// the top principal direction of the centered draws-by-samples matrix, which
// is the leading eigenvector of the loss covariance.
inline Pc1 pc1_projection(const LossMatrix& L, double tol = 1e-9, int max_iters = 10000,
                          std::uint64_t seed = 0) {
  auto K = estimate_K(L);
  const int n = K.dim(0);
  double max_diag = 0.0;
  for (int i = 0; i < n; ++i)
    max_diag = std::max(max_diag, K[static_cast<std::int64_t>(i) * n + i]);
  if (max_diag <= 0.0)
    throw std::invalid_argument("pc1_projection: losses carry no variance across draws");
  return pc1_projection(K, tol, max_iters, seed);
}

// Area under the ROC curve by average ranks. Tie groups contribute half a
// win per pair, which keeps the result exactly equal to the O(n^2) counting
// definition: everything stays in integers until the final division. With
// `orientation_free`, the better of the two score orientations is reported.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels,
                      bool orientation_free = false) {
  const int n = static_cast<int>(scores.size());
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("roc_auc: score / label length mismatch");
  std::int64_t pos = 0;
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(scores[static_cast<size_t>(i)]))
      throw std::invalid_argument("roc_auc: non-finite score");
    if (labels[static_cast<size_t>(i)] != 0 && labels[static_cast<size_t>(i)] != 1)
      throw std::invalid_argument("roc_auc: labels must be 0 or 1");
    pos += labels[static_cast<size_t>(i)];
  }
  const std::int64_t neg = n - pos;
  if (pos == 0 || neg == 0)
    throw std::invalid_argument("roc_auc: need both classes present");

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<size_t>(a)] < scores[static_cast<size_t>(b)];
  });
  // doubled average rank of each tie group: (lo+1) + (hi+1) with 0-based lo/hi
  std::int64_t pos_rank2 = 0;
  int lo = 0;
  while (lo < n) {
    int hi = lo;
    while (hi + 1 < n && scores[static_cast<size_t>(order[static_cast<size_t>(hi + 1)])] ==
                             scores[static_cast<size_t>(order[static_cast<size_t>(lo)])])
      ++hi;
    const std::int64_t rank2 = static_cast<std::int64_t>(lo) + hi + 2;
    for (int t = lo; t <= hi; ++t)
      if (labels[static_cast<size_t>(order[static_cast<size_t>(t)])] == 1) pos_rank2 += rank2;
    lo = hi + 1;
  }
  const std::int64_t wins2 = pos_rank2 - pos * (pos + 1);
  const double auc = static_cast<double>(wins2) / static_cast<double>(2 * pos * neg);
  return orientation_free ? std::max(auc, 1.0 - auc) : auc;
}

// Centered kernel alignment between two square kernel matrices over the same
// samples: <HAH, HBH>_F / (||HAH||_F ||HBH||_F) with H the centering map.
inline double cka(const Tensor<double>& A, const Tensor<double>& B) {
  detail::require_square(A, "cka");
  detail::require_square(B, "cka");
  if (A.dim(0) != B.dim(0))
    throw std::invalid_argument("cka: matrices cover different sample counts");
  const int n = A.dim(0);
  if (n < 2) throw std::invalid_argument("cka: need at least two samples");

  auto center = [n](const Tensor<double>& M) {
    std::vector<double> rowm(static_cast<size_t>(n), 0.0), colm(static_cast<size_t>(n), 0.0);
    double total = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double v = M[static_cast<std::int64_t>(i) * n + j];
        rowm[static_cast<size_t>(i)] += v;
        colm[static_cast<size_t>(j)] += v;
        total += v;
      }
    for (double& v : rowm) v /= n;
    for (double& v : colm) v /= n;
    total /= static_cast<double>(n) * n;
    std::vector<double> out(static_cast<size_t>(n) * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        out[static_cast<size_t>(i) * n + j] = M[static_cast<std::int64_t>(i) * n + j] -
                                              rowm[static_cast<size_t>(i)] -
                                              colm[static_cast<size_t>(j)] + total;
    return out;
  };

  const auto ca = center(A);
  const auto cb = center(B);
  double aa = 0.0, bb = 0.0, ab = 0.0;
  for (size_t e = 0; e < ca.size(); ++e) {
    aa += ca[e] * ca[e];
    bb += cb[e] * cb[e];
    ab += ca[e] * cb[e];
  }
  if (aa == 0.0) throw std::invalid_argument("cka: first kernel is constant after centering");
  if (bb == 0.0) throw std::invalid_argument("cka: second kernel is constant after centering");
  return ab / std::sqrt(aa * bb);
}

}  // namespace losskern
