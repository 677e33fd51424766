#pragma once

// Plug-in estimators over a loss matrix: the sample-by-sample covariance
// kernel, its correlation normalization, the derived distance, the empirical
// variance, and the learning-coefficient estimate. Covariances accumulate in
// tiled two-pass blocks so the loss matrix is streamed row by row.

#include "losskern/probe.hpp"
#include "losskern/tensor.hpp"

namespace losskern {

// Covariance across rows with the pooled mean and divisor (rows - 1):
//   K[i,j] = (1/(rows-1)) * sum_r (L[r,i] - mu_i)(L[r,j] - mu_j)
inline Tensor<double> estimate_K(const double* L, int rows, int n, int tile = 1024) {
  if (rows < 2) throw std::invalid_argument("estimate_K: need at least 2 rows");
  if (n < 1) throw std::invalid_argument("estimate_K: need at least 1 column");
  if (tile < 1) throw std::invalid_argument("estimate_K: tile must be >= 1");
  std::vector<double> mu(static_cast<size_t>(n), 0.0);
  for (int r = 0; r < rows; ++r) {
    const double* row = L + static_cast<std::int64_t>(r) * n;
    for (int c = 0; c < n; ++c) mu[static_cast<size_t>(c)] += row[c];
  }
  for (double& v : mu) v /= rows;

  Tensor<double> K(Shape{n, n}, 0.0);
  std::vector<double> blk;
  std::vector<double> ci, cj;
  for (int ib = 0; ib < n; ib += tile) {
    const int iw = std::min(tile, n - ib);
    for (int jb = 0; jb <= ib; jb += tile) {
      const int jw = std::min(tile, n - jb);
      blk.assign(static_cast<size_t>(iw) * jw, 0.0);
      ci.resize(static_cast<size_t>(iw));
      cj.resize(static_cast<size_t>(jw));
      for (int r = 0; r < rows; ++r) {
        const double* row = L + static_cast<std::int64_t>(r) * n;
        for (int i = 0; i < iw; ++i) ci[static_cast<size_t>(i)] = row[ib + i] - mu[static_cast<size_t>(ib + i)];
        for (int j = 0; j < jw; ++j) cj[static_cast<size_t>(j)] = row[jb + j] - mu[static_cast<size_t>(jb + j)];
        for (int i = 0; i < iw; ++i) {
          const double v = ci[static_cast<size_t>(i)];
          double* brow = blk.data() + static_cast<std::int64_t>(i) * jw;
          for (int j = 0; j < jw; ++j) brow[j] += v * cj[static_cast<size_t>(j)];
        }
      }
      const double inv = 1.0 / (rows - 1);
      for (int i = 0; i < iw; ++i)
        for (int j = 0; j < jw; ++j) {
          const double v = blk[static_cast<std::int64_t>(i) * jw + j] * inv;
          K[static_cast<std::int64_t>(ib + i) * n + (jb + j)] = v;
          K[static_cast<std::int64_t>(jb + j) * n + (ib + i)] = v;
        }
    }
  }
  return K;
}

inline Tensor<double> estimate_K(const LossMatrix& L, int tile = 1024) {
  return estimate_K(L.values.data(), L.rows(), L.cols(), tile);
}

namespace detail {
inline void require_square(const Tensor<double>& M, const char* who) {
  if (M.rank() != 2 || M.dim(0) != M.dim(1))
    throw std::invalid_argument(std::string(who) + ": expected a square matrix, got " +
                                shape_str(M.shape()));
}
}  // namespace detail

// Correlation matrix R[i,j] = K[i,j] / sqrt(K[i,i] K[j,j]). Samples whose
// loss never fluctuates (variance at or below 1e-15 of the largest diagonal
// entry) get R = 0 against everything, including themselves.
inline Tensor<double> estimate_R(const Tensor<double>& K) {
  detail::require_square(K, "estimate_R");
  const int n = K.dim(0);
  double max_diag = 0.0;
  for (int i = 0; i < n; ++i) max_diag = std::max(max_diag, K[static_cast<std::int64_t>(i) * n + i]);
  const double floor = 1e-15 * max_diag;
  std::vector<double> sd(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    const double v = K[static_cast<std::int64_t>(i) * n + i];
    sd[static_cast<size_t>(i)] = v > floor && v > 0.0 ? std::sqrt(v) : 0.0;
  }
  Tensor<double> R(Shape{n, n}, 0.0);
  for (int i = 0; i < n; ++i) {
    if (sd[static_cast<size_t>(i)] == 0.0) continue;
    R[static_cast<std::int64_t>(i) * n + i] = 1.0;
    for (int j = 0; j < i; ++j) {
      if (sd[static_cast<size_t>(j)] == 0.0) continue;
      const double v = K[static_cast<std::int64_t>(i) * n + j] /
                       (sd[static_cast<size_t>(i)] * sd[static_cast<size_t>(j)]);
      R[static_cast<std::int64_t>(i) * n + j] = v;
      R[static_cast<std::int64_t>(j) * n + i] = v;
    }
  }
  return R;
}

// d = 1 - R clamped to [0, 2], diagonal pinned to 0.
inline Tensor<double> distance_matrix(const Tensor<double>& R) {
  detail::require_square(R, "distance_matrix");
  const int n = R.dim(0);
  Tensor<double> D(Shape{n, n}, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double v = 1.0 - R[static_cast<std::int64_t>(i) * n + j];
      D[static_cast<std::int64_t>(i) * n + j] = std::min(2.0, std::max(0.0, v));
    }
  return D;
}

// V = sum of self-covariances (trace of K), optionally over a subset.
inline double empirical_variance(const Tensor<double>& K) {
  detail::require_square(K, "empirical_variance");
  double v = 0.0;
  for (int i = 0; i < K.dim(0); ++i) v += K[static_cast<std::int64_t>(i) * K.dim(0) + i];
  return v;
}

// Trace restricted to a subset of sample positions.
inline double empirical_variance(const Tensor<double>& K, const std::vector<int>& subset) {
  detail::require_square(K, "empirical_variance");
  const int n = K.dim(0);
  double v = 0.0;
  for (int i : subset) {
    if (i < 0 || i >= n)
      throw std::out_of_range("empirical_variance: sample index " + std::to_string(i) +
                              " outside 0.." + std::to_string(n - 1));
    v += K[static_cast<std::int64_t>(i) * n + i];
  }
  return v;
}

inline double mean_self_covariance(const Tensor<double>& K, const std::vector<int>& indices) {
  detail::require_square(K, "mean_self_covariance");
  if (indices.empty()) throw std::invalid_argument("mean_self_covariance: empty subset");
  const int n = K.dim(0);
  double v = 0.0;
  for (int i : indices) {
    if (i < 0 || i >= n) throw std::out_of_range("mean_self_covariance: index out of range");
    v += K[static_cast<std::int64_t>(i) * n + i];
  }
  return v / static_cast<double>(indices.size());
}

// Learning-coefficient estimate over the samples covered by the matrix
// (report n_samples when that is a subsample of the training set):
//   lambda_hat = nbeta * ( E_draws[ sum_i l(z_i; w) ] - sum_i l(z_i; w*) )
struct LlcEstimate {
  double lambda_hat = 0.0;
  double mean_energy = 0.0;    // E over draws of the summed loss
  double anchor_energy = 0.0;  // summed loss at w*
  int n_samples = 0;
  bool negative = false;       // sampling noise can push the estimate below 0
};

inline LlcEstimate llc_estimate(const LossMatrix& L, double loss_at_anchor, double nbeta) {
  if (L.rows() < 1 || L.cols() < 1) throw std::invalid_argument("llc_estimate: empty loss matrix");
  if (!(nbeta > 0)) throw std::invalid_argument("llc_estimate: nbeta must be positive");
  LlcEstimate out;
  out.n_samples = L.cols();
  out.anchor_energy = loss_at_anchor;
  double acc = 0.0;
  for (int r = 0; r < L.rows(); ++r) {
    double row = 0.0;
    for (int c = 0; c < L.cols(); ++c) row += L.at(r, c);
    acc += row;
  }
  out.mean_energy = acc / L.rows();
  out.lambda_hat = nbeta * (out.mean_energy - out.anchor_energy);
  out.negative = out.lambda_hat < 0.0;
  return out;
}

inline LlcEstimate llc_estimate(const LossMatrix& L, double nbeta) {
  if (L.anchor.size() != static_cast<size_t>(L.cols()))
    throw std::invalid_argument("llc_estimate: loss matrix carries no anchor losses");
  double anchor = 0.0;
  for (double v : L.anchor) anchor += v;
  return llc_estimate(L, anchor, nbeta);
}

// Monte-Carlo standard error of each covariance entry: one independent K per
// chain (chain-local mean, divisor draws-1), entrywise sd across chains over
// sqrt(chains). Autocorrelation within a chain is handled by treating chains
// as the independent replicates.
inline Tensor<double> kernel_mc_se(const LossMatrix& L) {
  if (L.chains < 2) throw std::invalid_argument("kernel_mc_se: need at least 2 chains");
  if (L.draws < 2) throw std::invalid_argument("kernel_mc_se: need at least 2 draws per chain");
  const int n = L.cols();
  std::vector<Tensor<double>> per_chain;
  for (int c = 0; c < L.chains; ++c)
    per_chain.push_back(estimate_K(L.values.data() + static_cast<std::int64_t>(c) * L.draws * n,
                                   L.draws, n));
  Tensor<double> se(Shape{n, n}, 0.0);
  for (std::int64_t e = 0; e < se.size(); ++e) {
    double mean = 0.0;
    for (const auto& K : per_chain) mean += K[e];
    mean /= L.chains;
    double var = 0.0;
    for (const auto& K : per_chain) {
      const double d = K[e] - mean;
      var += d * d;
    }
    var /= (L.chains - 1);
    se[e] = std::sqrt(var / L.chains);
  }
  return se;
}

}  // namespace losskern
