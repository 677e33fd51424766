#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "losskern/kernel.hpp"
#include "oracles.hpp"

using namespace losskern;

namespace {

LossMatrix make_matrix(const std::vector<double>& values, int chains, int draws, int n) {
  LossMatrix L;
  L.chains = chains;
  L.draws = draws;
  for (int i = 0; i < n; ++i) L.sample_ids.push_back(i);
  L.values = values;
  return L;
}

std::vector<double> random_matrix(int rows, int n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> out(static_cast<size_t>(rows) * n);
  for (double& v : out) v = u(rng);
  return out;
}

}  // namespace

TEST_CASE("covariance of the three-draw example is exactly 2") {
  // draws of two samples: (1,2), (2,4), (3,6)
  auto L = make_matrix({1, 2, 2, 4, 3, 6}, 1, 3, 2);
  auto K = estimate_K(L);
  CHECK(K[0 * 2 + 1] == 2.0);
  CHECK(K[1 * 2 + 0] == 2.0);
  CHECK(K[0 * 2 + 0] == 1.0);
  CHECK(K[1 * 2 + 1] == 4.0);
  auto R = estimate_R(K);
  CHECK(R[0 * 2 + 1] == 1.0);
  CHECK(R[0 * 2 + 0] == 1.0);
  auto D = distance_matrix(R);
  CHECK(D[0 * 2 + 1] == 0.0);
  CHECK(D[0 * 2 + 0] == 0.0);
  CHECK(empirical_variance(K) == 5.0);
}

TEST_CASE("tiled covariance equals the naive definition") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int rows = 20, n = 100;
    auto vals = random_matrix(rows, n, rng);
    auto want = oracles::naive_covariance(vals, rows, n);
    for (int tile : {7, 32, 1024}) {
      auto K = estimate_K(vals.data(), rows, n, tile);
      double max_rel = 0.0;
      for (size_t e = 0; e < want.size(); ++e) {
        const double denom = std::max(1e-30, std::abs(want[e]));
        max_rel = std::max(max_rel, std::abs(K[static_cast<std::int64_t>(e)] - want[e]) / denom);
      }
      INFO("tile " << tile);
      CHECK(max_rel < 1e-10);
    }
  }
}

TEST_CASE("covariance is bitwise symmetric and PSD") {
  std::mt19937_64 rng(5);
  const int rows = 15, n = 50;
  auto vals = random_matrix(rows, n, rng, 3.0);
  auto K = estimate_K(vals.data(), rows, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      CHECK(K[static_cast<std::int64_t>(i) * n + j] == K[static_cast<std::int64_t>(j) * n + i]);
  std::vector<double> kcopy(K.data(), K.data() + K.size());
  auto eig = oracles::jacobi_eigenvalues(kcopy, n);
  CHECK(eig.front() >= -1e-8 * std::max(1.0, eig.back()));
}

TEST_CASE("correlation properties on random matrices") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const int rows = 8 + trial, n = 20;
    auto vals = random_matrix(rows, n, rng, 2.0);
    auto K = estimate_K(vals.data(), rows, n);
    auto R = estimate_R(K);
    for (int i = 0; i < n; ++i) {
      CHECK(R[static_cast<std::int64_t>(i) * n + i] == 1.0);
      for (int j = 0; j < n; ++j) {
        CHECK(R[static_cast<std::int64_t>(i) * n + j] >= -1.0 - 1e-9);
        CHECK(R[static_cast<std::int64_t>(i) * n + j] <= 1.0 + 1e-9);
      }
    }
    auto D = distance_matrix(R);
    for (int i = 0; i < n; ++i) {
      CHECK(D[static_cast<std::int64_t>(i) * n + i] == 0.0);
      for (int j = 0; j < n; ++j) {
        CHECK(D[static_cast<std::int64_t>(i) * n + j] >= 0.0);
        CHECK(D[static_cast<std::int64_t>(i) * n + j] <= 2.0);
      }
    }
  }
}

TEST_CASE("correlation and distance are invariant to global affine loss maps") {
  std::mt19937_64 rng(23);
  const int rows = 12, n = 30;
  auto vals = random_matrix(rows, n, rng);
  auto R0 = estimate_R(estimate_K(vals.data(), rows, n));
  auto D0 = distance_matrix(R0);
  const double alpha = 3.7, shift = -2.25;
  auto mapped = vals;
  for (double& v : mapped) v = alpha * v + shift;
  auto K1 = estimate_K(mapped.data(), rows, n);
  auto R1 = estimate_R(K1);
  auto D1 = distance_matrix(R1);
  double max_dr = 0.0, max_dd = 0.0;
  for (std::int64_t e = 0; e < R0.size(); ++e) {
    max_dr = std::max(max_dr, std::abs(R0[e] - R1[e]));
    max_dd = std::max(max_dd, std::abs(D0[e] - D1[e]));
  }
  CHECK(max_dr < 1e-12);
  CHECK(max_dd < 1e-12);
  // covariance itself scales by alpha^2
  auto K0 = estimate_K(vals.data(), rows, n);
  CHECK(K1[3] == Catch::Approx(alpha * alpha * K0[3]).epsilon(1e-10));
}

TEST_CASE("zero-variance samples correlate with nothing") {
  // second column is constant
  auto L = make_matrix({1, 5, 0, 2, 5, 1, 3, 5, 2}, 1, 3, 3);
  auto K = estimate_K(L);
  CHECK(K[1 * 3 + 1] == 0.0);
  auto R = estimate_R(K);
  for (int j = 0; j < 3; ++j) {
    CHECK(R[1 * 3 + j] == 0.0);
    CHECK(R[j * 3 + 1] == 0.0);
  }
  CHECK(R[0 * 3 + 2] == 1.0);  // the two varying columns move together
  auto D = distance_matrix(R);
  CHECK(D[1 * 3 + 1] == 0.0);   // diagonal still pinned
  CHECK(D[0 * 3 + 1] == 1.0);   // zero correlation -> unit distance
}

TEST_CASE("estimator argument validation") {
  std::vector<double> one_row{1.0, 2.0};
  CHECK_THROWS_AS(estimate_K(one_row.data(), 1, 2), std::invalid_argument);
  Tensor<double> not_square(Shape{2, 3}, 0.0);
  CHECK_THROWS_AS(estimate_R(not_square), std::invalid_argument);
  CHECK_THROWS_AS(distance_matrix(not_square), std::invalid_argument);
  CHECK_THROWS_AS(empirical_variance(not_square), std::invalid_argument);
}

TEST_CASE("llc estimate from stored anchor losses") {
  auto L = make_matrix({1, 2, 2, 3}, 1, 2, 2);
  L.anchor = {0.5, 1.0};
  auto est = llc_estimate(L, 4.0);
  // row sums 3 and 5, mean energy 4; anchor energy 1.5
  CHECK(est.mean_energy == 4.0);
  CHECK(est.anchor_energy == 1.5);
  CHECK(est.lambda_hat == Catch::Approx(4.0 * 2.5).epsilon(1e-12));
  CHECK_FALSE(est.negative);
  CHECK(est.n_samples == 2);
  // explicit anchor overload and the negative flag
  auto est2 = llc_estimate(L, 10.0, 4.0);
  CHECK(est2.lambda_hat == Catch::Approx(4.0 * -6.0).epsilon(1e-12));
  CHECK(est2.negative);
}

TEST_CASE("mean self covariance over subsets") {
  auto L = make_matrix({1, 2, 2, 4, 3, 6}, 1, 3, 2);
  auto K = estimate_K(L);
  CHECK(mean_self_covariance(K, {0}) == 1.0);
  CHECK(mean_self_covariance(K, {0, 1}) == 2.5);
  CHECK_THROWS_AS(mean_self_covariance(K, {}), std::invalid_argument);
  CHECK_THROWS_AS(mean_self_covariance(K, {5}), std::out_of_range);
  CHECK(empirical_variance(K, {0}) == 1.0);
  CHECK(empirical_variance(K, {0, 1}) == 5.0);
  CHECK(empirical_variance(K, {}) == 0.0);
  CHECK_THROWS_AS(empirical_variance(K, {2}), std::out_of_range);
}

TEST_CASE("permuting samples permutes the kernel consistently") {
  std::mt19937_64 rng(41);
  const int rows = 10, n = 6;
  auto vals = random_matrix(rows, n, rng);
  const std::vector<int> perm{3, 0, 5, 1, 4, 2};
  std::vector<double> shuffled(vals.size());
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < n; ++j)
      shuffled[static_cast<size_t>(r) * n + j] =
          vals[static_cast<size_t>(r) * n + perm[static_cast<size_t>(j)]];
  auto K = estimate_K(vals.data(), rows, n);
  auto Kp = estimate_K(shuffled.data(), rows, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      CHECK(Kp[static_cast<std::int64_t>(i) * n + j] ==
            K[static_cast<std::int64_t>(perm[static_cast<size_t>(i)]) * n +
              perm[static_cast<size_t>(j)]]);
}

TEST_CASE("per-chain standard errors shrink as chains agree") {
  // two chains with identical draws -> zero spread
  auto L = make_matrix({1, 2, 2, 4, 1, 2, 2, 4}, 2, 2, 2);
  auto se = kernel_mc_se(L);
  for (std::int64_t e = 0; e < se.size(); ++e) CHECK(se[e] == 0.0);
  // hand case with disagreeing chains
  // chain 0 draws: (0,0),(2,2) -> K0 = [[2,2],[2,2]]
  // chain 1 draws: (0,0),(4,0) -> K1 = [[8,0],[0,0]]
  auto L2 = make_matrix({0, 0, 2, 2, 0, 0, 4, 0}, 2, 2, 2);
  auto se2 = kernel_mc_se(L2);
  // entry (0,0): mean 5, deviations +-3, sd sqrt(18), se 3
  CHECK(se2[0] == Catch::Approx(3.0).epsilon(1e-12));
  // entry (0,1): values 2 and 0 -> sd sqrt(2), se 1
  CHECK(se2[1] == Catch::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(kernel_mc_se(make_matrix({1, 2}, 1, 1, 2)), std::invalid_argument);
}
