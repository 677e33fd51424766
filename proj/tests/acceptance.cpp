// Acceptance gate: ten end-to-end checks over the full pipeline, from raw
// training runs through probes, kernels, and analysis artifacts. Each check
// prints exactly one PASS/FAIL line; the exit code is the number of failures.
//
// Expensive model training is cached under acceptance_work/ keyed by config
// hash, so reruns skip straight to the probes. Delete the directory to force
// a cold run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "losskern/analysis.hpp"
#include "losskern/config.hpp"
#include "losskern/data.hpp"
#include "losskern/graph.hpp"
#include "losskern/io.hpp"
#include "losskern/kernel.hpp"
#include "losskern/models.hpp"
#include "losskern/pipeline.hpp"
#include "losskern/probe.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace losskern;

namespace {

struct Fail {
  std::string detail;
};

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

void expect(bool ok, const std::string& detail) {
  if (!ok) throw Fail{detail};
}

fs::path work_root() {
  return fs::current_path() / "acceptance_work";
}

ExperimentConfig make_config(nlohmann::json j, const std::string& subdir) {
  j["output_dir"] = (work_root() / subdir).string();
  return parse_config(j);
}

// Training cache: reuse a finished run when the manifest was produced by the
// exact same config and the target was reached.
bool cached_run_valid(const ExperimentConfig& cfg) {
  const fs::path manifest = fs::path(cfg.output_dir) / "train_manifest.json";
  const fs::path ckpt = fs::path(cfg.output_dir) / "checkpoint_final.ckpt";
  if (!fs::exists(manifest) || !fs::exists(ckpt)) return false;
  try {
    std::ifstream in(manifest);
    nlohmann::json m = nlohmann::json::parse(in);
    return m.at("config_hash").get<std::uint64_t>() == cfg.config_hash &&
           m.at("reached").get<bool>();
  } catch (const std::exception&) {
    return false;
  }
}

std::string train_to_target(const ExperimentConfig& cfg) {
  if (!cached_run_valid(cfg)) {
    fs::remove_all(cfg.output_dir);
    std::ostringstream sink;
    TrainOutcome out = cmd_train(cfg, sink);
    expect(out.reached, fmt("training missed its target: %d steps, loss %.4g, accuracy %.4f",
                            out.steps, out.final_loss, out.final_accuracy));
  }
  return cfg.output_dir + "/checkpoint_final.ckpt";
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double iqr(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double idx = p * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(idx);
    const double frac = idx - static_cast<double>(lo);
    return lo + 1 < v.size() ? v[lo] * (1.0 - frac) + v[lo + 1] * frac : v[lo];
  };
  return q(0.75) - q(0.25);
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. probe covariance against the Gaussian closed form

std::string c1_gaussian_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::pair<double, double>> coeffs{
      {1.0, 0.3}, {0.5, -0.2}, {2.0, 0.5}, {1.5, 0.1}, {0.8, -0.4}};
  auto [model, samples] = build_quadratic_t<double>(coeffs);
  const double w_star_v = quadratic_minimizer(coeffs);
  const std::vector<double> w_star{w_star_v};

  ProbeConfig pc;
  pc.nbeta = 10.0;
  pc.gamma = 5.0;
  pc.minibatch = 5;  // full batch: the drift has no subsampling noise
  pc.chains = 8;
  pc.draws = 2000;
  pc.stride = 20;
  pc.burnin = 800;
  pc.seed = 2024;
  const auto post = oracles::quad_posterior(coeffs, pc.nbeta, pc.gamma, w_star_v);
  pc.eps = 0.02 / post.precision;  // eps*P = 0.02: discretization bias ~0.5%

  LossMatrix L = run_probe(model, std::span<const double>(w_star), samples, samples, pc);
  const Tensor<double> K = estimate_K(L);
  const Tensor<double> se = kernel_mc_se(L);
  const std::vector<double> want = oracles::quad_loss_covariance(coeffs, post);

  const int n = static_cast<int>(coeffs.size());
  double max_z = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const std::int64_t e = static_cast<std::int64_t>(i) * n + j;
      expect(se[e] > 0.0, "Monte-Carlo standard error vanished");
      max_z = std::max(max_z, std::abs(K[e] - want[e]) / se[e]);
    }
  const double secs = elapsed(t0);
  expect(max_z < 3.0, fmt("K off closed form by %.2f standard errors (limit 3)", max_z));
  expect(secs < 60.0, fmt("took %.1fs (limit 60s)", secs));
  return fmt("max |K - cov| %.2f se (limit 3), C=%d T=%d, %.1fs", max_z, pc.chains, pc.draws, secs);
}

// ---------------------------------------------------------------------------
// 2. exact decoupling of disjoint parameter blocks

std::string c2_tower_decoupling() {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = make_config(
      {{"name", "towers-decoupling"},
       {"seed", 3},
       {"model", {{"kind", "disjoint_towers"}, {"features", 2}}},
       {"data", {{"n_per_task", 24}, {"input_std", {0.3, 0.1}}, {"noise", 0.02}}},
       {"train",
        {{"lr", 0.02}, {"batch", 16}, {"max_steps", 4000}, {"target_loss", 0.0008},
         {"log_every", 400}}},
       {"probe",
        {{"eps", 0.002}, {"nbeta", 12.0}, {"gamma", 50.0}, {"minibatch", 16}, {"chains", 6},
         {"draws", 400}, {"burnin", 100}, {"stride", 20}, {"seed", 5}}}},
      "towers");
  train_to_target(cfg);

  Experiment e = build_experiment(cfg);
  Checkpoint ck = load_checkpoint(cfg.output_dir + "/checkpoint_final.ckpt");
  std::vector<float> params = params_from_checkpoint<float>(ck, e.model);
  LossMatrix L = run_probe(e.model, std::span<const float>(params), e.samples, e.samples,
                           cfg.probe);
  const Tensor<double> R = estimate_R(estimate_K(L));

  const int n = R.dim(0);
  std::vector<double> cross_abs, within_abs;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double r = std::abs(R[static_cast<std::int64_t>(i) * n + j]);
      (e.samples[static_cast<size_t>(i)].task == e.samples[static_cast<size_t>(j)].task
           ? within_abs
           : cross_abs)
          .push_back(r);
    }
  const double mc = median(cross_abs);
  const double mw = median(within_abs);
  const double secs = elapsed(t0);
  expect(mc < 0.1, fmt("median cross-block |R| %.4f (limit < 0.1)", mc));
  expect(mw > 0.5, fmt("median within-block |R| %.4f (limit > 0.5)", mw));
  expect(secs < 600.0, fmt("took %.1fs (limit 600s)", secs));
  return fmt("median |R| cross %.3f (<0.1), within %.3f (>0.5), %.1fs", mc, mw, secs);
}

// ---------------------------------------------------------------------------
// 3. task separation on two-task modular arithmetic (p=23)

nlohmann::json modular_config_json() {
  return {
      {"name", "modular-23"},
      {"seed", 1},
      {"model",
       {{"kind", "multitask_transformer"}, {"p", 23}, {"width", 64}, {"heads", 4},
        {"layers", 2}, {"mlp_ratio", 4}}},
      {"data", {{"n_per_task", 320}, {"seed", 2}}},
      {"train",
       {{"lr", 0.001}, {"batch", 64}, {"max_steps", 16000}, {"weight_decay", 1.0},
        {"weight_decay_steps", 12000}, {"target_accuracy", 1.0}, {"target_loss", 0.002},
        {"log_every", 400}, {"eval_chunk", 160}}},
      {"probe",
       {{"eps", 3e-7}, {"nbeta", 100.0}, {"gamma", 1e6}, {"minibatch", 32}, {"chains", 4},
        {"draws", 1000}, {"burnin", 300}, {"stride", 2}, {"seed", 5}, {"subset", 120},
        {"subset_seed", 17}}}};
}

std::string c3_task_separation() {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = make_config(modular_config_json(), "modular23");
  train_to_target(cfg);

  Experiment e = build_experiment(cfg);
  Checkpoint ck = load_checkpoint(cfg.output_dir + "/checkpoint_final.ckpt");
  std::vector<float> params = params_from_checkpoint<float>(ck, e.model);
  std::vector<Sample> probe_samples =
      balanced_subset(e.samples, cfg.probe_subset, cfg.probe_subset_seed);
  LossMatrix L = run_probe(e.model, std::span<const float>(params), e.samples, probe_samples,
                           cfg.probe);

  const Tensor<double> K = estimate_K(L);
  const int n = K.dim(0);
  std::vector<double> cross, within;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double v = K[static_cast<std::int64_t>(i) * n + j];
      (probe_samples[static_cast<size_t>(i)].task == probe_samples[static_cast<size_t>(j)].task
           ? within
           : cross)
          .push_back(v);
    }
  const Pc1 p = pc1_projection(L);
  std::vector<double> scores;
  std::vector<int> is_division;
  for (int i = 0; i < n; ++i) {
    scores.push_back(p.scores[static_cast<size_t>(i)]);
    is_division.push_back(probe_samples[static_cast<size_t>(i)].task == 1 ? 1 : 0);
  }
  const double auc = roc_auc(scores, is_division, true);
  const double ratio = iqr(within) / iqr(cross);
  const double secs = elapsed(t0);
  expect(auc >= 0.80, fmt("PC1 task ROC-AUC %.4f (limit >= 0.80)", auc));
  expect(ratio >= 5.0, fmt("within/cross covariance IQR ratio %.2f (limit >= 5)", ratio));
  return fmt("pc1 auc %.3f (>=0.80), iqr ratio %.1f (>=5), %.0fs", auc, ratio, secs);
}

// ---------------------------------------------------------------------------
// 4. kernel algebra invariants on random loss matrices

std::string c4_kernel_algebra() {
  std::mt19937_64 rng(9203);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  double worst_sym = 0.0, worst_eig = 0.0, worst_bound = 0.0, worst_affine = 0.0;
  for (int t = 0; t < 200; ++t) {
    LossMatrix L;
    L.chains = 1 + static_cast<int>(rng() % 4);
    L.draws = 3 + static_cast<int>(rng() % 38);
    const int n = 2 + static_cast<int>(rng() % 11);
    for (int i = 0; i < n; ++i) L.sample_ids.push_back(i);
    const int rows = L.rows();
    L.values.resize(static_cast<size_t>(rows) * n);
    L.anchor.assign(static_cast<size_t>(n), 0.0);

    const int flavor = t % 4;
    const double scale = std::exp(3.0 * gauss(rng));
    for (double& v : L.values) {
      if (flavor == 1) v = scale * std::exp(gauss(rng));            // heavy-tailed
      else if (flavor == 2) v = scale * std::round(3.0 * uni(rng)); // discrete, tied
      else v = scale * gauss(rng);
    }
    if (flavor == 3)  // one exactly constant column: zero variance convention
      for (int r = 0; r < rows; ++r) L.values[static_cast<size_t>(r) * n] = scale;

    const Tensor<double> K = estimate_K(L);
    double kmax = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        kmax = std::max(kmax, std::abs(K[static_cast<std::int64_t>(i) * n + j]));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double d = std::abs(K[static_cast<std::int64_t>(i) * n + j] -
                                  K[static_cast<std::int64_t>(j) * n + i]);
        worst_sym = std::max(worst_sym, kmax > 0 ? d / kmax : d);
      }

    std::vector<double> flat(K.data(), K.data() + static_cast<std::int64_t>(n) * n);
    const std::vector<double> eig = oracles::jacobi_eigenvalues(flat, n);
    const double max_eig = std::max(0.0, eig.back());
    if (eig.front() < 0.0)
      worst_eig = std::max(worst_eig, max_eig > 0 ? -eig.front() / max_eig : -eig.front());

    const Tensor<double> R = estimate_R(K);
    for (int i = 0; i < n; ++i) {
      const double kd = K[static_cast<std::int64_t>(i) * n + i];
      if (kd > 0.0 && kd > 1e-15 * kmax)
        expect(R[static_cast<std::int64_t>(i) * n + i] == 1.0,
               "R diagonal not exactly 1 at positive variance");
      for (int j = 0; j < n; ++j) {
        const double r = R[static_cast<std::int64_t>(i) * n + j];
        worst_bound = std::max(worst_bound, std::abs(r) - 1.0);
      }
    }

    const Tensor<double> D = distance_matrix(R);
    for (int i = 0; i < n; ++i)
      expect(D[static_cast<std::int64_t>(i) * n + i] == 0.0, "distance diagonal not exactly 0");

    // global affine reparametrization of the recorded losses leaves R fixed
    const double a = 0.25 + 3.75 * uni(rng);
    const double b = -3.0 + 6.0 * uni(rng);
    LossMatrix La = L;
    for (double& v : La.values) v = a * v + b;
    for (size_t i = 0; i < La.anchor.size(); ++i) La.anchor[i] = a * L.anchor[i] + b;
    const Tensor<double> Ra = estimate_R(estimate_K(La));
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n) * n; ++i)
      worst_affine = std::max(worst_affine, std::abs(Ra[i] - R[i]));
  }
  expect(worst_sym <= 1e-12, fmt("K symmetry violated: %.2e relative", worst_sym));
  expect(worst_eig <= 1e-8, fmt("K not PSD: min eig %.2e of max", -worst_eig));
  expect(worst_bound <= 1e-9, fmt("|R| exceeds 1 by %.2e", worst_bound));
  expect(worst_affine <= 1e-12, fmt("R moved %.2e under affine loss map", worst_affine));
  return fmt("200 matrices: sym %.1e, min eig %.1e, |R|-1 %.1e, affine drift %.1e", worst_sym,
             -worst_eig, worst_bound, worst_affine);
}

// ---------------------------------------------------------------------------
// 5. autodiff against central differences, per op and per model

std::string c5_gradients() {
  double worst = 0.0;
  int probes = 0;
  auto fd = [&](unsigned seed, auto&& build) {
    std::mt19937_64 rng(seed);
    Graph<double> g;
    NodeId out = build(g, rng);
    g.forward();
    auto weights = g.constant(tutil::rand_tensor<double>(g.value(out).shape(), rng));
    NodeId root = g.reduce_sum(g.mul(out, weights));
    const std::int64_t d = g.param_count();
    auto coords = tutil::rand_coords(std::min<std::int64_t>(d, 10), d, rng);
    const auto report = check_gradient(g, root, coords, 1e-6);
    worst = std::max(worst, report.max_rel_err);
    probes += static_cast<int>(coords.size());
  };

  for (unsigned s = 0; s < 10; ++s) {
    fd(10 + s, [](Graph<double>& g, std::mt19937_64& rng) {
      auto a = g.param("a", {3, 4});
      auto b = g.param("b", {4});
      g.param_value(a) = tutil::rand_tensor<double>({3, 4}, rng);
      g.param_value(b) = tutil::rand_tensor<double>({4}, rng);
      return g.add(a, b);
    });
    fd(110 + s, [](Graph<double>& g, std::mt19937_64& rng) {
      auto a = g.param("a", {3, 4});
      auto b = g.param("b", {4});
      g.param_value(a) = tutil::rand_tensor<double>({3, 4}, rng);
      g.param_value(b) = tutil::rand_tensor<double>({4}, rng);
      return g.mul(a, b);
    });
    fd(210 + s, [](Graph<double>& g, std::mt19937_64& rng) {
      auto a = g.param("a", {4, 3});
      auto b = g.param("b", {3, 5});
      g.param_value(a) = tutil::rand_tensor<double>({4, 3}, rng);
      g.param_value(b) = tutil::rand_tensor<double>({3, 5}, rng);
      return g.matmul(a, b);
    });
    fd(310 + s, [](Graph<double>& g, std::mt19937_64& rng) {
      auto a = g.param("a", {2, 4, 3});
      auto b = g.param("b", {2, 3, 2});
      g.param_value(a) = tutil::rand_tensor<double>({2, 4, 3}, rng);
      g.param_value(b) = tutil::rand_tensor<double>({2, 3, 2}, rng);
      return g.matmul(a, b);
    });
    fd(410 + s, [](Graph<double>& g, std::mt19937_64& rng) {
      auto a = g.param("a", {2, 3, 4});
      g.param_value(a) = tutil::rand_tensor<double>({2, 3, 4}, rng);
      return g.transpose(a, {1, 0, 2});
    });
    fd(510 + s, [](Graph<double>& g, std::mt19937_64& rng) {
      auto a = g.param("a", {3, 4});
      g.param_value(a) = tutil::rand_tensor<double>({3, 4}, rng);
      return g.reshape(a, {2, 6});
    });
    fd(610 + s, [](Graph<double>& g, std::mt19937_64& rng) {
      auto a = g.param("a", {3, 4, 2});
      g.param_value(a) = tutil::rand_tensor<double>({3, 4, 2}, rng);
      return g.select(a, 1, 2);
    });
    fd(710 + s, [](Graph<double>& g, std::mt19937_64& rng) {
      auto table = g.param("table", {5, 3});
      g.param_value(table) = tutil::rand_tensor<double>({5, 3}, rng);
      auto idx = g.int_input("idx", 1);
      IntTensor it(Shape{2, 4});
      std::uniform_int_distribution<std::int32_t> d(0, 4);
      for (int i = 0; i < 8; ++i) it[i] = d(rng);
      g.bind_ints("idx", it);
      return g.embedding(table, idx);
    });
    fd(810 + s, [](Graph<double>& g, std::mt19937_64& rng) {
      auto a = g.param("a", {3, 5});
      g.param_value(a) = tutil::rand_tensor<double>({3, 5}, rng, -2.0, 2.0);
      return g.softmax(a);
    });
    fd(910 + s, [](Graph<double>& g, std::mt19937_64& rng) {
      auto a = g.param("a", {3, 5});
      auto gain = g.param("gain", {5});
      auto bias = g.param("bias", {5});
      g.param_value(a) = tutil::rand_tensor<double>({3, 5}, rng);
      g.param_value(gain) = tutil::rand_tensor<double>({5}, rng, 0.5, 1.5);
      g.param_value(bias) = tutil::rand_tensor<double>({5}, rng);
      return g.layer_norm(a, gain, bias);
    });
    fd(1010 + s, [](Graph<double>& g, std::mt19937_64& rng) {
      auto a = g.param("a", {4, 4});
      g.param_value(a) = tutil::rand_tensor_nonzero<double>({4, 4}, rng, 0.15);
      return g.relu(a);
    });
    fd(1110 + s, [](Graph<double>& g, std::mt19937_64& rng) {
      auto a = g.param("a", {4, 4});
      g.param_value(a) = tutil::rand_tensor<double>({4, 4}, rng, -3.0, 3.0);
      return g.gelu(a);
    });
    fd(1210 + s, [](Graph<double>& g, std::mt19937_64& rng) {
      auto a = g.param("a", {3, 4});
      g.param_value(a) = tutil::rand_tensor<double>({3, 4}, rng);
      return g.reduce_sum(a);
    });
    fd(1310 + s, [](Graph<double>& g, std::mt19937_64& rng) {
      auto a = g.param("a", {3, 4});
      g.param_value(a) = tutil::rand_tensor<double>({3, 4}, rng);
      return g.reduce_mean(a);
    });
    fd(1410 + s, [](Graph<double>& g, std::mt19937_64& rng) {
      auto logits = g.param("logits", {4, 6});
      g.param_value(logits) = tutil::rand_tensor<double>({4, 6}, rng, -2.0, 2.0);
      auto labels = g.int_input("labels");
      IntTensor lt(Shape{4});
      std::uniform_int_distribution<std::int32_t> d(0, 5);
      for (int i = 0; i < 4; ++i) lt[i] = d(rng);
      g.bind_ints("labels", lt);
      return g.cross_entropy(logits, labels);
    });
  }
  const int op_probes = probes;

  // whole models: loss_sum root, minibatch bound from each generator
  auto model_fd = [&](ModelT<double>& m, std::span<const Sample> batch, std::mt19937_64& rng,
                      int count) {
    m.bind_batch(m.graph, batch);
    auto coords = tutil::rand_coords(count, m.param_count(), rng);
    const auto report = check_gradient(m.graph, m.loss_sum, coords, 1e-6);
    worst = std::max(worst, report.max_rel_err);
    probes += static_cast<int>(coords.size());
  };

  {
    std::mt19937_64 rng(71);
    const std::vector<std::pair<double, double>> coeffs{{1.2, 0.4}, {0.7, -0.3}, {2.1, 0.2}};
    auto [m, samples] = build_quadratic_t<double>(coeffs);
    std::uniform_real_distribution<double> w(-1.0, 1.0);
    for (int round = 0; round < 100; ++round) {
      m.graph.write_param(0, w(rng));
      model_fd(m, samples, rng, 1);
    }
  }
  {
    std::mt19937_64 rng(72);
    std::vector<Sample> samples = gen_tower_regression(TowerDataSpec{}, 6, 40);
    for (int round = 0; round < 10; ++round) {
      ModelT<double> m = build_disjoint_towers_t<double>(TowersConfig{2, 0.4}, 500 + round);
      model_fd(m, std::span<const Sample>(samples.data(), 6), rng, 10);
    }
  }
  {
    std::mt19937_64 rng(73);
    std::vector<Sample> samples = gen_modular_dataset(7, 12, 41);
    for (int round = 0; round < 10; ++round) {
      ModelT<double> m =
          build_multitask_transformer_t<double>(7, TransformerDims{16, 2, 2, 2}, 600 + round);
      model_fd(m, std::span<const Sample>(samples.data(), 4), rng, 10);
    }
  }
  {
    std::mt19937_64 rng(74);
    HierDataset ds = gen_hier_dataset(HierTreeSpec{2, 2, 6, 1.0}, 3, 0.25, 42);
    for (int round = 0; round < 10; ++round) {
      ModelT<double> m =
          build_hier_mlp_t<double>(6, ds.hierarchy.leaf_count(), MlpDims{8, 8}, 700 + round);
      model_fd(m, std::span<const Sample>(ds.samples.data(), 6), rng, 10);
    }
  }

  expect(worst < 1e-4, fmt("max relative gradient error %.3e (limit 1e-4)", worst));
  return fmt("%d op probes + %d model probes, max rel err %.1e", op_probes, probes - op_probes,
             worst);
}

// ---------------------------------------------------------------------------
// 6. estimator arithmetic: exact covariance and exact AUC

std::string c6_estimator_exactness() {
  LossMatrix L;
  L.chains = 1;
  L.draws = 3;
  L.sample_ids = {0, 1};
  L.values = {1.0, 2.0, 2.0, 4.0, 3.0, 6.0};  // draws (1,2), (2,4), (3,6)
  L.anchor = {0.0, 0.0};
  const Tensor<double> K = estimate_K(L);
  expect(K[0] == 1.0 && K[3] == 4.0, "self-covariances of [1,2,3] and [2,4,6] not exact");
  expect(K[1] == 2.0 && K[2] == 2.0, "covariance of [1,2,3] with [2,4,6] is not exactly 2");

  std::mt19937_64 rng(606);
  std::uniform_int_distribution<int> nd(2, 50);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = nd(rng);
    std::vector<double> scores(static_cast<size_t>(n));
    std::vector<int> labels(static_cast<size_t>(n));
    const bool tied = trial % 2 == 0;
    for (int i = 0; i < n; ++i) {
      scores[static_cast<size_t>(i)] = tied ? std::floor(5.0 * u(rng)) : u(rng);
      labels[static_cast<size_t>(i)] = u(rng) < 0.4 ? 1 : 0;
    }
    labels[0] = 1;
    labels[static_cast<size_t>(n - 1)] = 0;
    const double got = roc_auc(scores, labels, false);
    const double want = oracles::brute_force_auc(scores, labels);
    expect(got == want, fmt("AUC mismatch at trial %d: %.17g vs %.17g", trial, got, want));
  }
  return "3-draw covariance exact; 1000 AUC trials match pair counting bitwise";
}

// ---------------------------------------------------------------------------
// 7. CKA identities and stabilization along the gamma sweep

std::string c7_cka_gamma_stability() {
  const auto t0 = std::chrono::steady_clock::now();
  // identities on a real kernel
  ExperimentConfig tcfg = make_config(
      {{"name", "cka-towers"},
       {"seed", 3},
       {"model", {{"kind", "disjoint_towers"}, {"features", 2}}},
       {"data", {{"n_per_task", 24}, {"input_std", {0.3, 0.1}}, {"noise", 0.02}}},
       {"train",
        {{"lr", 0.02}, {"batch", 16}, {"max_steps", 4000}, {"target_loss", 0.0008},
         {"log_every", 400}}},
       {"probe",
        {{"eps", 0.002}, {"nbeta", 12.0}, {"gamma", 50.0}, {"minibatch", 16}, {"chains", 2},
         {"draws", 120}, {"burnin", 100}, {"stride", 10}, {"seed", 7}}}},
      "towers");  // shares the criterion-2 training cache
  train_to_target(tcfg);
  Experiment te = build_experiment(tcfg);
  Checkpoint tck = load_checkpoint(tcfg.output_dir + "/checkpoint_final.ckpt");
  std::vector<float> tparams = params_from_checkpoint<float>(tck, te.model);
  LossMatrix tL = run_probe(te.model, std::span<const float>(tparams), te.samples, te.samples,
                            tcfg.probe);
  const Tensor<double> K = estimate_K(tL);
  Tensor<double> cK = K;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(K.dim(0)) * K.dim(0); ++i)
    cK[i] = 3.7 * K[i];
  const double self = cka(K, K);
  const double scaled = cka(K, cK);
  expect(std::abs(self - 1.0) <= 1e-9, fmt("CKA(K,K) = %.12f", self));
  expect(std::abs(scaled - 1.0) <= 1e-9, fmt("CKA(K,3.7K) = %.12f", scaled));

  // localization sweep on the modular-arithmetic run (criterion 3's checkpoint)
  nlohmann::json j = modular_config_json();
  j["name"] = "modular-23-gamma-sweep";
  j["probe"] = {{"eps", 2e-7},  {"nbeta", 100.0}, {"gamma", 1e6},  {"minibatch", 32},
                {"chains", 3},  {"draws", 250},   {"burnin", 150}, {"stride", 2},
                {"seed", 5},    {"subset", 60},   {"subset_seed", 17}};
  j["sweep"] = {{"gammas", {1e5, 3e5, 9e5, 1.3e6, 1.5e6}}};
  ExperimentConfig scfg = make_config(j, "modular23");
  expect(fs::exists(fs::path(scfg.output_dir) / "checkpoint_final.ckpt"),
         "modular-arithmetic checkpoint missing (criterion 3 must train first)");
  std::ostringstream sink;
  SweepOutcome sweep = cmd_sweep(scfg, sink);
  const double adjacent = sweep.cka_vs_ref[3];  // two largest localizations
  const double extremes = sweep.cka_vs_ref[0];  // loosest vs tightest
  const double secs = elapsed(t0);
  expect(adjacent > extremes,
         fmt("kernel did not stabilize: CKA(g4,g5) %.4f <= CKA(g1,g5) %.4f", adjacent, extremes));
  return fmt("CKA identities exact to 1e-9; sweep CKA(g4,g5) %.3f > CKA(g1,g5) %.3f, %.0fs",
             adjacent, extremes, secs);
}

// ---------------------------------------------------------------------------
// 8. taxonomic lift on a labeled tree, five seeds

std::string c8_hierarchy_lift() {
  const auto t0 = std::chrono::steady_clock::now();
  const int kNeighbors = 10;
  std::vector<std::array<double, 3>> lifts;  // per seed, ancestor depths 1..3
  for (int seed : {41, 42, 43, 44, 45}) {
    ExperimentConfig cfg = make_config(
        {{"name", fmt("hier-lift-%d", seed)},
         {"seed", seed},
         {"model", {{"kind", "hier_mlp"}, {"hidden1", 64}, {"hidden2", 64}}},
         {"data",
          {{"branching", 3}, {"depth", 3}, {"feature_dim", 24}, {"n_per_leaf", 10},
           {"noise_scale", 0.25}}},
         {"train",
          {{"lr", 0.005}, {"batch", 32}, {"max_steps", 20000}, {"target_accuracy", 0.95},
           {"log_every", 500}, {"eval_chunk", 270}}},
         {"probe",
          {{"eps", 1e-5}, {"nbeta", 20.0}, {"gamma", 400.0}, {"minibatch", 32}, {"chains", 4},
           {"draws", 200}, {"burnin", 100}, {"seed", 5}}}},
        fmt("hier_seed%d", seed));
    train_to_target(cfg);

    Experiment e = build_experiment(cfg);
    Checkpoint ck = load_checkpoint(cfg.output_dir + "/checkpoint_final.ckpt");
    std::vector<float> params = params_from_checkpoint<float>(ck, e.model);
    LossMatrix L = run_probe(e.model, std::span<const float>(params), e.samples, e.samples,
                             cfg.probe);
    const Tensor<double> R = estimate_R(estimate_K(L));
    std::vector<int> labels;
    for (const Sample& s : e.samples) labels.push_back(s.label);
    NeighborGraph g = top_k_neighbors(R, kNeighbors, labels, false);
    std::vector<LiftCell> cells = lift_curves(g, *e.hierarchy);

    std::array<double, 3> by_depth{0.0, 0.0, 0.0};
    int found = 0;
    for (const LiftCell& c : cells)
      if (c.ancestor_depth >= 1 && c.ancestor_depth <= 3) {
        by_depth[static_cast<size_t>(c.ancestor_depth - 1)] = c.lift;
        ++found;
      }
    expect(found == 3, fmt("seed %d produced %d lift cells, expected 3", seed, found));
    lifts.push_back(by_depth);
  }

  std::array<double, 3> mean{0.0, 0.0, 0.0};
  for (const auto& l : lifts)
    for (size_t d = 0; d < 3; ++d) mean[d] += l[d] / static_cast<double>(lifts.size());
  int coarse_pass = 0;
  for (const auto& l : lifts) coarse_pass += l[0] > 1.3 ? 1 : 0;
  const double secs = elapsed(t0);
  expect(mean[0] > 1.3, fmt("mean lift at shared depth-1 ancestor %.3f (limit > 1.3)", mean[0]));
  expect(coarse_pass >= 4, fmt("depth-1 lift > 1.3 in only %d/5 seeds", coarse_pass));
  expect(mean[0] <= mean[1] && mean[1] <= mean[2],
         fmt("mean lift not non-decreasing in depth: %.2f, %.2f, %.2f", mean[0], mean[1],
             mean[2]));
  return fmt("mean lift %.2f / %.2f / %.2f over depths 1-3, depth-1 > 1.3 in %d/5 seeds, %.0fs",
             mean[0], mean[1], mean[2], coarse_pass, secs);
}

// ---------------------------------------------------------------------------
// 9. corrupted-label detection through self-covariance

std::string c9_memorization() {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = make_config(
      {{"name", "memorization"},
       {"seed", 21},
       {"model", {{"kind", "hier_mlp"}, {"hidden1", 64}, {"hidden2", 64}}},
       {"data",
        {{"branching", 3}, {"depth", 2}, {"feature_dim", 16}, {"n_per_leaf", 30},
         {"noise_scale", 0.25}, {"corrupt_fraction", 0.05}}},
       {"train",
        {{"lr", 0.005}, {"batch", 32}, {"max_steps", 20000}, {"target_accuracy", 1.0},
         {"target_loss", 0.01}, {"log_every", 1000}, {"eval_chunk", 270}}},
       {"probe",
        {{"eps", 1e-5}, {"nbeta", 20.0}, {"gamma", 400.0}, {"minibatch", 32}, {"chains", 4},
         {"draws", 200}, {"burnin", 100}, {"seed", 5}}}},
      "memorization");
  train_to_target(cfg);

  Experiment e = build_experiment(cfg);
  expect(!e.corrupted_ids.empty(), "corruption produced no flipped labels");
  Checkpoint ck = load_checkpoint(cfg.output_dir + "/checkpoint_final.ckpt");
  std::vector<float> params = params_from_checkpoint<float>(ck, e.model);
  LossMatrix L = run_probe(e.model, std::span<const float>(params), e.samples, e.samples,
                           cfg.probe);
  const Tensor<double> K = estimate_K(L);

  const int n = K.dim(0);
  std::unordered_set<std::int64_t> bad(e.corrupted_ids.begin(), e.corrupted_ids.end());
  std::vector<double> self_cov;
  std::vector<int> corrupted;
  double mean_bad = 0.0, mean_clean = 0.0;
  int n_bad = 0, n_clean = 0;
  for (int i = 0; i < n; ++i) {
    const double d = K[static_cast<std::int64_t>(i) * n + i];
    const bool is_bad = bad.count(e.samples[static_cast<size_t>(i)].id) > 0;
    self_cov.push_back(d);
    corrupted.push_back(is_bad ? 1 : 0);
    if (is_bad) {
      mean_bad += d;
      ++n_bad;
    } else {
      mean_clean += d;
      ++n_clean;
    }
  }
  mean_bad /= n_bad;
  mean_clean /= n_clean;
  const double auc = roc_auc(self_cov, corrupted, false);
  const double secs = elapsed(t0);
  expect(auc > 0.9, fmt("corrupted-sample AUC %.4f (limit > 0.9)", auc));
  expect(mean_bad > mean_clean,
         fmt("mean self-covariance ordering violated: corrupted %.3e vs clean %.3e", mean_bad,
             mean_clean));
  return fmt("self-cov AUC %.3f (>0.9), corrupted mean %.1fx clean, %d/%d flipped, %.1fs", auc,
             mean_bad / mean_clean, n_bad, n, secs);
}

// ---------------------------------------------------------------------------
// 10. byte-identical artifacts across two runs

std::string c10_determinism() {
  const nlohmann::json j = {
      {"name", "determinism"},
      {"seed", 9},
      {"model",
       {{"kind", "quadratic"}, {"coeffs", {{1.0, 0.3}, {0.5, -0.2}, {2.0, 0.5}}}}},
      {"probe",
       {{"eps", 0.01}, {"nbeta", 6.0}, {"gamma", 4.0}, {"minibatch", 3}, {"chains", 3},
        {"draws", 40}, {"burnin", 20}, {"seed", 9}}}};
  const std::vector<std::string> artifacts = {"loss_matrix.lm", "loss_matrix.K.kn",
                                              "loss_matrix.R.kn", "loss_matrix.d.kn"};

  auto run_once = [&]() {
    ExperimentConfig cfg = make_config(j, "determinism");
    fs::remove_all(cfg.output_dir);
    std::ostringstream sink;
    cmd_train(cfg, sink);
    ProbeOutcome probe = cmd_probe(cfg, cfg.output_dir + "/checkpoint_final.ckpt", sink);
    cmd_analyze(cfg, {probe.matrix_path}, sink);
    std::vector<std::string> bytes;
    for (const std::string& name : artifacts) {
      std::ifstream in(fs::path(cfg.output_dir) / name, std::ios::binary);
      expect(in.good(), "missing artifact " + name);
      std::ostringstream buf;
      buf << in.rdbuf();
      bytes.push_back(buf.str());
    }
    return bytes;
  };

  const std::vector<std::string> first = run_once();
  const std::vector<std::string> second = run_once();
  for (size_t i = 0; i < artifacts.size(); ++i)
    expect(first[i] == second[i], "artifact " + artifacts[i] + " differs between runs");
  return fmt("%zu artifacts byte-identical across two runs (matrix + K/R/d kernels)",
             artifacts.size());
}

}  // namespace

int main() {
  struct Check {
    int id;
    const char* name;
    std::function<std::string()> run;
  };
  const std::vector<Check> checks = {
      {1, "gaussian closed-form agreement", c1_gaussian_oracle},
      {2, "disjoint-tower decoupling", c2_tower_decoupling},
      {3, "multitask arithmetic separation", c3_task_separation},
      {4, "kernel algebra invariants", c4_kernel_algebra},
      {5, "gradient correctness", c5_gradients},
      {6, "estimator exactness", c6_estimator_exactness},
      {7, "cka identities and gamma stability", c7_cka_gamma_stability},
      {8, "hierarchy lift", c8_hierarchy_lift},
      {9, "corrupted-label detection", c9_memorization},
      {10, "bitwise determinism", c10_determinism},
  };

  fs::create_directories(work_root());
  int failures = 0;
  for (const Check& c : checks) {
    std::string detail;
    bool pass = false;
    try {
      detail = c.run();
      pass = true;
    } catch (const Fail& f) {
      detail = f.detail;
    } catch (const std::exception& e) {
      detail = std::string("error: ") + e.what();
    }
    if (!pass) ++failures;
    std::printf("[%2d] %s  %-36s %s\n", c.id, pass ? "PASS" : "FAIL", c.name, detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/10 criteria passed\n", 10 - failures);
  return failures;
}
