#pragma once

// Minibatch Adam on the mean per-sample loss, with stop conditions on full
// training-set metrics. Optimizer state is kept in double regardless of the
// model's scalar type.

#include <cstdio>

#include "losskern/model.hpp"

namespace losskern {

struct TrainConfig {
  int batch = 64;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW-style)
  int max_steps = 20000;
  double target_loss = 0.0;   // <= 0 disables the loss condition
  double target_acc = -1.0;   // < 0 disables the accuracy condition
  int eval_every = 100;
  int eval_chunk = 256;
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct TrainResult {
  int steps = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  bool reached_target = false;
  std::vector<float> params;
};

inline TrainResult train_adam(Model& m, const std::vector<Sample>& train, const TrainConfig& cfg) {
  if (train.empty()) throw SchemaError(m.name + ": empty training set");
  if (cfg.batch < 1 || cfg.max_steps < 1 || cfg.eval_every < 1)
    throw std::invalid_argument("train_adam: bad config");
  const std::int64_t d = m.param_count();
  std::vector<float> w = m.graph.flatten_params();
  std::vector<double> m1(static_cast<size_t>(d), 0.0), m2(static_cast<size_t>(d), 0.0);
  Rng rng = make_rng(cfg.seed, 1);
  const int n = static_cast<int>(train.size());
  const int bsz = std::min(cfg.batch, n);

  auto targets_met = [&](const DatasetMetrics& met) {
    if (cfg.target_loss > 0 && met.mean_loss > cfg.target_loss) return false;
    if (cfg.target_acc >= 0 && m.is_classifier() && met.accuracy < cfg.target_acc) return false;
    return cfg.target_loss > 0 || cfg.target_acc >= 0;
  };

  TrainResult res;
  std::vector<Sample> batch(static_cast<size_t>(bsz));
  for (int step = 1; step <= cfg.max_steps; ++step) {
    const auto picks = sample_without_replacement(n, bsz, rng);
    for (int i = 0; i < bsz; ++i) batch[static_cast<size_t>(i)] = train[static_cast<size_t>(picks[static_cast<size_t>(i)])];
    std::vector<float> gsum = minibatch_grad(m, std::span<const float>(w), batch);
    const double bc1 = 1.0 - std::pow(cfg.beta1, step);
    const double bc2 = 1.0 - std::pow(cfg.beta2, step);
    for (std::int64_t i = 0; i < d; ++i) {
      const double gi = static_cast<double>(gsum[static_cast<size_t>(i)]) / bsz;
      double& mi = m1[static_cast<size_t>(i)];
      double& vi = m2[static_cast<size_t>(i)];
      mi = cfg.beta1 * mi + (1.0 - cfg.beta1) * gi;
      vi = cfg.beta2 * vi + (1.0 - cfg.beta2) * gi * gi;
      double wi = static_cast<double>(w[static_cast<size_t>(i)]);
      wi -= cfg.lr * ((mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps) + cfg.weight_decay * wi);
      w[static_cast<size_t>(i)] = static_cast<float>(wi);
    }
    res.steps = step;
    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      const DatasetMetrics met = dataset_metrics(m, std::span<const float>(w), train, cfg.eval_chunk);
      res.train_loss = met.mean_loss;
      res.train_acc = met.accuracy;
      if (cfg.verbose)
        std::fprintf(stderr, "step %d loss %.6f acc %.4f\n", step, met.mean_loss, met.accuracy);
      if (targets_met(met)) {
        res.reached_target = true;
        break;
      }
    }
  }
  res.params = std::move(w);
  m.graph.set_params(std::span<const float>(res.params));
  return res;
}

}  // namespace losskern
