#pragma once

// Experiment configuration: one JSON file describes the model, the dataset,
// the training run, the probe, and the analyses. The parsed config is
// re-serialized with sorted keys and hashed; that hash is stamped into every
// artifact so downstream commands can refuse inputs from a different setup.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "losskern/data.hpp"
#include "losskern/io.hpp"
#include "losskern/models.hpp"
#include "losskern/probe.hpp"

namespace losskern {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied as params *= 1 - lr*wd
  int weight_decay_steps = 0;  // 0 = decay for the whole run; else decay only this many steps
  int batch = 32;
  int max_steps = 10000;
  double target_accuracy = 1.0;  // classifiers stop here...
  double target_loss = 0.0;      // ...regressions stop at mean loss <= this
  int log_every = 100;
  int checkpoint_every = 0;  // 0 = final checkpoint only
  int eval_chunk = 256;
};

struct AnalysisConfig {
  int k = 5;
  bool prune_same_label = false;
  bool lift = false;
  bool pc1 = true;
  std::string auc = "none";  // none | pc1_task | self_cov_corrupt
  int auc_task_a = 0;
  int auc_task_b = 1;
  bool cka = true;
};

struct SweepConfig {
  std::vector<double> gammas;
  std::vector<std::string> checkpoints;
};

struct ExperimentConfig {
  std::string name;
  std::uint64_t seed = 0;
  std::string output_dir;
  nlohmann::json model_spec;
  nlohmann::json data_spec;
  TrainConfig train;
  ProbeConfig probe;
  int probe_subset = 0;  // 0 = probe every training sample
  std::uint64_t probe_subset_seed = 0;
  AnalysisConfig analysis;
  SweepConfig sweep;

  std::uint64_t config_hash = 0;
  nlohmann::json raw;
};

namespace detail {

template <typename T>
T field(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument(std::string("config: field '") + key + "' has the wrong type");
  }
}

template <typename T>
T required_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw std::invalid_argument(std::string("config: missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument(std::string("config: field '") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  ExperimentConfig c;
  c.raw = j;
  const std::string dump = j.dump();
  c.config_hash = fnv1a64(dump.data(), dump.size());

  c.name = detail::required_field<std::string>(j, "name");
  c.output_dir = detail::required_field<std::string>(j, "output_dir");
  c.seed = detail::field<std::uint64_t>(j, "seed", 0);
  c.model_spec = j.contains("model") ? j.at("model") : nlohmann::json::object();
  c.data_spec = j.contains("data") ? j.at("data") : nlohmann::json::object();
  if (!c.model_spec.is_object() || !c.data_spec.is_object())
    throw std::invalid_argument("config: 'model' and 'data' must be objects");
  detail::required_field<std::string>(c.model_spec, "kind");

  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.train.lr = detail::field(t, "lr", c.train.lr);
    c.train.beta1 = detail::field(t, "beta1", c.train.beta1);
    c.train.beta2 = detail::field(t, "beta2", c.train.beta2);
    c.train.adam_eps = detail::field(t, "adam_eps", c.train.adam_eps);
    c.train.weight_decay = detail::field(t, "weight_decay", c.train.weight_decay);
    c.train.weight_decay_steps = detail::field(t, "weight_decay_steps", c.train.weight_decay_steps);
    c.train.batch = detail::field(t, "batch", c.train.batch);
    c.train.max_steps = detail::field(t, "max_steps", c.train.max_steps);
    c.train.target_accuracy = detail::field(t, "target_accuracy", c.train.target_accuracy);
    c.train.target_loss = detail::field(t, "target_loss", c.train.target_loss);
    c.train.log_every = detail::field(t, "log_every", c.train.log_every);
    c.train.checkpoint_every = detail::field(t, "checkpoint_every", c.train.checkpoint_every);
    c.train.eval_chunk = detail::field(t, "eval_chunk", c.train.eval_chunk);
    if (c.train.lr <= 0 || c.train.batch < 1 || c.train.max_steps < 1 || c.train.log_every < 1 ||
        c.train.eval_chunk < 1 || c.train.checkpoint_every < 0 || c.train.weight_decay < 0 ||
        c.train.weight_decay_steps < 0)
      throw std::invalid_argument("config: invalid training section");
  }

  if (j.contains("probe")) {
    c.probe = probe_config_from_json(j.at("probe"));
    c.probe_subset = detail::field(j.at("probe"), "subset", 0);
    c.probe_subset_seed = detail::field<std::uint64_t>(j.at("probe"), "subset_seed", c.seed);
    if (c.probe_subset < 0) throw std::invalid_argument("config: probe.subset must be >= 0");
    c.probe.validate();
  }

  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    c.analysis.k = detail::field(a, "k", c.analysis.k);
    c.analysis.prune_same_label = detail::field(a, "prune_same_label", c.analysis.prune_same_label);
    c.analysis.lift = detail::field(a, "lift", c.analysis.lift);
    c.analysis.pc1 = detail::field(a, "pc1", c.analysis.pc1);
    c.analysis.auc = detail::field(a, "auc", c.analysis.auc);
    c.analysis.auc_task_a = detail::field(a, "auc_task_a", c.analysis.auc_task_a);
    c.analysis.auc_task_b = detail::field(a, "auc_task_b", c.analysis.auc_task_b);
    c.analysis.cka = detail::field(a, "cka", c.analysis.cka);
    if (c.analysis.k < 1) throw std::invalid_argument("config: analysis.k must be >= 1");
    if (c.analysis.auc != "none" && c.analysis.auc != "pc1_task" &&
        c.analysis.auc != "self_cov_corrupt")
      throw std::invalid_argument("config: unknown analysis.auc mode '" + c.analysis.auc + "'");
  }

  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    c.sweep.gammas = detail::field(s, "gammas", c.sweep.gammas);
    c.sweep.checkpoints = detail::field(s, "checkpoints", c.sweep.checkpoints);
    for (double g : c.sweep.gammas)
      if (g < 0) throw std::invalid_argument("config: sweep gamma must be >= 0");
  }

  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(detail::read_file(path), nullptr,
                                           /*allow_exceptions=*/false);
  if (j.is_discarded()) throw std::invalid_argument("config: " + path + " is not valid JSON");
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Model + dataset construction from a parsed config. Everything downstream of
// the seeds is deterministic, so commands rebuild the dataset instead of
// persisting it.

struct Experiment {
  ExperimentConfig cfg;
  Model model;
  std::vector<Sample> samples;                 // training set, post-corruption
  std::optional<LabelHierarchy> hierarchy;     // hier_mlp datasets only
  std::vector<std::int64_t> corrupted_ids;     // empty unless labels were corrupted
  std::vector<float> analytic_params;          // quadratic only: the exact minimizer
};

inline Experiment build_experiment(const ExperimentConfig& cfg) {
  Experiment e;
  e.cfg = cfg;
  const std::string kind = cfg.model_spec.at("kind").get<std::string>();
  const std::uint64_t init_seed =
      detail::field<std::uint64_t>(cfg.model_spec, "init_seed", cfg.seed ^ 0x6d6f64656cull);
  const std::uint64_t data_seed = detail::field<std::uint64_t>(cfg.data_spec, "seed", cfg.seed);

  if (kind == "quadratic") {
    std::vector<std::pair<double, double>> coeffs;
    for (const auto& pair : detail::required_field<nlohmann::json>(cfg.model_spec, "coeffs")) {
      if (!pair.is_array() || pair.size() != 2)
        throw std::invalid_argument("config: quadratic coeffs must be [a, c] pairs");
      coeffs.emplace_back(pair[0].get<double>(), pair[1].get<double>());
    }
    auto [model, samples] = build_quadratic(coeffs);
    e.model = std::move(model);
    e.samples = std::move(samples);
    e.analytic_params = {static_cast<float>(quadratic_minimizer(coeffs))};
  } else if (kind == "disjoint_towers") {
    TowersConfig tc;
    tc.features = detail::field(cfg.model_spec, "features", tc.features);
    tc.init_std = detail::field(cfg.model_spec, "init_std", tc.init_std);
    TowerDataSpec ds;
    ds.features = tc.features;
    ds.input_std = detail::field(cfg.data_spec, "input_std", ds.input_std);
    ds.noise = detail::field(cfg.data_spec, "noise", ds.noise);
    const int n_per_task = detail::field(cfg.data_spec, "n_per_task", 64);
    e.model = build_disjoint_towers(tc, init_seed);
    e.samples = gen_tower_regression(ds, n_per_task, data_seed);
  } else if (kind == "multitask_transformer") {
    const int p = detail::required_field<int>(cfg.model_spec, "p");
    TransformerDims dims;
    dims.width = detail::field(cfg.model_spec, "width", dims.width);
    dims.heads = detail::field(cfg.model_spec, "heads", dims.heads);
    dims.layers = detail::field(cfg.model_spec, "layers", dims.layers);
    dims.mlp_ratio = detail::field(cfg.model_spec, "mlp_ratio", dims.mlp_ratio);
    const int n_per_task = detail::field(cfg.data_spec, "n_per_task", p * (p - 1));
    e.model = build_multitask_transformer(p, dims, init_seed);
    e.samples = gen_modular_dataset(p, n_per_task, data_seed);
  } else if (kind == "hier_mlp") {
    HierTreeSpec ts;
    ts.branching = detail::field(cfg.data_spec, "branching", ts.branching);
    ts.depth = detail::field(cfg.data_spec, "depth", ts.depth);
    ts.feature_dim = detail::field(cfg.data_spec, "feature_dim", ts.feature_dim);
    ts.step_scale = detail::field(cfg.data_spec, "step_scale", ts.step_scale);
    const int n_per_leaf = detail::field(cfg.data_spec, "n_per_leaf", 10);
    const double noise_scale = detail::field(cfg.data_spec, "noise_scale", 0.25);
    HierDataset ds = gen_hier_dataset(ts, n_per_leaf, noise_scale, data_seed);
    MlpDims dims;
    dims.hidden1 = detail::field(cfg.model_spec, "hidden1", dims.hidden1);
    dims.hidden2 = detail::field(cfg.model_spec, "hidden2", dims.hidden2);
    e.model = build_hier_mlp(ts.feature_dim, ds.hierarchy.leaf_count(), dims, init_seed);
    e.samples = std::move(ds.samples);
    e.hierarchy = std::move(ds.hierarchy);
    const double frac = detail::field(cfg.data_spec, "corrupt_fraction", 0.0);
    if (frac < 0 || frac > 1)
      throw std::invalid_argument("config: corrupt_fraction must be in [0, 1]");
    if (frac > 0) {
      const int k = static_cast<int>(frac * static_cast<double>(e.samples.size()) + 0.5);
      const std::uint64_t cseed =
          detail::field<std::uint64_t>(cfg.data_spec, "corrupt_seed", cfg.seed ^ 0x636f727275ull);
      auto [corrupted, ids] = corrupt_labels(e.samples, k, cseed);
      e.samples = std::move(corrupted);
      e.corrupted_ids = std::move(ids);
    }
  } else {
    throw std::invalid_argument("config: unknown model kind '" + kind + "'");
  }
  return e;
}

}  // namespace losskern
