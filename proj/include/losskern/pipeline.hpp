#pragma once

// Command implementations behind the CLI: train a model, probe it into a
// loss matrix, grind matrices into kernels and reports, sweep γ or
// checkpoints, and export binary artifacts as text. Each command locks its
// output directory, stamps every file with the config hash plus the hashes
// of its inputs, and refuses inputs whose stamps do not match.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "losskern/analysis.hpp"
#include "losskern/config.hpp"
#include "losskern/io.hpp"
#include "losskern/kernel.hpp"
#include "losskern/probe.hpp"

namespace losskern {

// Raised when an input artifact was produced under a different config.
struct ProvenanceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitTrainMiss = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitProvenance = 4;

// Exclusive advisory lock on an output directory, so two commands cannot
// interleave writes to the same artifact set.
class DirLock {
 public:
  explicit DirLock(const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/.lock";
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open lock file " + path);
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw std::invalid_argument("output directory '" + dir +
                                  "' is locked by another running command");
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;
  ~DirLock() {
    if (fd_ >= 0) ::close(fd_);
  }

 private:
  int fd_ = -1;
};

namespace detail {

inline std::string artifact(const ExperimentConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.output_dir) / name).string();
}

inline std::string stem_of(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

inline std::string fmt_gamma(double g) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", g);
  return std::string(buf);
}

struct EvalResult {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

inline EvalResult evaluate(Model& m, std::span<const float> params,
                           const std::vector<Sample>& samples, int chunk) {
  EvalResult r;
  std::int64_t correct = 0;
  for (size_t at = 0; at < samples.size(); at += static_cast<size_t>(chunk)) {
    const size_t len = std::min(static_cast<size_t>(chunk), samples.size() - at);
    std::span<const Sample> batch(samples.data() + at, len);
    for (double l : per_sample_loss(m, params, batch)) r.mean_loss += l;
    if (m.is_classifier()) {
      const Tensor<float>& logits = m.graph.value(m.logits);
      const int classes = logits.dim(1);
      for (size_t i = 0; i < len; ++i) {
        int best = 0;
        for (int cls = 1; cls < classes; ++cls)
          if (logits[static_cast<std::int64_t>(i) * classes + cls] >
              logits[static_cast<std::int64_t>(i) * classes + best])
            best = cls;
        correct += best == batch[i].label;
      }
    }
  }
  r.mean_loss /= static_cast<double>(samples.size());
  r.accuracy = m.is_classifier()
                   ? static_cast<double>(correct) / static_cast<double>(samples.size())
                   : 0.0;
  return r;
}

// One full probe -> loss-matrix file, shared by cmd_probe and cmd_sweep
// (which must not re-acquire the directory lock).
inline std::uint64_t probe_to_file(Experiment& e, const ProbeConfig& probe,
                                   const std::vector<Sample>& probe_samples,
                                   std::span<const float> params, const std::string& path,
                                   nlohmann::json extra) {
  LossMatrix L = run_probe(e.model, params, e.samples, probe_samples, probe);
  extra["config_hash"] = e.cfg.config_hash;
  extra["name"] = e.cfg.name;
  extra["probe_config"] = probe_config_json(probe);
  return save_loss_matrix(path, L, extra);
}

inline std::vector<Sample> select_probe_samples(const Experiment& e) {
  if (e.cfg.probe_subset == 0) return e.samples;
  return balanced_subset(e.samples, e.cfg.probe_subset, e.cfg.probe_subset_seed);
}

// Group labels used for neighbor pruning and taxonomic lift: leaf labels for
// hierarchical data, task ids otherwise.
inline std::vector<int> group_labels_for(const Experiment& e,
                                         const std::vector<std::int64_t>& ids) {
  std::unordered_map<std::int64_t, int> by_id;
  for (const Sample& s : e.samples)
    by_id[s.id] = e.hierarchy.has_value() ? s.label : static_cast<int>(s.task);
  std::vector<int> out;
  out.reserve(ids.size());
  for (std::int64_t id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw std::invalid_argument("loss matrix references sample id " + std::to_string(id) +
                                  " that the config's dataset does not contain");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
  bool reached = false;
  int steps = 0;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  std::string final_checkpoint;
};

inline TrainOutcome cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  Experiment e = build_experiment(cfg);
  DirLock lock(cfg.output_dir);
  const TrainConfig& t = cfg.train;
  if (e.samples.size() <= 10000) samples_to_csv(detail::artifact(cfg, "samples.csv"), e.samples);
  if (e.hierarchy) hierarchy_to_tsv(detail::artifact(cfg, "hierarchy.tsv"), *e.hierarchy);

  TrainOutcome out;
  std::string log_csv = "step,loss,accuracy\n";
  nlohmann::json checkpoints = nlohmann::json::object();

  auto save_step = [&](const std::string& name, std::span<const float> params) {
    const std::string path = detail::artifact(cfg, name);
    Checkpoint c = make_checkpoint<float>(e.model, params);
    checkpoints[name] = save_checkpoint(path, c);
    return path;
  };

  if (!e.analytic_params.empty()) {
    // closed-form minimum: training is a single exact step
    out.reached = true;
    out.final_loss = detail::evaluate(e.model, e.analytic_params, e.samples, t.eval_chunk).mean_loss;
    out.final_checkpoint = save_step("checkpoint_final.ckpt", e.analytic_params);
    log_csv += "0," + detail::fmt_g17(out.final_loss) + ",\n";
  } else {
    if (!e.model.is_classifier() && t.target_loss <= 0)
      throw std::invalid_argument("config: regression training needs train.target_loss > 0");
    std::vector<float> params = e.model.graph.flatten_params();
    const int n = static_cast<int>(e.samples.size());
    const int batch = std::min(t.batch, n);
    std::vector<double> m1(params.size(), 0.0), m2(params.size(), 0.0);
    Rng rng = make_rng(cfg.seed, 0x747261696eull);
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    int cursor = n;  // forces a shuffle on first use
    std::vector<Sample> batch_buf(static_cast<size_t>(batch));

    for (int step = 1; step <= t.max_steps; ++step) {
      if (cursor + batch > n) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      for (int i = 0; i < batch; ++i)
        batch_buf[static_cast<size_t>(i)] = e.samples[static_cast<size_t>(order[static_cast<size_t>(cursor + i)])];
      cursor += batch;

      std::vector<float> grad = minibatch_grad(e.model, std::span<const float>(params), batch_buf);
      const double b1t = 1.0 - std::pow(t.beta1, step);
      const double b2t = 1.0 - std::pow(t.beta2, step);
      const bool decaying = t.weight_decay_steps == 0 || step <= t.weight_decay_steps;
      const double decay = decaying ? 1.0 - t.lr * t.weight_decay : 1.0;
      for (size_t i = 0; i < params.size(); ++i) {
        const double g = static_cast<double>(grad[i]) / batch;
        m1[i] = t.beta1 * m1[i] + (1.0 - t.beta1) * g;
        m2[i] = t.beta2 * m2[i] + (1.0 - t.beta2) * g * g;
        params[i] = static_cast<float>(decay * params[i] -
                                       t.lr * (m1[i] / b1t) /
                                           (std::sqrt(m2[i] / b2t) + t.adam_eps));
      }

      if (t.checkpoint_every > 0 && step % t.checkpoint_every == 0)
        save_step("checkpoint_step_" + std::to_string(step) + ".ckpt", params);

      if (step % t.log_every == 0 || step == t.max_steps) {
        detail::EvalResult ev = detail::evaluate(e.model, params, e.samples, t.eval_chunk);
        log_csv += std::to_string(step) + "," + detail::fmt_g17(ev.mean_loss) + "," +
                   (e.model.is_classifier() ? detail::fmt_g17(ev.accuracy) : std::string()) + "\n";
        log << "step " << step << " loss " << ev.mean_loss;
        if (e.model.is_classifier()) log << " acc " << ev.accuracy;
        log << "\n";
        out.steps = step;
        out.final_loss = ev.mean_loss;
        out.final_accuracy = ev.accuracy;
        const bool hit = e.model.is_classifier()
                             ? ev.accuracy >= t.target_accuracy &&
                                   (t.target_loss <= 0 || ev.mean_loss <= t.target_loss)
                             : ev.mean_loss <= t.target_loss;
        if (hit) {
          out.reached = true;
          break;
        }
      }
    }
    out.final_checkpoint =
        save_step(out.reached ? "checkpoint_final.ckpt" : "checkpoint_last.ckpt", params);
  }

  detail::write_file(detail::artifact(cfg, "train_log.csv"), log_csv);
  nlohmann::json manifest{{"name", cfg.name},
                          {"config_hash", cfg.config_hash},
                          {"seed", cfg.seed},
                          {"reached", out.reached},
                          {"steps", out.steps},
                          {"final_loss", out.final_loss},
                          {"final_accuracy", out.final_accuracy},
                          {"n_samples", e.samples.size()},
                          {"corrupted_ids", e.corrupted_ids},
                          {"checkpoints", checkpoints}};
  detail::write_file(detail::artifact(cfg, "train_manifest.json"), manifest.dump(2) + "\n");
  log << (out.reached ? "target reached" : "target NOT reached") << " after " << out.steps
      << " steps\n";
  return out;
}

// ---------------------------------------------------------------------------
// probe

struct ProbeOutcome {
  std::string matrix_path;
  std::uint64_t payload_hash = 0;
  int rows = 0;
  int n = 0;
};

inline ProbeOutcome cmd_probe(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                              std::ostream& log, const std::string& tag = "loss_matrix") {
  Experiment e = build_experiment(cfg);
  DirLock lock(cfg.output_dir);
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  std::vector<float> params = params_from_checkpoint<float>(ckpt, e.model);
  std::vector<Sample> probe_samples = detail::select_probe_samples(e);

  ProbeOutcome out;
  out.matrix_path = detail::artifact(cfg, tag + ".lm");
  out.rows = cfg.probe.chains * cfg.probe.draws;
  out.n = static_cast<int>(probe_samples.size());
  log << "probing " << out.n << " samples: " << cfg.probe.chains << " chains x "
      << cfg.probe.draws << " draws\n";
  out.payload_hash =
      detail::probe_to_file(e, cfg.probe, probe_samples, params, out.matrix_path,
                            nlohmann::json{{"checkpoint_hash", ckpt.payload_hash}});
  log << "wrote " << out.matrix_path << "\n";
  return out;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOutcome {
  int matrices = 0;
  std::vector<std::string> metric_files;
};

inline AnalyzeOutcome cmd_analyze(const ExperimentConfig& cfg,
                                  const std::vector<std::string>& matrix_paths,
                                  std::ostream& log) {
  if (matrix_paths.empty()) throw std::invalid_argument("analyze: no loss-matrix files given");
  Experiment e = build_experiment(cfg);
  DirLock lock(cfg.output_dir);
  const AnalysisConfig& a = cfg.analysis;

  std::vector<LossMatrixFile> files;
  for (const std::string& path : matrix_paths) {
    LossMatrixFile f = load_loss_matrix(path);
    if (!f.header.contains("config_hash") ||
        f.header["config_hash"].get<std::uint64_t>() != cfg.config_hash)
      throw ProvenanceError("analyze: " + path +
                            " was produced under a different config (hash mismatch)");
    if (!files.empty() && f.matrix.sample_ids != files.front().matrix.sample_ids)
      throw std::invalid_argument("analyze: " + path +
                                  " has different sample ids than the first matrix");
    files.push_back(std::move(f));
  }

  AnalyzeOutcome out;
  std::vector<Tensor<double>> kernels;
  std::vector<std::string> stems;
  for (size_t fi = 0; fi < files.size(); ++fi) {
    const LossMatrixFile& f = files[fi];
    const std::string stem = detail::stem_of(matrix_paths[fi]);
    const std::vector<std::int64_t>& ids = f.matrix.sample_ids;
    const int n = f.matrix.cols();
    nlohmann::json prov{{"config_hash", cfg.config_hash}, {"source_hash", f.payload_hash}};

    Tensor<double> K = estimate_K(f.matrix);
    Tensor<double> R = estimate_R(K);
    Tensor<double> D = distance_matrix(R);
    save_kernel(detail::artifact(cfg, stem + ".K.kn"), K, KernelKind::kCovariance, ids, prov);
    save_kernel(detail::artifact(cfg, stem + ".R.kn"), R, KernelKind::kCorrelation, ids, prov);
    save_kernel(detail::artifact(cfg, stem + ".d.kn"), D, KernelKind::kDistance, ids, prov);

    std::vector<int> labels;
    if (a.prune_same_label || a.lift) labels = detail::group_labels_for(e, ids);
    NeighborGraph nn = top_k_neighbors(R, std::min(a.k, n - 1), labels, a.prune_same_label);
    neighbors_to_csv(detail::artifact(cfg, stem + ".neighbors.csv"), nn, ids);
    if (a.lift && e.hierarchy)
      lift_to_csv(detail::artifact(cfg, stem + ".lift.csv"), lift_curves(nn, *e.hierarchy));

    std::vector<int> all_idx(static_cast<size_t>(n));
    std::iota(all_idx.begin(), all_idx.end(), 0);
    nlohmann::json metrics{{"source_file", matrix_paths[fi]},
                           {"source_hash", f.payload_hash},
                           {"config_hash", cfg.config_hash},
                           {"n", n},
                           {"chains", f.matrix.chains},
                           {"draws", f.matrix.draws},
                           {"trace_variance", empirical_variance(K)},
                           {"mean_self_covariance", mean_self_covariance(K, all_idx)}};

    const double nbeta = f.header.contains("probe_config")
                             ? f.header["probe_config"].value("nbeta", cfg.probe.nbeta)
                             : cfg.probe.nbeta;
    if (nbeta > 0) {
      LlcEstimate llc = llc_estimate(f.matrix, nbeta);
      metrics["lambda_hat"] = llc.lambda_hat;
      metrics["lambda_negative"] = llc.negative;
      metrics["mean_energy"] = llc.mean_energy;
      metrics["anchor_energy"] = llc.anchor_energy;
    } else {
      metrics["lambda_hat"] = nullptr;
    }

    std::vector<double> pc1_scores;
    if (a.pc1) {
      Pc1 p = pc1_projection(f.matrix);
      pc1_scores = p.scores;
      scores_to_csv(detail::artifact(cfg, stem + ".pc1.csv"), ids, p.scores, "pc1");
      metrics["pc1_lambda"] = p.lambda;
      metrics["pc1_converged"] = p.converged;
    }

    if (a.auc == "pc1_task") {
      if (!a.pc1) throw std::invalid_argument("analysis.auc=pc1_task requires analysis.pc1");
      std::unordered_map<std::int64_t, int> task_of;
      for (const Sample& s : e.samples) task_of[s.id] = s.task;
      std::vector<double> scores;
      std::vector<int> is_b;
      for (int i = 0; i < n; ++i) {
        const int task = task_of.at(ids[static_cast<size_t>(i)]);
        if (task != a.auc_task_a && task != a.auc_task_b) continue;
        scores.push_back(pc1_scores[static_cast<size_t>(i)]);
        is_b.push_back(task == a.auc_task_b);
      }
      metrics["auc"] = roc_auc(scores, is_b, /*orientation_free=*/true);
      metrics["auc_mode"] = "pc1_task";
    } else if (a.auc == "self_cov_corrupt") {
      std::vector<double> scores(static_cast<size_t>(n));
      std::vector<int> corrupted(static_cast<size_t>(n), 0);
      for (int i = 0; i < n; ++i) {
        scores[static_cast<size_t>(i)] = K[static_cast<std::int64_t>(i) * n + i];
        for (std::int64_t cid : e.corrupted_ids)
          if (cid == ids[static_cast<size_t>(i)]) corrupted[static_cast<size_t>(i)] = 1;
      }
      metrics["auc"] = roc_auc(scores, corrupted);
      metrics["auc_mode"] = "self_cov_corrupt";
    }

    const std::string metrics_path = detail::artifact(cfg, stem + ".metrics.json");
    detail::write_file(metrics_path, metrics.dump(2) + "\n");
    out.metric_files.push_back(metrics_path);
    kernels.push_back(std::move(K));
    stems.push_back(stem);
    log << "analyzed " << matrix_paths[fi] << " (n=" << n << ")\n";
  }

  if (a.cka && kernels.size() >= 2) {
    std::string table = "a,b,cka\n";
    for (size_t i = 0; i < kernels.size(); ++i)
      for (size_t j = i + 1; j < kernels.size(); ++j)
        table += stems[i] + "," + stems[j] + "," +
                 detail::fmt_g17(cka(kernels[i], kernels[j])) + "\n";
    detail::write_file(detail::artifact(cfg, "cka_table.csv"), table);
  }
  out.matrices = static_cast<int>(files.size());
  return out;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepOutcome {
  int points = 0;
  std::vector<double> cka_vs_ref;  // one per point, reference last (= 1)
};

inline SweepOutcome cmd_sweep(const ExperimentConfig& cfg, std::ostream& log) {
  const bool by_gamma = !cfg.sweep.gammas.empty();
  const bool by_ckpt = !cfg.sweep.checkpoints.empty();
  if (by_gamma == by_ckpt)
    throw std::invalid_argument("sweep: config must list either sweep.gammas or sweep.checkpoints");
  const size_t points = by_gamma ? cfg.sweep.gammas.size() : cfg.sweep.checkpoints.size();
  if (points < 2) throw std::invalid_argument("sweep: need at least 2 sweep points");
  if (by_ckpt)
    for (const std::string& p : cfg.sweep.checkpoints)
      if (!std::filesystem::exists(p))
        throw std::invalid_argument("sweep: checkpoint does not exist: " + p);

  Experiment e = build_experiment(cfg);
  DirLock lock(cfg.output_dir);
  std::vector<Sample> probe_samples = detail::select_probe_samples(e);

  std::vector<float> params;
  if (by_gamma) {
    Checkpoint ckpt = load_checkpoint(detail::artifact(cfg, "checkpoint_final.ckpt"));
    params = params_from_checkpoint<float>(ckpt, e.model);
  }

  std::vector<Tensor<double>> kernels;
  std::vector<std::string> tags;
  for (size_t i = 0; i < points; ++i) {
    ProbeConfig probe = cfg.probe;
    nlohmann::json extra;
    std::string tag;
    if (by_gamma) {
      probe.gamma = cfg.sweep.gammas[i];
      tag = "sweep_gamma_" + detail::fmt_gamma(probe.gamma);
      extra["sweep_gamma"] = probe.gamma;
    } else {
      Checkpoint ckpt = load_checkpoint(cfg.sweep.checkpoints[i]);
      params = params_from_checkpoint<float>(ckpt, e.model);
      tag = "sweep_ckpt_" + detail::stem_of(cfg.sweep.checkpoints[i]);
      extra["sweep_checkpoint"] = cfg.sweep.checkpoints[i];
      extra["checkpoint_hash"] = ckpt.payload_hash;
    }
    const std::string path = detail::artifact(cfg, tag + ".lm");
    const std::uint64_t h = detail::probe_to_file(e, probe, probe_samples, params, path, extra);
    LossMatrix L = load_loss_matrix(path).matrix;
    Tensor<double> K = estimate_K(L);
    save_kernel(detail::artifact(cfg, tag + ".K.kn"), K, KernelKind::kCovariance, L.sample_ids,
                nlohmann::json{{"config_hash", cfg.config_hash}, {"source_hash", h}});
    kernels.push_back(std::move(K));
    tags.push_back(tag);
    log << "sweep point " << tag << " done\n";
  }

  SweepOutcome out;
  out.points = static_cast<int>(points);
  const Tensor<double>& ref = kernels.back();
  std::string table = by_gamma ? "tag,gamma,cka_vs_ref\n" : "tag,checkpoint,cka_vs_ref\n";
  for (size_t i = 0; i < kernels.size(); ++i) {
    const double v = cka(kernels[i], ref);
    out.cka_vs_ref.push_back(v);
    table += tags[i] + "," +
             (by_gamma ? detail::fmt_gamma(cfg.sweep.gammas[i]) : cfg.sweep.checkpoints[i]) + "," +
             detail::fmt_g17(v) + "\n";
  }
  detail::write_file(detail::artifact(cfg, "sweep_cka.csv"), table);
  return out;
}

// ---------------------------------------------------------------------------
// export

inline void cmd_export(const std::string& input, const std::string& format,
                       const std::string& output) {
  if (format != "csv" && format != "edge-list")
    throw std::invalid_argument("export: format must be csv or edge-list");
  const std::string bytes = detail::read_file(input);
  if (bytes.size() < 8) throw IoError("export: " + input + " is too short to carry a magic");
  const std::string magic = bytes.substr(0, 8);

  if (magic == "LKKERN01") {
    KernelFile f = load_kernel(input);
    const int n = f.matrix.dim(0);
    if (format == "csv") {
      kernel_to_csv(output, f.matrix, f.sample_ids);
      return;
    }
    std::string out;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        out += std::to_string(f.sample_ids[static_cast<size_t>(i)]) + "\t" +
               std::to_string(f.sample_ids[static_cast<size_t>(j)]) + "\t" +
               detail::fmt_g17(f.matrix[static_cast<std::int64_t>(i) * n + j]) + "\n";
    detail::write_file(output, out);
    return;
  }

  if (magic == "LKLOSSM1") {
    if (format != "csv")
      throw std::invalid_argument("export: edge-list requires a kernel file, got a loss matrix");
    LossMatrixFile f = load_loss_matrix(input);
    const int n = f.matrix.cols();
    if (n > 2000)
      throw IoError("export: refusing to write CSV for n=" + std::to_string(n) + " (limit 2000)");
    std::string out = "chain,draw";
    for (std::int64_t id : f.matrix.sample_ids) out += "," + std::to_string(id);
    out += "\n-1,-1";  // anchor losses ride in a pseudo-row
    for (double v : f.matrix.anchor) out += "," + detail::fmt_g17(v);
    out += "\n";
    for (int c = 0; c < f.matrix.chains; ++c)
      for (int d = 0; d < f.matrix.draws; ++d) {
        out += std::to_string(c) + "," + std::to_string(d);
        const double* row = f.matrix.values.data() +
                            (static_cast<size_t>(c) * f.matrix.draws + d) * static_cast<size_t>(n);
        for (int i = 0; i < n; ++i) out += "," + detail::fmt_g17(row[i]);
        out += "\n";
      }
    detail::write_file(output, out);
    return;
  }

  throw std::invalid_argument("export: " + input + " is not a kernel or loss-matrix file");
}

}  // namespace losskern
