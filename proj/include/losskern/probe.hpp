#pragma once

// Localized SGLD probe. Parallel chains start at the anchor w*, follow
//
//   w <- w - (eps/2) [ (nbeta/m) * sum_{z in B} grad l(z; w) + gamma (w - w*) ]
//        + sqrt(eps) * xi,     xi ~ N(0, I)
//
// and after burn-in record the loss of every probe sample at each retained
// draw (one matrix row per draw). Each chain owns a seed stream and a
// preallocated row region, so results are independent of thread scheduling.

#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "losskern/model.hpp"

namespace losskern {

struct DivergenceError : std::runtime_error {
  int chain = -1;
  int step = -1;
  DivergenceError(int chain_, int step_, const std::string& what_)
      : std::runtime_error("chain " + std::to_string(chain_) + " diverged at step " +
                           std::to_string(step_) + ": " + what_),
        chain(chain_),
        step(step_) {}
};

struct ProbeConfig {
  double eps = 1e-5;    // SGLD step size
  double nbeta = 1.0;   // aggregate inverse temperature n*beta
  double gamma = 1.0;   // localization strength
  int minibatch = 32;   // m, drawn without replacement per step
  int chains = 4;       // C
  int draws = 100;      // T retained rows per chain
  int burnin = 50;      // discarded leading steps per chain
  int stride = 1;       // SGLD steps between retained draws
  int eval_chunk = 256; // samples per forward pass when recording losses
  int threads = 1;
  std::uint64_t seed = 0;
  double divergence_norm = 1e6;  // ||w||_2 ceiling

  void validate() const {
    if (!(eps > 0)) throw std::invalid_argument("probe: eps must be positive");
    if (!(nbeta >= 0)) throw std::invalid_argument("probe: nbeta must be non-negative");
    if (!(gamma >= 0)) throw std::invalid_argument("probe: gamma must be non-negative");
    if (minibatch < 1) throw std::invalid_argument("probe: minibatch must be >= 1");
    if (chains < 1) throw std::invalid_argument("probe: chains must be >= 1");
    if (draws < 1) throw std::invalid_argument("probe: draws must be >= 1");
    if (burnin < 0) throw std::invalid_argument("probe: negative burnin");
    if (stride < 1) throw std::invalid_argument("probe: stride must be >= 1");
    if (eval_chunk < 1) throw std::invalid_argument("probe: eval_chunk must be >= 1");
    if (threads < 1) throw std::invalid_argument("probe: threads must be >= 1");
    if (!(divergence_norm > 0)) throw std::invalid_argument("probe: divergence_norm must be positive");
  }
};

// Per-sample losses at every retained draw, all chains stacked:
// row (chain*draws + t) holds draw t of that chain.
struct LossMatrix {
  int chains = 0;
  int draws = 0;
  std::vector<std::int64_t> sample_ids;
  std::vector<double> values;  // [chains*draws, cols()] row-major
  std::vector<double> anchor;  // per-sample losses at w*

  int rows() const { return chains * draws; }
  int cols() const { return static_cast<int>(sample_ids.size()); }
  double at(int r, int c) const { return values[static_cast<size_t>(r) * cols() + c]; }
};

// One SGLD step; noise must hold one standard normal per coordinate.
template <typename T>
void apply_sgld_update(std::span<T> w, std::span<const T> w_star, std::span<const T> grad_sum,
                       double eps, double nbeta, double gamma, int minibatch,
                       std::span<const double> noise) {
  const double scale = nbeta / minibatch;
  const double half_eps = 0.5 * eps;
  const double root_eps = std::sqrt(eps);
  for (size_t i = 0; i < w.size(); ++i) {
    double wi = static_cast<double>(w[i]);
    wi -= half_eps * (scale * static_cast<double>(grad_sum[i]) +
                      gamma * (wi - static_cast<double>(w_star[i])));
    wi += root_eps * noise[i];
    w[i] = static_cast<T>(wi);
  }
}

namespace detail {

template <typename T>
void record_losses(ModelT<T>& model, std::span<const T> w, std::span<const Sample> probe_samples,
                   int chunk, double* row) {
  for (size_t off = 0; off < probe_samples.size(); off += static_cast<size_t>(chunk)) {
    const size_t len = std::min(probe_samples.size() - off, static_cast<size_t>(chunk));
    const auto losses = per_sample_loss(model, w, probe_samples.subspan(off, len));
    std::copy(losses.begin(), losses.end(), row + off);
  }
}

template <typename T>
void run_chain(ModelT<T>& model, std::span<const T> w_star,
               const std::vector<Sample>& train_samples, std::span<const Sample> probe_samples,
               const ProbeConfig& cfg, int chain, double* rows) {
  Rng rng = make_rng(cfg.seed, static_cast<std::uint64_t>(chain));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n_train = static_cast<int>(train_samples.size());
  const int m = std::min(cfg.minibatch, n_train);
  const std::int64_t d = static_cast<std::int64_t>(w_star.size());
  std::vector<T> w(w_star.begin(), w_star.end());
  std::vector<double> noise(static_cast<size_t>(d));
  std::vector<Sample> batch(static_cast<size_t>(m));
  const int total_steps = cfg.burnin + cfg.draws * cfg.stride;
  const double max_sq = cfg.divergence_norm * cfg.divergence_norm;
  int recorded = 0;
  for (int step = 1; step <= total_steps; ++step) {
    const auto picks = sample_without_replacement(n_train, m, rng);
    for (int i = 0; i < m; ++i) batch[static_cast<size_t>(i)] = train_samples[static_cast<size_t>(picks[static_cast<size_t>(i)])];
    std::vector<T> grad;
    try {
      grad = minibatch_grad(model, std::span<const T>(w), batch);
    } catch (const NonFiniteError& e) {
      throw DivergenceError(chain, step, e.what());
    }
    for (std::int64_t i = 0; i < d; ++i) noise[static_cast<size_t>(i)] = gauss(rng);
    apply_sgld_update(std::span<T>(w), w_star, std::span<const T>(grad), cfg.eps, cfg.nbeta,
                      cfg.gamma, m, std::span<const double>(noise));
    double norm_sq = 0.0;
    bool finite = true;
    for (std::int64_t i = 0; i < d; ++i) {
      const double wi = static_cast<double>(w[static_cast<size_t>(i)]);
      if (!std::isfinite(wi)) {
        finite = false;
        break;
      }
      norm_sq += wi * wi;
    }
    if (!finite) throw DivergenceError(chain, step, "non-finite parameter");
    if (norm_sq > max_sq)
      throw DivergenceError(chain, step,
                            "parameter norm " + std::to_string(std::sqrt(norm_sq)) +
                                " exceeds " + std::to_string(cfg.divergence_norm));
    if (step > cfg.burnin && (step - cfg.burnin) % cfg.stride == 0) {
      try {
        record_losses(model, std::span<const T>(w), probe_samples, cfg.eval_chunk,
                      rows + static_cast<std::int64_t>(recorded) * probe_samples.size());
      } catch (const NonFiniteError& e) {
        throw DivergenceError(chain, step, e.what());
      }
      ++recorded;
    }
  }
}

}  // namespace detail

template <typename T>
LossMatrix run_probe(ModelT<T>& model, std::span<const T> w_star,
                     const std::vector<Sample>& train_samples,
                     const std::vector<Sample>& probe_samples, const ProbeConfig& cfg) {
  cfg.validate();
  if (static_cast<std::int64_t>(w_star.size()) != model.param_count())
    throw ShapeError("run_probe: anchor has " + std::to_string(w_star.size()) +
                     " coordinates, model has " + std::to_string(model.param_count()));
  if (train_samples.empty()) throw SchemaError("run_probe: empty training set");
  if (probe_samples.empty()) throw SchemaError("run_probe: empty probe set");
  if (cfg.minibatch > static_cast<int>(train_samples.size()))
    throw std::invalid_argument("run_probe: minibatch exceeds training set size");

  LossMatrix out;
  out.chains = cfg.chains;
  out.draws = cfg.draws;
  for (const Sample& s : probe_samples) out.sample_ids.push_back(s.id);
  const std::int64_t n = static_cast<std::int64_t>(probe_samples.size());
  out.values.assign(static_cast<size_t>(out.rows()) * n, 0.0);
  out.anchor.resize(static_cast<size_t>(n));
  detail::record_losses(model, w_star, std::span<const Sample>(probe_samples), cfg.eval_chunk,
                        out.anchor.data());

  const int workers = std::min(cfg.threads, cfg.chains);
  if (workers == 1) {
    for (int c = 0; c < cfg.chains; ++c)
      detail::run_chain(model, w_star, train_samples, std::span<const Sample>(probe_samples), cfg,
                        c, out.values.data() + static_cast<std::int64_t>(c) * cfg.draws * n);
  } else {
    std::vector<std::exception_ptr> errors(static_cast<size_t>(cfg.chains));
    std::atomic<int> next{0};
    auto work = [&]() {
      ModelT<T> local = model;  // graphs are stateful; one copy per worker
      for (int c = next.fetch_add(1); c < cfg.chains; c = next.fetch_add(1)) {
        try {
          detail::run_chain(local, w_star, train_samples, std::span<const Sample>(probe_samples),
                            cfg, c, out.values.data() + static_cast<std::int64_t>(c) * cfg.draws * n);
        } catch (...) {
          errors[static_cast<size_t>(c)] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace losskern
