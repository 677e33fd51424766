#pragma once

// A model bundles a graph with the node ids of its loss heads and a binder
// that validates a batch of samples against the model's input schema. All
// estimator and probe code talks to models exclusively through
// per_sample_loss / minibatch_grad on the canonical flat parameter vector.

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "losskern/data.hpp"
#include "losskern/graph.hpp"

namespace losskern {

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Named half-open parameter ranges (e.g. per-tower blocks).
struct ParamBlock {
  std::string name;
  std::int64_t begin = 0;
  std::int64_t end = 0;
};

template <typename T>
struct ModelT {
  std::string name;
  Graph<T> graph;
  NodeId loss_vec;   // [batch] per-sample losses
  NodeId loss_sum;   // scalar, sum over the batch
  NodeId loss_mean;  // scalar, mean over the batch (training objective)
  NodeId logits;     // [batch, classes] for classifiers; invalid otherwise
  std::function<void(Graph<T>&, std::span<const Sample>)> bind_batch;
  std::vector<ParamBlock> param_blocks;

  bool is_classifier() const { return logits.valid(); }
  std::int64_t param_count() const { return graph.param_count(); }
};

using Model = ModelT<float>;

template <typename T>
std::vector<double> per_sample_loss(ModelT<T>& m, std::span<const T> params,
                                    std::span<const Sample> batch) {
  if (batch.empty()) throw SchemaError(m.name + ": empty batch");
  m.graph.set_params(params);
  m.bind_batch(m.graph, batch);
  m.graph.forward();
  const Tensor<T>& lv = m.graph.value(m.loss_vec);
  std::vector<double> out(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) out[i] = static_cast<double>(lv[static_cast<std::int64_t>(i)]);
  return out;
}

// Gradient of the *summed* per-sample loss over the batch; divide by the
// batch size for the mean-loss gradient.
template <typename T>
std::vector<T> minibatch_grad(ModelT<T>& m, std::span<const T> params,
                              std::span<const Sample> batch) {
  if (batch.empty()) throw SchemaError(m.name + ": empty batch");
  m.graph.set_params(params);
  m.bind_batch(m.graph, batch);
  m.graph.forward();
  m.graph.backward(m.loss_sum);
  return m.graph.flatten_grads();
}

struct DatasetMetrics {
  double mean_loss = 0.0;
  double accuracy = 0.0;  // classifiers only, else 0
};

// Mean per-sample loss (and argmax accuracy for classifiers) over a dataset,
// evaluated in fixed-size chunks.
template <typename T>
DatasetMetrics dataset_metrics(ModelT<T>& m, std::span<const T> params,
                               std::span<const Sample> samples, int chunk = 256) {
  if (samples.empty()) throw SchemaError(m.name + ": empty dataset");
  if (chunk < 1) throw std::invalid_argument("dataset_metrics: chunk must be >= 1");
  double loss_acc = 0.0;
  std::int64_t correct = 0;
  for (size_t off = 0; off < samples.size(); off += static_cast<size_t>(chunk)) {
    const size_t len = std::min(samples.size() - off, static_cast<size_t>(chunk));
    const auto batch = samples.subspan(off, len);
    m.graph.set_params(params);
    m.bind_batch(m.graph, batch);
    m.graph.forward();
    const Tensor<T>& lv = m.graph.value(m.loss_vec);
    for (std::int64_t i = 0; i < lv.size(); ++i) loss_acc += static_cast<double>(lv[i]);
    if (m.is_classifier()) {
      const Tensor<T>& lg = m.graph.value(m.logits);
      const int V = lg.dim(1);
      for (size_t i = 0; i < len; ++i) {
        const T* row = lg.data() + static_cast<std::int64_t>(i) * V;
        int best = 0;
        for (int j = 1; j < V; ++j)
          if (row[j] > row[best]) best = j;  // ties resolve to the smaller id
        if (best == batch[i].label) ++correct;
      }
    }
  }
  DatasetMetrics out;
  out.mean_loss = loss_acc / static_cast<double>(samples.size());
  out.accuracy = m.is_classifier()
                     ? static_cast<double>(correct) / static_cast<double>(samples.size())
                     : 0.0;
  return out;
}

}  // namespace losskern
