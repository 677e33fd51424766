#pragma once

// On-disk formats and text exports. Three binary containers, each with an
// 8-byte magic, little-endian fixed-width fields, and a trailing FNV-1a hash
// of the numeric payload so corruption surfaces as a load error instead of a
// silently wrong analysis:
//
//   LKCKPT01  model checkpoint: parameter table + float32 payload
//   LKLOSSM1  loss matrix: JSON header + float64 rows + anchor losses
//   LKKERN01  kernel matrix: JSON header + packed lower triangle, float64
//
// JSON headers ride along as length-prefixed strings so provenance fields
// (config echo, upstream hashes) survive without format churn.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "losskern/analysis.hpp"
#include "losskern/data.hpp"
#include "losskern/kernel.hpp"
#include "losskern/model.hpp"
#include "losskern/probe.hpp"
#include "losskern/tensor.hpp"

namespace losskern {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FNV-1a, 64-bit.
inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a64(const void* data, size_t len, std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

namespace detail {

inline void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_i64(std::string& b, std::int64_t v) { put_u64(b, static_cast<std::uint64_t>(v)); }

inline void put_i32(std::string& b, std::int32_t v) { put_u32(b, static_cast<std::uint32_t>(v)); }

inline void put_f32(std::string& b, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(b, bits);
}

inline void put_f64(std::string& b, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(b, bits);
}

inline void put_str(std::string& b, const std::string& s) {
  if (s.size() > 0xffffffffull) throw IoError("serialized string too long");
  put_u32(b, static_cast<std::uint32_t>(s.size()));
  b.append(s);
}

// Bounds-checked little-endian reader over an in-memory file image.
class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  const unsigned char* need(size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError(what_ + ": truncated file");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_;
    pos_ += n;
    return p;
  }

  std::uint32_t u32() {
    const unsigned char* p = need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    const unsigned char* p = need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }

  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }

  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string str() {
    std::uint32_t len = u32();
    const unsigned char* p = need(len);
    return std::string(reinterpret_cast<const char*>(p), len);
  }

  void expect_magic(const char (&magic)[9]) {
    const unsigned char* p = need(8);
    if (std::memcmp(p, magic, 8) != 0) throw IoError(what_ + ": bad magic, not a " + magic + " file");
  }

  void expect_end() {
    if (pos_ != bytes_.size()) throw IoError(what_ + ": trailing bytes after payload");
  }

  size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::string what_;
  size_t pos_ = 0;
};

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return bytes;
}

inline nlohmann::json parse_header(const std::string& text, const std::string& what) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) throw IoError(what + ": header is not a JSON object");
  return j;
}

}  // namespace detail

// Hash of a whole file on disk, for provenance fields in downstream headers.
inline std::uint64_t file_hash(const std::string& path) {
  std::string bytes = detail::read_file(path);
  return fnv1a64(bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------
// Checkpoints (LKCKPT01): named parameter blocks + raw float32 payload.

struct CheckpointEntry {
  std::string name;
  Shape shape;
};

struct Checkpoint {
  std::string model_name;
  std::vector<CheckpointEntry> entries;
  std::vector<float> values;
  std::uint64_t payload_hash = 0;  // filled on save and load
};

template <typename T>
Checkpoint make_checkpoint(const ModelT<T>& m, std::span<const T> params) {
  if (static_cast<std::int64_t>(params.size()) != m.param_count())
    throw ShapeError("make_checkpoint: got " + std::to_string(params.size()) + " values for " +
                     std::to_string(m.param_count()) + " parameters");
  Checkpoint c;
  c.model_name = m.name;
  for (const auto& p : m.graph.param_table()) c.entries.push_back({p.name, p.shape});
  c.values.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) c.values[i] = static_cast<float>(params[i]);
  return c;
}

inline std::uint64_t save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::int64_t total = 0;
  for (const CheckpointEntry& e : c.entries) {
    std::int64_t numel = 1;
    for (int d : e.shape) numel *= d;
    total += numel;
  }
  if (total != static_cast<std::int64_t>(c.values.size()))
    throw IoError("save_checkpoint: shape table covers " + std::to_string(total) +
                  " values but payload has " + std::to_string(c.values.size()));

  std::string payload;
  payload.reserve(c.values.size() * 4);
  for (float v : c.values) detail::put_f32(payload, v);
  const std::uint64_t h = fnv1a64(payload.data(), payload.size());

  std::string out;
  out.append("LKCKPT01");
  detail::put_str(out, c.model_name);
  detail::put_i64(out, static_cast<std::int64_t>(c.values.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(c.entries.size()));
  for (const CheckpointEntry& e : c.entries) {
    detail::put_str(out, e.name);
    detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) detail::put_i32(out, d);
  }
  out.append(payload);
  detail::put_u64(out, h);
  detail::write_file(path, out);
  return h;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  detail::Reader r(bytes, "load_checkpoint(" + path + ")");
  r.expect_magic("LKCKPT01");
  Checkpoint c;
  c.model_name = r.str();
  const std::int64_t d = r.i64();
  if (d < 0) throw IoError("load_checkpoint: negative parameter count");
  const std::uint32_t n_entries = r.u32();
  std::int64_t total = 0;
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    CheckpointEntry e;
    e.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw IoError("load_checkpoint: implausible tensor rank");
    std::int64_t numel = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const std::int32_t dim = r.i32();
      if (dim < 0) throw IoError("load_checkpoint: negative dimension in shape table");
      e.shape.push_back(dim);
      numel *= dim;
    }
    total += numel;
    c.entries.push_back(std::move(e));
  }
  if (total != d)
    throw IoError("load_checkpoint: shape table covers " + std::to_string(total) +
                  " values but header declares " + std::to_string(d));
  const size_t payload_at = r.pos();
  c.values.resize(static_cast<size_t>(d));
  for (std::int64_t i = 0; i < d; ++i) c.values[static_cast<size_t>(i)] = r.f32();
  const std::uint64_t stored = r.u64();
  r.expect_end();
  const std::uint64_t h = fnv1a64(bytes.data() + payload_at, static_cast<size_t>(d) * 4);
  if (h != stored)
    throw IoError("load_checkpoint(" + path + "): payload hash mismatch, file is corrupt");
  c.payload_hash = h;
  return c;
}

// Checkpoint -> parameter vector for a freshly built model, cross-checking the
// parameter table so a checkpoint never silently loads into the wrong
// architecture.
template <typename T>
std::vector<T> params_from_checkpoint(const Checkpoint& c, const ModelT<T>& m) {
  if (c.model_name != m.name)
    throw IoError("checkpoint is for model '" + c.model_name + "', expected '" + m.name + "'");
  const auto table = m.graph.param_table();
  if (table.size() != c.entries.size())
    throw IoError("checkpoint has " + std::to_string(c.entries.size()) +
                  " parameter blocks, model has " + std::to_string(table.size()));
  for (size_t i = 0; i < table.size(); ++i) {
    if (table[i].name != c.entries[i].name || table[i].shape != c.entries[i].shape)
      throw IoError("checkpoint block '" + c.entries[i].name + "' " +
                    shape_str(c.entries[i].shape) + " does not match model block '" +
                    table[i].name + "' " + shape_str(table[i].shape));
  }
  if (static_cast<std::int64_t>(c.values.size()) != m.param_count())
    throw IoError("checkpoint payload size does not match model parameter count");
  std::vector<T> out(c.values.size());
  for (size_t i = 0; i < c.values.size(); ++i) out[i] = static_cast<T>(c.values[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Loss matrices (LKLOSSM1): JSON header, float64 draw rows, anchor losses.

inline nlohmann::json probe_config_json(const ProbeConfig& cfg) {
  return nlohmann::json{{"eps", cfg.eps},
                        {"nbeta", cfg.nbeta},
                        {"gamma", cfg.gamma},
                        {"minibatch", cfg.minibatch},
                        {"chains", cfg.chains},
                        {"draws", cfg.draws},
                        {"burnin", cfg.burnin},
                        {"stride", cfg.stride},
                        {"eval_chunk", cfg.eval_chunk},
                        {"threads", cfg.threads},
                        {"seed", cfg.seed},
                        {"divergence_norm", cfg.divergence_norm}};
}

inline ProbeConfig probe_config_from_json(const nlohmann::json& j) {
  ProbeConfig cfg;
  cfg.eps = j.value("eps", cfg.eps);
  cfg.nbeta = j.value("nbeta", cfg.nbeta);
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.minibatch = j.value("minibatch", cfg.minibatch);
  cfg.chains = j.value("chains", cfg.chains);
  cfg.draws = j.value("draws", cfg.draws);
  cfg.burnin = j.value("burnin", cfg.burnin);
  cfg.stride = j.value("stride", cfg.stride);
  cfg.eval_chunk = j.value("eval_chunk", cfg.eval_chunk);
  cfg.threads = j.value("threads", cfg.threads);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.divergence_norm = j.value("divergence_norm", cfg.divergence_norm);
  return cfg;
}

// `extra` carries provenance (config echo, checkpoint hash); the structural
// fields n/chains/draws/sample_ids always reflect the matrix itself.
inline std::uint64_t save_loss_matrix(const std::string& path, const LossMatrix& L,
                                      const nlohmann::json& extra = nlohmann::json::object()) {
  const int n = L.cols();
  if (n < 1 || L.chains < 1 || L.draws < 1) throw IoError("save_loss_matrix: empty matrix");
  if (L.values.size() != static_cast<size_t>(L.rows()) * static_cast<size_t>(n))
    throw IoError("save_loss_matrix: value buffer does not match chains*draws*n");
  if (L.anchor.size() != static_cast<size_t>(n))
    throw IoError("save_loss_matrix: anchor length does not match sample count");

  nlohmann::json header = extra.is_null() ? nlohmann::json::object() : extra;
  if (!header.is_object()) throw IoError("save_loss_matrix: extra header must be a JSON object");
  header["n"] = n;
  header["chains"] = L.chains;
  header["draws"] = L.draws;
  header["sample_ids"] = L.sample_ids;

  std::string payload;
  payload.reserve((L.values.size() + L.anchor.size()) * 8);
  for (double v : L.values) detail::put_f64(payload, v);
  for (double v : L.anchor) detail::put_f64(payload, v);
  const std::uint64_t h = fnv1a64(payload.data(), payload.size());

  std::string out;
  out.append("LKLOSSM1");
  detail::put_str(out, header.dump());
  out.append(payload);
  detail::put_u64(out, h);
  detail::write_file(path, out);
  return h;
}

struct LossMatrixFile {
  LossMatrix matrix;
  nlohmann::json header;
  std::uint64_t payload_hash = 0;
};

inline LossMatrixFile load_loss_matrix(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  const std::string what = "load_loss_matrix(" + path + ")";
  detail::Reader r(bytes, what);
  r.expect_magic("LKLOSSM1");
  LossMatrixFile f;
  f.header = detail::parse_header(r.str(), what);
  for (const char* key : {"n", "chains", "draws", "sample_ids"})
    if (!f.header.contains(key)) throw IoError(what + ": header missing '" + key + "'");
  const int n = f.header["n"].get<int>();
  f.matrix.chains = f.header["chains"].get<int>();
  f.matrix.draws = f.header["draws"].get<int>();
  f.matrix.sample_ids = f.header["sample_ids"].get<std::vector<std::int64_t>>();
  if (n < 1 || f.matrix.chains < 1 || f.matrix.draws < 1)
    throw IoError(what + ": non-positive dimensions in header");
  if (static_cast<int>(f.matrix.sample_ids.size()) != n)
    throw IoError(what + ": sample_ids length does not match n");

  const size_t payload_at = r.pos();
  const size_t cells = static_cast<size_t>(f.matrix.rows()) * static_cast<size_t>(n);
  f.matrix.values.resize(cells);
  for (size_t i = 0; i < cells; ++i) f.matrix.values[i] = r.f64();
  f.matrix.anchor.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) f.matrix.anchor[static_cast<size_t>(i)] = r.f64();
  const std::uint64_t stored = r.u64();
  r.expect_end();
  const std::uint64_t h = fnv1a64(bytes.data() + payload_at, (cells + static_cast<size_t>(n)) * 8);
  if (h != stored) throw IoError(what + ": payload hash mismatch, file is corrupt");
  for (double v : f.matrix.values)
    if (!std::isfinite(v)) throw IoError(what + ": non-finite loss value in payload");
  for (double v : f.matrix.anchor)
    if (!std::isfinite(v)) throw IoError(what + ": non-finite anchor loss in payload");
  f.payload_hash = h;
  return f;
}

// ---------------------------------------------------------------------------
// Kernel matrices (LKKERN01): packed lower triangle of a symmetric matrix.

enum class KernelKind { kCovariance, kCorrelation, kDistance };

inline std::string kernel_kind_name(KernelKind k) {
  switch (k) {
    case KernelKind::kCovariance: return "covariance";
    case KernelKind::kCorrelation: return "correlation";
    case KernelKind::kDistance: return "distance";
  }
  throw IoError("unknown kernel kind");
}

inline KernelKind kernel_kind_from(const std::string& s) {
  if (s == "covariance") return KernelKind::kCovariance;
  if (s == "correlation") return KernelKind::kCorrelation;
  if (s == "distance") return KernelKind::kDistance;
  throw IoError("unknown kernel kind '" + s + "'");
}

inline std::uint64_t save_kernel(const std::string& path, const Tensor<double>& M, KernelKind kind,
                                 const std::vector<std::int64_t>& sample_ids,
                                 const nlohmann::json& extra = nlohmann::json::object()) {
  detail::require_square(M, "save_kernel");
  const int n = M.dim(0);
  if (static_cast<int>(sample_ids.size()) != n)
    throw IoError("save_kernel: sample_ids length does not match matrix size");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j)
      if (M[static_cast<std::int64_t>(i) * n + j] != M[static_cast<std::int64_t>(j) * n + i])
        throw IoError("save_kernel: matrix is not symmetric, refusing to pack lower triangle");

  nlohmann::json header = extra.is_null() ? nlohmann::json::object() : extra;
  if (!header.is_object()) throw IoError("save_kernel: extra header must be a JSON object");
  header["n"] = n;
  header["kind"] = kernel_kind_name(kind);
  header["sample_ids"] = sample_ids;

  std::string payload;
  payload.reserve(static_cast<size_t>(n) * (n + 1) / 2 * 8);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) detail::put_f64(payload, M[static_cast<std::int64_t>(i) * n + j]);
  const std::uint64_t h = fnv1a64(payload.data(), payload.size());

  std::string out;
  out.append("LKKERN01");
  detail::put_str(out, header.dump());
  out.append(payload);
  detail::put_u64(out, h);
  detail::write_file(path, out);
  return h;
}

struct KernelFile {
  Tensor<double> matrix;
  KernelKind kind = KernelKind::kCovariance;
  std::vector<std::int64_t> sample_ids;
  nlohmann::json header;
  std::uint64_t payload_hash = 0;
};

inline KernelFile load_kernel(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  const std::string what = "load_kernel(" + path + ")";
  detail::Reader r(bytes, what);
  r.expect_magic("LKKERN01");
  KernelFile f;
  f.header = detail::parse_header(r.str(), what);
  for (const char* key : {"n", "kind", "sample_ids"})
    if (!f.header.contains(key)) throw IoError(what + ": header missing '" + key + "'");
  const int n = f.header["n"].get<int>();
  if (n < 1) throw IoError(what + ": non-positive n in header");
  f.kind = kernel_kind_from(f.header["kind"].get<std::string>());
  f.sample_ids = f.header["sample_ids"].get<std::vector<std::int64_t>>();
  if (static_cast<int>(f.sample_ids.size()) != n)
    throw IoError(what + ": sample_ids length does not match n");

  const size_t payload_at = r.pos();
  const size_t cells = static_cast<size_t>(n) * (n + 1) / 2;
  f.matrix = Tensor<double>({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      const double v = r.f64();
      f.matrix[static_cast<std::int64_t>(i) * n + j] = v;
      f.matrix[static_cast<std::int64_t>(j) * n + i] = v;
    }
  const std::uint64_t stored = r.u64();
  r.expect_end();
  const std::uint64_t h = fnv1a64(bytes.data() + payload_at, cells * 8);
  if (h != stored) throw IoError(what + ": payload hash mismatch, file is corrupt");
  f.payload_hash = h;
  return f;
}

// ---------------------------------------------------------------------------
// Text exports for plotting and spreadsheet work.

namespace detail {

inline std::string fmt_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

inline std::string fmt_g9(float v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return std::string(buf);
}

}  // namespace detail

inline void kernel_to_csv(const std::string& path, const Tensor<double>& M,
                          const std::vector<std::int64_t>& sample_ids) {
  detail::require_square(M, "kernel_to_csv");
  const int n = M.dim(0);
  if (n > 2000)
    throw IoError("kernel_to_csv: refusing to export n=" + std::to_string(n) +
                  " as CSV (limit 2000); use the binary kernel format");
  if (static_cast<int>(sample_ids.size()) != n)
    throw IoError("kernel_to_csv: sample_ids length does not match matrix size");
  std::string out = "id";
  for (std::int64_t id : sample_ids) out += "," + std::to_string(id);
  out += "\n";
  for (int i = 0; i < n; ++i) {
    out += std::to_string(sample_ids[static_cast<size_t>(i)]);
    for (int j = 0; j < n; ++j)
      out += "," + detail::fmt_g17(M[static_cast<std::int64_t>(i) * n + j]);
    out += "\n";
  }
  detail::write_file(path, out);
}

// Neighbor edges as "source,target,weight" rows (CSV) or tab-separated
// triples with no header (edge-list, for graph tools).
inline void neighbors_to_csv(const std::string& path, const NeighborGraph& g,
                             const std::vector<std::int64_t>& sample_ids) {
  if (sample_ids.size() != g.ids.size())
    throw IoError("neighbors_to_csv: sample_ids length does not match graph size");
  std::string out = "source,target,weight\n";
  for (size_t i = 0; i < g.ids.size(); ++i)
    for (size_t j = 0; j < g.ids[i].size(); ++j)
      out += std::to_string(sample_ids[i]) + "," +
             std::to_string(sample_ids[static_cast<size_t>(g.ids[i][j])]) + "," +
             detail::fmt_g17(g.weights[i][j]) + "\n";
  detail::write_file(path, out);
}

inline void neighbors_to_edge_list(const std::string& path, const NeighborGraph& g,
                                   const std::vector<std::int64_t>& sample_ids) {
  if (sample_ids.size() != g.ids.size())
    throw IoError("neighbors_to_edge_list: sample_ids length does not match graph size");
  std::string out;
  for (size_t i = 0; i < g.ids.size(); ++i)
    for (size_t j = 0; j < g.ids[i].size(); ++j)
      out += std::to_string(sample_ids[i]) + "\t" +
             std::to_string(sample_ids[static_cast<size_t>(g.ids[i][j])]) + "\t" +
             detail::fmt_g17(g.weights[i][j]) + "\n";
  detail::write_file(path, out);
}

inline void lift_to_csv(const std::string& path, const std::vector<LiftCell>& cells) {
  std::string out = "query_depth,ancestor_depth,lift,nn_pairs,all_pairs\n";
  for (const LiftCell& c : cells)
    out += std::to_string(c.query_depth) + "," + std::to_string(c.ancestor_depth) + "," +
           detail::fmt_g17(c.lift) + "," + std::to_string(c.nn_pairs) + "," +
           std::to_string(c.all_pairs) + "\n";
  detail::write_file(path, out);
}

inline void scores_to_csv(const std::string& path, const std::vector<std::int64_t>& sample_ids,
                          const std::vector<double>& scores, const std::string& column = "score") {
  if (sample_ids.size() != scores.size())
    throw IoError("scores_to_csv: sample_ids and scores differ in length");
  std::string out = "id," + column + "\n";
  for (size_t i = 0; i < scores.size(); ++i)
    out += std::to_string(sample_ids[i]) + "," + detail::fmt_g17(scores[i]) + "\n";
  detail::write_file(path, out);
}

inline void hierarchy_to_tsv(const std::string& path, const LabelHierarchy& h) {
  std::string out;
  for (const auto& [parent, child] : h.edges()) out += parent + "\t" + child + "\n";
  detail::write_file(path, out);
}

inline void samples_to_csv(const std::string& path, const std::vector<Sample>& samples) {
  std::string out = "id,task,label,target,tokens,features\n";
  for (const Sample& s : samples) {
    out += std::to_string(s.id) + "," + std::to_string(s.task) + "," + std::to_string(s.label) +
           "," + detail::fmt_g9(s.target) + ",";
    for (size_t i = 0; i < s.tokens.size(); ++i) {
      if (i) out += ";";
      out += std::to_string(s.tokens[i]);
    }
    out += ",";
    for (size_t i = 0; i < s.features.size(); ++i) {
      if (i) out += ";";
      out += detail::fmt_g9(s.features[i]);
    }
    out += "\n";
  }
  detail::write_file(path, out);
}

}  // namespace losskern
