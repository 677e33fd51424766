#include <catch2/catch_amalgamated.hpp>

#include <sys/file.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fcntl.h>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "losskern/io.hpp"
#include "losskern/pipeline.hpp"

using namespace losskern;
namespace fs = std::filesystem;

namespace {

fs::path tmp_root() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "losskern_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LOSSKERN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string write_config(const std::string& name, const nlohmann::json& j) {
  const std::string path = (tmp_root() / (name + ".json")).string();
  std::ofstream out(path);
  out << j.dump(2);
  return path;
}

nlohmann::json quad_config(const std::string& name) {
  nlohmann::json j;
  j["name"] = name;
  j["seed"] = 7;
  j["output_dir"] = (tmp_root() / name).string();
  j["model"] = {{"kind", "quadratic"},
                {"coeffs", nlohmann::json::array({{1.0, 0.3}, {0.5, -0.2}, {2.0, 0.5}})}};
  j["probe"] = {{"eps", 0.01},    {"nbeta", 6.0}, {"gamma", 4.0}, {"minibatch", 3},
                {"chains", 3},    {"draws", 40},  {"burnin", 20}, {"seed", 9}};
  j["analysis"] = {{"k", 2}};
  return j;
}

std::string out_file(const nlohmann::json& cfg, const std::string& name) {
  return (fs::path(cfg["output_dir"].get<std::string>()) / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("usage errors exit with the validation code") {
  CHECK(run_cli("") == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("train") == 2);                      // missing --config
  CHECK(run_cli("train --config /no/such.json") == 2);
  CHECK(run_cli("--help") == 0);
}

TEST_CASE("quadratic training writes a checkpoint, a log, and a manifest") {
  nlohmann::json cfg = quad_config("quad_train");
  const std::string path = write_config("quad_train", cfg);
  REQUIRE(run_cli("train --config " + path) == 0);

  Checkpoint c = load_checkpoint(out_file(cfg, "checkpoint_final.ckpt"));
  CHECK(c.values.size() == 1);

  nlohmann::json manifest = nlohmann::json::parse(slurp(out_file(cfg, "train_manifest.json")));
  CHECK(manifest["reached"].get<bool>());
  CHECK(manifest["config_hash"].get<std::uint64_t>() != 0);
  CHECK(fs::exists(out_file(cfg, "train_log.csv")));
  CHECK(fs::exists(out_file(cfg, "samples.csv")));
}

TEST_CASE("single-chain two-draw probe yields a 2-row matrix") {
  nlohmann::json cfg = quad_config("quad_smoke");
  cfg["probe"]["chains"] = 1;
  cfg["probe"]["draws"] = 2;
  const std::string path = write_config("quad_smoke", cfg);
  REQUIRE(run_cli("train --config " + path) == 0);
  REQUIRE(run_cli("probe --config " + path) == 0);

  LossMatrixFile f = load_loss_matrix(out_file(cfg, "loss_matrix.lm"));
  CHECK(f.matrix.rows() == 2);
  CHECK(f.matrix.cols() == 3);
  CHECK(f.header["checkpoint_hash"].get<std::uint64_t>() != 0);
}

TEST_CASE("probing twice with the same seed gives byte-identical files") {
  nlohmann::json cfg = quad_config("quad_det");
  const std::string path = write_config("quad_det", cfg);
  REQUIRE(run_cli("train --config " + path) == 0);
  REQUIRE(run_cli("probe --config " + path + " --tag first") == 0);
  REQUIRE(run_cli("probe --config " + path + " --tag second") == 0);
  CHECK(slurp(out_file(cfg, "first.lm")) == slurp(out_file(cfg, "second.lm")));
}

TEST_CASE("analyze emits kernels, reports, and provenance stamps") {
  nlohmann::json cfg = quad_config("quad_analyze");
  const std::string path = write_config("quad_analyze", cfg);
  REQUIRE(run_cli("train --config " + path) == 0);
  REQUIRE(run_cli("probe --config " + path) == 0);
  const std::string matrix = out_file(cfg, "loss_matrix.lm");
  REQUIRE(run_cli("analyze --config " + path + " " + matrix) == 0);

  KernelFile K = load_kernel(out_file(cfg, "loss_matrix.K.kn"));
  KernelFile R = load_kernel(out_file(cfg, "loss_matrix.R.kn"));
  KernelFile D = load_kernel(out_file(cfg, "loss_matrix.d.kn"));
  CHECK(K.kind == KernelKind::kCovariance);
  CHECK(R.kind == KernelKind::kCorrelation);
  CHECK(D.kind == KernelKind::kDistance);
  CHECK(K.sample_ids == std::vector<std::int64_t>{0, 1, 2});
  CHECK(K.header["source_hash"].get<std::uint64_t>() ==
        load_loss_matrix(matrix).payload_hash);

  nlohmann::json metrics = nlohmann::json::parse(slurp(out_file(cfg, "loss_matrix.metrics.json")));
  CHECK(metrics["lambda_hat"].is_number());
  CHECK(metrics["trace_variance"].get<double>() > 0.0);
  CHECK(fs::exists(out_file(cfg, "loss_matrix.neighbors.csv")));
  CHECK(fs::exists(out_file(cfg, "loss_matrix.pc1.csv")));
}

TEST_CASE("analyze refuses matrices from a different config") {
  nlohmann::json cfg = quad_config("quad_prov");
  const std::string path = write_config("quad_prov", cfg);
  REQUIRE(run_cli("train --config " + path) == 0);
  REQUIRE(run_cli("probe --config " + path) == 0);

  nlohmann::json other = cfg;
  other["seed"] = 8;  // different hash, same output dir
  const std::string other_path = write_config("quad_prov_other", other);
  CHECK(run_cli("analyze --config " + other_path + " " + out_file(cfg, "loss_matrix.lm")) == 4);
}

TEST_CASE("analyze refuses matrices whose sample ids disagree") {
  nlohmann::json cfg = quad_config("quad_ids");
  const std::string path = write_config("quad_ids", cfg);
  REQUIRE(run_cli("train --config " + path) == 0);
  REQUIRE(run_cli("probe --config " + path) == 0);
  const std::string matrix = out_file(cfg, "loss_matrix.lm");

  // forge a companion matrix whose ids are permuted but whose provenance
  // stamp is intact
  LossMatrixFile f = load_loss_matrix(matrix);
  std::swap(f.matrix.sample_ids[0], f.matrix.sample_ids[2]);
  const std::string forged = out_file(cfg, "forged.lm");
  nlohmann::json extra = f.header;
  extra.erase("n");
  extra.erase("chains");
  extra.erase("draws");
  extra.erase("sample_ids");
  save_loss_matrix(forged, f.matrix, extra);

  CHECK(run_cli("analyze --config " + path + " " + matrix + " " + forged) == 2);
}

TEST_CASE("divergent probes exit with the divergence code") {
  nlohmann::json cfg = quad_config("quad_div");
  cfg["probe"]["eps"] = 1e6;
  cfg["probe"]["gamma"] = 100.0;
  const std::string path = write_config("quad_div", cfg);
  REQUIRE(run_cli("train --config " + path) == 0);
  CHECK(run_cli("probe --config " + path) == 3);
}

TEST_CASE("a training run that misses its target exits 1 and keeps artifacts") {
  nlohmann::json cfg;
  cfg["name"] = "towers_miss";
  cfg["seed"] = 3;
  cfg["output_dir"] = (tmp_root() / "towers_miss").string();
  cfg["model"] = {{"kind", "disjoint_towers"}, {"features", 2}};
  cfg["data"] = {{"n_per_task", 16}, {"noise", 0.05}};
  cfg["train"] = {{"lr", 0.01}, {"batch", 8},       {"max_steps", 5},
                  {"log_every", 5}, {"target_loss", 1e-12}};
  const std::string path = write_config("towers_miss", cfg);
  CHECK(run_cli("train --config " + path) == 1);
  CHECK(fs::exists(out_file(cfg, "checkpoint_last.ckpt")));
  nlohmann::json manifest = nlohmann::json::parse(slurp(out_file(cfg, "train_manifest.json")));
  CHECK_FALSE(manifest["reached"].get<bool>());
}

TEST_CASE("a locked output directory refuses concurrent commands") {
  nlohmann::json cfg = quad_config("quad_lock");
  const std::string path = write_config("quad_lock", cfg);
  REQUIRE(run_cli("train --config " + path) == 0);

  const std::string lock_path = out_file(cfg, ".lock");
  const int fd = ::open(lock_path.c_str(), O_CREAT | O_RDWR, 0644);
  REQUIRE(fd >= 0);
  REQUIRE(::flock(fd, LOCK_EX | LOCK_NB) == 0);
  CHECK(run_cli("probe --config " + path) == 2);
  ::close(fd);
  CHECK(run_cli("probe --config " + path) == 0);
}

TEST_CASE("gamma sweeps emit per-point kernels and a CKA curve ending at 1") {
  nlohmann::json cfg = quad_config("quad_sweep");
  cfg["sweep"] = {{"gammas", {4.0, 8.0}}};
  const std::string path = write_config("quad_sweep", cfg);
  REQUIRE(run_cli("train --config " + path) == 0);
  REQUIRE(run_cli("sweep --config " + path) == 0);

  CHECK(load_kernel(out_file(cfg, "sweep_gamma_4.K.kn")).kind == KernelKind::kCovariance);
  CHECK(load_kernel(out_file(cfg, "sweep_gamma_8.K.kn")).kind == KernelKind::kCovariance);
  const std::string table = slurp(out_file(cfg, "sweep_cka.csv"));
  CHECK(table.find("sweep_gamma_8,8,1\n") != std::string::npos);

  SECTION("a single-point sweep is a validation error") {
    cfg["sweep"] = {{"gammas", {4.0}}};
    const std::string bad = write_config("quad_sweep_bad", cfg);
    CHECK(run_cli("sweep --config " + bad) == 2);
  }
}

TEST_CASE("export converts binary artifacts to text") {
  nlohmann::json cfg = quad_config("quad_export");
  const std::string path = write_config("quad_export", cfg);
  REQUIRE(run_cli("train --config " + path) == 0);
  REQUIRE(run_cli("probe --config " + path) == 0);
  REQUIRE(run_cli("analyze --config " + path + " " + out_file(cfg, "loss_matrix.lm")) == 0);

  const std::string kcsv = (tmp_root() / "K.csv").string();
  REQUIRE(run_cli("export --input " + out_file(cfg, "loss_matrix.K.kn") + " --output " + kcsv) == 0);
  CHECK(slurp(kcsv).rfind("id,0,1,2\n", 0) == 0);

  const std::string edges = (tmp_root() / "K.edges").string();
  REQUIRE(run_cli("export --input " + out_file(cfg, "loss_matrix.K.kn") +
                  " --format edge-list --output " + edges) == 0);
  const std::string edge_text = slurp(edges);
  CHECK(std::count(edge_text.begin(), edge_text.end(), '\n') == 3);  // 3 choose 2

  const std::string lcsv = (tmp_root() / "L.csv").string();
  REQUIRE(run_cli("export --input " + out_file(cfg, "loss_matrix.lm") + " --output " + lcsv) == 0);
  CHECK(slurp(lcsv).rfind("chain,draw,0,1,2\n", 0) == 0);

  CHECK(run_cli("export --input " + out_file(cfg, "checkpoint_final.ckpt") + " --output " +
                (tmp_root() / "c.csv").string()) == 2);
  CHECK(run_cli("export --input " + out_file(cfg, "loss_matrix.lm") +
                " --format edge-list --output " + edges) == 2);
}
