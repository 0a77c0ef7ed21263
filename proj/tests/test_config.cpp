#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "lbt/error.hpp"
#include "lbt/lab/artifacts.hpp"
#include "lbt/lab/config.hpp"
#include "lbt/lab/runners.hpp"

using namespace lbt;
using namespace lbt::lab;

namespace {

std::size_t error_line(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  FAIL("expected a ConfigError");
  return 0;
}

std::string error_text(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  FAIL("expected a ConfigError");
  return {};
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("lbt_test_config_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("empty object yields the documented defaults") {
  const ExperimentConfig c = parse_config("{}");
  CHECK(c.train.unroll.steps == 5);
  CHECK(c.train.estimator_steps == 15);
  CHECK(c.output.final_samples == 500000);
  CHECK(c.seeds == std::vector<std::uint64_t>{0});
  CHECK(c.check.k_values == std::vector<std::size_t>{1, 3, 5, 15});
  CHECK(c.check.m_values == std::vector<std::size_t>{5, 10, 15, 50});
}

TEST_CASE("unknown keys are rejected with their line") {
  const std::string text = "{\n  \"train\": {\n    \"iterations\": 5,\n    \"iteratons\": 7\n  }\n}";
  CHECK(error_line(text) == 4);
  CHECK(error_text(text).find("train.iteratons") != std::string::npos);
  CHECK(error_line("{\n  \"colour\": 1\n}") == 2);
}

TEST_CASE("type errors are anchored to the offending value") {
  const std::string text = "{\n  \"unroll\": {\n    \"eta\": \"fast\"\n  }\n}";
  CHECK(error_line(text) == 3);
  CHECK(error_line("{\n  \"train\": {\"iterations\": -3}\n}") == 2);
  CHECK(error_line("{\n\n  \"dataset\": \"spiral\"\n}") == 3);
}

TEST_CASE("K = 0 cites the unroll invariant on its line") {
  const std::string text = "{\n  \"unroll\": {\n    \"eta\": 0.1,\n    \"steps\": 0\n  }\n}";
  CHECK(error_line(text) == 4);
  const std::string what = error_text(text);
  CHECK(what.find("unroll.steps") != std::string::npos);
  CHECK(what.find("line 4") == 0);
}

TEST_CASE("malformed JSON reports the line of the syntax error") {
  CHECK(error_line("{\n  \"seeds\": [0, 1,\n  \"x\": 2\n}") == 3);
}

TEST_CASE("parse, serialize, parse is the identity") {
  const std::string text = R"({
    "dataset": "grid25",
    "method": "lbt_gan",
    "generator": {"kind": "mlp", "hidden": [8, 8], "latent": 3},
    "estimator": {"kind": "mog", "components": 5},
    "discriminator": {"hidden": [4]},
    "unroll": {"steps": 3, "eta": 0.01, "optimizer": "adam_unrolled"},
    "train": {"lambda_g": 0.5, "gan_loss": "non_saturating", "iterations": 12},
    "output": {"kde_range": [-1.5, 1.5], "kde_bandwidth": [0.1, 0.2]},
    "seeds": [3, 9],
    "contour": {"starts": [[-1, 1]]},
    "check": {"kind": "influence", "instances": 4}
  })";
  const ExperimentConfig a = parse_config(text);
  const auto ja = to_json(a);
  const ExperimentConfig b = parse_config(ja.dump(2));
  CHECK(to_json(b) == ja);
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  CHECK(b.train.unroll.optimizer == bilevel::InnerOptimizer::kAdamUnrolled);
  CHECK(b.train.gan_loss == training::GanLoss::kNonSaturating);
  CHECK(b.seeds == std::vector<std::uint64_t>{3, 9});

  ExperimentConfig d = b;
  d.train.lr_theta *= 2.0;
  CHECK(config_hash(d) != config_hash(b));
}

TEST_CASE("fnv1a64 matches the published test vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("format_double round-trips and spells out non-finite values") {
  for (double x : {0.1, -2.5e-300, 1.0 / 3.0, 123456789.123456789}) {
    CHECK(std::stod(format_double(x)) == x);
  }
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(format_double(-std::numeric_limits<double>::infinity()) == "-inf");
}

TEST_CASE("matrix CSV round-trip and anchored read errors") {
  const fs::path dir = scratch_dir("csv");
  ensure_directory(dir);
  const ad::Tensor t = ad::Tensor::matrix({{1.0, -2.0}, {1.0 / 3.0, 1e-17}});
  write_matrix_csv(dir / "m.csv", t);
  CHECK(read_matrix_csv(dir / "m.csv") == t);
  std::ofstream(dir / "bad.csv") << "x0,x1\n1,2\n3,oops\n";
  try {
    read_matrix_csv(dir / "bad.csv");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("bad.csv:3") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("train run directory lists every artifact and reruns byte-identically") {
  const std::string text = R"({
    "dataset": "ring8", "method": "lbt_gan",
    "generator": {"hidden": [8]}, "estimator": {"kind": "mog", "components": 3},
    "discriminator": {"hidden": [4]}, "unroll": {"steps": 2},
    "train": {"iterations": 4, "estimator_steps": 2, "batch_generator": 16,
              "batch_estimator": 16, "batch_discriminator": 16, "batch_data": 16,
              "eval_batch": 32, "metric_samples": 100},
    "output": {"final_samples": 300, "kde_samples": 200, "kde_points": 8},
    "seeds": [0, 1]
  })";
  const ExperimentConfig cfg = parse_config(text);
  const fs::path a = scratch_dir("run_a");
  const fs::path b = scratch_dir("run_b");
  RunOptions oa;
  oa.out_dir = a.string();
  oa.threads = 2;
  RunOptions ob;
  ob.out_dir = b.string();
  CHECK(run_train(cfg, oa).status == RunStatus::kOk);
  CHECK(run_train(cfg, ob).status == RunStatus::kOk);
  for (const char* seed : {"seed_0", "seed_1"}) {
    const auto manifest = nlohmann::json::parse(slurp(a / seed / "manifest.json"));
    CHECK(manifest["status"] == "ok");
    CHECK(manifest["config_hash"] == config_hash(cfg));
    std::size_t listed = 0;
    for (const auto& f : manifest["files"]) {
      CHECK(fs::exists(a / seed / f.get<std::string>()));
      ++listed;
    }
    CHECK(listed == 5);
    for (const char* f : {"trajectory.csv", "samples.csv", "kde.csv", "metrics.json"}) {
      CHECK(slurp(a / seed / f) == slurp(b / seed / f));
    }
  }
  CHECK(slurp(a / "seed_0" / "trajectory.csv") != slurp(a / "seed_1" / "trajectory.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("an aborted run keeps its partial trajectory and reports numeric abort") {
  ExperimentConfig cfg = parse_config(R"({
    "dataset": "bimodal1d", "method": "lbt",
    "generator": {"kind": "parametric_mog", "init_means": [-3.0, 3.0]},
    "estimator": {"kind": "gaussian", "init": [1e308]},
    "train": {"iterations": 5, "lr_phi": 1e308, "estimator_optimizer": "sgd"},
    "output": {"final_samples": 10}
  })");
  const fs::path dir = scratch_dir("abort");
  RunOptions o;
  o.out_dir = dir.string();
  const RunResult r = run_train(cfg, o);
  CHECK(r.status == RunStatus::kNumericAbort);
  const auto manifest = nlohmann::json::parse(slurp(dir / "seed_0" / "manifest.json"));
  CHECK(manifest["status"] == "numeric_abort");
  CHECK(fs::exists(dir / "seed_0" / "trajectory.csv"));
  CHECK_FALSE(fs::exists(dir / "seed_0" / "samples.csv"));
  fs::remove_all(dir);
}

TEST_CASE("thread count resolution") {
  CHECK(resolve_threads(3) == 3);
  ::setenv("LBT_LAB_THREADS", "4", 1);
  CHECK(resolve_threads(0) == 4);
  ::setenv("LBT_LAB_THREADS", "many", 1);
  CHECK(resolve_threads(0) == 1);
  ::unsetenv("LBT_LAB_THREADS");
  CHECK(resolve_threads(0) == 1);
}

TEST_CASE("parallel_for visits every index once and rethrows the first failure") {
  std::vector<int> hits(37, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  CHECK(std::count(hits.begin(), hits.end(), 1) == 37);
  CHECK_THROWS_WITH_AS(parallel_for(10, 3,
                                    [](std::size_t i) {
                                      if (i == 7 || i == 4) throw ContractError(std::to_string(i));
                                    }),
                       "4", ContractError);
}
