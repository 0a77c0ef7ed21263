#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lbt/lab/artifacts.hpp"
#include "lbt/lab/config.hpp"

namespace lbt::lab {

/// Outcome classes, matching the command-line exit codes.
enum class RunStatus {
  kOk = 0,
  kNumericAbort = 3,
  kCheckFailed = 4,
};

struct RunOptions {
  /// Overrides output.dir when non-empty.
  std::string out_dir;
  /// Overrides the configured seed list when non-empty.
  std::vector<std::uint64_t> seeds;
  /// Parallel workers for seed sweeps; each run stays single-threaded.
  unsigned threads = 1;
};

struct RunResult {
  RunStatus status = RunStatus::kOk;
  /// Machine-readable summary (also written as summary.json or report.json).
  nlohmann::json summary;
};

/// Resolves the worker count: explicit value, else LBT_LAB_THREADS, else 1.
unsigned resolve_threads(int requested);

/// Runs `job(i)` for i in [0, n) on up to `threads` workers. Exceptions are
/// rethrown after all workers finish, lowest index first.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& job);

RunResult run_train(const ExperimentConfig& cfg, const RunOptions& opts);
RunResult run_contour(const ExperimentConfig& cfg, const RunOptions& opts);
RunResult run_dynamics(const ExperimentConfig& cfg, const RunOptions& opts);
RunResult run_check(const ExperimentConfig& cfg, const RunOptions& opts);
/// Scores a samples CSV against a dataset's modes; writes metrics.json into
/// the output directory when it is non-empty.
RunResult run_metrics(const std::string& samples_csv, const std::string& dataset,
                      const std::string& out_dir, bool per_axis);

/// Artifacts of one training run in `dir`: manifest.json, trajectory.csv and,
/// unless the run aborted, samples.csv, metrics.json and kde.csv.
struct TrainArtifacts {
  training::Trajectory trajectory;
  std::vector<std::string> files;
};
TrainArtifacts train_to_directory(const ExperimentConfig& cfg, std::uint64_t seed,
                                  const fs::path& dir, const std::string& command = "train");

/// Header of trajectory.csv for a given set of theta columns.
std::vector<std::string> trajectory_header(const std::vector<std::string>& theta_names);
std::vector<double> trajectory_values(const training::TrajectoryRow& row);

nlohmann::json metrics_json(const metrics::MetricReport& rep);

}  // namespace lbt::lab
