#include "lbt/lab/runners.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include "lbt/dist/datasets.hpp"
#include "lbt/dist/divergence.hpp"
#include "lbt/error.hpp"
#include "lbt/lab/checks.hpp"
#include "lbt/metrics/metrics.hpp"

namespace lbt::lab {

using nlohmann::json;

namespace {

// Stream ids above the trainer's own roles.
constexpr std::uint64_t kFinalSamplesStream = 101;
constexpr std::uint64_t kDynamicsInitStream = 99;

fs::path output_root(const ExperimentConfig& cfg, const RunOptions& opts) {
  return opts.out_dir.empty() ? fs::path(cfg.output.dir) : fs::path(opts.out_dir);
}

std::vector<std::uint64_t> seeds_of(const ExperimentConfig& cfg, const RunOptions& opts) {
  return opts.seeds.empty() ? cfg.seeds : opts.seeds;
}

json failure_json(const training::Failure& f) {
  return {{"iteration", f.iteration}, {"step", f.step}, {"what", f.what}};
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

dist::QuadratureGrid kde_grid_for(const OutputSpec& out, const dist::GaussianMixture& data) {
  const std::size_t d = data.dim();
  double lo = 0.0;
  double hi = 0.0;
  if (!out.kde_range.empty()) {
    lo = out.kde_range[0];
    hi = out.kde_range[1];
  } else {
    const auto& v = data.means.values();
    lo = *std::min_element(v.begin(), v.end()) - 0.5;
    hi = *std::max_element(v.begin(), v.end()) + 0.5;
  }
  if (d == 1) return dist::QuadratureGrid::line(lo, hi, out.kde_points);
  if (d == 2) return dist::QuadratureGrid::square(lo, hi, out.kde_points);
  throw ContractError("kde output supports one- or two-dimensional data only");
}

ad::Tensor head_rows(const ad::Tensor& x, std::size_t n) {
  n = std::min(n, x.rows());
  const auto& v = x.values();
  return ad::Tensor(ad::Shape{n, x.cols()},
                    std::vector<double>(v.begin(), v.begin() + static_cast<long>(n * x.cols())));
}

RunStatus worst(RunStatus a, RunStatus b) {
  return static_cast<int>(a) >= static_cast<int>(b) ? a : b;
}

}  // namespace

unsigned resolve_threads(int requested) {
  if (requested > 0) return static_cast<unsigned>(requested);
  if (const char* env = std::getenv("LBT_LAB_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  return 1;
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& job) {
  const std::size_t workers = std::min<std::size_t>(std::max(threads, 1u), n);
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(mu);
            if (next >= n) return;
            i = next++;
          }
          try {
            job(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<std::string> trajectory_header(const std::vector<std::string>& theta_names) {
  std::vector<std::string> h{"iteration"};
  for (const auto& n : theta_names) h.push_back("theta_" + n);
  for (const char* c : {"theta_norm", "f_e", "f_g", "f_gan", "gen_loss", "hq_fraction",
                        "modes_covered", "intra_mode_kl"}) {
    h.emplace_back(c);
  }
  return h;
}

std::vector<double> trajectory_values(const training::TrajectoryRow& row) {
  std::vector<double> v{static_cast<double>(row.iteration)};
  v.insert(v.end(), row.theta.begin(), row.theta.end());
  v.insert(v.end(), {row.theta_norm, row.f_e, row.f_g, row.f_gan, row.gen_loss, row.hq_fraction,
                     row.modes_covered, row.intra_mode_kl});
  return v;
}

json metrics_json(const metrics::MetricReport& rep) {
  json per_mode = json::array();
  for (double k : rep.per_mode_kl) per_mode.push_back(finite_or_null(k));
  return {{"samples", rep.n},
          {"high_quality_fraction", rep.high_quality_fraction},
          {"modes_covered", rep.modes_covered},
          {"mode_counts", rep.mode_counts},
          {"intra_mode_kl", finite_or_null(rep.intra_mode_kl)},
          {"per_mode_kl", per_mode},
          {"excluded_modes", rep.excluded_modes}};
}

TrainArtifacts train_to_directory(const ExperimentConfig& cfg, std::uint64_t seed,
                                  const fs::path& dir, const std::string& command) {
  ensure_directory(dir);
  training::TrainConfig tc = cfg.train;
  tc.seed = seed;
  Manifest manifest(dir, cfg, command, seed);
  manifest.begin();

  training::Trainer trainer(tc);
  TrainArtifacts art;
  {
    CsvWriter csv(dir / "trajectory.csv", trajectory_header(trainer.theta_names()));
    manifest.add_file("trajectory.csv");
    art.files.push_back("trajectory.csv");
    art.trajectory = trainer.run(
        [&](const training::TrajectoryRow& row) { csv.row(trajectory_values(row)); });
  }

  if (art.trajectory.failure) {
    manifest.finish("numeric_abort", {{"failure", failure_json(*art.trajectory.failure)}});
    return art;
  }

  ad::Rng rng = ad::Rng::stream(seed, kFinalSamplesStream);
  const ad::Tensor samples = trainer.sample(cfg.output.final_samples, rng);
  write_matrix_csv(dir / "samples.csv", samples);
  manifest.add_file("samples.csv");
  art.files.push_back("samples.csv");

  const auto report = metrics::evaluate(samples, metrics::ModeSpec::from(trainer.data()));
  const json mj = metrics_json(report);
  write_json(dir / "metrics.json", mj);
  manifest.add_file("metrics.json");
  art.files.push_back("metrics.json");

  const auto grid = kde_grid_for(cfg.output, trainer.data());
  std::optional<std::vector<double>> bw;
  if (!cfg.output.kde_bandwidth.empty()) bw = cfg.output.kde_bandwidth;
  const auto density = metrics::kde_grid(head_rows(samples, cfg.output.kde_samples), grid, bw);
  {
    std::vector<std::string> header;
    for (std::size_t d = 0; d < grid.dim(); ++d) header.push_back(fmt::format("x{}", d));
    header.emplace_back("density");
    CsvWriter csv(dir / "kde.csv", header);
    const auto& nodes = grid.nodes();
    for (std::size_t i = 0; i < grid.size(); ++i) {
      std::vector<double> row;
      for (std::size_t d = 0; d < grid.dim(); ++d) row.push_back(nodes.at(i, d));
      row.push_back(density[i]);
      csv.row(row);
    }
  }
  manifest.add_file("kde.csv");
  art.files.push_back("kde.csv");
  manifest.finish("ok", {{"final_metrics", mj}});
  return art;
}

RunResult run_train(const ExperimentConfig& cfg, const RunOptions& opts) {
  const fs::path root = output_root(cfg, opts);
  const auto seeds = seeds_of(cfg, opts);
  ensure_directory(root);
  std::vector<json> per_seed(seeds.size());
  std::vector<RunStatus> status(seeds.size(), RunStatus::kOk);
  parallel_for(seeds.size(), opts.threads, [&](std::size_t i) {
    const std::string sub = fmt::format("seed_{}", seeds[i]);
    auto art = train_to_directory(cfg, seeds[i], root / sub, "train");
    json j{{"seed", seeds[i]}, {"directory", sub}};
    if (art.trajectory.failure) {
      status[i] = RunStatus::kNumericAbort;
      j["status"] = "numeric_abort";
      j["failure"] = failure_json(*art.trajectory.failure);
    } else {
      j["status"] = "ok";
      const auto& last = art.trajectory.rows.back();
      j["final"] = {{"f_e", finite_or_null(last.f_e)},
                    {"f_g", finite_or_null(last.f_g)},
                    {"f_gan", finite_or_null(last.f_gan)},
                    {"hq_fraction", finite_or_null(last.hq_fraction)},
                    {"modes_covered", finite_or_null(last.modes_covered)},
                    {"intra_mode_kl", finite_or_null(last.intra_mode_kl)}};
    }
    per_seed[i] = std::move(j);
  });
  RunResult res;
  for (auto s : status) res.status = worst(res.status, s);
  res.summary = {{"command", "train"},
                 {"config_hash", config_hash(cfg)},
                 {"status", res.status == RunStatus::kOk ? "ok" : "numeric_abort"},
                 {"runs", per_seed}};
  write_json(root / "summary.json", res.summary);
  return res;
}

RunResult run_contour(const ExperimentConfig& cfg, const RunOptions& opts) {
  const fs::path root = output_root(cfg, opts);
  ensure_directory(root);
  Manifest manifest(root, cfg, "contour", 0);
  manifest.begin();

  const auto data = dist::make_dataset(dist::DatasetKind::kBimodal1d);
  const auto axis = dist::lattice_axis(cfg.contour.lo, cfg.contour.hi, cfg.contour.step);
  const auto grid = dist::landscape_grid(data, axis, cfg.contour.spacing);
  const dist::LandscapeEvaluator eval(data, grid);

  CsvWriter minima(root / "minima.csv", {"divergence", "theta1", "theta2", "value"});
  CsvWriter descent(root / "descent.csv",
                    {"divergence", "start_theta1", "start_theta2", "theta1", "theta2", "value",
                     "gradient_norm", "initial_gradient_norm", "iterations"});
  manifest.add_file("minima.csv");
  manifest.add_file("descent.csv");

  json summary{{"command", "contour"}, {"lattice_points", axis.size()}};
  bool warning = false;
  for (auto kind : {dist::DivergenceKind::kKL, dist::DivergenceKind::kJS}) {
    const std::string name = dist::to_string(kind);
    const auto land = dist::divergence_landscape(data, axis, kind, grid);
    warning = warning || land.coverage_warning;
    const std::string file = "landscape_" + name + ".csv";
    {
      CsvWriter csv(root / file, {"theta1", "theta2", "value"});
      for (std::size_t i = 0; i < axis.size(); ++i) {
        for (std::size_t j = 0; j < axis.size(); ++j) csv.row({axis[i], axis[j], land.at(i, j)});
      }
    }
    manifest.add_file(file);

    json mins = json::array();
    for (std::size_t i = 0; i < axis.size(); ++i) {
      for (std::size_t j = 0; j < axis.size(); ++j) {
        if (!dist::is_strict_local_min(land, i, j)) continue;
        minima.row({name, format_double(axis[i]), format_double(axis[j]),
                    format_double(land.at(i, j))});
        mins.push_back({{"theta1", axis[i]}, {"theta2", axis[j]}, {"value", land.at(i, j)}});
      }
    }
    json descents = json::array();
    for (const auto& s : cfg.contour.starts) {
      const auto r = dist::descend_landscape(eval, s[0], s[1], kind);
      descent.row({name, format_double(s[0]), format_double(s[1]), format_double(r.t1),
                   format_double(r.t2), format_double(r.value), format_double(r.gradient_norm),
                   format_double(r.initial_gradient_norm), std::to_string(r.iterations)});
      descents.push_back({{"start", {s[0], s[1]}},
                          {"end", {r.t1, r.t2}},
                          {"value", r.value},
                          {"gradient_norm", r.gradient_norm},
                          {"initial_gradient_norm", r.initial_gradient_norm}});
    }
    summary[name] = {{"strict_local_minima", mins}, {"descent", descents}};
  }
  summary["coverage_warning"] = warning;
  summary["status"] = "ok";
  write_json(root / "summary.json", summary);
  manifest.add_file("summary.json");
  manifest.finish("ok");
  RunResult res;
  res.summary = summary;
  return res;
}

RunResult run_dynamics(const ExperimentConfig& cfg, const RunOptions& opts) {
  const auto& g = cfg.train.generator;
  const auto data = dist::make_dataset(cfg.train.dataset);
  if (g.kind != "parametric_mog" || g.components != 2 || data.dim() != 1) {
    throw ConfigError("dynamics needs a two-component parametric_mog generator on 1D data", 0);
  }
  const fs::path root = output_root(cfg, opts);
  const auto seeds = seeds_of(cfg, opts);
  ensure_directory(root);

  struct Job {
    std::uint64_t seed;
    training::Method method;
  };
  std::vector<Job> jobs;
  for (auto s : seeds) {
    jobs.push_back({s, training::Method::kGan});
    jobs.push_back({s, training::Method::kLbtGan});
  }
  std::vector<training::Trajectory> out(jobs.size());
  parallel_for(jobs.size(), opts.threads, [&](std::size_t i) {
    const auto [seed, method] = jobs[i];
    ExperimentConfig c = cfg;
    c.train.method = method;
    c.train.seed = seed;
    if (c.train.generator.init_means.empty()) {
      ad::Rng rng = ad::Rng::stream(seed, kDynamicsInitStream);
      const auto init = ad::sample_uniform(rng, {2}, cfg.dynamics.init_lo, cfg.dynamics.init_hi);
      c.train.generator.init_means = init.values();
    }
    const fs::path dir = root / fmt::format("seed_{}", seed);
    ensure_directory(dir);
    const std::string name = training::to_string(method);
    training::Trainer trainer(c.train);
    CsvWriter csv(dir / (name + ".csv"), trajectory_header(trainer.theta_names()));
    out[i] = trainer.run(
        [&](const training::TrajectoryRow& row) { csv.row(trajectory_values(row)); });
  });

  // Escape means reaching the far data mode; collapse means both means
  // staying on the near one.
  const double lo_mode = std::min(data.means[0], data.means[1]);
  const double hi_mode = std::max(data.means[0], data.means[1]);
  RunResult res;
  json runs = json::array();
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    json entry{{"seed", seeds[s]}};
    for (std::size_t m = 0; m < 2; ++m) {
      const auto& traj = out[2 * s + m];
      const std::string name = training::to_string(jobs[2 * s + m].method);
      json j;
      if (traj.failure) {
        res.status = RunStatus::kNumericAbort;
        j = {{"status", "numeric_abort"}, {"failure", failure_json(*traj.failure)}};
      } else {
        const double a = std::min(traj.theta[0], traj.theta[1]);
        const double b = std::max(traj.theta[0], traj.theta[1]);
        j = {{"status", "ok"},
             {"final_means", {a, b}},
             {"recovered", std::abs(a - lo_mode) < 0.3 && std::abs(b - hi_mode) < 0.3},
             {"collapsed", std::abs(a - lo_mode) < 0.5 && std::abs(b - lo_mode) < 0.5}};
      }
      entry[name] = j;
    }
    const fs::path dir = root / fmt::format("seed_{}", seeds[s]);
    Manifest manifest(dir, cfg, "dynamics", seeds[s]);
    manifest.begin();
    manifest.add_file("gan.csv");
    manifest.add_file("lbt_gan.csv");
    manifest.finish("ok", {{"result", entry}});
    runs.push_back(entry);
  }
  res.summary = {{"command", "dynamics"},
                 {"status", res.status == RunStatus::kOk ? "ok" : "numeric_abort"},
                 {"runs", runs}};
  write_json(root / "summary.json", res.summary);
  return res;
}

RunResult run_check(const ExperimentConfig& cfg, const RunOptions& opts) {
  const fs::path root = output_root(cfg, opts);
  ensure_directory(root);
  const auto& ck = cfg.check;
  const auto seeds = seeds_of(cfg, opts);
  Manifest manifest(root, cfg, "check " + ck.kind, seeds.empty() ? 0 : seeds.front());
  manifest.begin();

  json report{{"command", "check"}, {"kind", ck.kind}};
  bool passed = false;
  if (ck.kind == "gradcheck") {
    const auto cases = gradcheck_suite(ck.first_order_tolerance, ck.second_order_tolerance,
                                       seeds.empty() ? 0 : seeds.front());
    json arr = json::array();
    passed = true;
    for (const auto& c : cases) {
      passed = passed && c.passed;
      arr.push_back({{"name", c.name},
                     {"order", c.order},
                     {"max_rel_error", finite_or_null(c.max_rel_error)},
                     {"tolerance", c.tolerance},
                     {"passed", c.passed}});
    }
    report["cases"] = arr;
  } else if (ck.kind == "influence") {
    const auto sweep = influence_sweep(ck.instances, ck.influence_eta,
                                       seeds.empty() ? 0 : seeds.front());
    json arr = json::array();
    for (const auto& in : sweep.instances) {
      arr.push_back({{"dim", in.dim},
                     {"inner_product", in.inner_product},
                     {"condition", in.condition},
                     {"flagged", in.flagged}});
    }
    passed = sweep.positive == sweep.instances.size();
    report["instances"] = arr;
    report["positive"] = sweep.positive;
    report["regenerated"] = sweep.regenerated;
  } else if (ck.kind == "stationarity") {
    const auto r = stationarity_check(cfg);
    passed = r.passed;
    report["hypergradient_norm"] = r.hypergradient_norm;
    report["movement"] = r.movement;
    report["path_length"] = r.path_length;
    report["iterations"] = r.iterations;
  } else if (ck.kind == "sensitivity-KM") {
    const auto study = sensitivity_study(cfg, seeds, opts.threads);
    for (const auto& c : study.curves) {
      const std::string file = fmt::format("curve_{}{}_seed_{}.csv", c.axis, c.value, c.seed);
      CsvWriter csv(root / file, {"iteration", "f_g"});
      for (std::size_t i = 0; i < c.f_g.size(); ++i) {
        csv.row({static_cast<double>(c.iterations[i]), c.f_g[i]});
      }
      manifest.add_file(file);
    }
    passed = study.k_passed && study.m_passed;
    report["seeds"] = study.per_seed;
    report["k_wins"] = study.k_wins;
    report["m_wins"] = study.m_wins;
    report["k_passed"] = study.k_passed;
    report["m_passed"] = study.m_passed;
  } else {
    throw ConfigError("unknown check kind '" + ck.kind + "'", 0);
  }
  report["passed"] = passed;
  write_json(root / "report.json", report);
  manifest.add_file("report.json");
  manifest.finish(passed ? "ok" : "check_failed", {{"passed", passed}});
  RunResult res;
  res.status = passed ? RunStatus::kOk : RunStatus::kCheckFailed;
  res.summary = report;
  return res;
}

RunResult run_metrics(const std::string& samples_csv, const std::string& dataset,
                      const std::string& out_dir, bool per_axis) {
  const auto data = dist::make_dataset(dist::dataset_kind_from_string(dataset));
  const ad::Tensor x = read_matrix_csv(samples_csv);
  if (x.cols() != data.dim()) {
    throw ShapeError(fmt::format("{} has {} columns but dataset {} is {}-dimensional",
                                 samples_csv, x.cols(), dataset, data.dim()));
  }
  const auto rule = per_axis ? metrics::HqRule::kPerAxis : metrics::HqRule::kMahalanobis;
  RunResult res;
  res.summary = metrics_json(metrics::evaluate(x, metrics::ModeSpec::from(data), rule));
  res.summary["dataset"] = dataset;
  res.summary["hq_rule"] = per_axis ? "per_axis" : "mahalanobis";
  if (!out_dir.empty()) {
    ensure_directory(out_dir);
    write_json(fs::path(out_dir) / "metrics.json", res.summary);
  }
  return res;
}

}  // namespace lbt::lab
