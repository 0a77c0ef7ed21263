// Command-line front end. Talks to the library only through the C API.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lbtlab/lbtlab.h"

namespace {

// Exit codes of the command line; library statuses map onto them.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCheck = 4;
constexpr int kExitIo = 5;
constexpr int kExitInternal = 6;

int exit_code(lbt_status s) {
  switch (s) {
    case LBT_OK: return kExitOk;
    case LBT_ERR_CONFIG: return kExitConfig;
    case LBT_ERR_NUMERIC: return kExitNumeric;
    case LBT_ERR_CHECK: return kExitCheck;
    case LBT_ERR_IO: return kExitIo;
    case LBT_ERR_ARGUMENT: return kExitUsage;
    case LBT_ERR_INTERNAL: return kExitInternal;
  }
  return kExitInternal;
}

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const std::size_t comma = list.find(',', pos);
    const std::string item = list.substr(pos, comma == std::string::npos ? std::string::npos
                                                                         : comma - pos);
    const std::size_t dash = item.find('-');
    std::size_t used = 0;
    if (dash != std::string::npos && dash > 0) {
      const auto lo = std::stoull(item.substr(0, dash), &used);
      const auto hi = std::stoull(item.substr(dash + 1));
      if (hi < lo) throw CLI::ValidationError("--seeds", "descending range '" + item + "'");
      for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
    } else {
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw CLI::ValidationError("--seeds", "bad seed '" + item + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return seeds;
}

struct Session {
  lbt_session* s = nullptr;
  Session() { lbt_session_create(&s); }
  ~Session() { lbt_session_destroy(s); }
};

int report(const Session& session, lbt_status st) {
  const char* result = lbt_session_result_json(session.s);
  if (result && *result) std::printf("%s\n", result);
  if (st != LBT_OK) {
    std::fprintf(stderr, "lbt_lab: %s error: %s\n", lbt_status_name(st),
                 lbt_session_last_error(session.s));
  }
  return exit_code(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning-by-teaching generative model experiments"};
  app.set_version_flag("--version", std::string(lbt_version()));
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::string seeds;
  int threads = 0;
  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--config", config, "JSON configuration file")->required();
    sub->add_option("--out", out, "output directory (overrides output.dir)");
    sub->add_option("--seeds", seeds, "seed list, e.g. 0,1,2 or 0-4 (overrides seeds)");
    sub->add_option("--threads", threads,
                    "parallel seed workers (default: $LBT_LAB_THREADS, else 1)")
        ->check(CLI::NonNegativeNumber);
  };
  std::vector<CLI::App*> runs;
  runs.push_back(app.add_subcommand("train", "train one model per seed"));
  runs.push_back(app.add_subcommand("contour", "KL and JS landscapes of the 1D toy"));
  runs.push_back(app.add_subcommand("dynamics", "paired GAN and LBT-GAN trajectories"));
  runs.push_back(app.add_subcommand("check", "verification suite selected by check.kind"));
  for (auto* sub : runs) add_run_flags(sub);

  std::string samples;
  std::string dataset;
  bool per_axis = false;
  auto* metrics = app.add_subcommand("metrics", "score a samples CSV against a dataset");
  metrics->add_option("--samples", samples, "CSV with a header line")->required();
  metrics->add_option("--dataset", dataset, "ring8 | grid25 | grid100 | bimodal1d")->required();
  metrics->add_option("--out", out, "directory for metrics.json");
  metrics->add_flag("--per-axis", per_axis, "per-coordinate 3-sigma rule");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  Session session;
  if (!session.s) return kExitInternal;

  if (metrics->parsed()) {
    const lbt_status st = lbt_metrics_evaluate(session.s, samples.c_str(), dataset.c_str(),
                                               out.empty() ? nullptr : out.c_str(), per_axis);
    return report(session, st);
  }

  std::vector<std::uint64_t> seed_list;
  if (!seeds.empty()) {
    try {
      seed_list = parse_seeds(seeds);
    } catch (const std::exception&) {
      std::fprintf(stderr, "lbt_lab: invalid --seeds '%s'\n", seeds.c_str());
      return kExitUsage;
    }
  }

  lbt_status st = lbt_session_load_config_file(session.s, config.c_str());
  if (st != LBT_OK) {
    std::fprintf(stderr, "lbt_lab: %s: %s\n", config.c_str(), lbt_session_last_error(session.s));
    return exit_code(st);
  }
  for (auto* sub : runs) {
    if (!sub->parsed()) continue;
    st = lbt_run(session.s, sub->get_name().c_str(), out.empty() ? nullptr : out.c_str(),
                 seed_list.empty() ? nullptr : seed_list.data(), seed_list.size(), threads);
    return report(session, st);
  }
  return kExitUsage;
}
