#include "lbtlab/lbtlab.h"

#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "lbt/dist/datasets.hpp"
#include "lbt/error.hpp"
#include "lbt/lab/runners.hpp"

struct lbt_session {
  std::string error;
  std::size_t error_line = 0;
  std::optional<lbt::lab::ExperimentConfig> config;
  std::string config_json;
  std::string config_hash;
  std::string result;
};

struct lbt_mixture {
  lbt::dist::GaussianMixture mog;
};

namespace {

lbt_status fail(lbt_session* s, lbt_status code, const std::string& what, std::size_t line = 0) {
  if (s) {
    s->error = what;
    s->error_line = line;
  }
  return code;
}

// Runs `body` and maps every library exception onto a status code.
template <class F>
lbt_status guarded(lbt_session* s, F&& body) {
  if (!s) return LBT_ERR_ARGUMENT;
  s->error.clear();
  s->error_line = 0;
  try {
    return body();
  } catch (const lbt::ConfigError& e) {
    return fail(s, LBT_ERR_CONFIG, e.what(), e.line());
  } catch (const lbt::NumericError& e) {
    return fail(s, LBT_ERR_NUMERIC, e.what());
  } catch (const lbt::CheckFailure& e) {
    return fail(s, LBT_ERR_CHECK, e.what());
  } catch (const lbt::IoError& e) {
    return fail(s, LBT_ERR_IO, e.what());
  } catch (const lbt::Error& e) {
    return fail(s, LBT_ERR_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(s, LBT_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(s, LBT_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(s, LBT_ERR_INTERNAL, "unknown exception");
  }
}

lbt_status load(lbt_session* s, const std::string& text) {
  auto cfg = lbt::lab::parse_config(text);
  s->config_json = lbt::lab::to_json(cfg).dump(2);
  s->config_hash = lbt::lab::config_hash(cfg);
  s->config = std::move(cfg);
  return LBT_OK;
}

}  // namespace

extern "C" {

const char* lbt_version(void) {
  static const std::string v = lbt::lab::version();
  return v.c_str();
}

const char* lbt_status_name(lbt_status status) {
  switch (status) {
    case LBT_OK: return "ok";
    case LBT_ERR_ARGUMENT: return "argument";
    case LBT_ERR_CONFIG: return "config";
    case LBT_ERR_NUMERIC: return "numeric";
    case LBT_ERR_CHECK: return "check";
    case LBT_ERR_IO: return "io";
    case LBT_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

lbt_status lbt_session_create(lbt_session** out) {
  if (!out) return LBT_ERR_ARGUMENT;
  *out = new (std::nothrow) lbt_session();
  return *out ? LBT_OK : LBT_ERR_INTERNAL;
}

void lbt_session_destroy(lbt_session* session) { delete session; }

const char* lbt_session_last_error(const lbt_session* session) {
  return session ? session->error.c_str() : "null session";
}

size_t lbt_session_error_line(const lbt_session* session) {
  return session ? session->error_line : 0;
}

lbt_status lbt_session_load_config(lbt_session* session, const char* json_text) {
  return guarded(session, [&] {
    if (!json_text) return fail(session, LBT_ERR_ARGUMENT, "json_text is null");
    return load(session, json_text);
  });
}

lbt_status lbt_session_load_config_file(lbt_session* session, const char* path) {
  return guarded(session, [&] {
    if (!path) return fail(session, LBT_ERR_ARGUMENT, "path is null");
    std::ifstream in(path, std::ios::binary);
    if (!in) return fail(session, LBT_ERR_IO, std::string("cannot open ") + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return load(session, ss.str());
  });
}

const char* lbt_session_config_json(lbt_session* session) {
  return session && session->config ? session->config_json.c_str() : nullptr;
}

const char* lbt_session_config_hash(lbt_session* session) {
  return session && session->config ? session->config_hash.c_str() : nullptr;
}

lbt_status lbt_run(lbt_session* session, const char* command, const char* out_dir,
                   const uint64_t* seeds, size_t n_seeds, int threads) {
  return guarded(session, [&] {
    if (!command) return fail(session, LBT_ERR_ARGUMENT, "command is null");
    if (!session->config) return fail(session, LBT_ERR_ARGUMENT, "no configuration loaded");
    if (n_seeds && !seeds) return fail(session, LBT_ERR_ARGUMENT, "seeds is null");
    session->result.clear();
    lbt::lab::RunOptions opts;
    if (out_dir) opts.out_dir = out_dir;
    opts.seeds.assign(seeds, seeds + n_seeds);
    opts.threads = lbt::lab::resolve_threads(threads);

    const std::string cmd = command;
    lbt::lab::RunResult r;
    if (cmd == "train") r = lbt::lab::run_train(*session->config, opts);
    else if (cmd == "contour") r = lbt::lab::run_contour(*session->config, opts);
    else if (cmd == "dynamics") r = lbt::lab::run_dynamics(*session->config, opts);
    else if (cmd == "check") r = lbt::lab::run_check(*session->config, opts);
    else return fail(session, LBT_ERR_ARGUMENT, "unknown command '" + cmd + "'");

    session->result = r.summary.dump(2);
    switch (r.status) {
      case lbt::lab::RunStatus::kOk: return LBT_OK;
      case lbt::lab::RunStatus::kNumericAbort:
        return fail(session, LBT_ERR_NUMERIC, "at least one run aborted on a non-finite value");
      case lbt::lab::RunStatus::kCheckFailed:
        return fail(session, LBT_ERR_CHECK, "check '" + session->config->check.kind + "' failed");
    }
    return LBT_ERR_INTERNAL;
  });
}

const char* lbt_session_result_json(const lbt_session* session) {
  return session ? session->result.c_str() : "";
}

lbt_status lbt_metrics_evaluate(lbt_session* session, const char* samples_csv,
                                const char* dataset, const char* out_dir, int per_axis) {
  return guarded(session, [&] {
    if (!samples_csv || !dataset) return fail(session, LBT_ERR_ARGUMENT, "null argument");
    session->result.clear();
    auto r = lbt::lab::run_metrics(samples_csv, dataset, out_dir ? out_dir : "", per_axis != 0);
    session->result = r.summary.dump(2);
    return LBT_OK;
  });
}

lbt_status lbt_mixture_create(lbt_session* session, const char* dataset, lbt_mixture** out) {
  return guarded(session, [&] {
    if (!dataset || !out) return fail(session, LBT_ERR_ARGUMENT, "null argument");
    auto m = std::make_unique<lbt_mixture>();
    m->mog = lbt::dist::make_dataset(lbt::dist::dataset_kind_from_string(dataset));
    *out = m.release();
    return LBT_OK;
  });
}

void lbt_mixture_destroy(lbt_mixture* mixture) { delete mixture; }

size_t lbt_mixture_dim(const lbt_mixture* mixture) { return mixture ? mixture->mog.dim() : 0; }

size_t lbt_mixture_components(const lbt_mixture* mixture) {
  return mixture ? mixture->mog.components() : 0;
}

lbt_status lbt_mixture_sample(lbt_session* session, const lbt_mixture* mixture, uint64_t seed,
                              size_t n, double* out) {
  return guarded(session, [&] {
    if (!mixture || (n && !out)) return fail(session, LBT_ERR_ARGUMENT, "null argument");
    lbt::ad::Rng rng(seed);
    const auto x = lbt::dist::mog_sample(mixture->mog, n, rng);
    std::copy(x.values().begin(), x.values().end(), out);
    return LBT_OK;
  });
}

lbt_status lbt_mixture_log_density(lbt_session* session, const lbt_mixture* mixture,
                                   const double* x, size_t n, double* out) {
  return guarded(session, [&] {
    if (!mixture || (n && (!x || !out))) return fail(session, LBT_ERR_ARGUMENT, "null argument");
    const std::size_t d = mixture->mog.dim();
    lbt::ad::Tensor pts(lbt::ad::Shape{n, d}, std::vector<double>(x, x + n * d));
    const auto lp = lbt::dist::mog_log_density(mixture->mog, pts);
    std::copy(lp.begin(), lp.end(), out);
    return LBT_OK;
  });
}

}  // extern "C"
