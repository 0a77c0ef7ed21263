#include "lbt/lab/config.hpp"

#include <cstdio>
#include <map>
#include <regex>
#include <set>

#include "lbt/error.hpp"

namespace lbt::lab {
namespace {

using nlohmann::json;

// Maps JSON pointers ("/train/iterations") to the line where their value
// starts. Only run on text nlohmann has already accepted, so the scanner can
// assume well-formed input.
class LineIndex {
 public:
  explicit LineIndex(const std::string& text) : text_(text) {
    skip_ws();
    value("");
  }

  std::size_t line(const std::string& pointer) const {
    auto it = lines_.find(pointer);
    return it == lines_.end() ? 0 : it->second;
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      if (text_[pos_] == '\n') ++line_;
      ++pos_;
    }
  }

  std::string string_token() {
    std::string out;
    ++pos_;  // opening quote
    while (pos_ < text_.size() && text_[pos_] != '"') {
      if (text_[pos_] == '\\') {
        out += text_[pos_++];
      }
      out += text_[pos_++];
    }
    ++pos_;
    return out;
  }

  void value(const std::string& pointer) {
    lines_.emplace(pointer, line_);
    const char c = text_[pos_];
    if (c == '{') {
      ++pos_;
      skip_ws();
      while (text_[pos_] != '}') {
        const std::string key = string_token();
        skip_ws();
        ++pos_;  // colon
        skip_ws();
        value(pointer + "/" + escape(key));
        skip_ws();
        if (text_[pos_] == ',') {
          ++pos_;
          skip_ws();
        }
      }
      ++pos_;
    } else if (c == '[') {
      ++pos_;
      skip_ws();
      std::size_t index = 0;
      while (text_[pos_] != ']') {
        value(pointer + "/" + std::to_string(index++));
        skip_ws();
        if (text_[pos_] == ',') {
          ++pos_;
          skip_ws();
        }
      }
      ++pos_;
    } else if (c == '"') {
      string_token();
    } else {
      while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
             text_[pos_] != ',' && text_[pos_] != '}' && text_[pos_] != ']') {
        ++pos_;
      }
    }
  }

  static std::string escape(const std::string& key) {
    std::string out;
    for (char ch : key) {
      if (ch == '~') out += "~0";
      else if (ch == '/') out += "~1";
      else out += ch;
    }
    return out;
  }

  const std::string& text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::map<std::string, std::size_t> lines_;
};

// Typed access to one JSON object with unknown-key rejection.
class Reader {
 public:
  Reader(const json& node, std::string pointer, const LineIndex& lines)
      : node_(node), pointer_(std::move(pointer)), lines_(lines) {
    if (!node_.is_object()) fail(pointer_, "expected an object");
  }

  /// Rejects every key that was never asked for.
  void finish() const {
    for (const auto& [key, _] : node_.items()) {
      if (!seen_.count(key)) {
        fail(pointer_ + "/" + key,
             "unknown key '" + dotted(pointer_ + "/" + key) + "'");
      }
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.contains(key);
  }

  Reader child(const std::string& key) {
    seen_.insert(key);
    return Reader(node_.at(key), pointer_ + "/" + key, lines_);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    const json& v = node_.at(key);
    const std::string p = pointer_ + "/" + key;
    try {
      out = convert<T>(v, p);
    } catch (const json::exception& e) {
      fail(p, "'" + dotted(p) + "' has the wrong type (" + e.what() + ")");
    }
  }

  [[noreturn]] void fail(const std::string& pointer, const std::string& what) const {
    throw ConfigError(what, lines_.line(pointer));
  }

  static std::string dotted(const std::string& pointer) {
    std::string out = pointer.substr(pointer.empty() ? 0 : 1);
    for (char& c : out) {
      if (c == '/') c = '.';
    }
    return out;
  }

 private:
  template <typename T>
  T convert(const json& v, const std::string& p) {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
        fail(p, "'" + dotted(p) + "' must be a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) fail(p, "'" + dotted(p) + "' must be a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(p, "'" + dotted(p) + "' must be true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(p, "'" + dotted(p) + "' must be a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) fail(p, "'" + dotted(p) + "' must be an array");
      T out;
      std::size_t i = 0;
      for (const auto& e : v) {
        out.push_back(convert<typename T::value_type>(e, p + "/" + std::to_string(i++)));
      }
      return out;
    }
  }

  const json& node_;
  std::string pointer_;
  const LineIndex& lines_;
  std::set<std::string> seen_;
};

template <typename Fn>
auto parse_enum(Reader& r, const std::string& pointer, const std::string& value, Fn fn) {
  try {
    return fn(value);
  } catch (const Error& e) {
    r.fail(pointer, e.what());
  }
}

void read_generator(Reader r, training::GeneratorSpec& g) {
  r.get("kind", g.kind);
  r.get("components", g.components);
  r.get("std", g.std);
  r.get("init_means", g.init_means);
  r.get("latent", g.latent);
  r.get("hidden", g.hidden);
  r.finish();
}

void read_estimator(Reader r, training::EstimatorSpec& e) {
  r.get("kind", e.kind);
  r.get("learn_log_std", e.learn_log_std);
  r.get("components", e.components);
  r.get("latent", e.latent);
  r.get("hidden", e.hidden);
  r.get("samples", e.samples);
  r.get("init", e.init);
  r.finish();
}

void read_unroll(Reader r, bilevel::UnrollConfig& u) {
  r.get("steps", u.steps);
  r.get("eta", u.eta);
  if (r.has("optimizer")) {
    std::string s;
    r.get("optimizer", s);
    u.optimizer = parse_enum(r, "/unroll/optimizer", s, bilevel::inner_optimizer_from_string);
  }
  r.get("population", u.population);
  r.get("population_points", u.population_points);
  r.get("beta1", u.beta1);
  r.get("beta2", u.beta2);
  r.get("adam_eps", u.adam_eps);
  r.finish();
}

void read_train(Reader r, training::TrainConfig& t) {
  r.get("estimator_steps", t.estimator_steps);
  r.get("discriminator_steps", t.discriminator_steps);
  r.get("lambda_g", t.lambda_g);
  r.get("lr_theta", t.lr_theta);
  r.get("lr_phi", t.lr_phi);
  r.get("lr_psi", t.lr_psi);
  if (r.has("estimator_optimizer")) {
    std::string s;
    r.get("estimator_optimizer", s);
    t.estimator_optimizer =
        parse_enum(r, "/train/estimator_optimizer", s, training::estimator_optimizer_from_string);
  }
  if (r.has("gan_loss")) {
    std::string s;
    r.get("gan_loss", s);
    t.gan_loss = parse_enum(r, "/train/gan_loss", s, training::gan_loss_from_string);
  }
  r.get("batch_generator", t.batch_generator);
  r.get("batch_estimator", t.batch_estimator);
  r.get("batch_discriminator", t.batch_discriminator);
  r.get("batch_data", t.batch_data);
  r.get("eval_batch", t.eval_batch);
  r.get("iterations", t.iterations);
  r.get("record_every", t.record_every);
  r.get("metric_every", t.metric_every);
  r.get("metric_samples", t.metric_samples);
  r.finish();
}

void read_output(Reader r, OutputSpec& o) {
  r.get("dir", o.dir);
  r.get("final_samples", o.final_samples);
  r.get("kde_samples", o.kde_samples);
  r.get("kde_points", o.kde_points);
  r.get("kde_range", o.kde_range);
  r.get("kde_bandwidth", o.kde_bandwidth);
  r.finish();
}

void read_contour(Reader r, ContourSpec& c) {
  r.get("lo", c.lo);
  r.get("hi", c.hi);
  r.get("step", c.step);
  r.get("spacing", c.spacing);
  if (r.has("starts")) {
    std::vector<std::vector<double>> starts;
    r.get("starts", starts);
    c.starts.clear();
    for (std::size_t i = 0; i < starts.size(); ++i) {
      if (starts[i].size() != 2) {
        r.fail("/contour/starts/" + std::to_string(i), "each contour start needs two values");
      }
      c.starts.push_back({starts[i][0], starts[i][1]});
    }
  }
  r.finish();
}

void read_dynamics(Reader r, DynamicsSpec& d) {
  r.get("init_lo", d.init_lo);
  r.get("init_hi", d.init_hi);
  r.finish();
}

void read_check(Reader r, CheckSpec& c) {
  r.get("kind", c.kind);
  r.get("first_order_tolerance", c.first_order_tolerance);
  r.get("second_order_tolerance", c.second_order_tolerance);
  r.get("instances", c.instances);
  r.get("influence_eta", c.influence_eta);
  r.get("stationarity_iterations", c.stationarity_iterations);
  r.get("stationarity_gradient_tolerance", c.stationarity_gradient_tolerance);
  r.get("stationarity_movement_tolerance", c.stationarity_movement_tolerance);
  r.get("k_values", c.k_values);
  r.get("m_values", c.m_values);
  r.get("f_g_threshold", c.f_g_threshold);
  r.get("required_fraction", c.required_fraction);
  r.finish();
}

// Invariant messages start with a dotted key path; anchor them to its line.
[[noreturn]] void rethrow_anchored(const std::string& what, const LineIndex& lines) {
  static const std::regex path(R"(([a-z_]+(?:\.[a-z_0-9]+)+))");
  std::smatch m;
  std::size_t line = 0;
  if (std::regex_search(what, m, path)) {
    std::string pointer = "/" + m[1].str();
    for (char& c : pointer) {
      if (c == '.') c = '/';
    }
    line = lines.line(pointer);
    if (line == 0) {
      // Fall back to the enclosing block when the key itself was defaulted.
      line = lines.line(pointer.substr(0, pointer.rfind('/')));
    }
  }
  throw ConfigError(what, line);
}

std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) line += text[i] == '\n';
  return line;
}

void validate_lab(const ExperimentConfig& c) {
  if (c.seeds.empty()) throw ContractError("seeds must list at least one seed");
  if (c.output.kde_points < 2) throw ContractError("output.kde_points must be >= 2");
  if (!c.output.kde_range.empty() && (c.output.kde_range.size() != 2 ||
                                      !(c.output.kde_range[0] < c.output.kde_range[1]))) {
    throw ContractError("output.kde_range must be [lo, hi] with lo < hi");
  }
  for (double h : c.output.kde_bandwidth) {
    if (!(h > 0.0)) throw ContractError("output.kde_bandwidth entries must be positive");
  }
  if (!(c.contour.lo < c.contour.hi) || !(c.contour.step > 0.0) || !(c.contour.spacing > 0.0)) {
    throw ContractError("contour.step and contour.spacing must be positive with lo < hi");
  }
  if (!(c.dynamics.init_lo < c.dynamics.init_hi)) {
    throw ContractError("dynamics.init_lo must be below dynamics.init_hi");
  }
  static const std::set<std::string> kinds{"gradcheck", "influence", "stationarity",
                                           "sensitivity-KM"};
  if (!kinds.count(c.check.kind)) {
    throw ContractError("check.kind must be gradcheck, influence, stationarity or sensitivity-KM");
  }
  if (c.check.k_values.empty() || c.check.m_values.empty()) {
    throw ContractError("check.k_values and check.m_values must be non-empty");
  }
  for (std::size_t k : c.check.k_values) {
    if (k < 1) throw ContractError("check.k_values entries must be >= 1 (unroll steps K)");
  }
  for (std::size_t m : c.check.m_values) {
    if (m < 1) throw ContractError("check.m_values entries must be >= 1 (estimator steps M)");
  }
  if (!(c.check.required_fraction > 0.0 && c.check.required_fraction <= 1.0)) {
    throw ContractError("check.required_fraction must lie in (0, 1]");
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what(),
                      line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0));
  }
  const LineIndex lines(text);
  ExperimentConfig c;
  {
    Reader r(root, "", lines);
    if (r.has("dataset")) {
      std::string s;
      r.get("dataset", s);
      c.train.dataset = parse_enum(r, "/dataset", s, dist::dataset_kind_from_string);
    }
    if (r.has("method")) {
      std::string s;
      r.get("method", s);
      c.train.method = parse_enum(r, "/method", s, training::method_from_string);
    }
    if (r.has("generator")) read_generator(r.child("generator"), c.train.generator);
    if (r.has("estimator")) read_estimator(r.child("estimator"), c.train.estimator);
    if (r.has("discriminator")) {
      Reader d = r.child("discriminator");
      d.get("hidden", c.train.discriminator.hidden);
      d.finish();
    }
    if (r.has("unroll")) read_unroll(r.child("unroll"), c.train.unroll);
    if (r.has("train")) read_train(r.child("train"), c.train);
    if (r.has("output")) read_output(r.child("output"), c.output);
    r.get("seeds", c.seeds);
    if (r.has("contour")) read_contour(r.child("contour"), c.contour);
    if (r.has("dynamics")) read_dynamics(r.child("dynamics"), c.dynamics);
    if (r.has("check")) read_check(r.child("check"), c.check);
    r.finish();
  }
  try {
    c.train.validate();
    validate_lab(c);
  } catch (const ContractError& e) {
    rethrow_anchored(e.what(), lines);
  }
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  json j;
  j["dataset"] = dist::to_string(t.dataset);
  j["method"] = training::to_string(t.method);
  j["generator"] = {{"kind", t.generator.kind},
                    {"components", t.generator.components},
                    {"std", t.generator.std},
                    {"init_means", t.generator.init_means},
                    {"latent", t.generator.latent},
                    {"hidden", t.generator.hidden}};
  j["estimator"] = {{"kind", t.estimator.kind},
                    {"learn_log_std", t.estimator.learn_log_std},
                    {"components", t.estimator.components},
                    {"latent", t.estimator.latent},
                    {"hidden", t.estimator.hidden},
                    {"samples", t.estimator.samples},
                    {"init", t.estimator.init}};
  j["discriminator"] = {{"hidden", t.discriminator.hidden}};
  j["unroll"] = {{"steps", t.unroll.steps},
                 {"eta", t.unroll.eta},
                 {"optimizer", bilevel::to_string(t.unroll.optimizer)},
                 {"population", t.unroll.population},
                 {"population_points", t.unroll.population_points},
                 {"beta1", t.unroll.beta1},
                 {"beta2", t.unroll.beta2},
                 {"adam_eps", t.unroll.adam_eps}};
  j["train"] = {{"estimator_steps", t.estimator_steps},
                {"discriminator_steps", t.discriminator_steps},
                {"lambda_g", t.lambda_g},
                {"lr_theta", t.lr_theta},
                {"lr_phi", t.lr_phi},
                {"lr_psi", t.lr_psi},
                {"estimator_optimizer", training::to_string(t.estimator_optimizer)},
                {"gan_loss", training::to_string(t.gan_loss)},
                {"batch_generator", t.batch_generator},
                {"batch_estimator", t.batch_estimator},
                {"batch_discriminator", t.batch_discriminator},
                {"batch_data", t.batch_data},
                {"eval_batch", t.eval_batch},
                {"iterations", t.iterations},
                {"record_every", t.record_every},
                {"metric_every", t.metric_every},
                {"metric_samples", t.metric_samples}};
  j["output"] = {{"dir", c.output.dir},
                 {"final_samples", c.output.final_samples},
                 {"kde_samples", c.output.kde_samples},
                 {"kde_points", c.output.kde_points},
                 {"kde_range", c.output.kde_range},
                 {"kde_bandwidth", c.output.kde_bandwidth}};
  j["seeds"] = c.seeds;
  json starts = json::array();
  for (const auto& s : c.contour.starts) starts.push_back({s[0], s[1]});
  j["contour"] = {{"lo", c.contour.lo},
                  {"hi", c.contour.hi},
                  {"step", c.contour.step},
                  {"spacing", c.contour.spacing},
                  {"starts", starts}};
  j["dynamics"] = {{"init_lo", c.dynamics.init_lo}, {"init_hi", c.dynamics.init_hi}};
  j["check"] = {{"kind", c.check.kind},
                {"first_order_tolerance", c.check.first_order_tolerance},
                {"second_order_tolerance", c.check.second_order_tolerance},
                {"instances", c.check.instances},
                {"influence_eta", c.check.influence_eta},
                {"stationarity_iterations", c.check.stationarity_iterations},
                {"stationarity_gradient_tolerance", c.check.stationarity_gradient_tolerance},
                {"stationarity_movement_tolerance", c.check.stationarity_movement_tolerance},
                {"k_values", c.check.k_values},
                {"m_values", c.check.m_values},
                {"f_g_threshold", c.check.f_g_threshold},
                {"required_fraction", c.check.required_fraction}};
  return j;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(to_json(cfg).dump())));
  return buf;
}

}  // namespace lbt::lab
