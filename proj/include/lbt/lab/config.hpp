#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lbt/training/training.hpp"

namespace lbt::lab {

struct OutputSpec {
  std::string dir = "runs";
  std::size_t final_samples = 500000;
  /// Samples fed to the KDE grid (a prefix of the final samples).
  std::size_t kde_samples = 50000;
  std::size_t kde_points = 100;  // per axis
  /// Empty: the data means padded by 0.5 on every side.
  std::vector<double> kde_range;
  /// Empty: Scott's rule.
  std::vector<double> kde_bandwidth;
};

struct ContourSpec {
  double lo = -5.0;
  double hi = 5.0;
  double step = 0.1;
  double spacing = 0.005;  // quadrature cell width
  std::vector<std::array<double, 2>> starts{{-3.5, -2.5}, {-3.0, 3.0}};
};

struct DynamicsSpec {
  /// Both generator means start uniformly in [init_lo, init_hi) unless the
  /// generator block pins init_means.
  double init_lo = -3.5;
  double init_hi = -2.5;
};

struct CheckSpec {
  std::string kind = "gradcheck";  // gradcheck | influence | stationarity | sensitivity-KM
  double first_order_tolerance = 1e-6;
  double second_order_tolerance = 1e-4;
  std::size_t instances = 20;       // influence
  double influence_eta = 0.05;
  std::size_t stationarity_iterations = 500;
  double stationarity_gradient_tolerance = 1e-6;
  double stationarity_movement_tolerance = 1e-3;
  std::vector<std::size_t> k_values{1, 3, 5, 15};
  std::vector<std::size_t> m_values{5, 10, 15, 50};
  double f_g_threshold = -2.0;
  double required_fraction = 0.8;
};

struct ExperimentConfig {
  training::TrainConfig train;
  OutputSpec output;
  std::vector<std::uint64_t> seeds{0};
  ContourSpec contour;
  DynamicsSpec dynamics;
  CheckSpec check;
};

/// Parses and validates a JSON configuration. Unknown keys, wrong types and
/// violated invariants raise ConfigError carrying the 1-based line of the
/// offending entry.
ExperimentConfig parse_config(const std::string& text);

/// Every field, defaults included.
nlohmann::json to_json(const ExperimentConfig& cfg);

/// 64-bit FNV-1a of the compact resolved configuration, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace lbt::lab
