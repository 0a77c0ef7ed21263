#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lbt/ad/tensor.hpp"
#include "lbt/lab/config.hpp"

namespace lbt::lab {

namespace fs = std::filesystem;

/// Fixed 17-significant-digit decimal; nan and inf spelled out.
std::string format_double(double x);

/// CSV file written row by row and flushed after each row, so a crashed run
/// still leaves every completed row on disk.
class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header);
  void row(const std::vector<double>& values);
  void row(const std::vector<std::string>& cells);

 private:
  fs::path path_;
  std::ofstream out_;
  std::size_t columns_;
};

/// Writes an [n, D] tensor with columns x0, x1, ...
void write_matrix_csv(const fs::path& path, const ad::Tensor& rows);
/// Reads a numeric CSV with one header line into an [n, D] tensor.
ad::Tensor read_matrix_csv(const fs::path& path);

void write_json(const fs::path& path, const nlohmann::json& j);
void ensure_directory(const fs::path& dir);

/// ISO-8601 UTC timestamp with second resolution.
std::string utc_now();

/// Per-run manifest. Written with status "running" before any compute and
/// rewritten when the run ends, so it always lists the files present.
class Manifest {
 public:
  Manifest(fs::path dir, const ExperimentConfig& cfg, std::string command,
           std::uint64_t seed);
  void begin();
  void add_file(const std::string& name);
  void finish(const std::string& status, const nlohmann::json& extra = {});

 private:
  void write() const;

  fs::path dir_;
  nlohmann::json body_;
  double started_ = 0.0;
};

std::string version();

}  // namespace lbt::lab
