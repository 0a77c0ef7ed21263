#include "lbt/lab/artifacts.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <ctime>
#include <sstream>

#include "lbt/error.hpp"

#ifndef LBT_VERSION
#define LBT_VERSION "0.0.0"
#endif

namespace lbt::lab {

std::string version() { return LBT_VERSION; }

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return fmt::format("{:.17g}", x);
}

CsvWriter::CsvWriter(const fs::path& path, const std::vector<std::string>& header)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc), columns_(header.size()) {
  if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  row(header);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_) {
    throw ContractError("csv row for " + path_.string() + " has " + std::to_string(cells.size()) +
                        " cells, expected " + std::to_string(columns_));
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
  out_.flush();
  if (!out_) throw IoError("write to " + path_.string() + " failed");
}

void CsvWriter::row(const std::vector<double>& values) {
  std::vector<std::string> cells;
  cells.reserve(values.size());
  for (double v : values) cells.push_back(format_double(v));
  row(cells);
}

void write_matrix_csv(const fs::path& path, const ad::Tensor& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::size_t n = rows.rows();
  const std::size_t d = rows.cols();
  for (std::size_t j = 0; j < d; ++j) out << (j ? ",x" : "x") << j;
  out << '\n';
  std::string line;
  for (std::size_t i = 0; i < n; ++i) {
    line.clear();
    for (std::size_t j = 0; j < d; ++j) {
      if (j) line += ',';
      line += format_double(rows.at(i, j));
    }
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("write to " + path.string() + " failed");
}

ad::Tensor read_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + " is empty");
  std::size_t cols = 1;
  for (char c : line) cols += c == ',';
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t count = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
        if (used != cell.size() && cell.find_first_not_of(" \r", used) != std::string::npos) {
          throw std::invalid_argument(cell);
        }
      } catch (const std::exception&) {
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": '" + cell +
                      "' is not a number");
      }
      ++count;
    }
    if (count != cols) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                    std::to_string(cols) + " columns");
    }
    ++rows;
  }
  return ad::Tensor(ad::Shape{rows, cols}, std::move(values));
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write to " + path.string() + " failed");
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {
double steady_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}
}  // namespace

Manifest::Manifest(fs::path dir, const ExperimentConfig& cfg, std::string command,
                   std::uint64_t seed)
    : dir_(std::move(dir)) {
  body_["command"] = std::move(command);
  body_["version"] = version();
  body_["config_hash"] = config_hash(cfg);
  body_["config"] = to_json(cfg);
  body_["seed"] = seed;
  body_["files"] = nlohmann::json::array({"manifest.json"});
}

void Manifest::begin() {
  started_ = steady_seconds();
  body_["started_at"] = utc_now();
  body_["status"] = "running";
  write();
}

void Manifest::add_file(const std::string& name) { body_["files"].push_back(name); }

void Manifest::finish(const std::string& status, const nlohmann::json& extra) {
  body_["finished_at"] = utc_now();
  body_["wall_time_seconds"] = steady_seconds() - started_;
  body_["status"] = status;
  for (const auto& [k, v] : extra.items()) body_[k] = v;
  write();
}

void Manifest::write() const { write_json(dir_ / "manifest.json", body_); }

}  // namespace lbt::lab
