#pragma once

#include "guidance_lab/core.hpp"
#include "guidance_lab/solvers.hpp"

#include "json.hpp"

#include <fmt/format.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace guidance_lab {

class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kVersion = "0.1.0";

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) { return fmt::format("{:016x}", h); }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create directory '" + dir.string() + "': " + ec.message());
}

/// Shortest form that still carries 17 significant digits.
inline std::string format_double(double x) { return fmt::format("{:.17g}", x); }

/// Buffered CSV writer; numbers go out with 17 significant digits.
class CsvWriter {
 public:
  CsvWriter(std::filesystem::path path, const std::vector<std::string>& header) : path_(std::move(path)) {
    line(header);
  }

  void line(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i > 0) buffer_.push_back(',');
      buffer_ += cells[i];
    }
    buffer_.push_back('\n');
  }

  /// Integer key columns followed by the coordinates of x.
  void row(std::initializer_list<std::uint64_t> keys, std::initializer_list<double> values, const Vec& x) {
    bool first = true;
    auto sep = [&] {
      if (!first) buffer_.push_back(',');
      first = false;
    };
    for (std::uint64_t k : keys) {
      sep();
      fmt::format_to(std::back_inserter(buffer_), "{}", k);
    }
    for (double v : values) {
      sep();
      fmt::format_to(std::back_inserter(buffer_), "{:.17g}", v);
    }
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      sep();
      fmt::format_to(std::back_inserter(buffer_), "{:.17g}", x(j));
    }
    buffer_.push_back('\n');
  }

  /// Writes the file and returns its FNV-1a hash.
  std::uint64_t close() {
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write '" + path_.string() + "'");
    out.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
    if (!out) throw io_error("write failed for '" + path_.string() + "'");
    return fnv1a64(buffer_);
  }

 private:
  std::filesystem::path path_;
  std::string buffer_;
};

inline std::vector<std::string> coordinate_columns(std::vector<std::string> prefix, int dim) {
  for (int j = 1; j <= dim; ++j) prefix.push_back("x_" + std::to_string(j));
  return prefix;
}

/// Final states: chain_id, iteration, x_1..x_d.
inline std::uint64_t write_samples_csv(const std::filesystem::path& path, const std::vector<Vec>& xs,
                                       std::uint64_t iteration) {
  const int dim = xs.empty() ? 0 : static_cast<int>(xs.front().size());
  CsvWriter csv(path, coordinate_columns({"chain_id", "iteration"}, dim));
  for (std::size_t i = 0; i < xs.size(); ++i) csv.row({i, iteration}, {}, xs[i]);
  return csv.close();
}

/// Chain iterates: chain_id, iteration, x_1..x_d with iteration 0 the initial run.
inline std::uint64_t write_iterates_csv(const std::filesystem::path& path, const std::vector<std::vector<Vec>>& chains) {
  const int dim = chains.empty() || chains.front().empty() ? 0 : static_cast<int>(chains.front().front().size());
  CsvWriter csv(path, coordinate_columns({"chain_id", "iteration"}, dim));
  for (std::size_t i = 0; i < chains.size(); ++i) {
    for (std::size_t r = 0; r < chains[i].size(); ++r) csv.row({i, r}, {}, chains[i][r]);
  }
  return csv.close();
}

/// ODE paths: chain_id, step_index, sigma, x_1..x_d.
inline std::uint64_t write_trajectory_csv(const std::filesystem::path& path,
                                          const std::vector<std::vector<TrajectoryPoint>>& chains) {
  int dim = 0;
  for (const auto& c : chains) {
    if (!c.empty()) {
      dim = static_cast<int>(c.front().x.size());
      break;
    }
  }
  CsvWriter csv(path, coordinate_columns({"chain_id", "step_index", "sigma"}, dim));
  for (std::size_t i = 0; i < chains.size(); ++i) {
    for (const TrajectoryPoint& p : chains[i]) csv.row({i, p.step}, {p.sigma}, p.x);
  }
  return csv.close();
}

inline std::uint64_t write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  const std::string text = j.dump(2) + "\n";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw io_error("write failed for '" + path.string() + "'");
  return fnv1a64(text);
}

/// Hash of the canonical (sorted-key, compact) serialization.
inline std::string config_hash(const nlohmann::json& config) { return hash_hex(fnv1a64(config.dump())); }

}  // namespace guidance_lab
