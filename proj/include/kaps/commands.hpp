#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kaps/report.hpp"

namespace kaps::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitInfeasible = 2;

struct DataColumns {
  std::filesystem::path data;
  std::string time_col = "time";
  std::string status_col = "status";
  std::string covariate_col;
};

struct FitCommand {
  DataColumns input;
  std::string k = "2:4";
  std::optional<std::size_t> min_subgroup;
  double min_fraction = 0.05;
  std::string test = "logrank";
  std::string pairs = "adjacent";
  std::size_t perms = 1000;
  double alpha = 0.05;
  std::string correction = "bonferroni";
  std::string null_model = "research";
  std::uint64_t seed = 1;
  std::string horizons = "1,3,5";
  std::optional<std::size_t> budget = 2'000'000;
  std::string format = "text";
  std::optional<std::filesystem::path> output;
};

struct CurvesCommand {
  DataColumns input;
  std::optional<std::string> cuts;
  std::optional<std::filesystem::path> from_fit;
  std::optional<std::filesystem::path> output;
};

struct SimulateCommand {
  std::string models = "sm";
  std::size_t n = 200;
  std::string censoring = "0.15";
  std::string censoring_scheme = "per-covariate";
  std::size_t reps = 100;
  std::string methods = "kaps,greedy";
  std::string k_values = "3";
  std::uint64_t seed = 1;
  double min_fraction = 0.10;
  std::string pairs = "adjacent";
  std::string test = "logrank";
  std::optional<std::string> select_k;
  std::size_t perms = 200;
  double alpha = 0.05;
  std::string correction = "bonferroni";
  std::string null_model = "research";
  std::filesystem::path csv = "experiment.csv";
  std::filesystem::path json = "experiment.json";
};

// Parses "3" or "2:4".
std::pair<int, int> parse_k_range(const std::string& s);
std::vector<double> parse_number_list(const std::string& s);
std::vector<std::string> parse_name_list(const std::string& s);

// Reports go to `out`, diagnostics to `err`.
int cmd_fit(const FitCommand& cmd, std::ostream& out, std::ostream& err);
int cmd_curves(const CurvesCommand& cmd, std::ostream& out, std::ostream& err);
int cmd_simulate(const SimulateCommand& cmd, std::ostream& out, std::ostream& err);

}  // namespace kaps::cli
