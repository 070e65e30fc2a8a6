#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kaps/k_select.hpp"
#include "kaps/split_search.hpp"
#include "kaps/survival.hpp"

namespace kaps {

// Malformed or unreadable input data.
class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reads a headed, comma-separated file. Rows keep file order; blank lines are
// skipped. Line numbers in diagnostics count the header as line 1.
Cohort ingest_csv(const std::filesystem::path& path, const std::string& time_col,
                  const std::string& status_col, const std::string& covariate_col);

// Interval labels for K groups, "lo<=x<=c1" for the first and "a<x<=b" after.
std::vector<std::string> range_labels(const Cohort& cohort, const SplitSet& split, const std::string& name);
// Labels "x<=c1", "c1<x<=c2", ..., "x>c_last".
std::vector<std::string> cut_labels(const SplitSet& split, const std::string& name);

// Significance marker for a p-value.
std::string significance_marker(double p);
// Four significant digits.
std::string format_statistic(double value);
// Four decimals, "<.0000" below 5e-5.
std::string format_pvalue(double p);

struct FitOptions {
  std::string covariate_name = "x";
  int k_min = 2;
  int k_max = 4;
  // Absolute floor when set; otherwise ceil(min_fraction * n).
  std::optional<std::size_t> min_subgroup;
  double min_fraction = 0.05;
  WeightKind weight = WeightKind::LogRank;
  PairScope pair_scope = PairScope::Adjacent;
  std::optional<std::size_t> budget;
  PermutationPlan plan;
  std::vector<double> horizons{1.0, 3.0, 5.0};
};

struct SubgroupSummary {
  std::string label;
  std::size_t n = 0;
  std::optional<double> median;
  std::vector<double> survival_at;
};

struct FitReport {
  FitOptions options;
  std::size_t samples = 0;
  std::size_t min_subgroup = 0;
  KSelectionResult selection;
  // K whose pairwise matrix and summary are shown: the selected K, else the
  // smallest fitted K.
  int report_k = 0;
  std::vector<std::string> labels;
  std::vector<SubgroupSummary> summary;

  const KFit& shown() const;
};

std::size_t resolve_min_subgroup(const FitOptions& options, std::size_t n);
FitReport run_fit(const Cohort& cohort, const FitOptions& options);

std::string render_text(const FitReport& report);
nlohmann::json render_json(const FitReport& report);

// Long-format Kaplan-Meier table: subgroup,time,survival,at_risk,events.
std::string render_curves_csv(const Cohort& cohort, const SplitSet& split, const std::string& name);

// Writes through a temporary sibling file and renames it into place.
void write_file_atomically(const std::filesystem::path& path, const std::string& content);

std::string weight_name(WeightKind w);
std::string scope_name(PairScope s);
std::string correction_name(Correction c);
std::string null_name(PermutationNull n);
WeightKind parse_weight(const std::string& s);
PairScope parse_scope(const std::string& s);
Correction parse_correction(const std::string& s);
PermutationNull parse_null(const std::string& s);

}  // namespace kaps
