#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kaps {

// Configuration that admits no feasible answer (no split set, no K, ...).
class Infeasible : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class WeightKind { LogRank, Gehan };

struct SurvivalRecord {
  double time = 0.0;
  bool event = false;
  double covariate = 0.0;
};

// Records keep their input order. Validation rejects negative or non-finite
// times and non-finite covariates; an empty cohort is representable but
// every statistic on it fails with "empty cohort".
class Cohort {
 public:
  Cohort() = default;
  explicit Cohort(std::vector<SurvivalRecord> records);

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  std::span<const SurvivalRecord> records() const noexcept { return records_; }
  const SurvivalRecord& operator[](std::size_t i) const { return records_[i]; }

  auto begin() const noexcept { return records_.begin(); }
  auto end() const noexcept { return records_.end(); }

  std::size_t event_count() const noexcept;
  std::vector<double> distinct_covariates() const;

  // Records with lo < covariate <= hi.
  Cohort subset(double lo, double hi) const;

 private:
  std::vector<SurvivalRecord> records_;
};

struct TestResult {
  double statistic = 0.0;
  int df = 1;
  double p_value = 1.0;
};

// Upper tail of the chi-square distribution.
double chi_square_upper_tail(double statistic, int df);

// Product-limit estimate over distinct event times.
struct KmCurve {
  std::vector<double> times;
  std::vector<double> survival;
  std::vector<std::size_t> at_risk;
  std::vector<std::size_t> events;
};

KmCurve km_fit(const Cohort& cohort);
std::optional<double> km_quantile(const KmCurve& curve, double q);
double km_survival_at(const KmCurve& curve, double t);

// Per-group at-risk and event counts on a shared grid of event times.
// Row-major: value(g, j) = data[g * times.size() + j].
struct RiskTable {
  std::vector<double> times;
  std::size_t groups = 0;
  std::vector<double> at_risk;
  std::vector<double> events;

  double risk(std::size_t g, std::size_t j) const { return at_risk[g * times.size() + j]; }
  double died(std::size_t g, std::size_t j) const { return events[g * times.size() + j]; }
};

RiskTable tabulate(std::span<const Cohort* const> groups);

// Weighted log-rank accumulation for two groups, one event time at a time.
// Times with no pooled events contribute nothing, so a caller may feed any
// superset of the pooled event times and obtain the same bits.
class TwoSampleAccumulator {
 public:
  explicit TwoSampleAccumulator(WeightKind weight) noexcept : weight_(weight) {}

  void add(double at_risk_a, double events_a, double at_risk_b, double events_b) noexcept;

  double pooled_events() const noexcept { return pooled_events_; }
  TestResult result() const;

 private:
  WeightKind weight_;
  double score_ = 0.0;
  double variance_ = 0.0;
  double pooled_events_ = 0.0;
};

// Quadratic form z' V^- z over groups 0..K-2 of a risk table.
TestResult k_sample_from_table(const RiskTable& table, WeightKind weight);

TestResult two_sample_test(const Cohort& group_a, const Cohort& group_b,
                           WeightKind weight = WeightKind::LogRank);
TestResult k_sample_test(std::span<const Cohort> groups, WeightKind weight = WeightKind::LogRank);

}  // namespace kaps
