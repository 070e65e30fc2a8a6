#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "kaps/k_select.hpp"
#include "kaps/random.hpp"
#include "kaps/split_search.hpp"
#include "kaps/survival.hpp"

namespace kaps::sim {

// Stepwise: hazard 0.02 / 0.04 / 0.08 on x <= 7, 7 < x <= 14, x > 14.
// Linear: hazard 0.1 * x. Covariate is discrete uniform on 1..20.
enum class ModelKind { Stepwise, Linear };

inline constexpr int kCovariateMin = 1;
inline constexpr int kCovariateMax = 20;

// Marginal: one uniform bound shared by every record, tuned so the censoring
// fraction averaged over the covariate law hits the target. PerCovariate: a
// bound per covariate value, so every covariate level is censored at the target.
enum class CensoringScheme { Marginal, PerCovariate };

struct SimModel {
  ModelKind kind = ModelKind::Stepwise;
  std::size_t n = 200;
  double censoring_rate = 0.15;
  std::uint64_t seed = 1;
  CensoringScheme censoring = CensoringScheme::PerCovariate;
};

std::string model_name(ModelKind kind);
ModelKind parse_model(const std::string& name);

double hazard(ModelKind kind, int covariate);

// True cutpoints of the stepwise model.
SplitSet stepwise_truth();

// Marginal censoring probability for C ~ U(0, bound), averaged over the covariate law.
double censoring_fraction(ModelKind kind, double bound);

// Censoring probability of one record with the given hazard and bound.
double censoring_probability(double hazard_rate, double bound);

// Upper bound of the uniform censoring law whose marginal censoring fraction
// hits the model's target rate. A zero target returns +infinity (no censoring).
double calibrate_censoring(const SimModel& model);

// Censoring bound for each covariate value 1..20 under the model's scheme.
std::vector<double> censoring_bounds(const SimModel& model);

Cohort generate(const SimModel& model, std::span<const double> bounds, RandomStream& stream);
Cohort generate(const SimModel& model, RandomStream& stream);

// Greedy binary log-rank tree on the covariate: repeatedly splits the leaf
// whose best binary split has the largest statistic.
SplitSet greedy_tree_fit(const Cohort& cohort, int max_groups, std::size_t min_subgroup,
                         WeightKind weight = WeightKind::LogRank);

// Overall and all-pairs minimum statistic of fixed cutpoints on a cohort.
struct HoldoutScore {
  double overall = 0.0;
  double min_pairwise = 0.0;
};
HoldoutScore score_on(const Cohort& cohort, const SplitSet& split, WeightKind weight);

struct SelectionSettings {
  int k_min = 2;
  int k_max = 4;
  std::size_t permutations = 200;
  double alpha = 0.05;
  Correction correction = Correction::BonferroniMultiply;
  PermutationNull null_model = PermutationNull::Research;
};

struct ExperimentConfig {
  std::vector<SimModel> models;
  std::vector<std::string> methods{"kaps", "greedy"};
  std::size_t reps = 100;
  std::vector<int> k_values{3};
  double min_fraction = 0.10;
  PairScope fit_scope = PairScope::Adjacent;
  WeightKind weight = WeightKind::LogRank;
  bool include_reference = true;
  std::optional<SelectionSettings> selection;
};

struct ReplicationRecord {
  ModelKind model = ModelKind::Stepwise;
  double censoring_rate = 0.0;
  std::size_t rep = 0;
  std::string method;
  // Fitted K; for "kaps_select" the selected K, 0 when none qualified.
  int k = 0;
  std::vector<double> cutpoints;
  std::optional<double> overall;
  std::optional<double> min_pairwise;
};

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double standard_error = 0.0;
};
Summary summarize(std::span<const double> values);

struct Ellipse {
  std::pair<double, double> center;
  double determinant = 0.0;
  double semi_major = 0.0;
  double semi_minor = 0.0;
  double angle_degrees = 0.0;
};
// 95% ellipse of the sample covariance of (first cut, second cut).
Ellipse confidence_ellipse(std::span<const std::pair<double, double>> points, double level = 0.95);

struct AggregateRow {
  ModelKind model = ModelKind::Stepwise;
  double censoring_rate = 0.0;
  std::string method;
  int k = 0;
  Summary overall;
  Summary min_pairwise;
  std::size_t failures = 0;
};

struct ExperimentResult {
  std::vector<ReplicationRecord> records;
  std::vector<AggregateRow> aggregates;
  std::size_t failures = 0;
};

ExperimentResult run_experiment(const ExperimentConfig& config);

// Cutpoint pairs of a method's K = 3 fits for one model and censoring rate.
std::vector<std::pair<double, double>> cut_pairs(const ExperimentResult& result, ModelKind model,
                                                 double censoring_rate, const std::string& method);
// Counts of each selected K (0 = none) for one model and censoring rate.
std::map<int, std::size_t> selected_k_counts(const ExperimentResult& result, ModelKind model,
                                             double censoring_rate);

void write_experiment_csv(std::ostream& out, const ExperimentResult& result);
nlohmann::json experiment_summary(const ExperimentResult& result);
void print_table(std::ostream& out, const ExperimentResult& result);

}  // namespace kaps::sim
