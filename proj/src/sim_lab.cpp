#include "kaps/sim_lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "kaps/parallel.hpp"

namespace kaps::sim {

namespace {
constexpr std::uint64_t kTrainTag = 0x747261696E;
constexpr std::uint64_t kTestTag = 0x74657374;
constexpr std::uint64_t kPermTag = 0x7065726D;
constexpr int kCovariateLevels = kCovariateMax - kCovariateMin + 1;
}  // namespace

std::string model_name(ModelKind kind) { return kind == ModelKind::Stepwise ? "sm" : "lm"; }

ModelKind parse_model(const std::string& name) {
  if (name == "sm") {
    return ModelKind::Stepwise;
  }
  if (name == "lm") {
    return ModelKind::Linear;
  }
  throw std::invalid_argument("unknown model '" + name + "' (expected sm or lm)");
}

double hazard(ModelKind kind, int covariate) {
  if (kind == ModelKind::Linear) {
    return 0.1 * covariate;
  }
  if (covariate <= 7) {
    return 0.02;
  }
  return covariate <= 14 ? 0.04 : 0.08;
}

SplitSet stepwise_truth() { return SplitSet{{7.0, 14.0}}; }

double censoring_probability(double hazard_rate, double bound) {
  if (std::isinf(bound)) {
    return 0.0;
  }
  if (!(bound > 0.0)) {
    return 1.0;
  }
  // P(C < T) for T ~ Exp(rate), C ~ U(0, bound) is (1 - exp(-rate * bound)) / (rate * bound).
  const double z = hazard_rate * bound;
  return -std::expm1(-z) / z;
}

double censoring_fraction(ModelKind kind, double bound) {
  double total = 0.0;
  for (int x = kCovariateMin; x <= kCovariateMax; ++x) {
    total += censoring_probability(hazard(kind, x), bound);
  }
  return total / kCovariateLevels;
}

namespace {

// Bisection on the log scale for a decreasing fraction(bound).
template <class Fraction>
double solve_bound(double target, Fraction&& fraction) {
  if (target == 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  if (!(target > 0.0 && target <= 0.6)) {
    throw std::invalid_argument("unattainable censoring rate (expected 0 <= rate <= 0.6)");
  }
  double lo = std::log(1e-8);
  double hi = std::log(1e8);
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (fraction(std::exp(mid)) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::exp(0.5 * (lo + hi));
}

}  // namespace

double calibrate_censoring(const SimModel& model) {
  return solve_bound(model.censoring_rate,
                     [&](double bound) { return censoring_fraction(model.kind, bound); });
}

std::vector<double> censoring_bounds(const SimModel& model) {
  std::vector<double> bounds;
  if (model.censoring == CensoringScheme::Marginal) {
    bounds.assign(kCovariateLevels, calibrate_censoring(model));
    return bounds;
  }
  for (int x = kCovariateMin; x <= kCovariateMax; ++x) {
    const double rate = hazard(model.kind, x);
    bounds.push_back(solve_bound(model.censoring_rate,
                                 [&](double bound) { return censoring_probability(rate, bound); }));
  }
  return bounds;
}

Cohort generate(const SimModel& model, std::span<const double> bounds, RandomStream& stream) {
  if (bounds.size() != static_cast<std::size_t>(kCovariateLevels)) {
    throw std::invalid_argument("one censoring bound per covariate value is required");
  }
  std::vector<SurvivalRecord> records;
  records.reserve(model.n);
  for (std::size_t i = 0; i < model.n; ++i) {
    const int x = kCovariateMin + static_cast<int>(stream.below(kCovariateLevels));
    const double t = stream.exponential(hazard(model.kind, x));
    const double bound = bounds[static_cast<std::size_t>(x - kCovariateMin)];
    const double c = std::isinf(bound) ? bound : bound * stream.uniform();
    records.push_back({std::min(t, c), t <= c, static_cast<double>(x)});
  }
  return Cohort(std::move(records));
}

Cohort generate(const SimModel& model, RandomStream& stream) {
  return generate(model, censoring_bounds(model), stream);
}

// ---------------------------------------------------------------------------
// Greedy tree baseline

SplitSet greedy_tree_fit(const Cohort& cohort, int max_groups, std::size_t min_subgroup,
                         WeightKind weight) {
  if (max_groups < 2) {
    throw std::invalid_argument("max_groups must be at least 2");
  }
  const PairStatCache cache(cohort, weight);

  struct Candidate {
    std::uint32_t cut = 0;
    double statistic = -1.0;
  };
  auto best_binary = [&](ValueRange leaf) -> std::optional<Candidate> {
    std::vector<Candidate> options;
    for (std::uint32_t c = leaf.lo; c < leaf.hi; ++c) {
      const ValueRange left{leaf.lo, c};
      const ValueRange right{c + 1, leaf.hi};
      if (cache.count(left) >= min_subgroup && cache.count(right) >= min_subgroup) {
        options.push_back({c, cache.pair(left, right).statistic});
      }
    }
    if (options.empty()) {
      return std::nullopt;
    }
    double top = -1.0;
    for (const auto& o : options) {
      top = std::max(top, o.statistic);
    }
    for (const auto& o : options) {
      if (o.statistic >= top - kStatTolerance) {
        return o;
      }
    }
    return std::nullopt;
  };

  std::vector<ValueRange> leaves{{0, static_cast<std::uint32_t>(cache.value_count() - 1)}};
  std::vector<std::uint32_t> cuts;
  while (static_cast<int>(leaves.size()) < max_groups) {
    std::optional<std::size_t> chosen;
    Candidate chosen_split;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      const auto cand = best_binary(leaves[i]);
      if (cand && (!chosen || cand->statistic > chosen_split.statistic + kStatTolerance)) {
        chosen = i;
        chosen_split = *cand;
      }
    }
    if (!chosen) {
      break;
    }
    const ValueRange leaf = leaves[*chosen];
    leaves[*chosen] = {leaf.lo, chosen_split.cut};
    leaves.insert(leaves.begin() + static_cast<std::ptrdiff_t>(*chosen) + 1,
                  {chosen_split.cut + 1, leaf.hi});
    cuts.push_back(chosen_split.cut);
  }
  if (cuts.empty()) {
    throw Infeasible("no feasible split set");
  }
  std::sort(cuts.begin(), cuts.end());
  return cache.split_from_indices(cuts);
}

// ---------------------------------------------------------------------------
// Experiments

HoldoutScore score_on(const Cohort& cohort, const SplitSet& split, WeightKind weight) {
  const auto groups = partition(cohort, split);
  HoldoutScore score;
  score.overall = k_sample_test(groups, weight).statistic;
  score.min_pairwise = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t h = g + 1; h < groups.size(); ++h) {
      double stat = 0.0;
      if (groups[g].event_count() + groups[h].event_count() > 0) {
        stat = two_sample_test(groups[g], groups[h], weight).statistic;
      }
      score.min_pairwise = std::min(score.min_pairwise, stat);
    }
  }
  return score;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) {
    s.mean = std::numeric_limits<double>::quiet_NaN();
    s.standard_error = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.count);
  if (s.count > 1) {
    double ss = 0.0;
    for (double v : values) {
      ss += (v - s.mean) * (v - s.mean);
    }
    s.standard_error = std::sqrt(ss / static_cast<double>(s.count - 1)) /
                       std::sqrt(static_cast<double>(s.count));
  }
  return s;
}

Ellipse confidence_ellipse(std::span<const std::pair<double, double>> points, double level) {
  if (points.size() < 2) {
    throw std::invalid_argument("ellipse needs at least two points");
  }
  const auto n = static_cast<double>(points.size());
  double mx = 0.0;
  double my = 0.0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& [x, y] : points) {
    const Eigen::Vector2d d(x - mx, y - my);
    cov += d * d.transpose();
  }
  cov /= (n - 1.0);
  // Chi-square(2) quantile has the closed form -2 log(1 - level).
  const double radius2 = -2.0 * std::log(1.0 - level);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  const Eigen::Vector2d lambda = eig.eigenvalues().cwiseMax(0.0);
  const Eigen::Vector2d major = eig.eigenvectors().col(1);
  Ellipse e;
  e.center = {mx, my};
  e.determinant = cov.determinant();
  e.semi_major = std::sqrt(radius2 * lambda(1));
  e.semi_minor = std::sqrt(radius2 * lambda(0));
  e.angle_degrees = std::atan2(major(1), major(0)) * 180.0 / M_PI;
  if (e.angle_degrees < 0.0) {
    e.angle_degrees += 180.0;
  }
  if (e.angle_degrees >= 180.0) {
    e.angle_degrees -= 180.0;
  }
  return e;
}

namespace {

std::vector<ReplicationRecord> run_replication(const ExperimentConfig& config, const SimModel& model,
                                               std::span<const double> bounds, std::size_t rep) {
  RandomStream train_stream(model.seed, derive_stream(kTrainTag, rep));
  RandomStream test_stream(model.seed, derive_stream(kTestTag, rep));
  const Cohort train = generate(model, bounds, train_stream);
  const Cohort test = generate(model, bounds, test_stream);
  const auto min_subgroup = static_cast<std::size_t>(
      std::ceil(config.min_fraction * static_cast<double>(model.n) - 1e-9));

  std::vector<ReplicationRecord> out;
  auto record = [&](const std::string& method, int k, const std::optional<SplitSet>& split) {
    ReplicationRecord r;
    r.model = model.kind;
    r.censoring_rate = model.censoring_rate;
    r.rep = rep;
    r.method = method;
    r.k = k;
    if (split) {
      r.cutpoints = split->cutpoints;
      try {
        const HoldoutScore s = score_on(test, *split, config.weight);
        r.overall = s.overall;
        r.min_pairwise = s.min_pairwise;
      } catch (const std::exception&) {
      }
    }
    out.push_back(std::move(r));
  };
  auto attempt = [&](auto&& fit) -> std::optional<SplitSet> {
    try {
      return fit();
    } catch (const std::exception&) {
      return std::nullopt;
    }
  };

  if (config.include_reference && model.kind == ModelKind::Stepwise) {
    record("ref", 3, stepwise_truth());
  }
  for (const auto& method : config.methods) {
    for (int k : config.k_values) {
      if (method == "kaps") {
        SearchConfig sc;
        sc.k = k;
        sc.min_subgroup = min_subgroup;
        sc.weight = config.weight;
        sc.pair_scope = config.fit_scope;
        record(method, k, attempt([&] { return find_best_split(train, sc).split; }));
      } else if (method == "greedy") {
        record(method, k, attempt([&] {
                 return greedy_tree_fit(train, k, min_subgroup, config.weight);
               }));
      } else {
        throw std::invalid_argument("unknown method '" + method + "'");
      }
    }
  }
  if (config.selection) {
    const auto& sel = *config.selection;
    SearchConfig sc;
    sc.min_subgroup = min_subgroup;
    sc.weight = config.weight;
    sc.pair_scope = config.fit_scope;
    PermutationPlan plan;
    plan.replications = sel.permutations;
    plan.seed = derive_stream(model.seed ^ kPermTag, rep);
    plan.alpha = sel.alpha;
    plan.correction = sel.correction;
    plan.null_model = sel.null_model;
    std::optional<KSelectionResult> chosen;
    try {
      chosen = select_k(train, sel.k_min, sel.k_max, plan, sc);
    } catch (const std::exception&) {
    }
    if (!chosen || !chosen->k_hat) {
      record("kaps_select", 0, std::nullopt);
    } else {
      const auto it = std::find_if(chosen->per_k.begin(), chosen->per_k.end(),
                                   [&](const KFit& f) { return f.k == *chosen->k_hat; });
      record("kaps_select", *chosen->k_hat, it->best.split);
    }
  }
  return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  if (config.reps < 1) {
    throw std::invalid_argument("reps must be positive");
  }
  for (const auto& method : config.methods) {
    if (method != "kaps" && method != "greedy") {
      throw std::invalid_argument("unknown method '" + method + "'");
    }
  }
  std::vector<std::vector<double>> bounds;
  for (const auto& model : config.models) {
    bounds.push_back(censoring_bounds(model));
  }

  const std::size_t jobs = config.models.size() * config.reps;
  std::vector<std::vector<ReplicationRecord>> per_job(jobs);
  parallel_for(jobs, [&](std::size_t j) {
    const std::size_t m = j / config.reps;
    per_job[j] = run_replication(config, config.models[m], bounds[m], j % config.reps + 1);
  });

  ExperimentResult result;
  for (auto& rows : per_job) {
    for (auto& r : rows) {
      result.records.push_back(std::move(r));
    }
  }

  // Aggregates keep first-appearance order of (model, rate, method, k).
  for (const auto& r : result.records) {
    if (r.method == "kaps_select") {
      continue;
    }
    auto it = std::find_if(result.aggregates.begin(), result.aggregates.end(), [&](const AggregateRow& a) {
      return a.model == r.model && a.censoring_rate == r.censoring_rate && a.method == r.method && a.k == r.k;
    });
    if (it == result.aggregates.end()) {
      result.aggregates.push_back({r.model, r.censoring_rate, r.method, r.k, {}, {}, 0});
    }
  }
  for (auto& agg : result.aggregates) {
    std::vector<double> overall;
    std::vector<double> pairwise;
    for (const auto& r : result.records) {
      if (r.model == agg.model && r.censoring_rate == agg.censoring_rate && r.method == agg.method &&
          r.k == agg.k) {
        if (r.overall && r.min_pairwise) {
          overall.push_back(*r.overall);
          pairwise.push_back(*r.min_pairwise);
        } else {
          ++agg.failures;
        }
      }
    }
    agg.overall = summarize(overall);
    agg.min_pairwise = summarize(pairwise);
    result.failures += agg.failures;
  }
  return result;
}

std::vector<std::pair<double, double>> cut_pairs(const ExperimentResult& result, ModelKind model,
                                                 double censoring_rate, const std::string& method) {
  std::vector<std::pair<double, double>> out;
  for (const auto& r : result.records) {
    if (r.model == model && r.censoring_rate == censoring_rate && r.method == method && r.k == 3 &&
        r.cutpoints.size() == 2) {
      out.emplace_back(r.cutpoints[0], r.cutpoints[1]);
    }
  }
  return out;
}

std::map<int, std::size_t> selected_k_counts(const ExperimentResult& result, ModelKind model,
                                             double censoring_rate) {
  std::map<int, std::size_t> counts;
  for (const auto& r : result.records) {
    if (r.model == model && r.censoring_rate == censoring_rate && r.method == "kaps_select") {
      ++counts[r.k];
    }
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Serialisation

namespace {

std::string optional_number(const std::optional<double>& v) {
  return v ? fmt::format("{}", *v) : std::string("NA");
}

std::string join_cuts(const std::vector<double>& cuts) {
  std::string s;
  for (std::size_t i = 0; i < cuts.size(); ++i) {
    s += (i ? ";" : "") + fmt::format("{}", cuts[i]);
  }
  return s;
}

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

void write_experiment_csv(std::ostream& out, const ExperimentResult& result) {
  out << "model,cr,rep,method,k,cutpoints,overall,min_pairwise\n";
  for (const auto& r : result.records) {
    fmt::print(out, "{},{},{},{},{},{},{},{}\n", model_name(r.model), r.censoring_rate, r.rep, r.method,
               r.k, join_cuts(r.cutpoints), optional_number(r.overall), optional_number(r.min_pairwise));
  }
}

nlohmann::json experiment_summary(const ExperimentResult& result) {
  nlohmann::json j;
  j["failures"] = result.failures;
  j["aggregates"] = nlohmann::json::array();
  std::vector<std::pair<ModelKind, double>> settings;
  for (const auto& a : result.aggregates) {
    j["aggregates"].push_back({
        {"model", model_name(a.model)},
        {"cr", a.censoring_rate},
        {"method", a.method},
        {"k", a.k},
        {"count", a.overall.count},
        {"failures", a.failures},
        {"overall", {{"mean", number_or_null(a.overall.mean)}, {"se", number_or_null(a.overall.standard_error)}}},
        {"min_pairwise",
         {{"mean", number_or_null(a.min_pairwise.mean)}, {"se", number_or_null(a.min_pairwise.standard_error)}}},
    });
    if (std::find(settings.begin(), settings.end(), std::pair{a.model, a.censoring_rate}) == settings.end()) {
      settings.emplace_back(a.model, a.censoring_rate);
    }
  }
  for (const auto& r : result.records) {
    if (std::find(settings.begin(), settings.end(), std::pair{r.model, r.censoring_rate}) == settings.end()) {
      settings.emplace_back(r.model, r.censoring_rate);
    }
  }

  j["cutpoints"] = nlohmann::json::array();
  j["selected_k"] = nlohmann::json::array();
  for (const auto& [model, cr] : settings) {
    std::vector<std::string> methods;
    for (const auto& r : result.records) {
      if (r.model == model && r.censoring_rate == cr && r.k == 3 && r.method != "kaps_select" &&
          std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
        methods.push_back(r.method);
      }
    }
    for (const auto& method : methods) {
      const auto pairs = cut_pairs(result, model, cr, method);
      nlohmann::json entry{{"model", model_name(model)}, {"cr", cr}, {"method", method}, {"k", 3}};
      std::map<double, std::size_t> first;
      std::map<double, std::size_t> second;
      for (const auto& [c1, c2] : pairs) {
        ++first[c1];
        ++second[c2];
      }
      auto hist = [](const std::map<double, std::size_t>& h) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& [v, c] : h) {
          a.push_back({{"value", v}, {"count", c}});
        }
        return a;
      };
      entry["histogram_first"] = hist(first);
      entry["histogram_second"] = hist(second);
      if (pairs.size() >= 2) {
        const Ellipse e = confidence_ellipse(pairs);
        entry["ellipse"] = {{"center", {e.center.first, e.center.second}},
                            {"determinant", e.determinant},
                            {"semi_major", e.semi_major},
                            {"semi_minor", e.semi_minor},
                            {"angle_degrees", e.angle_degrees}};
      }
      j["cutpoints"].push_back(entry);
    }
    const auto counts = selected_k_counts(result, model, cr);
    if (!counts.empty()) {
      nlohmann::json freq = nlohmann::json::object();
      for (const auto& [k, c] : counts) {
        freq[k == 0 ? std::string("none") : std::to_string(k)] = c;
      }
      j["selected_k"].push_back({{"model", model_name(model)}, {"cr", cr}, {"counts", freq}});
    }
  }
  return j;
}

void print_table(std::ostream& out, const ExperimentResult& result) {
  fmt::print(out, "{:<5} {:>5} {:>3} {:<8} {:>18} {:>18} {:>5}\n", "model", "cr", "K", "method", "overall (se)",
             "pairwise (se)", "fail");
  for (const auto& a : result.aggregates) {
    fmt::print(out, "{:<5} {:>5.2f} {:>3} {:<8} {:>18} {:>18} {:>5}\n", model_name(a.model), a.censoring_rate,
               a.k, a.method, fmt::format("{:.2f} ({:.2f})", a.overall.mean, a.overall.standard_error),
               fmt::format("{:.2f} ({:.2f})", a.min_pairwise.mean, a.min_pairwise.standard_error), a.failures);
  }
}

}  // namespace kaps::sim
