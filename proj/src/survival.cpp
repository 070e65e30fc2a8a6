#include "kaps/survival.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

namespace kaps {

Cohort::Cohort(std::vector<SurvivalRecord> records) : records_(std::move(records)) {
  for (const auto& r : records_) {
    if (!std::isfinite(r.time) || r.time < 0.0) {
      throw std::invalid_argument("survival time must be finite and non-negative");
    }
    if (!std::isfinite(r.covariate)) {
      throw std::invalid_argument("covariate must be finite");
    }
  }
}

std::size_t Cohort::event_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(), [](const auto& r) { return r.event; }));
}

std::vector<double> Cohort::distinct_covariates() const {
  std::vector<double> values;
  values.reserve(records_.size());
  for (const auto& r : records_) {
    values.push_back(r.covariate);
  }
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  return values;
}

Cohort Cohort::subset(double lo, double hi) const {
  std::vector<SurvivalRecord> kept;
  for (const auto& r : records_) {
    if (r.covariate > lo && r.covariate <= hi) {
      kept.push_back(r);
    }
  }
  return Cohort(std::move(kept));
}

double chi_square_upper_tail(double statistic, int df) {
  if (df < 1) {
    throw std::invalid_argument("chi-square df must be positive");
  }
  if (!(statistic > 0.0)) {
    return 1.0;
  }
  if (std::isinf(statistic)) {
    return 0.0;
  }
  return boost::math::gamma_q(0.5 * df, 0.5 * statistic);
}

// ---------------------------------------------------------------------------
// Kaplan-Meier

KmCurve km_fit(const Cohort& cohort) {
  if (cohort.empty()) {
    throw std::invalid_argument("empty cohort");
  }
  std::vector<SurvivalRecord> sorted(cohort.begin(), cohort.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.time < b.time; });

  KmCurve curve;
  double surv = 1.0;
  std::size_t remaining = sorted.size();
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    std::size_t deaths = 0;
    while (j < sorted.size() && sorted[j].time == sorted[i].time) {
      deaths += sorted[j].event ? 1 : 0;
      ++j;
    }
    if (deaths > 0) {
      surv *= 1.0 - static_cast<double>(deaths) / static_cast<double>(remaining);
      curve.times.push_back(sorted[i].time);
      curve.survival.push_back(surv);
      curve.at_risk.push_back(remaining);
      curve.events.push_back(deaths);
    }
    remaining -= j - i;
    i = j;
  }
  return curve;
}

std::optional<double> km_quantile(const KmCurve& curve, double q) {
  if (!(q > 0.0 && q < 1.0)) {
    throw std::invalid_argument("quantile must lie in (0, 1)");
  }
  // Absorbs rounding in products such as (1 - 1/2) that land exactly on 1 - q.
  constexpr double slack = 1e-12;
  for (std::size_t j = 0; j < curve.times.size(); ++j) {
    if (curve.survival[j] <= 1.0 - q + slack) {
      return curve.times[j];
    }
  }
  return std::nullopt;
}

double km_survival_at(const KmCurve& curve, double t) {
  if (t < 0.0) {
    throw std::invalid_argument("time must be non-negative");
  }
  const auto it = std::upper_bound(curve.times.begin(), curve.times.end(), t);
  if (it == curve.times.begin()) {
    return 1.0;
  }
  return curve.survival[static_cast<std::size_t>(it - curve.times.begin()) - 1];
}

// ---------------------------------------------------------------------------
// Risk tables

RiskTable tabulate(std::span<const Cohort* const> groups) {
  struct Entry {
    double time;
    bool event;
    std::size_t group;
  };
  std::vector<Entry> entries;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (const auto& r : *groups[g]) {
      entries.push_back({r.time, r.event, g});
    }
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.time < b.time; });

  RiskTable table;
  table.groups = groups.size();
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i;
    bool any_event = false;
    while (j < entries.size() && entries[j].time == entries[i].time) {
      any_event = any_event || entries[j].event;
      ++j;
    }
    if (any_event) {
      table.times.push_back(entries[i].time);
    }
    i = j;
  }

  const std::size_t nt = table.times.size();
  table.at_risk.assign(table.groups * nt, 0.0);
  table.events.assign(table.groups * nt, 0.0);
  // Backward sweep: at-risk at t_j counts every record with time >= t_j, so
  // censorings tied with t_j are still at risk (events precede censorings).
  std::vector<double> running(table.groups, 0.0);
  std::size_t e = entries.size();
  for (std::size_t j = nt; j-- > 0;) {
    const double t = table.times[j];
    while (e > 0 && entries[e - 1].time >= t) {
      const auto& entry = entries[e - 1];
      running[entry.group] += 1.0;
      if (entry.time == t && entry.event) {
        table.events[entry.group * nt + j] += 1.0;
      }
      --e;
    }
    for (std::size_t g = 0; g < table.groups; ++g) {
      table.at_risk[g * nt + j] = running[g];
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Log-rank family

void TwoSampleAccumulator::add(double at_risk_a, double events_a, double at_risk_b,
                               double events_b) noexcept {
  const double deaths = events_a + events_b;
  if (deaths <= 0.0) {
    return;
  }
  const double n = at_risk_a + at_risk_b;
  const double w = weight_ == WeightKind::Gehan ? n : 1.0;
  const double share = at_risk_a / n;
  score_ += w * (events_a - deaths * share);
  if (n > 1.0) {
    variance_ += w * w * deaths * share * (1.0 - share) * (n - deaths) / (n - 1.0);
  }
  pooled_events_ += deaths;
}

TestResult TwoSampleAccumulator::result() const {
  TestResult out;
  out.df = 1;
  out.statistic = variance_ > 0.0 ? score_ * score_ / variance_ : 0.0;
  out.p_value = chi_square_upper_tail(out.statistic, 1);
  return out;
}

TestResult k_sample_from_table(const RiskTable& table, WeightKind weight) {
  const std::size_t k = table.groups;
  const std::size_t free = k - 1;
  const std::size_t nt = table.times.size();
  Eigen::VectorXd score = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(free));
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(free),
                                              static_cast<Eigen::Index>(free));
  std::vector<double> share(k);
  for (std::size_t j = 0; j < nt; ++j) {
    double n = 0.0;
    double deaths = 0.0;
    for (std::size_t g = 0; g < k; ++g) {
      n += table.risk(g, j);
      deaths += table.died(g, j);
    }
    if (deaths <= 0.0) {
      continue;
    }
    const double w = weight == WeightKind::Gehan ? n : 1.0;
    for (std::size_t g = 0; g < k; ++g) {
      share[g] = table.risk(g, j) / n;
    }
    const double spread = n > 1.0 ? w * w * deaths * (n - deaths) / (n - 1.0) : 0.0;
    for (std::size_t g = 0; g < free; ++g) {
      const auto gi = static_cast<Eigen::Index>(g);
      score(gi) += w * (table.died(g, j) - deaths * share[g]);
      for (std::size_t h = 0; h < free; ++h) {
        cov(gi, static_cast<Eigen::Index>(h)) +=
            spread * share[g] * ((g == h ? 1.0 : 0.0) - share[h]);
      }
    }
  }

  TestResult out;
  if (free == 1) {
    const double v = cov(0, 0);
    out.statistic = v > 0.0 ? score(0) * score(0) / v : 0.0;
    out.df = 1;
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const Eigen::VectorXd& lambda = eig.eigenvalues();
    const double tol = 1e-10 * std::max(1.0, lambda.cwiseAbs().maxCoeff());
    const Eigen::VectorXd proj = eig.eigenvectors().transpose() * score;
    int rank = 0;
    double stat = 0.0;
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
      if (lambda(i) > tol) {
        stat += proj(i) * proj(i) / lambda(i);
        ++rank;
      }
    }
    out.statistic = stat;
    out.df = rank > 0 ? rank : static_cast<int>(free);
  }
  out.p_value = chi_square_upper_tail(out.statistic, out.df);
  return out;
}

namespace {

void require_groups(std::span<const Cohort* const> groups) {
  std::size_t events = 0;
  for (const Cohort* g : groups) {
    if (g->empty()) {
      throw std::invalid_argument("empty group");
    }
    events += g->event_count();
  }
  if (events == 0) {
    throw std::invalid_argument("degenerate: no events");
  }
}

}  // namespace

TestResult two_sample_test(const Cohort& group_a, const Cohort& group_b, WeightKind weight) {
  const std::array<const Cohort*, 2> groups{&group_a, &group_b};
  require_groups(groups);
  const RiskTable table = tabulate(groups);
  TwoSampleAccumulator acc(weight);
  for (std::size_t j = 0; j < table.times.size(); ++j) {
    acc.add(table.risk(0, j), table.died(0, j), table.risk(1, j), table.died(1, j));
  }
  return acc.result();
}

TestResult k_sample_test(std::span<const Cohort> groups, WeightKind weight) {
  if (groups.size() < 2) {
    throw std::invalid_argument("k-sample test needs at least two groups");
  }
  std::vector<const Cohort*> ptrs;
  ptrs.reserve(groups.size());
  for (const auto& g : groups) {
    ptrs.push_back(&g);
  }
  require_groups(ptrs);
  return k_sample_from_table(tabulate(ptrs), weight);
}

}  // namespace kaps
