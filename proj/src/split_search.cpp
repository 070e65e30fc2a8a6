#include "kaps/split_search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>

#include "kaps/parallel.hpp"

namespace kaps {

int SplitSet::assign(double covariate) const noexcept {
  const auto it = std::lower_bound(cutpoints.begin(), cutpoints.end(), covariate);
  return static_cast<int>(it - cutpoints.begin());
}

std::vector<Cohort> partition(const Cohort& cohort, const SplitSet& split) {
  std::vector<std::vector<SurvivalRecord>> buckets(static_cast<std::size_t>(split.groups()));
  for (const auto& r : cohort) {
    buckets[static_cast<std::size_t>(split.assign(r.covariate))].push_back(r);
  }
  std::vector<Cohort> out;
  out.reserve(buckets.size());
  for (auto& b : buckets) {
    out.emplace_back(std::move(b));
  }
  return out;
}

std::size_t PairwiseMatrix::index(int g, int h) const {
  if (!(0 <= g && g < h && h < groups_)) {
    throw std::out_of_range("pairwise index requires 0 <= g < h < groups");
  }
  // Column-major lower triangle: rows h > g for each column g.
  const auto gg = static_cast<std::size_t>(g);
  const auto k = static_cast<std::size_t>(groups_);
  return gg * (2 * k - gg - 1) / 2 + static_cast<std::size_t>(h - g - 1);
}

// ---------------------------------------------------------------------------
// PairStatCache

std::size_t PairStatCache::KeyHash::operator()(const Key& k) const noexcept {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (auto x : k.v) {
    h ^= x;
    h *= 0x100000001B3ull;
    h ^= h >> 29;
  }
  return static_cast<std::size_t>(h);
}

PairStatCache::PairStatCache(const Cohort& cohort, WeightKind weight)
    : weight_(weight), n_(cohort.size()), shards_(std::make_unique<std::array<Shard, kShards>>()) {
  if (cohort.empty()) {
    throw std::invalid_argument("empty cohort");
  }
  values_ = cohort.distinct_covariates();
  if (values_.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("too many distinct covariate values");
  }
  for (const auto& r : cohort) {
    if (r.event) {
      times_.push_back(r.time);
    }
  }
  std::sort(times_.begin(), times_.end());
  times_.erase(std::unique(times_.begin(), times_.end()), times_.end());

  const std::size_t m = values_.size();
  const std::size_t nt = times_.size();
  count_prefix_.assign(m + 1, 0);
  event_prefix_.assign(m + 1, 0);
  risk_prefix_.assign((m + 1) * nt, 0);
  death_prefix_.assign((m + 1) * nt, 0);

  // Row v + 1 first holds value v's own counts (risk as a difference array).
  for (const auto& r : cohort) {
    const auto v = static_cast<std::size_t>(
        std::lower_bound(values_.begin(), values_.end(), r.covariate) - values_.begin());
    count_prefix_[v + 1] += 1;
    const std::size_t reach =
        static_cast<std::size_t>(std::upper_bound(times_.begin(), times_.end(), r.time) - times_.begin());
    std::int32_t* risk_row = risk_prefix_.data() + (v + 1) * nt;
    if (reach > 0) {
      risk_row[0] += 1;
      if (reach < nt) {
        risk_row[reach] -= 1;
      }
    }
    if (r.event) {
      event_prefix_[v + 1] += 1;
      death_prefix_[(v + 1) * nt + reach - 1] += 1;
    }
  }
  for (std::size_t v = 1; v <= m; ++v) {
    std::int32_t* risk_row = risk_prefix_.data() + v * nt;
    for (std::size_t j = 1; j < nt; ++j) {
      risk_row[j] += risk_row[j - 1];
    }
  }
  for (std::size_t v = 1; v <= m; ++v) {
    count_prefix_[v] += count_prefix_[v - 1];
    event_prefix_[v] += event_prefix_[v - 1];
    for (std::size_t j = 0; j < nt; ++j) {
      risk_prefix_[v * nt + j] += risk_prefix_[(v - 1) * nt + j];
      death_prefix_[v * nt + j] += death_prefix_[(v - 1) * nt + j];
    }
  }
}

std::size_t PairStatCache::events(ValueRange r) const noexcept {
  return event_prefix_[r.hi + 1] - event_prefix_[r.lo];
}

double PairStatCache::risk(std::uint32_t lo, std::uint32_t hi, std::size_t j) const noexcept {
  const std::size_t nt = times_.size();
  return static_cast<double>(risk_prefix_[(hi + 1) * nt + j] - risk_prefix_[lo * nt + j]);
}

double PairStatCache::died(std::uint32_t lo, std::uint32_t hi, std::size_t j) const noexcept {
  const std::size_t nt = times_.size();
  return static_cast<double>(death_prefix_[(hi + 1) * nt + j] - death_prefix_[lo * nt + j]);
}

TestResult PairStatCache::pair_uncached(ValueRange a, ValueRange b) const {
  TwoSampleAccumulator acc(weight_);
  for (std::size_t j = 0; j < times_.size(); ++j) {
    acc.add(risk(a.lo, a.hi, j), died(a.lo, a.hi, j), risk(b.lo, b.hi, j), died(b.lo, b.hi, j));
  }
  return acc.result();
}

TestResult PairStatCache::pair(ValueRange a, ValueRange b) const {
  const Key key{{a.lo, a.hi, b.lo, b.hi}};
  Shard& shard = (*shards_)[KeyHash{}(key) % kShards];
  {
    std::shared_lock lock(shard.mutex);
    if (auto it = shard.map.find(key); it != shard.map.end()) {
      return it->second;
    }
  }
  const TestResult result = pair_uncached(a, b);
  std::unique_lock lock(shard.mutex);
  shard.map.emplace(key, result);
  return result;
}

TestResult PairStatCache::overall(std::span<const ValueRange> groups) const {
  RiskTable table;
  table.times = times_;
  table.groups = groups.size();
  const std::size_t nt = times_.size();
  table.at_risk.resize(groups.size() * nt);
  table.events.resize(groups.size() * nt);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t j = 0; j < nt; ++j) {
      table.at_risk[g * nt + j] = risk(groups[g].lo, groups[g].hi, j);
      table.events[g * nt + j] = died(groups[g].lo, groups[g].hi, j);
    }
  }
  return k_sample_from_table(table, weight_);
}

std::vector<std::uint32_t> PairStatCache::cut_indices(const SplitSet& split) const {
  std::vector<std::uint32_t> cuts;
  cuts.reserve(split.cutpoints.size());
  for (double c : split.cutpoints) {
    const auto it = std::lower_bound(values_.begin(), values_.end(), c);
    if (it == values_.end() || *it != c) {
      throw std::invalid_argument("cutpoint is not an observed covariate value");
    }
    const auto idx = static_cast<std::uint32_t>(it - values_.begin());
    if (!cuts.empty() && idx <= cuts.back()) {
      throw std::invalid_argument("cutpoints must be strictly ascending");
    }
    cuts.push_back(idx);
  }
  return cuts;
}

std::vector<ValueRange> PairStatCache::ranges(std::span<const std::uint32_t> cuts) const {
  std::vector<ValueRange> out;
  out.reserve(cuts.size() + 1);
  std::uint32_t lo = 0;
  for (auto c : cuts) {
    out.push_back({lo, c});
    lo = c + 1;
  }
  // An empty upper range (last cut at the maximum) is encoded with lo > hi.
  out.push_back({lo, static_cast<std::uint32_t>(values_.size() - 1)});
  return out;
}

SplitSet PairStatCache::split_from_indices(std::span<const std::uint32_t> cuts) const {
  SplitSet s;
  s.cutpoints.reserve(cuts.size());
  for (auto c : cuts) {
    s.cutpoints.push_back(values_[c]);
  }
  return s;
}

std::size_t PairStatCache::cached_pairs() const {
  std::size_t total = 0;
  for (const auto& shard : *shards_) {
    std::shared_lock lock(shard.mutex);
    total += shard.map.size();
  }
  return total;
}

// ---------------------------------------------------------------------------
// Enumeration

namespace {

void validate(const SearchConfig& config, std::size_t n) {
  if (config.k < 2) {
    throw std::invalid_argument("k must be at least 2");
  }
  if (config.min_subgroup < 1) {
    throw std::invalid_argument("min_subgroup must be positive");
  }
  if (config.min_subgroup * static_cast<std::size_t>(config.k) > n) {
    throw Infeasible("no feasible split set");
  }
}

// Size of the group spanning value indices [from, to].
std::size_t span_count(const PairStatCache& cache, std::size_t from, std::size_t to) {
  return cache.count({static_cast<std::uint32_t>(from), static_cast<std::uint32_t>(to)});
}

}  // namespace

void for_each_split(const PairStatCache& cache, int k, std::size_t min_subgroup,
                    const std::function<bool(std::span<const std::uint32_t>)>& visit) {
  const std::size_t m = cache.value_count();
  const auto cuts_needed = static_cast<std::size_t>(k - 1);
  if (k < 2 || m < static_cast<std::size_t>(k)) {
    return;
  }
  const std::size_t n = cache.cohort_size();
  std::vector<std::uint32_t> cuts(cuts_needed);
  bool stop = false;

  // Places cut `depth`; the group it closes starts at value index `start`.
  std::function<void(std::size_t, std::size_t, std::size_t)> place =
      [&](std::size_t depth, std::size_t start, std::size_t used) {
        const std::size_t groups_after = cuts_needed - depth;
        for (std::size_t c = start; c + groups_after < m && !stop; ++c) {
          const std::size_t size = span_count(cache, start, c);
          if (size < min_subgroup) {
            continue;
          }
          const std::size_t rest = n - used - size;
          if (rest < groups_after * min_subgroup) {
            break;
          }
          cuts[depth] = static_cast<std::uint32_t>(c);
          if (depth + 1 == cuts_needed) {
            if (rest >= min_subgroup && !visit(cuts)) {
              stop = true;
            }
          } else {
            place(depth + 1, c + 1, used + size);
          }
        }
      };
  place(0, 0, 0);
}

std::size_t count_feasible_splits(const PairStatCache& cache, int k, std::size_t min_subgroup,
                                  std::size_t cap) {
  const std::size_t m = cache.value_count();
  if (k < 2 || m < static_cast<std::size_t>(k)) {
    return 0;
  }
  auto sat_add = [cap](std::size_t a, std::size_t b) { return (a > cap - b) ? cap : a + b; };
  // ways[s] = number of ways to split values [s, m) into the remaining groups.
  std::vector<std::size_t> ways(m + 1, 0);
  for (std::size_t s = 0; s < m; ++s) {
    ways[s] = span_count(cache, s, m - 1) >= min_subgroup ? 1 : 0;
  }
  for (int groups = 2; groups <= k; ++groups) {
    std::vector<std::size_t> next(m + 1, 0);
    for (std::size_t s = 0; s < m; ++s) {
      std::size_t total = 0;
      for (std::size_t c = s; c + 1 < m; ++c) {
        if (ways[c + 1] > 0 && span_count(cache, s, c) >= min_subgroup) {
          total = sat_add(total, ways[c + 1]);
        }
      }
      next[s] = total;
    }
    ways = std::move(next);
  }
  return std::min(ways[0], cap);
}

std::vector<SplitSet> enumerate_split_sets(const Cohort& cohort, const SearchConfig& config) {
  validate(config, cohort.size());
  const PairStatCache cache(cohort, config.weight);
  std::vector<SplitSet> out;
  for_each_split(cache, config.k, config.min_subgroup, [&](std::span<const std::uint32_t> cuts) {
    out.push_back(cache.split_from_indices(cuts));
    return true;
  });
  if (out.empty()) {
    throw Infeasible("no feasible split set");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

std::pair<double, std::pair<int, int>> min_pairwise_statistic(
    const PairStatCache& cache, std::span<const std::uint32_t> cuts, PairScope scope) {
  const auto groups = cache.ranges(cuts);
  const int k = static_cast<int>(groups.size());
  double best = std::numeric_limits<double>::infinity();
  std::pair<int, int> worst{0, 1};
  for (int g = 0; g + 1 < k; ++g) {
    const int h_end = scope == PairScope::Adjacent ? g + 2 : k;
    for (int h = g + 1; h < h_end; ++h) {
      const double stat = cache.pair(groups[static_cast<std::size_t>(g)],
                                     groups[static_cast<std::size_t>(h)])
                              .statistic;
      if (stat < best) {
        best = stat;
        worst = {g, h};
      }
    }
  }
  return {best, worst};
}

namespace {

SplitEvaluation evaluate_indices(const PairStatCache& cache, std::span<const std::uint32_t> cuts,
                                 PairScope scope) {
  const auto groups = cache.ranges(cuts);
  const int k = static_cast<int>(groups.size());
  SplitEvaluation eval;
  eval.split = cache.split_from_indices(cuts);
  eval.pairwise = PairwiseMatrix(k);
  for (int g = 0; g < k; ++g) {
    eval.group_sizes.push_back(cache.count(groups[static_cast<std::size_t>(g)]));
    for (int h = g + 1; h < k; ++h) {
      eval.pairwise.at(g, h) =
          cache.pair(groups[static_cast<std::size_t>(g)], groups[static_cast<std::size_t>(h)]);
    }
  }
  const auto [stat, worst] = min_pairwise_statistic(cache, cuts, scope);
  eval.worst_pair = worst;
  eval.min_pairwise = eval.pairwise.at(worst.first, worst.second);
  eval.overall = cache.overall(groups);
  return eval;
}

void check_cache(const Cohort& cohort, const SearchConfig& config, const PairStatCache& cache) {
  if (cache.cohort_size() != cohort.size()) {
    throw std::invalid_argument("cache was built for a different cohort");
  }
  if (cache.weight() != config.weight) {
    throw std::invalid_argument("cache weight differs from the search configuration");
  }
}

using Cuts = std::vector<std::uint32_t>;

// Max-min selection: keep splits within tolerance of the best minimum, then
// those within tolerance of the best overall statistic among them, then the
// lexicographically smallest cut vector. Each pass is a plain max or filter,
// so the result does not depend on evaluation order.
std::size_t choose_best(const PairStatCache& cache, const std::vector<Cuts>& cuts,
                        const std::vector<double>& mins) {
  const double top = *std::max_element(mins.begin(), mins.end());
  std::vector<std::size_t> tied;
  for (std::size_t i = 0; i < mins.size(); ++i) {
    if (mins[i] >= top - kStatTolerance) {
      tied.push_back(i);
    }
  }
  if (tied.size() == 1) {
    return tied.front();
  }
  std::vector<double> overall(tied.size());
  parallel_for(tied.size(), [&](std::size_t t) {
    overall[t] = cache.overall(cache.ranges(cuts[tied[t]])).statistic;
  });
  const double top_overall = *std::max_element(overall.begin(), overall.end());
  std::optional<std::size_t> pick;
  for (std::size_t t = 0; t < tied.size(); ++t) {
    if (overall[t] >= top_overall - kStatTolerance &&
        (!pick || cuts[tied[t]] < cuts[*pick])) {
      pick = tied[t];
    }
  }
  return *pick;
}

std::vector<double> score_all(const PairStatCache& cache, const std::vector<Cuts>& cuts,
                              PairScope scope) {
  std::vector<double> mins(cuts.size());
  constexpr std::size_t chunk = 256;
  const std::size_t chunks = (cuts.size() + chunk - 1) / chunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t end = std::min(cuts.size(), (c + 1) * chunk);
    for (std::size_t i = c * chunk; i < end; ++i) {
      mins[i] = min_pairwise_statistic(cache, cuts[i], scope).first;
    }
  });
  return mins;
}

bool feasible(const PairStatCache& cache, const Cuts& cuts, std::size_t min_subgroup) {
  for (const auto& r : cache.ranges(cuts)) {
    if (r.lo > r.hi || cache.count(r) < min_subgroup) {
      return false;
    }
  }
  return true;
}

// Budgeted search: exhaustive over a quantile grid of cut positions, then
// coordinate refinement one cut at a time over every value between its
// neighbours until no move improves the max-min order or the budget runs out.
Cuts coarse_then_refine(const PairStatCache& cache, const SearchConfig& config, std::size_t budget) {
  const std::size_t m = cache.value_count();
  const std::size_t n = cache.cohort_size();
  const auto cuts_needed = static_cast<std::size_t>(config.k - 1);

  auto choose = [](std::size_t g, std::size_t r) {
    long double c = 1;
    for (std::size_t i = 0; i < r; ++i) {
      c = c * static_cast<long double>(g - i) / static_cast<long double>(i + 1);
    }
    return c;
  };
  const std::size_t grid_budget = std::max<std::size_t>(1, budget / 2);
  std::size_t grid = cuts_needed;
  while (grid + 1 < m && choose(grid + 1, cuts_needed) <= static_cast<long double>(grid_budget)) {
    ++grid;
  }

  std::vector<std::uint32_t> positions;
  for (std::size_t q = 1; q <= grid; ++q) {
    const double target = static_cast<double>(q) * static_cast<double>(n) / static_cast<double>(grid + 1);
    std::size_t v = 0;
    while (v + 2 < m && static_cast<double>(span_count(cache, 0, v)) < target) {
      ++v;
    }
    if (positions.empty() || positions.back() != v) {
      positions.push_back(static_cast<std::uint32_t>(v));
    }
  }

  std::vector<Cuts> pool;
  Cuts pick(cuts_needed);
  std::function<void(std::size_t, std::size_t)> combos = [&](std::size_t depth, std::size_t from) {
    if (depth == cuts_needed) {
      if (feasible(cache, pick, config.min_subgroup)) {
        pool.push_back(pick);
      }
      return;
    }
    for (std::size_t i = from; i < positions.size(); ++i) {
      pick[depth] = positions[i];
      combos(depth + 1, i + 1);
    }
  };
  combos(0, 0);
  if (pool.empty()) {
    for_each_split(cache, config.k, config.min_subgroup, [&](std::span<const std::uint32_t> c) {
      pool.emplace_back(c.begin(), c.end());
      return false;
    });
  }
  std::size_t spent = pool.size();
  auto mins = score_all(cache, pool, config.pair_scope);
  Cuts current = pool[choose_best(cache, pool, mins)];

  bool moved = true;
  while (moved && spent < budget) {
    moved = false;
    for (std::size_t i = 0; i < cuts_needed && spent < budget; ++i) {
      const std::uint32_t lo = i == 0 ? 0 : current[i - 1] + 1;
      const std::uint32_t hi = i + 1 < cuts_needed ? current[i + 1] - 1 : static_cast<std::uint32_t>(m - 2);
      std::vector<Cuts> local{current};
      for (std::uint32_t c = lo; c <= hi; ++c) {
        if (c == current[i]) {
          continue;
        }
        Cuts trial = current;
        trial[i] = c;
        if (feasible(cache, trial, config.min_subgroup)) {
          local.push_back(std::move(trial));
        }
      }
      spent += local.size() - 1;
      const auto local_mins = score_all(cache, local, config.pair_scope);
      const Cuts next = local[choose_best(cache, local, local_mins)];
      if (next != current) {
        current = next;
        moved = true;
      }
    }
  }
  return current;
}

}  // namespace

SplitEvaluation evaluate_split(const Cohort& cohort, const SplitSet& split,
                               const SearchConfig& config, const PairStatCache& cache) {
  check_cache(cohort, config, cache);
  const auto cuts = cache.cut_indices(split);
  if (static_cast<int>(cuts.size()) + 1 != config.k) {
    throw std::invalid_argument("split does not have k - 1 cutpoints");
  }
  for (const auto& r : cache.ranges(cuts)) {
    if (r.lo > r.hi || cache.count(r) < config.min_subgroup) {
      throw std::invalid_argument("constraint violated");
    }
  }
  return evaluate_indices(cache, cuts, config.pair_scope);
}

SplitEvaluation find_best_split(const Cohort& cohort, const SearchConfig& config) {
  validate(config, cohort.size());
  const PairStatCache cache(cohort, config.weight);
  return find_best_split(cohort, config, cache);
}

SplitEvaluation find_best_split(const Cohort& cohort, const SearchConfig& config,
                                const PairStatCache& cache) {
  validate(config, cohort.size());
  check_cache(cohort, config, cache);

  const std::size_t budget = config.budget.value_or(SIZE_MAX);
  const std::size_t feasible_count =
      count_feasible_splits(cache, config.k, config.min_subgroup, budget == SIZE_MAX ? SIZE_MAX : budget + 1);
  if (feasible_count == 0) {
    throw Infeasible("no feasible split set");
  }

  if (feasible_count > budget) {
    const Cuts best = coarse_then_refine(cache, config, budget);
    SplitEvaluation eval = evaluate_indices(cache, best, config.pair_scope);
    eval.exhaustive = false;
    return eval;
  }

  std::vector<Cuts> all;
  all.reserve(feasible_count);
  for_each_split(cache, config.k, config.min_subgroup, [&](std::span<const std::uint32_t> cuts) {
    all.emplace_back(cuts.begin(), cuts.end());
    return true;
  });
  const auto mins = score_all(cache, all, config.pair_scope);
  return evaluate_indices(cache, all[choose_best(cache, all, mins)], config.pair_scope);
}

}  // namespace kaps
