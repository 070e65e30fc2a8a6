#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kaps/survival.hpp"

namespace kaps {

enum class PairScope { Adjacent, AllPairs };

// Statistics closer than this are treated as tied.
inline constexpr double kStatTolerance = 1e-9;

struct SearchConfig {
  int k = 2;
  std::size_t min_subgroup = 1;
  WeightKind weight = WeightKind::LogRank;
  PairScope pair_scope = PairScope::Adjacent;
  // Cap on evaluated split sets; beyond it the search falls back to a
  // coarse grid plus coordinate refinement and reports exhaustive = false.
  std::optional<std::size_t> budget;
};

// Record i belongs to subgroup g (0-based) iff cut[g-1] < x <= cut[g].
struct SplitSet {
  std::vector<double> cutpoints;

  int groups() const noexcept { return static_cast<int>(cutpoints.size()) + 1; }
  int assign(double covariate) const noexcept;

  friend bool operator==(const SplitSet&, const SplitSet&) = default;
};

std::vector<Cohort> partition(const Cohort& cohort, const SplitSet& split);

// Lower triangle of pairwise two-sample results, indexed (g, h) with g < h.
class PairwiseMatrix {
 public:
  PairwiseMatrix() = default;
  explicit PairwiseMatrix(int groups)
      : groups_(groups), cells_(static_cast<std::size_t>(groups * (groups - 1) / 2)) {}

  int groups() const noexcept { return groups_; }
  TestResult& at(int g, int h) { return cells_[index(g, h)]; }
  const TestResult& at(int g, int h) const { return cells_[index(g, h)]; }

 private:
  std::size_t index(int g, int h) const;

  int groups_ = 0;
  std::vector<TestResult> cells_;
};

struct SplitEvaluation {
  SplitSet split;
  TestResult min_pairwise;
  std::pair<int, int> worst_pair{0, 1};
  TestResult overall;
  PairwiseMatrix pairwise;
  std::vector<std::size_t> group_sizes;
  bool exhaustive = true;
};

// Inclusive range [lo, hi] of indices into the cohort's distinct covariate values.
struct ValueRange {
  std::uint32_t lo = 0;
  std::uint32_t hi = 0;
};

// Prefix tables of at-risk and event counts per distinct covariate value over
// the cohort's event times. A pair of value ranges is scored in O(#event times)
// and memoised; results are bit-identical to two_sample_test on the induced
// subgroups. Safe for concurrent use.
class PairStatCache {
 public:
  PairStatCache(const Cohort& cohort, WeightKind weight);

  WeightKind weight() const noexcept { return weight_; }
  std::size_t cohort_size() const noexcept { return n_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::size_t value_count() const noexcept { return values_.size(); }
  // Records whose covariate lies in the range.
  std::size_t count(ValueRange r) const noexcept { return count_prefix_[r.hi + 1] - count_prefix_[r.lo]; }
  std::size_t events(ValueRange r) const noexcept;

  // Two-sample result between the two ranges; zero pooled events gives statistic 0.
  TestResult pair(ValueRange a, ValueRange b) const;
  // Uncached scoring, used to validate the memoised path.
  TestResult pair_uncached(ValueRange a, ValueRange b) const;
  TestResult overall(std::span<const ValueRange> groups) const;

  // Maps cutpoints to value indices; throws if a cutpoint is not an observed value.
  std::vector<std::uint32_t> cut_indices(const SplitSet& split) const;
  std::vector<ValueRange> ranges(std::span<const std::uint32_t> cuts) const;
  SplitSet split_from_indices(std::span<const std::uint32_t> cuts) const;

  std::size_t cached_pairs() const;

 private:
  struct Key {
    std::array<std::uint32_t, 4> v;
    friend bool operator==(const Key&, const Key&) = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept;
  };
  struct Shard {
    mutable std::shared_mutex mutex;
    std::unordered_map<Key, TestResult, KeyHash> map;
  };
  static constexpr std::size_t kShards = 32;

  double risk(std::uint32_t lo, std::uint32_t hi, std::size_t j) const noexcept;
  double died(std::uint32_t lo, std::uint32_t hi, std::size_t j) const noexcept;

  WeightKind weight_;
  std::size_t n_ = 0;
  std::vector<double> values_;
  std::vector<std::size_t> count_prefix_;
  std::vector<std::size_t> event_prefix_;
  std::vector<double> times_;
  // (value_count + 1) x times, cumulative over values below the row index.
  std::vector<std::int32_t> risk_prefix_;
  std::vector<std::int32_t> death_prefix_;
  std::unique_ptr<std::array<Shard, kShards>> shards_;
};

// Calls visit(cut indices) for every feasible split in ascending lexicographic
// order. Returns false from visit to stop early.
void for_each_split(const PairStatCache& cache, int k, std::size_t min_subgroup,
                    const std::function<bool(std::span<const std::uint32_t>)>& visit);

// Feasible split-set count, saturating at `cap`.
std::size_t count_feasible_splits(const PairStatCache& cache, int k, std::size_t min_subgroup,
                                  std::size_t cap = SIZE_MAX);

std::vector<SplitSet> enumerate_split_sets(const Cohort& cohort, const SearchConfig& config);

SplitEvaluation evaluate_split(const Cohort& cohort, const SplitSet& split,
                               const SearchConfig& config, const PairStatCache& cache);

// Minimum pairwise statistic of a fixed split over the configured scope, with
// the index of the worst pair.
std::pair<double, std::pair<int, int>> min_pairwise_statistic(
    const PairStatCache& cache, std::span<const std::uint32_t> cuts, PairScope scope);

SplitEvaluation find_best_split(const Cohort& cohort, const SearchConfig& config);
SplitEvaluation find_best_split(const Cohort& cohort, const SearchConfig& config,
                                const PairStatCache& cache);

}  // namespace kaps
