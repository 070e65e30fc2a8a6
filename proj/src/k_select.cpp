#include "kaps/k_select.hpp"

#include <algorithm>
#include <stdexcept>

#include "kaps/parallel.hpp"

namespace kaps {

namespace {
constexpr std::uint64_t kPermutationTag = 0x7065726D75746521ull;

void validate(const PermutationPlan& plan) {
  if (plan.replications < 1) {
    throw std::invalid_argument("permutation count must be positive");
  }
  if (!(plan.alpha > 0.0 && plan.alpha < 1.0)) {
    throw std::invalid_argument("alpha must lie in (0, 1)");
  }
}
}  // namespace

RandomStream permutation_stream(std::uint64_t seed, std::size_t replication) {
  return RandomStream(seed, derive_stream(kPermutationTag, replication));
}

Cohort permute_covariate(const Cohort& cohort, RandomStream& stream) {
  std::vector<SurvivalRecord> records(cohort.begin(), cohort.end());
  for (std::size_t i = records.size(); i > 1; --i) {
    const std::size_t j = stream.below(i);
    std::swap(records[i - 1].covariate, records[j].covariate);
  }
  return Cohort(std::move(records));
}

double score_fixed_split(const PairStatCache& cache, const SplitSet& split, PairScope scope) {
  return min_pairwise_statistic(cache, cache.cut_indices(split), scope).first;
}

double permuted_score(const Cohort& permuted, const PairStatCache& cache, const SplitEvaluation& best,
                      const SearchConfig& config, PermutationNull null_model) {
  switch (null_model) {
    case PermutationNull::Research: {
      SearchConfig at_k = config;
      at_k.k = best.split.groups();
      return find_best_split(permuted, at_k, cache).min_pairwise.statistic;
    }
    case PermutationNull::FixedSplit:
      return score_fixed_split(cache, best.split, config.pair_scope);
    case PermutationNull::WorstPair: {
      const auto ranges = cache.ranges(cache.cut_indices(best.split));
      const auto [g, h] = best.worst_pair;
      return cache.pair(ranges[static_cast<std::size_t>(g)], ranges[static_cast<std::size_t>(h)]).statistic;
    }
  }
  return 0.0;
}

double permutation_pvalue(const Cohort& cohort, const SplitEvaluation& best,
                          const PermutationPlan& plan, const SearchConfig& config) {
  validate(plan);
  const double observed = best.min_pairwise.statistic;
  std::vector<char> exceeds(plan.replications, 0);
  parallel_for(plan.replications, [&](std::size_t i) {
    RandomStream stream = permutation_stream(plan.seed, i + 1);
    const Cohort permuted = permute_covariate(cohort, stream);
    const PairStatCache cache(permuted, config.weight);
    exceeds[i] = permuted_score(permuted, cache, best, config, plan.null_model) >= observed ? 1 : 0;
  });
  const auto hits = static_cast<double>(std::count(exceeds.begin(), exceeds.end(), 1));
  return hits / static_cast<double>(plan.replications);
}

double correct_pvalue(double p, int k, Correction correction) {
  if (k < 2) {
    throw std::invalid_argument("k must be at least 2");
  }
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("p-value must lie in [0, 1]");
  }
  const double comparisons = static_cast<double>(k - 1);
  switch (correction) {
    case Correction::None:
      return p;
    case Correction::Divide:
      return p / comparisons;
    case Correction::BonferroniMultiply:
      return std::min(1.0, p * comparisons);
  }
  return p;
}

KSelectionResult select_k(const Cohort& cohort, int k_min, int k_max, const PermutationPlan& plan,
                          const SearchConfig& config) {
  validate(plan);
  if (k_min < 2 || k_max < k_min) {
    throw std::invalid_argument("k range must satisfy 2 <= k_min <= k_max");
  }
  const PairStatCache raw(cohort, config.weight);

  KSelectionResult result;
  for (int k = k_min; k <= k_max; ++k) {
    SearchConfig at_k = config;
    at_k.k = k;
    try {
      KFit fit;
      fit.k = k;
      fit.best = find_best_split(cohort, at_k, raw);
      result.per_k.push_back(std::move(fit));
    } catch (const Infeasible&) {
    }
  }
  if (result.per_k.empty()) {
    throw Infeasible("no feasible k in range");
  }

  // One permutation per replication serves every K, so each permuted cohort
  // is tabulated once.
  const std::size_t nk = result.per_k.size();
  std::vector<char> exceeds(plan.replications * nk, 0);
  parallel_for(plan.replications, [&](std::size_t i) {
    RandomStream stream = permutation_stream(plan.seed, i + 1);
    const Cohort permuted = permute_covariate(cohort, stream);
    const PairStatCache cache(permuted, config.weight);
    for (std::size_t q = 0; q < nk; ++q) {
      const auto& best = result.per_k[q].best;
      exceeds[i * nk + q] =
          permuted_score(permuted, cache, best, config, plan.null_model) >= best.min_pairwise.statistic ? 1 : 0;
    }
  });

  for (std::size_t q = 0; q < nk; ++q) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < plan.replications; ++i) {
      hits += static_cast<std::size_t>(exceeds[i * nk + q]);
    }
    auto& fit = result.per_k[q];
    fit.p_value = static_cast<double>(hits) / static_cast<double>(plan.replications);
    fit.p_corrected = correct_pvalue(fit.p_value, fit.k, plan.correction);
    if (fit.p_corrected <= plan.alpha) {
      result.k_hat = fit.k;
    }
  }
  return result;
}

}  // namespace kaps
