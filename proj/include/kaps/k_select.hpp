#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "kaps/random.hpp"
#include "kaps/split_search.hpp"
#include "kaps/survival.hpp"

namespace kaps {

// Divide is p / (K - 1); BonferroniMultiply is min(1, p * (K - 1)).
enum class Correction { None, Divide, BonferroniMultiply };

// How a permuted cohort is scored against the raw best split.
//   Research:   min pairwise statistic of the best split found anew on the
//               permuted cohort (the null law of the searched statistic).
//   FixedSplit: min pairwise statistic of the raw cutpoints on the permuted cohort.
//   WorstPair:  statistic of the raw worst pair under the raw cutpoints.
enum class PermutationNull { Research, FixedSplit, WorstPair };

struct PermutationPlan {
  std::size_t replications = 1000;
  std::uint64_t seed = 0;
  double alpha = 0.05;
  Correction correction = Correction::BonferroniMultiply;
  PermutationNull null_model = PermutationNull::Research;
};

struct KFit {
  int k = 2;
  SplitEvaluation best;
  double p_value = 1.0;
  double p_corrected = 1.0;
};

struct KSelectionResult {
  std::vector<KFit> per_k;
  std::optional<int> k_hat;
};

// Stream used for permutation r (1-based) of a plan seeded with `seed`.
RandomStream permutation_stream(std::uint64_t seed, std::size_t replication);

// Reassigns the covariate values across records by Fisher-Yates; time and
// event stay with their record.
Cohort permute_covariate(const Cohort& cohort, RandomStream& stream);

// Min pairwise statistic of a fixed split over the configured scope; pairs
// without events score 0.
double score_fixed_split(const PairStatCache& cache, const SplitSet& split, PairScope scope);

double permuted_score(const Cohort& permuted, const PairStatCache& cache, const SplitEvaluation& best,
                      const SearchConfig& config, PermutationNull null_model);

double permutation_pvalue(const Cohort& cohort, const SplitEvaluation& best,
                          const PermutationPlan& plan, const SearchConfig& config);

double correct_pvalue(double p, int k, Correction correction);

// Largest K in the range with corrected p <= alpha; K values that admit no
// feasible split are skipped.
KSelectionResult select_k(const Cohort& cohort, int k_min, int k_max, const PermutationPlan& plan,
                          const SearchConfig& config);

}  // namespace kaps
