#include <doctest.h>

#include <algorithm>
#include <vector>

#include "kaps/split_search.hpp"
#include "oracle.hpp"

using namespace kaps;

namespace {

Cohort blocks(std::initializer_list<std::pair<double, int>> value_counts, std::uint64_t seed = 1) {
  RandomStream rng(seed, 0);
  std::vector<SurvivalRecord> rs;
  for (auto [x, count] : value_counts)
    for (int i = 0; i < count; ++i) rs.push_back({std::ceil(rng.exponential(0.1 * x)), rng.uniform() < 0.8, x});
  return Cohort(rs);
}

std::vector<std::vector<double>> as_vectors(const std::vector<SplitSet>& sets) {
  std::vector<std::vector<double>> out;
  for (const auto& s : sets) out.push_back(s.cutpoints);
  return out;
}

}  // namespace

TEST_CASE("split assignment rule") {
  const SplitSet s{{3, 7}};
  CHECK(s.groups() == 3);
  CHECK(s.assign(-5) == 0);
  CHECK(s.assign(3) == 0);
  CHECK(s.assign(3.5) == 1);
  CHECK(s.assign(7) == 1);
  CHECK(s.assign(7.01) == 2);
  const auto parts = partition(blocks({{1, 5}, {3, 5}, {5, 5}, {8, 5}}), s);
  REQUIRE(parts.size() == 3);
  CHECK(parts[0].size() == 10);
  CHECK(parts[1].size() == 5);
  CHECK(parts[2].size() == 5);
}

TEST_CASE("enumeration boundary exclusion") {
  SearchConfig cfg;
  cfg.k = 2;
  cfg.min_subgroup = 5;
  const auto sets = enumerate_split_sets(blocks({{1, 10}, {2, 10}, {3, 10}}), cfg);
  CHECK(as_vectors(sets) == std::vector<std::vector<double>>{{1}, {2}});
}

TEST_CASE("enumeration of five values, K=3") {
  SearchConfig cfg;
  cfg.k = 3;
  cfg.min_subgroup = 4;
  const auto sets = enumerate_split_sets(blocks({{1, 4}, {2, 4}, {3, 4}, {4, 4}, {5, 4}}), cfg);
  CHECK(as_vectors(sets) ==
        std::vector<std::vector<double>>{{1, 2}, {1, 3}, {1, 4}, {2, 3}, {2, 4}, {3, 4}});
  cfg.k = 2;
  cfg.min_subgroup = 8;
  CHECK(as_vectors(enumerate_split_sets(blocks({{1, 4}, {2, 4}, {3, 4}, {4, 4}, {5, 4}}), cfg)) ==
        std::vector<std::vector<double>>{{2}, {3}});
}

TEST_CASE("infeasible enumeration") {
  SearchConfig cfg;
  cfg.k = 2;
  cfg.min_subgroup = 11;
  CHECK_THROWS_WITH_AS(enumerate_split_sets(blocks({{1, 10}, {2, 10}}), cfg), "no feasible split set", Infeasible);
  CHECK_THROWS_AS(find_best_split(blocks({{1, 10}, {2, 10}}), cfg), Infeasible);
}

TEST_CASE("feasible count matches enumeration and saturates") {
  RandomStream rng(3, 3);
  const auto c = oracle::random_cohort(rng, 120, 15);
  const PairStatCache cache(c, WeightKind::LogRank);
  for (int k = 2; k <= 4; ++k) {
    SearchConfig cfg;
    cfg.k = k;
    cfg.min_subgroup = 6;
    const auto n = enumerate_split_sets(c, cfg).size();
    CHECK(count_feasible_splits(cache, k, 6) == n);
    CHECK(count_feasible_splits(cache, k, 6, 10) == std::min<std::size_t>(n, 10));
  }
}

TEST_CASE("singleton search space") {
  SearchConfig cfg;
  cfg.k = 3;
  cfg.min_subgroup = 5;
  const auto best = find_best_split(blocks({{1, 6}, {2, 6}, {3, 6}}), cfg);
  CHECK(best.split.cutpoints == std::vector<double>{1, 2});
  CHECK(best.group_sizes == std::vector<std::size_t>{6, 6, 6});
}

TEST_CASE("evaluate_split composes the survival tests") {
  const auto c = blocks({{2, 10}, {7, 10}, {9, 10}, {14, 10}, {16, 20}}, 4);
  SearchConfig cfg;
  cfg.k = 3;
  cfg.min_subgroup = 10;
  const PairStatCache cache(c, cfg.weight);
  const SplitSet truth{{7, 14}};
  const auto ev = evaluate_split(c, truth, cfg, cache);
  const auto parts = partition(c, truth);
  CHECK(ev.pairwise.at(0, 1).statistic == two_sample_test(parts[0], parts[1]).statistic);
  CHECK(ev.pairwise.at(1, 2).statistic == two_sample_test(parts[1], parts[2]).statistic);
  CHECK(ev.overall.statistic == doctest::Approx(k_sample_test(parts).statistic).epsilon(1e-12));
  CHECK(ev.min_pairwise.statistic == std::min(ev.pairwise.at(0, 1).statistic, ev.pairwise.at(1, 2).statistic));
  CHECK(ev.overall.df == 2);

  cfg.min_subgroup = 22;
  CHECK_THROWS_WITH(evaluate_split(c, truth, cfg, cache), "constraint violated");
}

TEST_CASE("K=2 min pairwise equals overall") {
  RandomStream rng(1, 5);
  for (int rep = 0; rep < 10; ++rep) {
    const auto c = oracle::random_cohort(rng, 60, 8);
    SearchConfig cfg;
    cfg.min_subgroup = 5;
    const auto best = find_best_split(c, cfg);
    CHECK(std::abs(best.min_pairwise.statistic - best.overall.statistic) <= 1e-10);
  }
}

TEST_CASE("cache matches direct two-sample tests") {
  RandomStream rng(8, 8);
  const auto c = oracle::random_cohort(rng, 200, 25, 0.5);
  const PairStatCache cache(c, WeightKind::LogRank);
  const PairStatCache gehan(c, WeightKind::Gehan);
  const auto& values = cache.values();
  const auto m = static_cast<std::uint32_t>(values.size());
  int checked = 0;
  while (checked < 1000) {
    std::uint32_t a = rng.below(m), b = rng.below(m), d = rng.below(m), e = rng.below(m);
    if (a > b) std::swap(a, b);
    if (d > e) std::swap(d, e);
    if (b >= d) continue;
    const ValueRange left{a, b}, right{d, e};
    const double lo_a = a == 0 ? -INFINITY : values[a - 1];
    const double lo_b = values[d - 1];
    const auto ga = c.subset(lo_a, values[b]);
    const auto gb = c.subset(lo_b, values[e]);
    if (ga.event_count() + gb.event_count() == 0) {
      CHECK(cache.pair(left, right).statistic == 0.0);
    } else {
      CHECK(std::abs(cache.pair(left, right).statistic - two_sample_test(ga, gb).statistic) <= 1e-12);
      CHECK(std::abs(gehan.pair(left, right).statistic -
                     two_sample_test(ga, gb, WeightKind::Gehan).statistic) <= 1e-12);
      CHECK(cache.pair(left, right).statistic == cache.pair_uncached(left, right).statistic);
    }
    ++checked;
  }
}

TEST_CASE("cut indices reject unobserved cutpoints") {
  const auto c = blocks({{1, 5}, {2, 5}, {4, 5}});
  const PairStatCache cache(c, WeightKind::LogRank);
  CHECK_THROWS(cache.cut_indices(SplitSet{{3}}));
  CHECK(cache.cut_indices(SplitSet{{2}}) == std::vector<std::uint32_t>{1});
  CHECK(cache.split_from_indices(std::vector<std::uint32_t>{0}).cutpoints == std::vector<double>{1});
}

TEST_CASE("find_best_split equals brute force") {
  RandomStream rng(2024, 1);
  for (int rep = 0; rep < 12; ++rep) {
    const int levels = 4 + static_cast<int>(rng.below(9));
    const auto c = oracle::random_cohort(rng, 30 + rng.below(30), levels);
    for (int k = 2; k <= 4; ++k) {
      for (bool all : {false, true}) {
        SearchConfig cfg;
        cfg.k = k;
        cfg.min_subgroup = 3;
        cfg.pair_scope = all ? PairScope::AllPairs : PairScope::Adjacent;
        const auto brute = oracle::brute_force_best(c, k, 3, all);
        if (brute.min_pairwise < 0) {
          CHECK_THROWS_AS(find_best_split(c, cfg), Infeasible);
          continue;
        }
        const auto best = find_best_split(c, cfg);
        CHECK(best.split.cutpoints == brute.cuts);
        CHECK(best.min_pairwise.statistic == doctest::Approx(brute.min_pairwise).epsilon(1e-9));
        CHECK(best.overall.statistic == doctest::Approx(brute.overall).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("best split dominates sampled alternatives and respects the floor") {
  RandomStream rng(77, 2);
  const auto c = oracle::random_cohort(rng, 150, 18);
  SearchConfig cfg;
  cfg.k = 3;
  cfg.min_subgroup = 12;
  const auto best = find_best_split(c, cfg);
  for (auto n : best.group_sizes) CHECK(n >= 12);
  const auto all = enumerate_split_sets(c, cfg);
  const PairStatCache cache(c, cfg.weight);
  for (int i = 0; i < 100; ++i) {
    const auto& s = all[rng.below(all.size())];
    CHECK(evaluate_split(c, s, cfg, cache).min_pairwise.statistic <= best.min_pairwise.statistic + 1e-9);
  }
}

TEST_CASE("record order does not matter") {
  RandomStream rng(13, 4);
  const auto c = oracle::random_cohort(rng, 90, 10);
  std::vector<SurvivalRecord> rs(c.begin(), c.end());
  std::reverse(rs.begin(), rs.end());
  std::swap(rs[3], rs[40]);
  const Cohort shuffled(rs);
  for (int k = 2; k <= 4; ++k) {
    SearchConfig cfg;
    cfg.k = k;
    cfg.min_subgroup = 8;
    const auto a = find_best_split(c, cfg);
    const auto b = find_best_split(shuffled, cfg);
    CHECK(a.split == b.split);
    CHECK(a.min_pairwise.statistic == b.min_pairwise.statistic);
    CHECK(a.overall.statistic == b.overall.statistic);
    CHECK(a.worst_pair == b.worst_pair);
  }
}

TEST_CASE("fixed split p-values are uniform when the covariate is noise") {
  RandomStream rng(31, 6);
  std::vector<double> ps;
  for (int draw = 0; draw < 500; ++draw) {
    std::vector<SurvivalRecord> rs;
    for (int i = 0; i < 60; ++i) {
      const double t = rng.exponential(0.1);
      rs.push_back({t, rng.uniform() < 0.8, double(1 + rng.below(4))});
    }
    const Cohort c(rs);
    SearchConfig cfg;
    cfg.min_subgroup = 1;
    const PairStatCache cache(c, cfg.weight);
    const SplitSet half{{2}};
    if (c.subset(-INFINITY, 2).empty() || c.subset(2, INFINITY).empty()) continue;
    ps.push_back(evaluate_split(c, half, cfg, cache).min_pairwise.p_value);
  }
  std::sort(ps.begin(), ps.end());
  double ks = 0.0;
  const double n = static_cast<double>(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i)
    ks = std::max({ks, std::abs(ps[i] - double(i + 1) / n), std::abs(ps[i] - double(i) / n)});
  CHECK(ks < 0.1);
}

TEST_CASE("budgeted search is flagged and feasible") {
  RandomStream rng(4, 4);
  const auto c = oracle::random_cohort(rng, 300, 60, 0.25);
  SearchConfig cfg;
  cfg.k = 4;
  cfg.min_subgroup = 15;
  cfg.budget = 50;
  const auto approx = find_best_split(c, cfg);
  CHECK_FALSE(approx.exhaustive);
  for (auto n : approx.group_sizes) CHECK(n >= 15);
  cfg.budget.reset();
  const auto exact = find_best_split(c, cfg);
  CHECK(exact.exhaustive);
  CHECK(exact.min_pairwise.statistic >= approx.min_pairwise.statistic - 1e-9);
}
