// kaps: K-adaptive partitioning of survival data along one ordered covariate.
//
//   kaps fit --data toy.csv --covariate meta --k 2:4
//   kaps curves --data toy.csv --covariate meta --cuts 0,10
//   kaps simulate --model sm --cr 0.15 --reps 100
//
// Exit codes: 0 success, 1 I/O or malformed input, 2 invalid or infeasible configuration.

#include <iostream>

#include <CLI11.hpp>

#include "kaps/commands.hpp"

namespace {

void add_input(CLI::App* sub, kaps::cli::DataColumns& in) {
  sub->add_option("--data", in.data, "Input CSV with a header row")->required();
  sub->add_option("--time-col", in.time_col, "Observed time column")->capture_default_str();
  sub->add_option("--status-col", in.status_col, "Event indicator column (1 event, 0 censored)")
      ->capture_default_str();
  sub->add_option("--covariate", in.covariate_col, "Ordered prognostic factor column")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"K-adaptive partitioning for survival data"};
  app.require_subcommand(1);

  kaps::cli::FitCommand fit;
  auto* fit_cmd = app.add_subcommand("fit", "Find cutpoints per K and select K by permutation test");
  add_input(fit_cmd, fit.input);
  fit_cmd->add_option("--k", fit.k, "Number of subgroups, single (3) or range (2:4)")->capture_default_str();
  fit_cmd->add_option("--min-frac", fit.min_fraction, "Minimum subgroup size as a fraction of n")
      ->capture_default_str();
  fit_cmd->add_option("--min-subgroup", fit.min_subgroup, "Minimum subgroup size (overrides --min-frac)");
  fit_cmd->add_option("--test", fit.test, "logrank or gehan")->capture_default_str();
  fit_cmd->add_option("--pairs", fit.pairs, "adjacent or all")->capture_default_str();
  fit_cmd->add_option("--perms", fit.perms, "Permutation replications")->capture_default_str();
  fit_cmd->add_option("--alpha", fit.alpha, "Significance level")->capture_default_str();
  fit_cmd->add_option("--correction", fit.correction, "divide, bonferroni or none")->capture_default_str();
  fit_cmd->add_option("--null", fit.null_model, "Permutation null: research, fixed or worst-pair")->capture_default_str();
  fit_cmd->add_option("--seed", fit.seed, "Seed for all randomness")->capture_default_str();
  fit_cmd->add_option("--horizons", fit.horizons, "Times for the survival columns, in input units")
      ->capture_default_str();
  fit_cmd->add_option("--budget", fit.budget, "Split sets evaluated before switching to refinement search")
      ->capture_default_str();
  fit_cmd->add_option("--format", fit.format, "text or json")->capture_default_str();
  fit_cmd->add_option("--out", fit.output, "Write the report here instead of standard output");

  kaps::cli::CurvesCommand curves;
  auto* curves_cmd = app.add_subcommand("curves", "Export Kaplan-Meier curves per subgroup as CSV");
  add_input(curves_cmd, curves.input);
  curves_cmd->add_option("--cuts", curves.cuts, "Comma-separated cutpoints");
  curves_cmd->add_option("--from-fit", curves.from_fit, "JSON report from 'kaps fit --format json'");
  curves_cmd->add_option("--out", curves.output, "Write the CSV here instead of standard output");

  kaps::cli::SimulateCommand sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Run the stepwise/linear hazard simulation study");
  sim_cmd->add_option("--model", sim.models, "sm, lm or a list")->capture_default_str();
  sim_cmd->add_option("--n", sim.n, "Sample size of train and test cohorts")->capture_default_str();
  sim_cmd->add_option("--cr", sim.censoring, "Target censoring rate(s)")->capture_default_str();
  sim_cmd->add_option("--censoring", sim.censoring_scheme, "per-covariate or marginal")->capture_default_str();
  sim_cmd->add_option("--reps", sim.reps, "Replications")->capture_default_str();
  sim_cmd->add_option("--methods", sim.methods, "kaps, greedy")->capture_default_str();
  sim_cmd->add_option("--k-values", sim.k_values, "K values to fit")->capture_default_str();
  sim_cmd->add_option("--seed", sim.seed, "Seed for all randomness")->capture_default_str();
  sim_cmd->add_option("--min-frac", sim.min_fraction, "Minimum subgroup fraction")->capture_default_str();
  sim_cmd->add_option("--pairs", sim.pairs, "adjacent or all")->capture_default_str();
  sim_cmd->add_option("--test", sim.test, "logrank or gehan")->capture_default_str();
  sim_cmd->add_option("--select-k", sim.select_k, "Also select K over this range (e.g. 2:6)");
  sim_cmd->add_option("--perms", sim.perms, "Permutations for K selection")->capture_default_str();
  sim_cmd->add_option("--alpha", sim.alpha, "Significance level for K selection")->capture_default_str();
  sim_cmd->add_option("--correction", sim.correction, "divide, bonferroni or none")->capture_default_str();
  sim_cmd->add_option("--null", sim.null_model, "Permutation null: research, fixed or worst-pair")->capture_default_str();
  sim_cmd->add_option("--csv", sim.csv, "Per-replication CSV output")->capture_default_str();
  sim_cmd->add_option("--json", sim.json, "Aggregate JSON output")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kaps::cli::kExitInfeasible;
  }

  if (fit_cmd->parsed()) {
    return kaps::cli::cmd_fit(fit, std::cout, std::cerr);
  }
  if (curves_cmd->parsed()) {
    return kaps::cli::cmd_curves(curves, std::cout, std::cerr);
  }
  return kaps::cli::cmd_simulate(sim, std::cout, std::cerr);
}
