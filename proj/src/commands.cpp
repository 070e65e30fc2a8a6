#include "kaps/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "kaps/sim_lab.hpp"

namespace kaps::cli {

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a != std::string::npos) {
      parts.push_back(item.substr(a, b - a + 1));
    }
  }
  return parts;
}

int parse_int(const std::string& s) {
  std::size_t used = 0;
  const int v = std::stoi(s, &used);
  if (used != s.size()) {
    throw std::invalid_argument("not an integer: '" + s + "'");
  }
  return v;
}

// Runs a command body and maps exceptions onto exit codes.
template <class Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const Infeasible& e) {
    err << "error: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const IngestError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  }
}

void emit(const std::optional<std::filesystem::path>& path, const std::string& content, std::ostream& out) {
  if (path) {
    write_file_atomically(*path, content);
  } else {
    out << content;
  }
}

}  // namespace

std::pair<int, int> parse_k_range(const std::string& s) {
  const auto colon = s.find(':');
  try {
    if (colon == std::string::npos) {
      const int k = parse_int(s);
      return {k, k};
    }
    return {parse_int(s.substr(0, colon)), parse_int(s.substr(colon + 1))};
  } catch (const std::logic_error&) {
    throw std::invalid_argument("malformed K range '" + s + "' (expected K or Kmin:Kmax)");
  }
}

std::vector<double> parse_number_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& part : split_list(s)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(part, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != part.size() || !std::isfinite(v)) {
      throw std::invalid_argument("not a number: '" + part + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> parse_name_list(const std::string& s) { return split_list(s); }

int cmd_fit(const FitCommand& cmd, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    FitOptions options;
    options.covariate_name = cmd.input.covariate_col;
    std::tie(options.k_min, options.k_max) = parse_k_range(cmd.k);
    options.min_subgroup = cmd.min_subgroup;
    options.min_fraction = cmd.min_fraction;
    options.weight = parse_weight(cmd.test);
    options.pair_scope = parse_scope(cmd.pairs);
    options.budget = cmd.budget;
    options.plan.replications = cmd.perms;
    options.plan.alpha = cmd.alpha;
    options.plan.correction = parse_correction(cmd.correction);
    options.plan.null_model = parse_null(cmd.null_model);
    options.plan.seed = cmd.seed;
    options.horizons = parse_number_list(cmd.horizons);
    if (cmd.format != "text" && cmd.format != "json") {
      throw std::invalid_argument("unknown format '" + cmd.format + "' (expected text or json)");
    }

    const Cohort cohort =
        ingest_csv(cmd.input.data, cmd.input.time_col, cmd.input.status_col, cmd.input.covariate_col);
    const FitReport report = run_fit(cohort, options);
    const std::string content = cmd.format == "json" ? render_json(report).dump(2) + "\n" : render_text(report);
    emit(cmd.output, content, out);
    return kExitOk;
  });
}

int cmd_curves(const CurvesCommand& cmd, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    SplitSet split;
    if (cmd.cuts && cmd.from_fit) {
      throw std::invalid_argument("give either --cuts or --from-fit, not both");
    }
    if (cmd.cuts) {
      split.cutpoints = parse_number_list(*cmd.cuts);
    } else if (cmd.from_fit) {
      std::ifstream in(*cmd.from_fit);
      if (!in) {
        throw IngestError("cannot open '" + cmd.from_fit->string() + "'");
      }
      nlohmann::json fit;
      try {
        in >> fit;
      } catch (const nlohmann::json::exception& e) {
        throw IngestError("malformed fit JSON: " + std::string(e.what()));
      }
      const int k = fit.at("report_k").get<int>();
      for (const auto& entry : fit.at("per_k")) {
        if (entry.at("k").get<int>() == k) {
          split.cutpoints = entry.at("cutpoints").get<std::vector<double>>();
        }
      }
    } else {
      throw std::invalid_argument("curves needs --cuts or --from-fit");
    }
    if (!std::is_sorted(split.cutpoints.begin(), split.cutpoints.end()) ||
        std::adjacent_find(split.cutpoints.begin(), split.cutpoints.end()) != split.cutpoints.end()) {
      throw std::invalid_argument("cutpoints must be strictly ascending");
    }

    const Cohort cohort =
        ingest_csv(cmd.input.data, cmd.input.time_col, cmd.input.status_col, cmd.input.covariate_col);
    for (const auto& group : partition(cohort, split)) {
      if (group.empty()) {
        throw Infeasible("cutpoints leave an empty subgroup");
      }
    }
    emit(cmd.output, render_curves_csv(cohort, split, cmd.input.covariate_col), out);
    return kExitOk;
  });
}

int cmd_simulate(const SimulateCommand& cmd, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    sim::ExperimentConfig config;
    sim::CensoringScheme scheme;
    if (cmd.censoring_scheme == "per-covariate") {
      scheme = sim::CensoringScheme::PerCovariate;
    } else if (cmd.censoring_scheme == "marginal") {
      scheme = sim::CensoringScheme::Marginal;
    } else {
      throw std::invalid_argument("unknown censoring scheme '" + cmd.censoring_scheme +
                                  "' (expected per-covariate or marginal)");
    }
    for (const auto& name : parse_name_list(cmd.models)) {
      const auto kind = sim::parse_model(name);
      for (double cr : parse_number_list(cmd.censoring)) {
        config.models.push_back({kind, cmd.n, cr, cmd.seed, scheme});
      }
    }
    if (config.models.empty()) {
      throw std::invalid_argument("no model given");
    }
    config.methods = parse_name_list(cmd.methods);
    for (const auto& m : config.methods) {
      if (m != "kaps" && m != "greedy") {
        throw std::invalid_argument("unknown method '" + m + "' (expected kaps or greedy)");
      }
    }
    config.reps = cmd.reps;
    config.k_values.clear();
    for (double k : parse_number_list(cmd.k_values)) {
      config.k_values.push_back(static_cast<int>(k));
    }
    config.min_fraction = cmd.min_fraction;
    config.fit_scope = parse_scope(cmd.pairs);
    config.weight = parse_weight(cmd.test);
    if (cmd.select_k) {
      sim::SelectionSettings sel;
      std::tie(sel.k_min, sel.k_max) = parse_k_range(*cmd.select_k);
      sel.permutations = cmd.perms;
      sel.alpha = cmd.alpha;
      sel.correction = parse_correction(cmd.correction);
      sel.null_model = parse_null(cmd.null_model);
      config.selection = sel;
    }

    const auto result = sim::run_experiment(config);
    std::ostringstream csv;
    sim::write_experiment_csv(csv, result);
    write_file_atomically(cmd.csv, csv.str());
    write_file_atomically(cmd.json, sim::experiment_summary(result).dump(2) + "\n");
    sim::print_table(out, result);
    return kExitOk;
  });
}

}  // namespace kaps::cli
