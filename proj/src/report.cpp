#include "kaps/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include <fmt/format.h>

namespace kaps {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r\n");
  std::string out(s.substr(first, last - first + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') {
    out = out.substr(1, out.size() - 2);
  }
  return out;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
      current += ch;
    } else if (ch == ',' && !quoted) {
      fields.push_back(trim(current));
      current.clear();
    } else {
      current += ch;
    }
  }
  fields.push_back(trim(current));
  return fields;
}

std::optional<double> parse_number(const std::string& s) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) {
    return std::nullopt;
  }
  return v;
}

std::size_t column_of(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    throw IngestError("missing column '" + name + "'");
  }
  return static_cast<std::size_t>(it - header.begin());
}

std::string num(double v) { return fmt::format("{}", v); }

}  // namespace

Cohort ingest_csv(const std::filesystem::path& path, const std::string& time_col,
                  const std::string& status_col, const std::string& covariate_col) {
  std::ifstream in(path);
  if (!in) {
    throw IngestError("cannot open '" + path.string() + "'");
  }
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) {
      line.erase(0, 3);
    }
    if (!trim(line).empty()) {
      header = split_fields(line);
    }
  }
  if (header.empty()) {
    throw IngestError("empty file");
  }
  const std::size_t ti = column_of(header, time_col);
  const std::size_t si = column_of(header, status_col);
  const std::size_t ci = column_of(header, covariate_col);

  std::vector<SurvivalRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) {
      continue;
    }
    const auto fields = split_fields(line);
    const auto where = fmt::format("line {}: ", line_no);
    if (fields.size() != header.size()) {
      throw IngestError(where + fmt::format("expected {} fields, found {}", header.size(), fields.size()));
    }
    const auto time = parse_number(fields[ti]);
    if (!time || !std::isfinite(*time)) {
      throw IngestError(where + "non-numeric time '" + fields[ti] + "'");
    }
    if (*time < 0.0) {
      throw IngestError(where + "negative time");
    }
    const auto status = parse_number(fields[si]);
    if (!status || (*status != 0.0 && *status != 1.0)) {
      throw IngestError(where + "status must be 0 or 1, found '" + fields[si] + "'");
    }
    const auto covariate = parse_number(fields[ci]);
    if (!covariate || !std::isfinite(*covariate)) {
      throw IngestError(where + "non-numeric covariate '" + fields[ci] + "'");
    }
    records.push_back({*time, *status == 1.0, *covariate});
  }
  if (records.empty()) {
    throw IngestError("empty cohort");
  }
  return Cohort(std::move(records));
}

std::vector<std::string> range_labels(const Cohort& cohort, const SplitSet& split, const std::string& name) {
  const auto values = cohort.distinct_covariates();
  if (values.empty()) {
    throw std::invalid_argument("empty cohort");
  }
  std::vector<std::string> labels;
  double lower = values.front();
  for (std::size_t g = 0; g <= split.cutpoints.size(); ++g) {
    const double upper = g < split.cutpoints.size() ? split.cutpoints[g] : values.back();
    labels.push_back(g == 0 ? fmt::format("{}<={}<={}", num(lower), name, num(upper))
                            : fmt::format("{}<{}<={}", num(lower), name, num(upper)));
    lower = upper;
  }
  return labels;
}

std::vector<std::string> cut_labels(const SplitSet& split, const std::string& name) {
  const auto& c = split.cutpoints;
  if (c.empty()) {
    return {"All"};
  }
  std::vector<std::string> labels{fmt::format("{}<={}", name, num(c.front()))};
  for (std::size_t g = 1; g < c.size(); ++g) {
    labels.push_back(fmt::format("{}<{}<={}", num(c[g - 1]), name, num(c[g])));
  }
  labels.push_back(fmt::format("{}>{}", name, num(c.back())));
  return labels;
}

std::string significance_marker(double p) {
  if (p <= 0.001) return "***";
  if (p <= 0.01) return "**";
  if (p <= 0.05) return "*";
  if (p <= 0.1) return ".";
  return "";
}

std::string format_statistic(double value) { return fmt::format("{:.4g}", value); }

std::string format_pvalue(double p) {
  if (p < 5e-5) {
    return "<.0000";
  }
  return fmt::format("{:.4f}", p);
}

// ---------------------------------------------------------------------------

std::string weight_name(WeightKind w) { return w == WeightKind::Gehan ? "gehan" : "logrank"; }
std::string scope_name(PairScope s) { return s == PairScope::AllPairs ? "all" : "adjacent"; }
std::string correction_name(Correction c) {
  switch (c) {
    case Correction::None:
      return "none";
    case Correction::BonferroniMultiply:
      return "bonferroni";
    case Correction::Divide:
      break;
  }
  return "divide";
}

std::string null_name(PermutationNull n) {
  switch (n) {
    case PermutationNull::FixedSplit:
      return "fixed";
    case PermutationNull::WorstPair:
      return "worst-pair";
    case PermutationNull::Research:
      break;
  }
  return "research";
}

WeightKind parse_weight(const std::string& s) {
  if (s == "logrank") return WeightKind::LogRank;
  if (s == "gehan") return WeightKind::Gehan;
  throw std::invalid_argument("unknown test '" + s + "' (expected logrank or gehan)");
}

PairScope parse_scope(const std::string& s) {
  if (s == "adjacent") return PairScope::Adjacent;
  if (s == "all") return PairScope::AllPairs;
  throw std::invalid_argument("unknown pair scope '" + s + "' (expected adjacent or all)");
}

Correction parse_correction(const std::string& s) {
  if (s == "divide") return Correction::Divide;
  if (s == "bonferroni") return Correction::BonferroniMultiply;
  if (s == "none") return Correction::None;
  throw std::invalid_argument("unknown correction '" + s + "' (expected divide, bonferroni or none)");
}

PermutationNull parse_null(const std::string& s) {
  if (s == "research") return PermutationNull::Research;
  if (s == "fixed") return PermutationNull::FixedSplit;
  if (s == "worst-pair") return PermutationNull::WorstPair;
  throw std::invalid_argument("unknown permutation null '" + s + "' (expected research, fixed or worst-pair)");
}

// ---------------------------------------------------------------------------

const KFit& FitReport::shown() const {
  for (const auto& f : selection.per_k) {
    if (f.k == report_k) {
      return f;
    }
  }
  throw std::logic_error("report K has no fit");
}

std::size_t resolve_min_subgroup(const FitOptions& options, std::size_t n) {
  if (options.min_subgroup) {
    return *options.min_subgroup;
  }
  const auto floor = static_cast<std::size_t>(std::ceil(options.min_fraction * static_cast<double>(n) - 1e-9));
  return std::max<std::size_t>(1, floor);
}

FitReport run_fit(const Cohort& cohort, const FitOptions& options) {
  FitReport report;
  report.options = options;
  report.samples = cohort.size();
  report.min_subgroup = resolve_min_subgroup(options, cohort.size());

  SearchConfig config;
  config.min_subgroup = report.min_subgroup;
  config.weight = options.weight;
  config.pair_scope = options.pair_scope;
  config.budget = options.budget;
  report.selection = select_k(cohort, options.k_min, options.k_max, options.plan, config);
  report.report_k = report.selection.k_hat.value_or(report.selection.per_k.front().k);

  const SplitSet& split = report.shown().best.split;
  report.labels = range_labels(cohort, split, options.covariate_name);

  auto summarize_group = [&](const std::string& label, const Cohort& group) {
    SubgroupSummary s;
    s.label = label;
    s.n = group.size();
    const KmCurve curve = km_fit(group);
    s.median = km_quantile(curve, 0.5);
    for (double h : options.horizons) {
      s.survival_at.push_back(km_survival_at(curve, h));
    }
    return s;
  };
  report.summary.push_back(summarize_group("All", cohort));
  const auto groups = partition(cohort, split);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    report.summary.push_back(summarize_group(fmt::format("Group={}", g + 1), groups[g]));
  }
  return report;
}

namespace {

std::string pad_left(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : std::string(w - s.size(), ' ') + s;
}
std::string pad_right(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}

// Renders rows as right-aligned columns; column 0 is left-aligned.
std::string render_columns(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) {
      width[c] = std::max(width[c], row[c].size());
    }
  }
  std::string out;
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) {
        line += ' ';
      }
      line += c == 0 ? pad_right(row[c], width[c]) : pad_left(row[c], width[c]);
    }
    while (!line.empty() && line.back() == ' ') {
      line.pop_back();
    }
    out += line + '\n';
  }
  return out;
}

std::string join_cuts(const SplitSet& split) {
  std::string s;
  for (std::size_t i = 0; i < split.cutpoints.size(); ++i) {
    s += (i ? ", " : "") + num(split.cutpoints[i]);
  }
  return s;
}

std::string format_fraction(double v) { return fmt::format("{:.3f}", v); }

}  // namespace

std::string render_text(const FitReport& report) {
  std::string out;
  out += "\tK-Adaptive Partitioning for Survival Data\n\n";
  const std::string optimal = report.selection.k_hat ? fmt::format("Optimal K={}", *report.selection.k_hat)
                                                      : fmt::format("Optimal K<{}", report.options.k_min);
  out += fmt::format("Samples= {} \t\t\t\t{} \n\n\n", report.samples, optimal);

  out += "Selecting a set of cut-off points:\n";
  std::vector<std::vector<std::string>> table{
      {"", "Xk", "df", "Pr(>|Xk|)", "X1", "df", "Pr(>|X1|)", "adj.Pr(|X1|)", "cut-off points", ""}};
  for (const auto& fit : report.selection.per_k) {
    const auto& b = fit.best;
    table.push_back({fmt::format("K={}", fit.k), format_statistic(b.overall.statistic),
                     std::to_string(b.overall.df), format_pvalue(b.overall.p_value),
                     format_statistic(b.min_pairwise.statistic), std::to_string(b.min_pairwise.df),
                     format_pvalue(b.min_pairwise.p_value), format_pvalue(fit.p_corrected), join_cuts(b.split),
                     pad_right(significance_marker(fit.p_corrected), 3)});
  }
  out += render_columns(table);
  out += "---\n";
  out += "Signif. codes:  0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1\n\n";

  const KFit& shown = report.shown();
  out += fmt::format("P-values of pairwise comparisons when K = {}\n", report.report_k);
  const int k = shown.best.pairwise.groups();
  std::vector<std::vector<std::string>> matrix;
  std::vector<std::string> head{""};
  for (int g = 0; g + 1 < k; ++g) {
    head.push_back(report.labels[static_cast<std::size_t>(g)]);
  }
  matrix.push_back(head);
  for (int h = 1; h < k; ++h) {
    std::vector<std::string> row{report.labels[static_cast<std::size_t>(h)]};
    for (int g = 0; g + 1 < k; ++g) {
      row.push_back(g < h ? format_pvalue(shown.best.pairwise.at(g, h).p_value) : "-");
    }
    matrix.push_back(row);
  }
  out += render_columns(matrix);
  out += '\n';

  out += "Summary of subgroups\n";
  std::vector<std::vector<std::string>> summary;
  std::vector<std::string> sh{"", "N", "Med"};
  for (double h : report.options.horizons) {
    sh.push_back("S(" + num(h) + ")");
  }
  summary.push_back(sh);
  for (const auto& s : report.summary) {
    std::vector<std::string> row{s.label, std::to_string(s.n), s.median ? format_statistic(*s.median) : "NA"};
    for (double v : s.survival_at) {
      row.push_back(format_fraction(v));
    }
    summary.push_back(row);
  }
  out += render_columns(summary);
  if (std::any_of(report.selection.per_k.begin(), report.selection.per_k.end(),
                  [](const KFit& f) { return !f.best.exhaustive; })) {
    out += "\nNote: some K used the budgeted (non-exhaustive) search.\n";
  }
  return out;
}

nlohmann::json render_json(const FitReport& report) {
  using nlohmann::json;
  auto test = [](const TestResult& t) { return json{{"stat", t.statistic}, {"df", t.df}, {"p", t.p_value}}; };

  json j;
  j["selected_k"] = report.selection.k_hat ? json(*report.selection.k_hat) : json(nullptr);
  j["report_k"] = report.report_k;
  j["samples"] = report.samples;
  j["per_k"] = json::array();
  for (const auto& fit : report.selection.per_k) {
    const auto& b = fit.best;
    json mp = test(b.min_pairwise);
    mp["pair"] = {b.worst_pair.first + 1, b.worst_pair.second + 1};
    j["per_k"].push_back({{"k", fit.k},
                          {"cutpoints", b.split.cutpoints},
                          {"group_sizes", b.group_sizes},
                          {"overall", test(b.overall)},
                          {"min_pairwise", mp},
                          {"perm_p", fit.p_value},
                          {"perm_p_corrected", fit.p_corrected},
                          {"exhaustive", b.exhaustive}});
  }
  const KFit& shown = report.shown();
  j["pairwise"] = json::array();
  const int k = shown.best.pairwise.groups();
  for (int g = 0; g < k; ++g) {
    for (int h = g + 1; h < k; ++h) {
      const auto& t = shown.best.pairwise.at(g, h);
      j["pairwise"].push_back({{"g", g + 1}, {"h", h + 1}, {"stat", t.statistic}, {"p", t.p_value}});
    }
  }
  j["labels"] = report.labels;
  j["summary"] = json::array();
  for (const auto& s : report.summary) {
    json at = json::object();
    for (std::size_t i = 0; i < s.survival_at.size(); ++i) {
      at[num(report.options.horizons[i])] = s.survival_at[i];
    }
    j["summary"].push_back({{"group", s.label},
                            {"n", s.n},
                            {"median", s.median ? json(*s.median) : json(nullptr)},
                            {"survival_at", at}});
  }
  const auto& o = report.options;
  j["config"] = {{"covariate", o.covariate_name},
                 {"k_min", o.k_min},
                 {"k_max", o.k_max},
                 {"min_subgroup", report.min_subgroup},
                 {"test", weight_name(o.weight)},
                 {"pairs", scope_name(o.pair_scope)},
                 {"perms", o.plan.replications},
                 {"alpha", o.plan.alpha},
                 {"correction", correction_name(o.plan.correction)},
                 {"null", null_name(o.plan.null_model)},
                 {"horizons", o.horizons},
                 {"budget", o.budget ? json(*o.budget) : json(nullptr)}};
  j["seed"] = o.plan.seed;
  return j;
}

std::string render_curves_csv(const Cohort& cohort, const SplitSet& split, const std::string& name) {
  const auto labels = cut_labels(split, name);
  const auto groups = partition(cohort, split);
  std::string out = "subgroup,time,survival,at_risk,events\n";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) {
      continue;
    }
    const KmCurve curve = km_fit(groups[g]);
    if (curve.times.empty() || curve.times.front() > 0.0) {
      out += fmt::format("{},0,1,{},0\n", labels[g], groups[g].size());
    }
    for (std::size_t j = 0; j < curve.times.size(); ++j) {
      out += fmt::format("{},{},{},{},{}\n", labels[g], num(curve.times[j]), num(curve.survival[j]),
                         curve.at_risk[j], curve.events[j]);
    }
  }
  return out;
}

void write_file_atomically(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += fmt::format(".tmp{}", static_cast<long>(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error("cannot write '" + tmp.string() + "'");
    }
    out << content;
    out.flush();
    if (!out) {
      throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot move output into '" + path.string() + "': " + ec.message());
  }
}

}  // namespace kaps
