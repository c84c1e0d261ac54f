#include <cstdio>
#include <ostream>

#include "wagma/errors.hpp"
#include "wagma/harness.hpp"

namespace wagma::harness {

namespace {

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? s.size() - start
                                                                   : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

std::string path_safe(std::string s) {
  for (char& c : s) {
    if (c == '/' || c == '\\' || c == ':' || c == ',' || c == ' ') c = '_';
  }
  return s;
}

}  // namespace

RunConfig apply_mode_token(const RunConfig& base, std::string_view token) {
  const auto colon = token.find(':');
  const std::string mode(token.substr(0, colon));
  if (mode.empty()) throw ConfigError("empty mode in '" + std::string(token) + "'");
  auto doc = to_json(base);
  doc["mode"] = optim::to_string(optim::mode_from_string(mode));
  if (colon != std::string_view::npos) {
    for (const auto& kv : split(token.substr(colon + 1), ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("expected key=value in mode token '" + std::string(token) + "'");
      }
      const std::string key = kv.substr(0, eq);
      if (key != "S" && key != "tau" && key != "alpha" && key != "beta") {
        throw ConfigError("mode token may only set S, tau, alpha, beta (got '" + key + "')");
      }
      set_dotted(doc, key, kv.substr(eq + 1));
    }
  }
  doc["output_dir"] = base.output_dir + "/" + path_safe(std::string(token));
  return parse_config(doc);
}

void check_comparable(const std::vector<RunConfig>& configs) {
  if (configs.empty()) throw ConfigError("nothing to compare");
  const auto& a = configs.front();
  for (std::size_t i = 1; i < configs.size(); ++i) {
    const auto& b = configs[i];
    const auto& x = a.optimizer;
    const auto& y = b.optimizer;
    std::string field;
    if (x.P != y.P) field = "P";
    else if (x.T != y.T) field = "T";
    else if (x.b != y.b) field = "b";
    else if (!(x.eta == y.eta)) field = "eta";
    else if (!(x.update == y.update)) field = "update";
    else if (!(a.problem == b.problem)) field = "problem";
    else if (!(a.delays == b.delays)) field = "delays";
    else if (a.seed != b.seed) field = "seed";
    if (!field.empty()) {
      throw ConfigError("configs 0 and " + std::to_string(i) + " differ in shared field '" +
                        field + "'");
    }
  }
}

std::vector<CompareRow> run_compare(const std::vector<RunConfig>& configs,
                                    const std::vector<std::string>& labels) {
  check_comparable(configs);
  for (const auto& c : configs) c.validate();
  const auto problem = problems::make_problem(configs.front().problem);
  std::vector<CompareRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& c = configs[i];
    const auto res = training::run_training(c.optimizer, *problem, c.delays, c.seed);
    CompareRow row;
    row.label = i < labels.size() ? labels[i] : optim::to_string(c.optimizer.mode);
    row.final_loss = res.rows.back().loss_mu;
    row.final_grad_norm_sq = res.rows.back().grad_norm_sq_mu;
    row.sim_time_ms = res.end_time.ms();
    row.iterations_per_sim_second =
        row.sim_time_ms > 0.0 ? static_cast<double>(res.rows.size()) / (row.sim_time_ms / 1e3)
                              : 0.0;
    row.msgs_total = res.stats.messages_sent;
    row.final_accuracy = res.final_accuracy;
    rows.push_back(std::move(row));
  }
  return rows;
}

void print_compare_table(std::ostream& out, const std::vector<CompareRow>& rows) {
  char line[512];
  std::snprintf(line, sizeof line, "%-28s %16s %16s %14s %12s %12s %9s\n", "mode", "final_loss",
                "grad_norm_sq", "sim_time_ms", "iter_per_s", "msgs", "accuracy");
  out << line;
  for (const auto& r : rows) {
    char acc[32] = "-";
    if (r.final_accuracy) std::snprintf(acc, sizeof acc, "%.4f", *r.final_accuracy);
    std::snprintf(line, sizeof line, "%-28s %16.9g %16.9g %14.3f %12.4f %12llu %9s\n",
                  r.label.c_str(), r.final_loss, r.final_grad_norm_sq, r.sim_time_ms,
                  r.iterations_per_sim_second, static_cast<unsigned long long>(r.msgs_total),
                  acc);
    out << line;
  }
}

SweepAxis parse_vary(std::string_view spec) {
  const auto eq = spec.find('=');
  if (eq == std::string_view::npos || eq == 0 || eq + 1 == spec.size()) {
    throw ConfigError("--vary expects key=v1,v2,... (got '" + std::string(spec) + "')");
  }
  SweepAxis axis;
  axis.key = std::string(spec.substr(0, eq));
  axis.values = split(spec.substr(eq + 1), ',');
  for (const auto& v : axis.values) {
    if (v.empty()) throw ConfigError("empty value in --vary " + std::string(spec));
  }
  return axis;
}

std::vector<SweepPoint> expand_sweep(const RunConfig& base, const std::vector<SweepAxis>& axes) {
  std::vector<SweepPoint> points;
  std::vector<std::size_t> idx(axes.size(), 0);
  while (true) {
    auto doc = to_json(base);
    std::string label;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const auto& value = axes[a].values[idx[a]];
      set_dotted(doc, axes[a].key, value);
      if (!label.empty()) label += "_";
      label += axes[a].key + "=" + value;
    }
    if (label.empty()) label = "base";
    doc["output_dir"] = base.output_dir + "/" + path_safe(label);
    points.push_back({label, parse_config(doc)});

    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++idx[a] < axes[a].values.size()) break;
      idx[a] = 0;
      if (a == 0) return points;
    }
    if (axes.empty()) return points;
  }
}

}  // namespace wagma::harness
