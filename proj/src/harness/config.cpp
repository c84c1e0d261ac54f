#include <fstream>
#include <set>
#include <sstream>

#include "wagma/errors.hpp"
#include "wagma/harness.hpp"

namespace wagma::harness {

using nlohmann::json;

namespace {

// Reads fields from one JSON object and rejects any key left unread.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
            throw ConfigError("");
          }
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(where_ + "." + key + ": invalid value " + v.dump());
    }
  }

  void get_ms(const std::string& key, netsim::SimTime& out) {
    double ms = out.ms();
    get(key, ms);
    if (!(ms >= 0.0) || ms > 1e12) {
      throw ConfigError(where_ + "." + key + ": expected a non-negative duration in ms");
    }
    out = netsim::SimTime::from_ms(ms);
  }

  const json& child(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

optim::LearningRate parse_eta(const json& j) {
  optim::LearningRate eta;
  ObjectReader r(j, "eta");
  std::string schedule = "constant";
  r.get("schedule", schedule);
  if (schedule == "constant") {
    eta.kind = optim::LearningRate::Kind::kConstant;
  } else if (schedule == "step_decay") {
    eta.kind = optim::LearningRate::Kind::kStepDecay;
  } else if (schedule == "theorem") {
    eta.kind = optim::LearningRate::Kind::kTheorem;
  } else {
    throw ConfigError("eta.schedule: unknown schedule '" + schedule + "'");
  }
  r.get("value", eta.value);
  r.get("decay", eta.decay);
  r.get("every", eta.every);
  r.finish();
  return eta;
}

json eta_to_json(const optim::LearningRate& eta) {
  const char* name = eta.kind == optim::LearningRate::Kind::kConstant    ? "constant"
                     : eta.kind == optim::LearningRate::Kind::kStepDecay ? "step_decay"
                                                                          : "theorem";
  return {{"schedule", name}, {"value", eta.value}, {"decay", eta.decay}, {"every", eta.every}};
}

optim::UpdateRule parse_update(const json& j) {
  optim::UpdateRule u;
  ObjectReader r(j, "update");
  std::string rule = "sgd";
  r.get("rule", rule);
  if (rule == "sgd") {
    u.kind = optim::UpdateRule::Kind::kSgd;
  } else if (rule == "momentum") {
    u.kind = optim::UpdateRule::Kind::kMomentum;
  } else {
    throw ConfigError("update.rule: unknown rule '" + rule + "'");
  }
  r.get("momentum", u.momentum);
  r.finish();
  return u;
}

problems::ProblemSpec parse_problem(const json& j) {
  ObjectReader r(j, "problem");
  std::string kind = "quadratic";
  r.get("kind", kind);
  if (kind == "quadratic") {
    problems::QuadraticSpec s;
    r.get("d", s.d);
    r.get("condition_number", s.condition_number);
    r.get("samples", s.samples);
    r.get("noise", s.noise);
    r.get("seed", s.seed);
    r.finish();
    return s;
  }
  if (kind == "logistic") {
    problems::LogisticSpec s;
    r.get("n_samples", s.n_samples);
    r.get("d", s.d);
    r.get("margin", s.margin);
    r.get("l2", s.l2);
    r.get("seed", s.seed);
    r.finish();
    return s;
  }
  if (kind == "mlp") {
    problems::MlpSpec s;
    if (r.has("layers")) {
      const json& layers = r.child("layers");
      if (!layers.is_array()) throw ConfigError("problem.layers: expected an array");
      s.layers.clear();
      for (const auto& v : layers) {
        if (!v.is_number_unsigned()) throw ConfigError("problem.layers: expected positive integers");
        s.layers.push_back(v.get<std::size_t>());
      }
    }
    r.get("samples", s.samples);
    r.get("seed", s.seed);
    r.finish();
    return s;
  }
  throw ConfigError("problem.kind: unknown problem '" + kind + "'");
}

json problem_to_json(const problems::ProblemSpec& spec) {
  return std::visit(
      [](const auto& s) -> json {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, problems::QuadraticSpec>) {
          return {{"kind", "quadratic"}, {"d", s.d}, {"condition_number", s.condition_number},
                  {"samples", s.samples}, {"noise", s.noise}, {"seed", s.seed}};
        } else if constexpr (std::is_same_v<S, problems::LogisticSpec>) {
          return {{"kind", "logistic"}, {"n_samples", s.n_samples}, {"d", s.d},
                  {"margin", s.margin}, {"l2", s.l2}, {"seed", s.seed}};
        } else {
          return {{"kind", "mlp"}, {"layers", s.layers}, {"samples", s.samples},
                  {"seed", s.seed}};
        }
      },
      spec);
}

netsim::DelayModel parse_delays(const json& j) {
  netsim::DelayModel d;
  ObjectReader r(j, "delays");
  r.get_ms("base_compute_ms", d.base_compute);
  r.get_ms("compute_jitter_ms", d.compute_jitter_max);
  r.get_ms("link_latency_ms", d.link_latency);
  r.get_ms("link_jitter_ms", d.link_jitter_max);
  if (r.has("straggler")) {
    ObjectReader s(r.child("straggler"), "delays.straggler");
    s.get("victims", d.straggler.victims_per_iteration);
    s.get_ms("extra_ms", d.straggler.extra_delay);
    s.get("seed", d.straggler.selection_seed);
    s.finish();
  }
  r.finish();
  return d;
}

json delays_to_json(const netsim::DelayModel& d) {
  return {{"base_compute_ms", d.base_compute.ms()},
          {"compute_jitter_ms", d.compute_jitter_max.ms()},
          {"link_latency_ms", d.link_latency.ms()},
          {"link_jitter_ms", d.link_jitter_max.ms()},
          {"straggler",
           {{"victims", d.straggler.victims_per_iteration},
            {"extra_ms", d.straggler.extra_delay.ms()},
            {"seed", d.straggler.selection_seed}}}};
}

}  // namespace

std::vector<std::string> RunConfig::validate() const {
  auto warnings = optimizer.validate();
  try {
    delays.validate(optimizer.P);
    const auto problem_instance = problems::make_problem(problem);
    if (problem_instance->sample_count() < optimizer.P) {
      throw ConfigError("problem has fewer samples than workers");
    }
  } catch (const InvalidParams& e) {
    throw ConfigError(e.what());
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  return warnings;
}

RunConfig parse_config(const json& j) {
  RunConfig c;
  ObjectReader r(j, "config");
  int version = 0;
  if (!r.has("schema_version")) throw ConfigError("config: missing schema_version");
  r.get("schema_version", version);
  if (version != kSchemaVersion) {
    throw ConfigError("config: unsupported schema_version " + std::to_string(version));
  }
  auto& o = c.optimizer;
  std::string mode = optim::to_string(o.mode);
  r.get("mode", mode);
  o.mode = optim::mode_from_string(mode);
  r.get("P", o.P);
  r.get("S", o.S);
  if (r.has("tau")) {
    const json& tau = r.child("tau");
    if (tau.is_null()) {
      o.tau.reset();
    } else if (tau.is_number_unsigned()) {
      o.tau = tau.get<Iteration>();
    } else {
      throw ConfigError("config.tau: expected a non-negative integer or null");
    }
  }
  r.get("T", o.T);
  r.get("b", o.b);
  r.get("alpha", o.alpha);
  r.get("beta", o.beta);
  if (r.has("eta")) o.eta = parse_eta(r.child("eta"));
  if (r.has("update")) o.update = parse_update(r.child("update"));
  if (r.has("problem")) c.problem = parse_problem(r.child("problem"));
  if (r.has("delays")) c.delays = parse_delays(r.child("delays"));
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  r.finish();
  return c;
}

json to_json(const RunConfig& c) {
  const auto& o = c.optimizer;
  json j;
  j["schema_version"] = kSchemaVersion;
  j["mode"] = optim::to_string(o.mode);
  j["P"] = o.P;
  j["S"] = o.S;
  j["tau"] = o.tau ? json(*o.tau) : json(nullptr);
  j["T"] = o.T;
  j["b"] = o.b;
  j["alpha"] = o.alpha;
  j["beta"] = o.beta;
  j["eta"] = eta_to_json(o.eta);
  j["update"] = {{"rule", o.update.kind == optim::UpdateRule::Kind::kSgd ? "sgd" : "momentum"},
                 {"momentum", o.update.momentum}};
  j["problem"] = problem_to_json(c.problem);
  j["delays"] = delays_to_json(c.delays);
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  return j;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

void set_dotted(json& doc, std::string_view key, std::string_view value) {
  if (key.empty()) throw ConfigError("empty override key");
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part(key.substr(start, dot == std::string_view::npos ? key.size() - start
                                                                          : dot - start));
    if (part.empty()) throw ConfigError("bad override key '" + std::string(key) + "'");
    if (!node->is_object()) {
      throw ConfigError("override key '" + std::string(key) + "' crosses a non-object");
    }
    if (dot == std::string_view::npos) {
      json parsed;
      try {
        parsed = json::parse(value);
      } catch (const json::parse_error&) {
        parsed = std::string(value);
      }
      (*node)[part] = std::move(parsed);
      return;
    }
    node = &(*node)[part];
    // Absent sections are created; the strict parse still vets their keys.
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

}  // namespace wagma::harness
