// wagma: run, compare, sweep and verify simulated WAGMA-SGD experiments.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "wagma/errors.hpp"
#include "wagma/harness.hpp"

namespace h = wagma::harness;

namespace {

// "wagma,local_sgd:tau=1,S=2" -> {"wagma", "local_sgd:tau=1,S=2"}: a comma
// starts a new mode unless the next segment is a key=value override.
std::vector<std::string> split_modes(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (const auto& a : args) {
    std::size_t start = 0;
    while (start <= a.size()) {
      auto pos = a.find(',', start);
      const std::string seg = a.substr(start, pos == std::string::npos ? std::string::npos
                                                                       : pos - start);
      const bool override_seg = seg.find('=') != std::string::npos &&
                                seg.find(':') == std::string::npos;
      if (override_seg && !out.empty() && out.back().find(':') != std::string::npos) {
        out.back() += "," + seg;
      } else if (!seg.empty()) {
        out.push_back(seg);
      }
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
  }
  return out;
}

int report(const char* what) {
  const int code = h::exit_code_for_current_exception();
  try {
    throw;
  } catch (const std::exception& e) {
    std::cerr << what << ": " << e.what() << '\n';
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wait-avoiding group model averaging SGD on a simulated network"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(h::kToolVersion));

  std::optional<std::uint64_t> seed;
  std::string config_path;

  auto* run = app.add_subcommand("run", "Train one configuration and write metrics + manifest");
  run->add_option("config", config_path, "Run configuration (JSON)")->required();
  run->add_option("--seed", seed, "Override the configuration seed");
  std::string trace_path;
  run->add_option("--trace", trace_path, "Write the simulator event trace to this file");

  auto* compare = app.add_subcommand("compare", "Run several modes on a shared setup");
  std::vector<std::string> compare_configs;
  std::vector<std::string> modes;
  compare->add_option("configs", compare_configs, "One or more configurations")->required();
  compare->add_option("--modes", modes,
                      "Modes to run on the first config, e.g. wagma local_sgd:tau=1 allreduce");
  compare->add_option("--seed", seed, "Override the seed of every run");

  auto* sweep = app.add_subcommand("sweep", "Cartesian sweep over config keys");
  std::vector<std::string> vary;
  sweep->add_option("config", config_path, "Base configuration")->required();
  sweep->add_option("--vary", vary, "key=v1,v2,... (dotted keys, repeatable)")->required();
  sweep->add_option("--seed", seed, "Override the seed of every run");

  auto* verify = app.add_subcommand("verify", "Run the invariant suite");
  h::VerifyOptions vopt;
  verify->add_flag("--literal-masks", vopt.literal_masks,
                   "Use the literal shift-based mask update (expected to fail)");
  verify->add_flag("--corrupt-phase", vopt.corrupt_phase,
                   "Flip a bit in one phase payload per scenario (expected to fail)");
  verify->add_option("--scenarios", vopt.scenarios, "Randomised collective scenarios");

  CLI11_PARSE(app, argc, argv);

  const auto root = h::output_root();

  if (*run) {
    try {
      auto cfg = h::load_config(config_path);
      if (seed) cfg.seed = *seed;
      std::ofstream trace;
      if (!trace_path.empty()) {
        trace.open(trace_path);
        if (!trace) throw wagma::ConfigError("cannot open trace file " + trace_path);
      }
      const auto art = h::execute_run(cfg, root, trace_path.empty() ? nullptr : &trace);
      for (const auto& w : art.warnings) std::cerr << "warning: " << w << '\n';
      const auto& last = art.result.rows.back();
      std::cout << "rows " << art.result.rows.size() << ", final loss " << last.loss_mu
                << ", sim time " << art.result.end_time.ms() << " ms\n"
                << "metrics  " << art.metrics_path.string() << '\n'
                << "manifest " << art.manifest_path.string() << '\n'
                << "sha256   " << art.metrics_sha256 << '\n';
      return h::kExitOk;
    } catch (...) {
      return report("run");
    }
  }

  if (*compare) {
    try {
      std::vector<h::RunConfig> configs;
      std::vector<std::string> labels;
      for (const auto& p : compare_configs) {
        configs.push_back(h::load_config(p));
        labels.push_back(wagma::optim::to_string(configs.back().optimizer.mode));
      }
      if (!modes.empty()) {
        const auto base = configs.front();
        configs.clear();
        labels.clear();
        for (const auto& token : split_modes(modes)) {
          configs.push_back(h::apply_mode_token(base, token));
          labels.push_back(token);
        }
      }
      if (seed) {
        for (auto& c : configs) c.seed = *seed;
      }
      h::print_compare_table(std::cout, h::run_compare(configs, labels));
      return h::kExitOk;
    } catch (...) {
      return report("compare");
    }
  }

  if (*sweep) {
    try {
      auto base = h::load_config(config_path);
      if (seed) base.seed = *seed;
      std::vector<h::SweepAxis> axes;
      for (const auto& v : vary) axes.push_back(h::parse_vary(v));
      const auto points = h::expand_sweep(base, axes);
      for (const auto& p : points) p.config.validate();
      for (const auto& p : points) {
        const auto art = h::execute_run(p.config, root);
        std::cout << p.label << "\tloss " << art.result.rows.back().loss_mu << "\tsim_ms "
                  << art.result.end_time.ms() << "\t" << art.metrics_path.string() << '\n';
      }
      return h::kExitOk;
    } catch (...) {
      return report("sweep");
    }
  }

  if (*verify) {
    try {
      const auto results = h::run_verify(vopt, &std::cout);
      std::size_t failed = 0;
      for (const auto& r : results) failed += r.passed ? 0 : 1;
      std::cout << (failed ? "FAILED " : "ALL PASSED ") << results.size() - failed << "/"
                << results.size() << '\n';
      return failed ? h::kExitFailure : h::kExitOk;
    } catch (...) {
      return report("verify");
    }
  }
  return h::kExitFailure;
}
