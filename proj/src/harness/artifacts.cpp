#include <openssl/evp.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "wagma/errors.hpp"
#include "wagma/harness.hpp"

namespace wagma::harness {

namespace fs = std::filesystem;

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const ConfigError&) {
    return kExitConfig;
  } catch (const InvalidParams&) {
    return kExitConfig;
  } catch (const ProtocolFault&) {
    return kExitProtocol;
  } catch (const TimeTravelError&) {
    return kExitProtocol;
  } catch (const DivergenceError&) {
    return kExitDivergence;
  } catch (const BudgetExhausted&) {
    return kExitBudget;
  } catch (...) {
    return kExitFailure;
  }
}

void write_metrics_csv(std::ostream& out, const std::vector<training::MetricsRecord>& rows) {
  out << kMetricsHeader << '\n';
  char line[512];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%llu,%.17g,%.17g,%.17g,%.17g,%lld,%llu,%llu\n",
                  static_cast<unsigned long long>(r.iteration), r.sim_time_ms, r.loss_mu,
                  r.grad_norm_sq_mu, r.gamma, static_cast<long long>(r.max_staleness),
                  static_cast<unsigned long long>(r.msgs_total),
                  static_cast<unsigned long long>(r.bytes_total));
    out << line;
  }
}

std::string metrics_csv(const std::vector<training::MetricsRecord>& rows) {
  std::ostringstream out;
  write_metrics_csv(out, rows);
  return out.str();
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

void write_file_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

fs::path output_root() {
  const std::string name(kOutputRootEnv);
  if (const char* env = std::getenv(name.c_str()); env && *env) return fs::path(env);
  return fs::current_path();
}

fs::path resolve_output_dir(const RunConfig& config, const fs::path& root) {
  const fs::path dir(config.output_dir);
  return dir.is_absolute() ? dir : root / dir;
}

RunArtifacts execute_run(const RunConfig& config, const fs::path& root, std::ostream* trace) {
  RunArtifacts art;
  art.warnings = config.validate();
  const auto problem = problems::make_problem(config.problem);

  training::TrainingOptions options;
  options.trace = trace;
  art.result = training::run_training(config.optimizer, *problem, config.delays, config.seed,
                                      options);

  art.directory = resolve_output_dir(config, root);
  art.metrics_path = art.directory / "metrics.csv";
  art.manifest_path = art.directory / "manifest.json";
  const std::string csv = metrics_csv(art.result.rows);
  art.metrics_sha256 = sha256_hex(csv);
  write_file_atomic(art.metrics_path, csv);

  nlohmann::json manifest;
  manifest["schema_version"] = kSchemaVersion;
  manifest["tool"] = "wagma";
  manifest["tool_version"] = std::string(kToolVersion);
  manifest["config"] = to_json(config);
  manifest["seed"] = config.seed;
  manifest["sim_time_start_ms"] = 0.0;
  manifest["sim_time_end_ms"] = art.result.end_time.ms();
  manifest["rows"] = art.result.rows.size();
  manifest["metrics_file"] = "metrics.csv";
  manifest["metrics_sha256"] = art.metrics_sha256;
  manifest["warnings"] = art.warnings;
  if (art.result.final_accuracy) manifest["final_accuracy"] = *art.result.final_accuracy;
  write_file_atomic(art.manifest_path, manifest.dump(2) + "\n");
  return art;
}

}  // namespace wagma::harness
