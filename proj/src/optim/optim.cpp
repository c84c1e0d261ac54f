#include "wagma/optim.hpp"

#include <cmath>
#include <random>
#include <string>

#include "wagma/errors.hpp"
#include "wagma/netsim.hpp"
#include "wagma/topology.hpp"

namespace wagma::optim {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kWagma:
      return "wagma";
    case Mode::kAllreduce:
      return "allreduce";
    case Mode::kLocalSgd:
      return "local_sgd";
    case Mode::kDpsgd:
      return "dpsgd";
    case Mode::kAdpsgd:
      return "adpsgd";
  }
  return "?";
}

Mode mode_from_string(std::string_view name) {
  if (name == "wagma") return Mode::kWagma;
  if (name == "allreduce") return Mode::kAllreduce;
  if (name == "local_sgd") return Mode::kLocalSgd;
  if (name == "dpsgd") return Mode::kDpsgd;
  if (name == "adpsgd") return Mode::kAdpsgd;
  throw ConfigError("unknown mode '" + std::string(name) + "'");
}

double LearningRate::at(Iteration t, std::uint32_t P, Iteration T) const {
  switch (kind) {
    case Kind::kConstant:
      return value;
    case Kind::kStepDecay:
      return value * std::pow(decay, static_cast<double>(t / every));
    case Kind::kTheorem:
      return static_cast<double>(P) / std::sqrt(static_cast<double>(T));
  }
  return value;
}

std::vector<std::string> OptimizerConfig::validate() const {
  std::vector<std::string> warnings;
  try {
    topology::validate({P, S, 0});
  } catch (const InvalidParams& e) {
    throw ConfigError(e.what());
  }
  if (alpha && beta) {
    throw ConfigError("alpha and beta cannot both be true");
  }
  if (T == 0) throw ConfigError("T must be >= 1");
  if (b == 0) throw ConfigError("batch size b must be >= 1");
  if (tau && *tau == 0) throw ConfigError("tau must be >= 1 (or null for infinite)");
  if (eta.kind != LearningRate::Kind::kTheorem && !(eta.value > 0.0)) {
    throw ConfigError("learning rate must be > 0");
  }
  if (eta.kind == LearningRate::Kind::kStepDecay &&
      (!(eta.decay > 0.0 && eta.decay <= 1.0) || eta.every == 0)) {
    throw ConfigError("step decay needs 0 < decay <= 1 and every >= 1");
  }
  if (update.kind == UpdateRule::Kind::kMomentum &&
      !(update.momentum >= 0.0 && update.momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (eta.kind == LearningRate::Kind::kTheorem) {
    if (!tau) {
      warnings.emplace_back("theorem learning rate with infinite tau: no step bound applies");
    } else {
      const double need = std::pow(static_cast<double>(P), 4) *
                          std::pow(static_cast<double>(*tau), 4);
      if (static_cast<double>(T) < need) {
        warnings.push_back("theorem learning rate: T=" + std::to_string(T) +
                           " is below P^4 tau^4=" + std::to_string(need));
      }
    }
  }
  return warnings;
}

collective::RoundSchedule OptimizerConfig::schedule() const {
  switch (mode) {
    case Mode::kWagma:
      return {T, tau, alpha || beta};
    case Mode::kLocalSgd:
      return {T, tau, false};
    case Mode::kAllreduce:
      return {T, Iteration{1}, false};
    case Mode::kDpsgd:
    case Mode::kAdpsgd:
      return {T, std::nullopt, false};
  }
  return {T, tau, false};
}

WorkerState::WorkerState(Rank rank_, Vec init)
    : rank(rank_), W(std::move(init)), W_prime(W), velocity(W.size(), 0.0) {}

Vec sample_gradient(const WorkerState& worker, const problems::Problem& problem,
                    problems::BatchSampler& sampler) {
  const auto batch = sampler.next();
  Vec g = problem.batch_gradient(batch, worker.W);
  for (double x : g) {
    if (!std::isfinite(x)) {
      throw DivergenceError("non-finite gradient at rank " +
                            std::to_string(worker.rank) + ", iteration " +
                            std::to_string(worker.iter));
    }
  }
  return g;
}

void apply_update(WorkerState& worker, std::span<const double> grad,
                  const OptimizerConfig& config) {
  const double eta = config.eta.at(worker.iter, config.P, config.T);
  const std::size_t d = worker.W.size();
  worker.W_prime.resize(d);
  if (config.update.kind == UpdateRule::Kind::kMomentum) {
    const double m = config.update.momentum;
    for (std::size_t k = 0; k < d; ++k) {
      worker.velocity[k] = m * worker.velocity[k] + grad[k];
      worker.W_prime[k] = worker.W[k] + (-eta * worker.velocity[k]);
    }
  } else {
    for (std::size_t k = 0; k < d; ++k) {
      worker.W_prime[k] = worker.W[k] + (-eta * grad[k]);
    }
  }
}

double local_step(WorkerState& worker, const problems::Problem& problem,
                  const OptimizerConfig& config, problems::BatchSampler& sampler) {
  const Vec g = sample_gradient(worker, problem, sampler);
  apply_update(worker, g, config);
  double n = 0.0;
  for (double x : g) n += x * x;
  return std::sqrt(n);
}

void wagma_round(WorkerState& worker, const OptimizerConfig& config,
                 const RoundResult& round) {
  const std::size_t d = worker.W_prime.size();
  const Iteration next = worker.iter + 1;
  switch (round.kind) {
    case collective::RoundKind::kLocal:
      worker.W = worker.W_prime;
      break;
    case collective::RoundKind::kGroup: {
      if (round.sum.size() != d) throw ProtocolFault("group sum has wrong dimension");
      worker.W.resize(d);
      if (round.timely) {
        const double S = config.S;
        for (std::size_t k = 0; k < d; ++k) worker.W[k] = round.sum[k] / S;
      } else {
        const double S1 = config.S + 1.0;
        for (std::size_t k = 0; k < d; ++k) {
          worker.W[k] = (round.sum[k] + worker.W_prime[k]) / S1;
        }
      }
      worker.q = next;
      break;
    }
    case collective::RoundKind::kSync: {
      if (round.sum.size() != d) throw ProtocolFault("sync sum has wrong dimension");
      worker.W.resize(d);
      const double P = config.P;
      for (std::size_t k = 0; k < d; ++k) worker.W[k] = round.sum[k] / P;
      worker.q = next;
      worker.r = next;
      break;
    }
  }
  worker.iter = next;
}

Vec ring_average(std::span<const double> left, std::span<const double> self,
                 std::span<const double> right) {
  Vec out(self.size());
  for (std::size_t k = 0; k < self.size(); ++k) {
    out[k] = (left[k] + self[k] + right[k]) / 3.0;
  }
  return out;
}

Vec pair_average(std::span<const double> requester, std::span<const double> partner) {
  Vec out(requester.size());
  for (std::size_t k = 0; k < requester.size(); ++k) {
    out[k] = (requester[k] + partner[k]) / 2.0;
  }
  return out;
}

Rank adpsgd_partner(Rank rank, std::uint32_t P, Iteration t, std::uint64_t seed) {
  if (P < 2) {
    throw InvalidParams("adpsgd partner needs P >= 2");
  }
  std::mt19937_64 rng(netsim::mix_seed(seed ^ 0xad95ULL, rank, t));
  std::uniform_int_distribution<Rank> pick(0, P - 2);
  const Rank other = pick(rng);
  return other >= rank ? other + 1 : other;
}

Diagnostics compute_diagnostics(std::span<const Vec> replicas,
                                const problems::Problem& problem) {
  Diagnostics diag;
  if (replicas.empty()) return diag;
  const std::size_t d = replicas.front().size();
  const double P = static_cast<double>(replicas.size());
  diag.mu.assign(d, 0.0);
  for (const auto& w : replicas) {
    for (std::size_t k = 0; k < d; ++k) diag.mu[k] += w[k];
  }
  for (auto& x : diag.mu) x /= P;
  for (const auto& w : replicas) {
    for (std::size_t k = 0; k < d; ++k) {
      const double delta = w[k] - diag.mu[k];
      diag.gamma += delta * delta;
    }
  }
  diag.loss_mu = problem.loss(diag.mu);
  const Vec g = problem.full_gradient(diag.mu);
  for (double x : g) diag.grad_norm_sq_mu += x * x;
  return diag;
}

double gamma_bound(std::uint32_t P, double eta, double M, double tau) {
  return 16.0 * static_cast<double>(P) * eta * eta * M * M * tau * tau;
}

}  // namespace wagma::optim
