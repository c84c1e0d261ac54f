#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wagma/collective.hpp"
#include "wagma/problems.hpp"
#include "wagma/types.hpp"

namespace wagma::optim {

enum class Mode { kWagma, kAllreduce, kLocalSgd, kDpsgd, kAdpsgd };

std::string to_string(Mode mode);
/// Accepts wagma | allreduce | local_sgd | dpsgd | adpsgd.
Mode mode_from_string(std::string_view name);

struct LearningRate {
  enum class Kind {
    kConstant,
    kStepDecay,  ///< value * decay^floor(t / every)
    kTheorem,    ///< P / sqrt(T)
  };
  Kind kind = Kind::kConstant;
  double value = 0.05;
  double decay = 0.5;
  Iteration every = 1000;

  double at(Iteration t, std::uint32_t P, Iteration T) const;
  bool operator==(const LearningRate&) const = default;
};

struct UpdateRule {
  enum class Kind { kSgd, kMomentum };
  Kind kind = Kind::kSgd;
  double momentum = 0.9;
  bool operator==(const UpdateRule&) const = default;
};

/// Parameters of one training run. For WAGMA, `alpha` selects the
/// wait-avoiding group allreduce and `beta` the plain blocking group
/// allreduce; with neither, non-sync rounds do no communication at all.
/// An absent tau means no periodic global synchronisation.
struct OptimizerConfig {
  Mode mode = Mode::kWagma;
  std::uint32_t P = 1;
  std::uint32_t S = 1;
  std::optional<Iteration> tau = 10;
  Iteration T = 100;
  std::size_t b = 1;
  bool alpha = true;
  bool beta = false;
  LearningRate eta;
  UpdateRule update;

  /// Throws ConfigError on an invalid combination; returns warnings (e.g. the
  /// theorem learning rate used with T < P^4 tau^4).
  std::vector<std::string> validate() const;

  /// Round kinds this configuration executes.
  collective::RoundSchedule schedule() const;

  bool operator==(const OptimizerConfig&) const = default;
};

struct WorkerState {
  Rank rank = 0;
  /// Current replica W_t.
  Vec W;
  /// Locally updated model W'_t = W_t + dW_t.
  Vec W_prime;
  /// Momentum buffer (unused for plain SGD).
  Vec velocity;
  /// Iteration of the last averaging interaction (group or global).
  Iteration q = 0;
  /// Iteration of the last global synchronisation.
  Iteration r = 0;
  Iteration iter = 0;

  WorkerState() = default;
  WorkerState(Rank rank, Vec init);
};

/// Mean gradient over one sampled batch. Throws DivergenceError if any
/// component is non-finite.
Vec sample_gradient(const WorkerState& worker, const problems::Problem& problem,
                    problems::BatchSampler& sampler);

/// W_prime = W + U(grad): plain SGD uses -eta * grad, momentum keeps
/// v = m * v + grad and uses -eta * v.
void apply_update(WorkerState& worker, std::span<const double> grad,
                  const OptimizerConfig& config);

/// sample_gradient followed by apply_update. Returns ||grad||.
double local_step(WorkerState& worker, const problems::Problem& problem,
                  const OptimizerConfig& config, problems::BatchSampler& sampler);

struct RoundResult {
  collective::RoundKind kind = collective::RoundKind::kLocal;
  Vec sum;
  /// The worker's own fresh model was part of `sum`.
  bool timely = true;
};

/// Averaging step after local_step for iteration `worker.iter`:
///   local: W = W'
///   group, timely: W = sum / S;  group, stale: W = (sum + W') / (S + 1)
///   sync:  W = sum / P
/// and advances iter, q, r accordingly.
void wagma_round(WorkerState& worker, const OptimizerConfig& config,
                 const RoundResult& round);

/// D-PSGD ring step: (left + self + right) / 3.
Vec ring_average(std::span<const double> left, std::span<const double> self,
                 std::span<const double> right);

/// AD-PSGD pairwise step: (requester + partner) / 2.
Vec pair_average(std::span<const double> requester, std::span<const double> partner);

/// Seeded uniform partner in [0, P) \ {rank}.
Rank adpsgd_partner(Rank rank, std::uint32_t P, Iteration t, std::uint64_t seed);

struct Diagnostics {
  Vec mu;
  double gamma = 0.0;
  double grad_norm_sq_mu = 0.0;
  double loss_mu = 0.0;
  std::int64_t max_staleness_used = 0;
  double M_hat = 0.0;
};

/// mu = (1/P) sum_i W_i, gamma = sum_i ||W_i - mu||^2, plus full-batch loss
/// and squared gradient norm at mu.
Diagnostics compute_diagnostics(std::span<const Vec> replicas,
                                const problems::Problem& problem);

/// 16 P eta^2 M^2 tau^2
double gamma_bound(std::uint32_t P, double eta, double M, double tau);

}  // namespace wagma::optim
