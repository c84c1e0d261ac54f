#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "wagma/types.hpp"

namespace wagma::problems {

/// Empirical risk F(w) = (1/D) sum_e f_e(w) over a synthetic dataset, with
/// exact per-sample gradients. Immutable after construction.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::size_t sample_count() const = 0;

  virtual double sample_loss(std::size_t e, std::span<const double> w) const = 0;
  /// grad += scale * grad f_e(w)
  virtual void accumulate_sample_gradient(std::size_t e, std::span<const double> w,
                                          double scale,
                                          std::span<double> grad) const = 0;

  /// Full-batch loss and gradient; the defaults average over all samples.
  virtual double loss(std::span<const double> w) const;
  virtual void gradient(std::span<const double> w, std::span<double> out) const;

  virtual Vec initial_point() const = 0;
  virtual std::optional<Vec> optimum() const { return std::nullopt; }
  virtual std::optional<double> optimal_loss() const { return std::nullopt; }
  /// Lipschitz constant of every per-sample gradient, when known exactly.
  virtual std::optional<double> lipschitz() const { return std::nullopt; }
  /// Training accuracy for classification problems.
  virtual std::optional<double> accuracy(std::span<const double>) const {
    return std::nullopt;
  }

  /// (1/|batch|) sum over the batch of grad f_e(w).
  Vec batch_gradient(std::span<const std::size_t> batch,
                     std::span<const double> w) const;
  Vec full_gradient(std::span<const double> w) const;
};

// ---------------------------------------------------------------------------
// Quadratic: F(x) = 1/2 (x - x*)^T A (x - x*), A diagonal.
//
// f_e(x) = 1/2 (x-x*)^T A (x-x*) - (x-x*)^T A xi_e with centred noise xi_e,
// so grad f_e = A (x - x* - xi_e) is an unbiased estimate of grad F and every
// f_e has the same Lipschitz constant max(A).

class QuadraticProblem final : public Problem {
 public:
  /// `noise` holds one row of length d per sample; it is re-centred.
  QuadraticProblem(Vec diagonal, Vec optimum, std::vector<Vec> noise, Vec init);

  std::string name() const override { return "quadratic"; }
  std::size_t dimension() const override { return diag_.size(); }
  std::size_t sample_count() const override { return samples_; }
  double sample_loss(std::size_t e, std::span<const double> w) const override;
  void accumulate_sample_gradient(std::size_t e, std::span<const double> w,
                                  double scale,
                                  std::span<double> grad) const override;
  double loss(std::span<const double> w) const override;
  void gradient(std::span<const double> w, std::span<double> out) const override;
  Vec initial_point() const override { return init_; }
  std::optional<Vec> optimum() const override { return x_star_; }
  std::optional<double> optimal_loss() const override { return 0.0; }
  std::optional<double> lipschitz() const override;

  const Vec& diagonal() const { return diag_; }

 private:
  Vec diag_;
  Vec x_star_;
  std::size_t samples_;
  Vec noise_;  // samples_ x d, row-major
  Vec init_;
};

struct QuadraticOptions {
  std::size_t samples = 1024;
  double noise = 1.0;
};

/// Eigenvalues log-spaced in [1, condition_number]; x* ~ N(0, I); start at 0.
std::unique_ptr<QuadraticProblem> make_quadratic(std::size_t d,
                                                 double condition_number,
                                                 std::uint64_t seed,
                                                 QuadraticOptions options = {});

// ---------------------------------------------------------------------------
// L2-regularised logistic regression on linearly separable data.

struct LogisticOptions {
  double l2 = 1e-4;
};

class LogisticProblem final : public Problem {
 public:
  LogisticProblem(std::vector<Vec> features, std::vector<double> labels, double l2);

  std::string name() const override { return "logistic"; }
  std::size_t dimension() const override { return d_; }
  std::size_t sample_count() const override { return labels_.size(); }
  double sample_loss(std::size_t e, std::span<const double> w) const override;
  void accumulate_sample_gradient(std::size_t e, std::span<const double> w,
                                  double scale,
                                  std::span<double> grad) const override;
  Vec initial_point() const override { return Vec(d_, 0.0); }
  std::optional<double> accuracy(std::span<const double> w) const override;

  double l2() const { return l2_; }
  double max_feature_norm() const;

 private:
  double margin_of(std::size_t e, std::span<const double> w) const;

  std::size_t d_;
  Vec x_;  // n x d, row-major
  std::vector<double> labels_;
  double l2_;
};

/// Labels come from a random unit separator w*; every point is pushed so that
/// y * <w*, x> >= margin. Throws InvalidParams for margin <= 0.
std::unique_ptr<LogisticProblem> make_logistic(std::size_t n_samples, std::size_t d,
                                               double margin, std::uint64_t seed,
                                               LogisticOptions options = {});

// ---------------------------------------------------------------------------
// One-hidden-layer tanh network, squared loss, teacher-generated targets.

struct MlpOptions {
  std::size_t samples = 256;
  bool zero_targets = false;
};

class MlpProblem final : public Problem {
 public:
  MlpProblem(std::size_t in, std::size_t hidden, std::size_t out,
             std::vector<Vec> inputs, std::vector<Vec> targets, Vec init);

  std::string name() const override { return "mlp"; }
  std::size_t dimension() const override;
  std::size_t sample_count() const override { return inputs_.size(); }
  double sample_loss(std::size_t e, std::span<const double> w) const override;
  void accumulate_sample_gradient(std::size_t e, std::span<const double> w,
                                  double scale,
                                  std::span<double> grad) const override;
  Vec initial_point() const override { return init_; }

  /// Hidden activations and network output for sample e.
  void predict(std::size_t e, std::span<const double> w, Vec& hidden,
               Vec& output) const;

 private:

  std::size_t in_, hidden_, out_;
  std::vector<Vec> inputs_;
  std::vector<Vec> targets_;
  Vec init_;
};

/// layer_sizes = {inputs, hidden, outputs}; at most 1e4 parameters.
std::unique_ptr<MlpProblem> make_tiny_mlp(const std::vector<std::size_t>& layer_sizes,
                                          std::uint64_t seed, MlpOptions options = {});

// ---------------------------------------------------------------------------
// Problem descriptions as stored in run configurations.

struct QuadraticSpec {
  std::size_t d = 64;
  double condition_number = 10.0;
  std::size_t samples = 1024;
  double noise = 1.0;
  std::uint64_t seed = 0;
  bool operator==(const QuadraticSpec&) const = default;
};

struct LogisticSpec {
  std::size_t n_samples = 4096;
  std::size_t d = 20;
  double margin = 1.0;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
  bool operator==(const LogisticSpec&) const = default;
};

struct MlpSpec {
  std::vector<std::size_t> layers{4, 16, 1};
  std::size_t samples = 256;
  std::uint64_t seed = 0;
  bool operator==(const MlpSpec&) const = default;
};

using ProblemSpec = std::variant<QuadraticSpec, LogisticSpec, MlpSpec>;

std::unique_ptr<Problem> make_problem(const ProblemSpec& spec);

// ---------------------------------------------------------------------------
// Data distribution.

/// Seeded shuffle of [0, D) cut into P contiguous shards whose sizes differ
/// by at most one.
std::vector<std::vector<std::size_t>> make_partition(std::size_t D, std::uint32_t P,
                                                     std::uint64_t seed);

class BatchSampler {
 public:
  enum class Mode {
    kWithReplacement,  ///< i.i.d. draws from the shard
    kEpochShuffled,    ///< without replacement, reshuffled every epoch
  };

  BatchSampler(std::vector<std::size_t> shard, std::size_t batch, std::uint64_t seed,
               Mode mode = Mode::kWithReplacement);

  std::vector<std::size_t> next();
  std::size_t batch_size() const { return batch_; }
  const std::vector<std::size_t>& shard() const { return shard_; }

 private:
  std::vector<std::size_t> shard_;
  std::size_t batch_;
  Mode mode_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Gradient and moment checks.

struct FiniteDiffReport {
  /// max_k |analytic_k - numeric_k| / max(1, |analytic_k|, |numeric_k|)
  double max_relative_error = 0.0;
  std::size_t worst_coordinate = 0;
  bool passed = true;
};

/// Central differences of the full loss against the analytic full gradient.
FiniteDiffReport finite_diff_check(const Problem& problem,
                                   std::span<const double> point, double step,
                                   double tol);

/// Empirical max of ||grad f_e(w)|| over seeded draws of a sample e and a
/// point w uniform in the ball of `radius` around `center` (default: the
/// problem's initial point).
double estimate_M(const Problem& problem, std::size_t sample_count, double radius,
                  std::uint64_t seed, std::optional<Vec> center = std::nullopt);

}  // namespace wagma::problems
