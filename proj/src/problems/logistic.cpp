#include <cmath>
#include <string>

#include "wagma/errors.hpp"
#include "wagma/netsim.hpp"
#include "wagma/problems.hpp"

namespace wagma::problems {

namespace {

// log(1 + exp(-z)) without overflow.
double softplus_neg(double z) {
  return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

// 1 / (1 + exp(z))
double sigmoid_neg(double z) {
  if (z >= 0) {
    const double ez = std::exp(-z);
    return ez / (1.0 + ez);
  }
  return 1.0 / (1.0 + std::exp(z));
}

}  // namespace

LogisticProblem::LogisticProblem(std::vector<Vec> features, std::vector<double> labels,
                                 double l2)
    : d_(features.empty() ? 0 : features.front().size()),
      labels_(std::move(labels)),
      l2_(l2) {
  if (features.empty() || d_ == 0 || features.size() != labels_.size()) {
    throw InvalidParams("logistic: inconsistent shapes");
  }
  if (l2_ < 0.0) {
    throw InvalidParams("logistic: negative regularisation");
  }
  x_.reserve(features.size() * d_);
  for (const auto& row : features) {
    if (row.size() != d_) {
      throw InvalidParams("logistic: ragged feature rows");
    }
    x_.insert(x_.end(), row.begin(), row.end());
  }
}

double LogisticProblem::margin_of(std::size_t e, std::span<const double> w) const {
  const double* x = &x_[e * d_];
  double dot = 0.0;
  for (std::size_t k = 0; k < d_; ++k) dot += w[k] * x[k];
  return labels_[e] * dot;
}

double LogisticProblem::sample_loss(std::size_t e, std::span<const double> w) const {
  double reg = 0.0;
  for (std::size_t k = 0; k < d_; ++k) reg += w[k] * w[k];
  return softplus_neg(margin_of(e, w)) + 0.5 * l2_ * reg;
}

void LogisticProblem::accumulate_sample_gradient(std::size_t e,
                                                 std::span<const double> w,
                                                 double scale,
                                                 std::span<double> grad) const {
  const double coeff = -labels_[e] * sigmoid_neg(margin_of(e, w));
  const double* x = &x_[e * d_];
  for (std::size_t k = 0; k < d_; ++k) {
    grad[k] += scale * (coeff * x[k] + l2_ * w[k]);
  }
}

std::optional<double> LogisticProblem::accuracy(std::span<const double> w) const {
  std::size_t correct = 0;
  for (std::size_t e = 0; e < labels_.size(); ++e) {
    if (margin_of(e, w) > 0.0) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels_.size());
}

double LogisticProblem::max_feature_norm() const {
  double best = 0.0;
  for (std::size_t e = 0; e < labels_.size(); ++e) {
    double n = 0.0;
    for (std::size_t k = 0; k < d_; ++k) n += x_[e * d_ + k] * x_[e * d_ + k];
    best = std::max(best, std::sqrt(n));
  }
  return best;
}

std::unique_ptr<LogisticProblem> make_logistic(std::size_t n_samples, std::size_t d,
                                               double margin, std::uint64_t seed,
                                               LogisticOptions options) {
  if (!(margin > 0.0)) {
    throw InvalidParams("logistic: margin must be > 0");
  }
  if (n_samples == 0 || d == 0) {
    throw InvalidParams("logistic: need samples and features");
  }
  std::mt19937_64 rng(netsim::mix_seed(seed, 0x1091));
  std::normal_distribution<double> normal(0.0, 1.0);

  Vec separator(d);
  double norm = 0.0;
  for (auto& x : separator) {
    x = normal(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : separator) x /= norm;

  std::vector<Vec> features(n_samples, Vec(d));
  std::vector<double> labels(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      features[i][k] = normal(rng);
      s += features[i][k] * separator[k];
    }
    const double y = s >= 0.0 ? 1.0 : -1.0;
    for (std::size_t k = 0; k < d; ++k) {
      features[i][k] += y * margin * separator[k];
    }
    labels[i] = y;
  }
  return std::make_unique<LogisticProblem>(std::move(features), std::move(labels),
                                           options.l2);
}

}  // namespace wagma::problems
