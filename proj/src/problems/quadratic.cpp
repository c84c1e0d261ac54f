#include <algorithm>
#include <cmath>
#include <string>

#include "wagma/errors.hpp"
#include "wagma/netsim.hpp"
#include "wagma/problems.hpp"

namespace wagma::problems {

QuadraticProblem::QuadraticProblem(Vec diagonal, Vec optimum, std::vector<Vec> noise,
                                   Vec init)
    : diag_(std::move(diagonal)),
      x_star_(std::move(optimum)),
      samples_(noise.size()),
      init_(std::move(init)) {
  const std::size_t d = diag_.size();
  if (d == 0 || x_star_.size() != d || init_.size() != d || samples_ == 0) {
    throw InvalidParams("quadratic: inconsistent shapes");
  }
  for (double a : diag_) {
    if (!(a > 0.0)) {
      throw InvalidParams("quadratic: eigenvalues must be positive");
    }
  }
  Vec mean(d, 0.0);
  for (const auto& row : noise) {
    if (row.size() != d) {
      throw InvalidParams("quadratic: noise row has wrong dimension");
    }
    for (std::size_t k = 0; k < d; ++k) mean[k] += row[k];
  }
  for (auto& m : mean) m /= static_cast<double>(samples_);
  noise_.reserve(samples_ * d);
  for (const auto& row : noise) {
    for (std::size_t k = 0; k < d; ++k) noise_.push_back(row[k] - mean[k]);
  }
}

double QuadraticProblem::sample_loss(std::size_t e, std::span<const double> w) const {
  const std::size_t d = diag_.size();
  const double* xi = &noise_[e * d];
  double quad = 0.0;
  double lin = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double delta = w[k] - x_star_[k];
    quad += diag_[k] * delta * delta;
    lin += delta * diag_[k] * xi[k];
  }
  return 0.5 * quad - lin;
}

void QuadraticProblem::accumulate_sample_gradient(std::size_t e,
                                                  std::span<const double> w,
                                                  double scale,
                                                  std::span<double> grad) const {
  const std::size_t d = diag_.size();
  const double* xi = &noise_[e * d];
  for (std::size_t k = 0; k < d; ++k) {
    grad[k] += scale * diag_[k] * (w[k] - x_star_[k] - xi[k]);
  }
}

double QuadraticProblem::loss(std::span<const double> w) const {
  double quad = 0.0;
  for (std::size_t k = 0; k < diag_.size(); ++k) {
    const double delta = w[k] - x_star_[k];
    quad += diag_[k] * delta * delta;
  }
  return 0.5 * quad;
}

void QuadraticProblem::gradient(std::span<const double> w,
                                std::span<double> out) const {
  for (std::size_t k = 0; k < diag_.size(); ++k) {
    out[k] = diag_[k] * (w[k] - x_star_[k]);
  }
}

std::optional<double> QuadraticProblem::lipschitz() const {
  return *std::max_element(diag_.begin(), diag_.end());
}

std::unique_ptr<QuadraticProblem> make_quadratic(std::size_t d, double condition_number,
                                                 std::uint64_t seed,
                                                 QuadraticOptions options) {
  if (d == 0) {
    throw InvalidParams("quadratic: d must be >= 1");
  }
  if (!(condition_number >= 1.0)) {
    throw InvalidParams("quadratic: condition number must be >= 1");
  }
  if (options.samples == 0 || options.noise < 0.0) {
    throw InvalidParams("quadratic: need >= 1 sample and non-negative noise");
  }
  Vec diag(d);
  for (std::size_t k = 0; k < d; ++k) {
    const double frac = d == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(d - 1);
    diag[k] = std::pow(condition_number, frac);
  }
  // Pin the endpoints so L is exactly the condition number.
  diag[0] = 1.0;
  diag[d - 1] = condition_number;

  std::mt19937_64 rng(netsim::mix_seed(seed, 0x9ad));
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec x_star(d);
  for (auto& x : x_star) x = normal(rng);

  std::vector<Vec> noise(options.samples, Vec(d));
  for (auto& row : noise) {
    for (auto& x : row) x = options.noise * normal(rng);
  }
  return std::make_unique<QuadraticProblem>(std::move(diag), std::move(x_star),
                                            std::move(noise), Vec(d, 0.0));
}

}  // namespace wagma::problems
