#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "wagma/errors.hpp"
#include "wagma/netsim.hpp"
#include "wagma/problems.hpp"

namespace wagma::problems {

double Problem::loss(std::span<const double> w) const {
  const std::size_t n = sample_count();
  double total = 0.0;
  for (std::size_t e = 0; e < n; ++e) {
    total += sample_loss(e, w);
  }
  return total / static_cast<double>(n);
}

void Problem::gradient(std::span<const double> w, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  const std::size_t n = sample_count();
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t e = 0; e < n; ++e) {
    accumulate_sample_gradient(e, w, scale, out);
  }
}

Vec Problem::batch_gradient(std::span<const std::size_t> batch,
                            std::span<const double> w) const {
  Vec g(dimension(), 0.0);
  if (batch.empty()) {
    return g;
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (std::size_t e : batch) {
    accumulate_sample_gradient(e, w, scale, g);
  }
  return g;
}

Vec Problem::full_gradient(std::span<const double> w) const {
  Vec g(dimension(), 0.0);
  gradient(w, g);
  return g;
}

std::unique_ptr<Problem> make_problem(const ProblemSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::unique_ptr<Problem> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, QuadraticSpec>) {
          return make_quadratic(s.d, s.condition_number, s.seed,
                                {.samples = s.samples, .noise = s.noise});
        } else if constexpr (std::is_same_v<T, LogisticSpec>) {
          return make_logistic(s.n_samples, s.d, s.margin, s.seed, {.l2 = s.l2});
        } else {
          return make_tiny_mlp(s.layers, s.seed, {.samples = s.samples});
        }
      },
      spec);
}

std::vector<std::vector<std::size_t>> make_partition(std::size_t D, std::uint32_t P,
                                                     std::uint64_t seed) {
  if (P == 0) {
    throw InvalidParams("partition: P must be >= 1");
  }
  std::vector<std::size_t> order(D);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(netsim::mix_seed(seed, 0xda7a));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> shards(P);
  const std::size_t base = D / P;
  const std::size_t extra = D % P;
  std::size_t cursor = 0;
  for (std::uint32_t i = 0; i < P; ++i) {
    const std::size_t len = base + (i < extra ? 1 : 0);
    shards[i].assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                     order.begin() + static_cast<std::ptrdiff_t>(cursor + len));
    cursor += len;
  }
  return shards;
}

BatchSampler::BatchSampler(std::vector<std::size_t> shard, std::size_t batch,
                           std::uint64_t seed, Mode mode)
    : shard_(std::move(shard)), batch_(batch), mode_(mode), rng_(seed) {
  if (shard_.empty()) {
    throw InvalidParams("batch sampler: empty shard");
  }
  if (batch_ == 0) {
    throw InvalidParams("batch sampler: batch size must be >= 1");
  }
  if (mode_ == Mode::kEpochShuffled) {
    order_ = shard_;
    std::shuffle(order_.begin(), order_.end(), rng_);
  }
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> batch;
  batch.reserve(batch_);
  if (mode_ == Mode::kWithReplacement) {
    std::uniform_int_distribution<std::size_t> pick(0, shard_.size() - 1);
    for (std::size_t i = 0; i < batch_; ++i) {
      batch.push_back(shard_[pick(rng_)]);
    }
    return batch;
  }
  for (std::size_t i = 0; i < batch_; ++i) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

FiniteDiffReport finite_diff_check(const Problem& problem,
                                   std::span<const double> point, double step,
                                   double tol) {
  if (!(step > 0.0)) {
    throw InvalidParams("finite_diff_check: step must be > 0");
  }
  const Vec analytic = problem.full_gradient(point);
  Vec probe(point.begin(), point.end());
  FiniteDiffReport report;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    const double saved = probe[k];
    probe[k] = saved + step;
    const double up = problem.loss(probe);
    probe[k] = saved - step;
    const double down = problem.loss(probe);
    probe[k] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom =
        std::max({1.0, std::fabs(analytic[k]), std::fabs(numeric)});
    const double err = std::fabs(analytic[k] - numeric) / denom;
    if (err > report.max_relative_error || !std::isfinite(err)) {
      report.max_relative_error = err;
      report.worst_coordinate = k;
    }
  }
  report.passed = report.max_relative_error <= tol;
  return report;
}

double estimate_M(const Problem& problem, std::size_t sample_count, double radius,
                  std::uint64_t seed, std::optional<Vec> center) {
  if (radius < 0.0) {
    throw InvalidParams("estimate_M: radius must be >= 0");
  }
  const Vec c = center ? *center : problem.initial_point();
  const std::size_t d = problem.dimension();
  std::mt19937_64 rng(netsim::mix_seed(seed, 0x3e57));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, problem.sample_count() - 1);

  double best = 0.0;
  Vec w(d);
  Vec g(d);
  for (std::size_t i = 0; i < sample_count; ++i) {
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      w[k] = normal(rng);
      norm += w[k] * w[k];
    }
    norm = std::sqrt(norm);
    const double r = radius * std::pow(unit(rng), 1.0 / static_cast<double>(d));
    for (std::size_t k = 0; k < d; ++k) {
      w[k] = c[k] + (norm > 0 ? r * w[k] / norm : 0.0);
    }
    std::fill(g.begin(), g.end(), 0.0);
    problem.accumulate_sample_gradient(pick(rng), w, 1.0, g);
    double gn = 0.0;
    for (double x : g) gn += x * x;
    best = std::max(best, std::sqrt(gn));
  }
  return best;
}

}  // namespace wagma::problems
