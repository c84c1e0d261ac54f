#include <cmath>
#include <string>

#include "wagma/errors.hpp"
#include "wagma/netsim.hpp"
#include "wagma/problems.hpp"

namespace wagma::problems {

// Parameter layout: W1 (hidden x in), b1 (hidden), W2 (out x hidden), b2 (out).

MlpProblem::MlpProblem(std::size_t in, std::size_t hidden, std::size_t out,
                       std::vector<Vec> inputs, std::vector<Vec> targets, Vec init)
    : in_(in),
      hidden_(hidden),
      out_(out),
      inputs_(std::move(inputs)),
      targets_(std::move(targets)),
      init_(std::move(init)) {
  if (inputs_.empty() || inputs_.size() != targets_.size() ||
      init_.size() != dimension()) {
    throw InvalidParams("mlp: inconsistent shapes");
  }
}

std::size_t MlpProblem::dimension() const {
  return hidden_ * in_ + hidden_ + out_ * hidden_ + out_;
}

void MlpProblem::predict(std::size_t e, std::span<const double> w, Vec& hidden,
                         Vec& output) const {
  const double* W1 = w.data();
  const double* b1 = W1 + hidden_ * in_;
  const double* W2 = b1 + hidden_;
  const double* b2 = W2 + out_ * hidden_;
  const Vec& x = inputs_[e];
  hidden.assign(hidden_, 0.0);
  for (std::size_t j = 0; j < hidden_; ++j) {
    double z = b1[j];
    for (std::size_t i = 0; i < in_; ++i) z += W1[j * in_ + i] * x[i];
    hidden[j] = std::tanh(z);
  }
  output.assign(out_, 0.0);
  for (std::size_t o = 0; o < out_; ++o) {
    double z = b2[o];
    for (std::size_t j = 0; j < hidden_; ++j) z += W2[o * hidden_ + j] * hidden[j];
    output[o] = z;
  }
}

double MlpProblem::sample_loss(std::size_t e, std::span<const double> w) const {
  Vec h, y;
  predict(e, w, h, y);
  double loss = 0.0;
  for (std::size_t o = 0; o < out_; ++o) {
    const double r = y[o] - targets_[e][o];
    loss += r * r;
  }
  return 0.5 * loss;
}

void MlpProblem::accumulate_sample_gradient(std::size_t e, std::span<const double> w,
                                            double scale,
                                            std::span<double> grad) const {
  Vec h, y;
  predict(e, w, h, y);
  const double* W2 = w.data() + hidden_ * in_ + hidden_;
  double* gW1 = grad.data();
  double* gb1 = gW1 + hidden_ * in_;
  double* gW2 = gb1 + hidden_;
  double* gb2 = gW2 + out_ * hidden_;
  const Vec& x = inputs_[e];

  Vec dh(hidden_, 0.0);
  for (std::size_t o = 0; o < out_; ++o) {
    const double r = y[o] - targets_[e][o];
    gb2[o] += scale * r;
    for (std::size_t j = 0; j < hidden_; ++j) {
      gW2[o * hidden_ + j] += scale * r * h[j];
      dh[j] += r * W2[o * hidden_ + j];
    }
  }
  for (std::size_t j = 0; j < hidden_; ++j) {
    const double dz = dh[j] * (1.0 - h[j] * h[j]);
    gb1[j] += scale * dz;
    for (std::size_t i = 0; i < in_; ++i) gW1[j * in_ + i] += scale * dz * x[i];
  }
}

std::unique_ptr<MlpProblem> make_tiny_mlp(const std::vector<std::size_t>& layer_sizes,
                                          std::uint64_t seed, MlpOptions options) {
  if (layer_sizes.size() != 3 || layer_sizes[0] == 0 || layer_sizes[1] == 0 ||
      layer_sizes[2] == 0) {
    throw InvalidParams("mlp: layer sizes must be {inputs, hidden, outputs}, all > 0");
  }
  const std::size_t in = layer_sizes[0], hidden = layer_sizes[1], out = layer_sizes[2];
  const std::size_t params = hidden * in + hidden + out * hidden + out;
  if (params > 10'000) {
    throw InvalidParams("mlp: " + std::to_string(params) + " parameters exceed 1e4");
  }
  if (options.samples == 0) {
    throw InvalidParams("mlp: need at least one sample");
  }

  std::mt19937_64 rng(netsim::mix_seed(seed, 0x31f));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_params = [&]() {
    Vec w(params);
    std::size_t k = 0;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (std::size_t i = 0; i < hidden * in; ++i) w[k++] = s1 * normal(rng);
    for (std::size_t i = 0; i < hidden; ++i) w[k++] = 0.1 * normal(rng);
    for (std::size_t i = 0; i < out * hidden; ++i) w[k++] = s2 * normal(rng);
    for (std::size_t i = 0; i < out; ++i) w[k++] = 0.1 * normal(rng);
    return w;
  };

  const Vec teacher = random_params();
  const Vec init = random_params();

  std::vector<Vec> inputs(options.samples, Vec(in));
  for (auto& x : inputs) {
    for (auto& v : x) v = normal(rng);
  }
  std::vector<Vec> targets(options.samples, Vec(out, 0.0));
  if (!options.zero_targets) {
    // Label with a teacher network of the same shape.
    MlpProblem teacher_net(in, hidden, out, inputs, targets, teacher);
    Vec h;
    for (std::size_t e = 0; e < options.samples; ++e) {
      teacher_net.predict(e, teacher, h, targets[e]);
    }
  }
  return std::make_unique<MlpProblem>(in, hidden, out, std::move(inputs),
                                      std::move(targets), init);
}

}  // namespace wagma::problems
