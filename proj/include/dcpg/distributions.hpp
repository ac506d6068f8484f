#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcpg/autodiff/ops.hpp"

namespace dcpg {

using Rng = std::mt19937_64;

inline constexpr double kHalfLogTwoPi = 0.91893853320467274178;

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Discrete action labels run 0..n inclusive, so the policy emits n + 1
// logits while n stays the divisor of the label -> mean map.
struct ActionSpace {
  std::size_t n = 100;
  double temperature = 1.0;

  std::size_t categories() const { return n + 1; }

  void validate() const {
    if (n < 2) throw ParameterError("ActionSpace: n must be >= 2, got " + std::to_string(n));
    if (!(temperature > 0.0)) throw ParameterError("ActionSpace: temperature must be > 0");
  }
};

// One timestep of the compound action draw for one episode.
struct CompoundSample {
  std::vector<double> soft_probs;
  std::size_t hard_index = 0;
  double discrete_logprob = 0.0;
  double mu = 0.0;
  double sigma = 0.0;
  double raw_sample = 0.0;
  double att = 0.0;
  double continuous_logprob = 0.0;
};

inline double uniform_open(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x = u(rng);
  while (x <= 0.0) x = u(rng);
  return x;
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

inline Tensor gumbel_noise(const Shape& shape, Rng& rng) {
  Tensor g(shape);
  for (auto& v : g.values()) v = -std::log(-std::log(uniform_open(rng)));
  return g;
}

inline Tensor standard_normal_noise(const Shape& shape, Rng& rng) {
  Tensor e(shape);
  for (auto& v : e.values()) v = standard_normal(rng);
  return e;
}

// Relaxed categorical draw: softmax((logits + g) / temperature) along the last
// axis with g ~ Gumbel(0, 1). Differentiable in the logits.
inline Var gumbel_softmax(const Var& logits, double temperature, const Tensor& gumbel) {
  if (!(temperature > 0.0)) throw ParameterError("gumbel_softmax: temperature must be > 0");
  return softmax(scale(add(logits, constant(gumbel)), 1.0 / temperature), static_cast<int>(logits.value().rank()) - 1);
}

inline Var gumbel_softmax(const Var& logits, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw ParameterError("gumbel_softmax: temperature must be > 0");
  return gumbel_softmax(logits, temperature, gumbel_noise(logits.shape(), rng));
}

inline void validate_simplex(std::span<const double> probs) {
  if (probs.empty()) throw ParameterError("categorical: empty probability vector");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ParameterError("categorical: negative or NaN probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ParameterError("categorical: probabilities sum to " + std::to_string(total) + ", expected 1");
  }
}

// Inverse-CDF draw; index i is returned with probability probs[i].
inline std::size_t categorical_sample(std::span<const double> probs, Rng& rng) {
  validate_simplex(probs);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_positive = i;
    if (x < acc) return i;
  }
  return last_positive;
}

inline std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

inline double discrete_logprob(std::span<const double> probs, std::size_t index) {
  if (index >= probs.size()) throw ParameterError("discrete_logprob: index out of range");
  if (!(probs[index] > 0.0)) throw DomainError("discrete_logprob: zero probability at the sampled index");
  return std::log(probs[index]);
}

// Per-row log-probability of the chosen index, shape rows x 1.
inline Var discrete_logprob(const Var& probs, const std::vector<std::size_t>& index) {
  const Tensor& p = probs.value();
  for (std::size_t r = 0; r < index.size() && r < p.rows(); ++r) {
    if (index[r] < p.cols() && !(p.at(r, index[r]) > 0.0)) {
      throw DomainError("discrete_logprob: zero probability at the sampled index");
    }
  }
  return log(pick(probs, index));
}

inline double action_to_mu(std::size_t index, std::size_t n) {
  if (n == 0 || index > n) {
    throw ParameterError("action_to_mu: index " + std::to_string(index) + " outside [0, " + std::to_string(n) + "]");
  }
  return detail::stable_sigmoid(static_cast<double>(index) / static_cast<double>(n));
}

// Differentiable label/n input for the mean map. The forward value is the
// hard label over n; the backward pass follows sum_i (i/n) * soft_probs[i].
inline Var straight_through(const std::vector<std::size_t>& hard_index, const Var& soft_probs, std::size_t n) {
  const std::size_t m = soft_probs.value().cols();
  Tensor ramp(Shape{m, 1});
  for (std::size_t i = 0; i < m; ++i) ramp[i] = static_cast<double>(i) / static_cast<double>(n);
  Var expected = matmul(soft_probs, constant(std::move(ramp)));
  Tensor hard(expected.shape());
  for (std::size_t r = 0; r < hard_index.size(); ++r) hard[r] = static_cast<double>(hard_index[r]) / static_cast<double>(n);
  return straight_through(expected, std::move(hard));
}

// Soft alternative used when the hard forward value is disabled: the relaxed
// expectation sum_i (i/n) * soft_probs[i] in both passes.
inline Var relaxed_label(const Var& soft_probs, std::size_t n) {
  const std::size_t m = soft_probs.value().cols();
  Tensor ramp(Shape{m, 1});
  for (std::size_t i = 0; i < m; ++i) ramp[i] = static_cast<double>(i) / static_cast<double>(n);
  return matmul(soft_probs, constant(std::move(ramp)));
}

inline void validate_sigma(const Tensor& sigma) {
  for (double s : sigma.values()) {
    if (!(s > 0.0)) throw ParameterError("normal: sigma must be > 0, got " + std::to_string(s));
  }
}

// Reparameterized Normal draw mu + sigma * eps for a fixed standard-normal eps.
inline Var normal_sample_reparam(const Var& mu, const Var& sigma, const Tensor& eps) {
  validate_sigma(sigma.value());
  return add(mu, mul(sigma, constant(eps)));
}

inline double normal_sample_reparam(double mu, double sigma, Rng& rng) {
  if (!(sigma > 0.0)) throw ParameterError("normal: sigma must be > 0, got " + std::to_string(sigma));
  return mu + sigma * standard_normal(rng);
}

inline double normal_logprob(double x, double mu, double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("normal: sigma must be > 0, got " + std::to_string(sigma));
  const double z = (x - mu) / sigma;
  return -kHalfLogTwoPi - std::log(sigma) - 0.5 * z * z;
}

// log N(x; mu, sigma^2) elementwise, differentiable in all three arguments.
inline Var normal_logprob(const Var& x, const Var& mu, const Var& sigma) {
  validate_sigma(sigma.value());
  Var z = div(sub(x, mu), sigma);
  return sub(add_scalar(neg(log(sigma)), -kHalfLogTwoPi), scale(square(z), 0.5));
}

}  // namespace dcpg
