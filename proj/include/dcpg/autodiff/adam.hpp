#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dcpg/autodiff/tape.hpp"

namespace dcpg {

struct AdamOptions {
  double lr = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are kept per parameter; each
// step consumes and clears the parameters' gradients.
class Adam {
 public:
  Adam(std::vector<Var> params, AdamOptions options = {}) : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
      if (!p.is_leaf() || !p.requires_grad()) throw std::invalid_argument("Adam: '" + p.name() + "' is not a parameter");
      first_.emplace_back(p.shape(), 0.0);
      second_.emplace_back(p.shape(), 0.0);
    }
  }

  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  long steps() const { return step_; }

  void step() {
    for (const auto& p : params_) {
      if (!p.has_grad()) throw TapeError("Adam::step: parameter '" + p.name() + "' has no gradient");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Var& p = params_[i];
      const Tensor& g = p.grad();
      Tensor& value = p.mutable_value();
      Tensor& m = first_[i];
      Tensor& v = second_[i];
      for (std::size_t k = 0; k < value.size(); ++k) {
        m[k] = options_.beta1 * m[k] + (1.0 - options_.beta1) * g[k];
        v[k] = options_.beta2 * v[k] + (1.0 - options_.beta2) * g[k] * g[k];
        value[k] -= options_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + options_.eps);
      }
      p.clear_grad();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.clear_grad();
  }

 private:
  std::vector<Var> params_;
  AdamOptions options_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  long step_ = 0;
};

}  // namespace dcpg
