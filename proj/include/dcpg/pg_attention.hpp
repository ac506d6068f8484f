#pragma once

#include <string>
#include <vector>

#include "dcpg/autodiff/ops.hpp"
#include "dcpg/distributions.hpp"
#include "dcpg/encoders.hpp"

namespace dcpg {

enum class RolloutMode { stochastic, deterministic };

// Which parts of the compound action law are active.
//   compound:        label ~ Cat, mu = logistic(label / n), raw ~ N(mu, sigma), att = sigmoid(raw)
//   discrete_only:   att = logistic(label / n), no Normal stage
//   continuous_only: mu = sigmoid(h w_mean), raw ~ N(mu, sigma), att = sigmoid(raw)
//   off:             no policy; attention is the neutral 1 / lambda
enum class PgMode { off, discrete_only, continuous_only, compound };

// Forward value of the label fed to the mean map. `hard` is the sampled label
// with a straight-through gradient; `soft` uses the relaxed expectation in both
// passes, which makes the whole graph smooth for finite-difference checks.
enum class LabelForward { hard, soft };

inline bool uses_discrete(PgMode m) { return m == PgMode::compound || m == PgMode::discrete_only; }
inline bool uses_continuous(PgMode m) { return m == PgMode::compound || m == PgMode::continuous_only; }

inline constexpr double kSigmaFloor = 1e-3;

struct PolicyHead {
  Var w_mu;    // hidden x (n + 1) logits
  Var w_std;   // hidden x 1
  Var w_mean;  // hidden x 1, single-Gaussian mean head
};

struct PolicyParams {
  GruParams gru;
  std::vector<PolicyHead> heads;

  std::size_t head_count() const { return heads.size(); }

  static PolicyParams random(std::size_t input, std::size_t hidden, const ActionSpace& space, std::size_t head_count,
                             Rng& rng, const std::string& name = "policy") {
    if (head_count != 1 && head_count != 2) {
      throw ParameterError("PolicyParams: head count must be 1 or 2, got " + std::to_string(head_count));
    }
    PolicyParams p;
    p.gru = GruParams::random(input, hidden, rng, name + ".gru");
    for (std::size_t h = 0; h < head_count; ++h) {
      const std::string tag = name + ".head" + std::to_string(h);
      Tensor w_mu = uniform_init(hidden, space.categories(), rng);
      Tensor w_std = uniform_init(hidden, 1, rng);
      Tensor w_mean = uniform_init(hidden, 1, rng);
      p.heads.push_back({Var::parameter(std::move(w_mu), tag + ".w_mu"), Var::parameter(std::move(w_std), tag + ".w_std"),
                         Var::parameter(std::move(w_mean), tag + ".w_mean")});
    }
    return p;
  }

  std::vector<Var> parameters(PgMode mode) const {
    std::vector<Var> out;
    if (mode == PgMode::off) return out;
    out = gru.parameters();
    for (const auto& h : heads) {
      if (uses_discrete(mode)) out.push_back(h.w_mu);
      if (uses_continuous(mode)) out.push_back(h.w_std);
      if (mode == PgMode::continuous_only) out.push_back(h.w_mean);
    }
    return out;
  }
};

// What one head drew at one timestep, for every episode in the batch.
struct HeadStep {
  Tensor logits;                      // B x (n + 1), empty without a discrete stage
  Tensor soft_probs;                  // B x (n + 1)
  std::vector<std::size_t> hard_index;
  Tensor mu, sigma, raw;              // B x 1
  Var att;                            // B x 1, differentiable
  Var discrete_logprob;               // B x 1, invalid without a discrete stage
  Var continuous_logprob;             // B x 1, invalid without a Normal stage
};

struct TraceStep {
  std::vector<HeadStep> heads;
  Var att;  // B x 1, mean over heads
};

// One batch of MDP episodes: an episode per row, a step per region or token.
struct AttentionTrace {
  std::vector<TraceStep> steps;
  Var discrete_logprob_sum;    // B x 1
  Var continuous_logprob_sum;  // B x 1
  RolloutMode mode = RolloutMode::stochastic;
  PgMode pg = PgMode::compound;
  std::size_t batch = 0;

  std::size_t length() const { return steps.size(); }

  // Raw Normal draws in step-major, head-minor order.
  std::vector<Tensor> raw_samples() const {
    std::vector<Tensor> out;
    for (const auto& s : steps) {
      for (const auto& h : s.heads) out.push_back(h.raw);
    }
    return out;
  }

  std::vector<Var> attention() const {
    std::vector<Var> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.att);
    return out;
  }

  CompoundSample sample(std::size_t episode, std::size_t t, std::size_t head = 0) const {
    const HeadStep& h = steps.at(t).heads.at(head);
    CompoundSample s;
    if (!h.hard_index.empty()) {
      auto row = h.soft_probs.row(episode);
      s.soft_probs.assign(row.begin(), row.end());
      s.hard_index = h.hard_index[episode];
      s.discrete_logprob = h.discrete_logprob.value()[episode];
    }
    s.mu = h.mu[episode];
    if (h.continuous_logprob.valid()) {
      s.sigma = h.sigma[episode];
      s.raw_sample = h.raw[episode];
      s.continuous_logprob = h.continuous_logprob.value()[episode];
    }
    s.att = h.att.value()[episode];
    return s;
  }
};

struct RolloutOptions {
  RolloutMode mode = RolloutMode::stochastic;
  PgMode pg = PgMode::compound;
  LabelForward label = LabelForward::hard;
  // Every head replays the same random draws at a step (degenerate-head checks).
  bool share_head_noise = false;
  // Drawn values the continuous log-density is evaluated at, one B x 1 tensor
  // per (step, head) in step-major order. Used to hold samples fixed while
  // differencing the surrogate loss.
  const std::vector<Tensor>* held_samples = nullptr;
};

namespace detail {

inline Var add_or_init(const Var& acc, const Var& term) { return acc.valid() ? add(acc, term) : term; }

inline HeadStep sample_head(const Var& h, const PolicyHead& head, const ActionSpace& space, const RolloutOptions& opt,
                            Rng* rng, const Tensor* held = nullptr) {
  const std::size_t batch = h.value().rows();
  const bool stochastic = opt.mode == RolloutMode::stochastic;
  HeadStep out;
  Var mu;
  if (uses_discrete(opt.pg)) {
    Var logits = matmul(h, head.w_mu);
    Var probs = stochastic ? gumbel_softmax(logits, space.temperature, *rng) : softmax(logits, 1);
    out.hard_index.resize(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      out.hard_index[b] = stochastic ? categorical_sample(probs.value().row(b), *rng) : argmax(probs.value().row(b));
    }
    out.discrete_logprob = discrete_logprob(probs, out.hard_index);
    Var label = opt.label == LabelForward::hard ? straight_through(out.hard_index, probs, space.n)
                                                : relaxed_label(probs, space.n);
    mu = sigmoid(label);
    out.logits = logits.value();
    out.soft_probs = probs.value();
  } else {
    mu = sigmoid(matmul(h, head.w_mean));
  }
  out.mu = mu.value();

  if (uses_continuous(opt.pg)) {
    Var sigma = add_scalar(softplus(matmul(h, head.w_std)), kSigmaFloor);
    Var raw = stochastic ? normal_sample_reparam(mu, sigma, standard_normal_noise(mu.shape(), *rng)) : mu;
    // The score-function term treats the drawn value as a constant.
    out.continuous_logprob = normal_logprob(held ? constant(*held) : detach(raw), mu, sigma);
    out.att = stochastic ? sigmoid(raw) : sigmoid(mu);
    out.sigma = sigma.value();
    out.raw = raw.value();
  } else {
    out.att = mu;
  }
  return out;
}

}  // namespace detail

// Rolls the GRU policy over `features` (one B x p matrix per timestep) from a
// zero hidden state, drawing a compound action per step and head.
inline AttentionTrace policy_rollout(const std::vector<Var>& features, const PolicyParams& params,
                                     const ActionSpace& space, Rng* rng, const RolloutOptions& opt = {}) {
  if (features.empty()) throw ShapeError("policy_rollout: empty feature sequence");
  if (params.head_count() != 1 && params.head_count() != 2) {
    throw ParameterError("policy_rollout: head count must be 1 or 2, got " + std::to_string(params.head_count()));
  }
  if (opt.pg == PgMode::off) throw ParameterError("policy_rollout: policy gradient mode is off");
  if (opt.mode == RolloutMode::stochastic && rng == nullptr) {
    throw ParameterError("policy_rollout: stochastic mode needs an RNG");
  }
  space.validate();
  if (opt.held_samples && opt.held_samples->size() != features.size() * params.head_count()) {
    throw ShapeError("policy_rollout: held sample count does not match steps x heads");
  }
  const std::size_t batch = features.front().value().rows();
  AttentionTrace trace;
  trace.mode = opt.mode;
  trace.pg = opt.pg;
  trace.batch = batch;

  Var h = constant(Tensor(Shape{batch, params.gru.hidden_size()}));
  for (const Var& x : features) {
    if (x.value().rows() != batch) throw ShapeError("policy_rollout: inconsistent batch extent across timesteps");
    h = gru_step(x, h, params.gru);
    TraceStep step;
    const Rng snapshot = rng ? *rng : Rng{};
    for (std::size_t k = 0; k < params.head_count(); ++k) {
      if (opt.share_head_noise && rng) *rng = snapshot;
      const Tensor* held = opt.held_samples ? &(*opt.held_samples)[trace.steps.size() * params.head_count() + k] : nullptr;
      step.heads.push_back(detail::sample_head(h, params.heads[k], space, opt, rng, held));
      const HeadStep& hs = step.heads.back();
      step.att = detail::add_or_init(step.att, hs.att);
      if (hs.discrete_logprob.valid())
        trace.discrete_logprob_sum = detail::add_or_init(trace.discrete_logprob_sum, hs.discrete_logprob);
      if (hs.continuous_logprob.valid())
        trace.continuous_logprob_sum = detail::add_or_init(trace.continuous_logprob_sum, hs.continuous_logprob);
    }
    if (params.head_count() > 1) step.att = scale(step.att, 1.0 / static_cast<double>(params.head_count()));
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

inline AttentionTrace multi_head_rollout(const std::vector<Var>& features, const PolicyParams& params,
                                         const ActionSpace& space, Rng* rng, const RolloutOptions& opt = {}) {
  if (params.head_count() != 2) {
    throw ParameterError("multi_head_rollout: expected 2 heads, got " + std::to_string(params.head_count()));
  }
  return policy_rollout(features, params, space, rng, opt);
}

// Neutral attention 1 / lambda for every step, leaving features unscaled.
inline std::vector<Var> neutral_attention(std::size_t batch, std::size_t steps, double lambda) {
  return std::vector<Var>(steps, constant(Tensor(Shape{batch, 1}, 1.0 / lambda)));
}

// Scales each step's features by lambda * att, runs `step` over the adjusted
// sequence from a zero state and returns final state + mean adjusted feature.
template <class Step>
Var fuse(const std::vector<Var>& features, const std::vector<Var>& attention, double lambda, Step&& step,
         std::size_t hidden_size) {
  if (features.size() != attention.size()) {
    throw ShapeError("fuse: " + std::to_string(features.size()) + " features but " +
                     std::to_string(attention.size()) + " attention steps");
  }
  if (features.empty()) throw ShapeError("fuse: empty feature sequence");
  if (!(lambda > 0.0)) throw ParameterError("fuse: lambda must be > 0");
  const std::size_t batch = features.front().value().rows();
  Var h = constant(Tensor(Shape{batch, hidden_size}));
  Var total;
  for (std::size_t t = 0; t < features.size(); ++t) {
    Var adjusted = mul(features[t], scale(attention[t], lambda));
    h = step(adjusted, h);
    total = detail::add_or_init(total, adjusted);
  }
  return add(h, scale(total, 1.0 / static_cast<double>(features.size())));
}

inline Var fuse(const std::vector<Var>& features, const std::vector<Var>& attention, double lambda,
                const GruParams& gru) {
  if (!features.empty() && features.front().value().cols() != gru.hidden_size()) {
    throw ShapeError("fuse: feature width " + std::to_string(features.front().value().cols()) +
                     " differs from fusion hidden size " + std::to_string(gru.hidden_size()));
  }
  return fuse(
      features, attention, lambda, [&gru](const Var& x, const Var& h) { return gru_step(x, h, gru); },
      gru.hidden_size());
}

inline Var fuse(const std::vector<Var>& features, const AttentionTrace& trace, double lambda, const GruParams& gru) {
  return fuse(features, trace.attention(), lambda, gru);
}

}  // namespace dcpg
