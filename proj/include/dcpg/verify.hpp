#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dcpg/autodiff/adam.hpp"
#include "dcpg/autodiff/grad_check.hpp"
#include "dcpg/distributions.hpp"
#include "dcpg/encoders.hpp"
#include "dcpg/harness/train.hpp"
#include "dcpg/losses.hpp"
#include "dcpg/pg_attention.hpp"
#include "dcpg/rewards.hpp"

namespace dcpg {

inline constexpr double kGradTolerance = 1e-4;

// ---- gradient cases ---------------------------------------------------------

struct GradCase {
  std::string name;
  GraphBuilder f;
  std::vector<Tensor> inputs;
};

namespace detail {

inline Tensor gaussian(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0, double shift = 0.0) {
  Tensor t = standard_normal_noise(Shape{r, c}, rng);
  for (auto& v : t.values()) v = shift + scale * v;
  return t;
}

inline Tensor uniform(std::size_t r, std::size_t c, Rng& rng, double lo, double hi) {
  Tensor t(Shape{r, c});
  for (auto& v : t.values()) v = lo + (hi - lo) * uniform_open(rng);
  return t;
}

// Scalar readout sum(y * w) with fixed pseudo-random weights, so every output
// entry gets a distinct upstream gradient.
inline Var readout(const Var& y) {
  Rng rng(0xC0FFEE + y.value().size());
  Tensor w(y.shape());
  for (auto& v : w.values()) v = 0.5 + uniform_open(rng);
  return sum(mul(y, constant(std::move(w))));
}

struct TinyPolicy {
  std::size_t batch = 3, steps = 4, width = 5, hidden = 4;
  ActionSpace space{6, 0.8};
};

}  // namespace detail

// One case per differentiable op, plus composite graphs.
inline std::vector<GradCase> gradcheck_cases() {
  using detail::gaussian;
  using detail::readout;
  using detail::uniform;
  Rng rng(20240611);
  std::vector<GradCase> c;
  auto unary = [&](std::string name, std::function<Var(const Var&)> op, Tensor x) {
    c.push_back({std::move(name), [op](const std::vector<Var>& v) { return readout(op(v[0])); }, {std::move(x)}});
  };
  auto binary = [&](std::string name, std::function<Var(const Var&, const Var&)> op, Tensor a, Tensor b) {
    c.push_back({std::move(name), [op](const std::vector<Var>& v) { return readout(op(v[0], v[1])); },
                 {std::move(a), std::move(b)}});
  };

  binary("add", [](const Var& a, const Var& b) { return add(a, b); }, gaussian(3, 4, rng), gaussian(3, 4, rng));
  binary("add_broadcast_row", [](const Var& a, const Var& b) { return add(a, b); }, gaussian(3, 4, rng), gaussian(1, 4, rng));
  binary("add_broadcast_col", [](const Var& a, const Var& b) { return add(a, b); }, gaussian(3, 4, rng), gaussian(3, 1, rng));
  binary("sub", [](const Var& a, const Var& b) { return sub(a, b); }, gaussian(3, 4, rng), gaussian(3, 4, rng));
  binary("mul", [](const Var& a, const Var& b) { return mul(a, b); }, gaussian(3, 4, rng), gaussian(1, 1, rng));
  binary("div", [](const Var& a, const Var& b) { return div(a, b); }, gaussian(3, 4, rng), uniform(3, 4, rng, 0.5, 2.0));
  binary("matmul", [](const Var& a, const Var& b) { return matmul(a, b); }, gaussian(3, 5, rng), gaussian(5, 2, rng));
  binary("cosine_similarity", [](const Var& a, const Var& b) { return cosine_similarity(a, b); }, gaussian(3, 4, rng),
         gaussian(5, 4, rng));
  binary("concat_rows", [](const Var& a, const Var& b) { return concat({a, b}, 0); }, gaussian(2, 3, rng), gaussian(4, 3, rng));
  binary("concat_cols", [](const Var& a, const Var& b) { return concat({a, b}, 1); }, gaussian(3, 2, rng), gaussian(3, 4, rng));

  unary("scale", [](const Var& x) { return scale(x, -1.7); }, gaussian(2, 3, rng));
  unary("add_scalar", [](const Var& x) { return add_scalar(x, 0.3); }, gaussian(2, 3, rng));
  unary("neg", [](const Var& x) { return neg(x); }, gaussian(2, 3, rng));
  unary("sigmoid", [](const Var& x) { return sigmoid(x); }, gaussian(3, 4, rng, 2.0));
  unary("tanh", [](const Var& x) { return tanh(x); }, gaussian(3, 4, rng));
  unary("relu", [](const Var& x) { return relu(x); }, gaussian(3, 4, rng, 1.0, 0.1));
  unary("exp", [](const Var& x) { return exp(x); }, gaussian(3, 4, rng, 0.5));
  unary("log", [](const Var& x) { return log(x); }, uniform(3, 4, rng, 0.3, 3.0));
  unary("square", [](const Var& x) { return square(x); }, gaussian(3, 4, rng));
  unary("softplus", [](const Var& x) { return softplus(x); }, gaussian(3, 4, rng, 3.0));
  unary("transpose", [](const Var& x) { return transpose(x); }, gaussian(3, 4, rng));
  unary("sum", [](const Var& x) { return scale(sum(x), 1.0); }, gaussian(3, 4, rng));
  unary("mean", [](const Var& x) { return mean(x); }, gaussian(3, 4, rng));
  unary("sum_axis0", [](const Var& x) { return sum_axis(x, 0); }, gaussian(3, 4, rng));
  unary("sum_axis1", [](const Var& x) { return sum_axis(x, 1); }, gaussian(3, 4, rng));
  unary("softmax_axis0", [](const Var& x) { return softmax(x, 0); }, gaussian(3, 4, rng));
  unary("softmax_axis1", [](const Var& x) { return softmax(x, 1); }, gaussian(3, 4, rng));
  unary("log_softmax_axis0", [](const Var& x) { return log_softmax(x, 0); }, gaussian(3, 4, rng));
  unary("log_softmax_axis1", [](const Var& x) { return log_softmax(x, 1); }, gaussian(3, 4, rng));
  unary("gather_rows", [](const Var& x) { return gather_rows(x, {2, 0, 2, 1}); }, gaussian(3, 4, rng));
  unary("pick", [](const Var& x) { return pick(x, {3, 0, 1}); }, gaussian(3, 4, rng));
  unary("take", [](const Var& x) { return take(x, {0, 5, 5, 11}); }, gaussian(3, 4, rng));
  unary("shift_rows", [](const Var& x) { return shift_rows(x, 1, 3); }, gaussian(6, 2, rng));
  unary("normalize_rows", [](const Var& x) { return normalize_rows(x); }, gaussian(3, 4, rng));

  {
    Tensor g = gumbel_noise(Shape{2, 5}, rng);
    unary("gumbel_softmax", [g](const Var& x) { return gumbel_softmax(x, 0.7, g); }, gaussian(2, 5, rng));
  }
  c.push_back({"normal_logprob",
               [](const std::vector<Var>& v) { return readout(normal_logprob(v[0], v[1], v[2])); },
               {gaussian(3, 1, rng), gaussian(3, 1, rng), uniform(3, 1, rng, 0.3, 2.0)}});
  {
    Tensor eps = standard_normal_noise(Shape{3, 1}, rng);
    c.push_back({"normal_sample_reparam",
                 [eps](const std::vector<Var>& v) { return readout(sigmoid(normal_sample_reparam(v[0], v[1], eps))); },
                 {gaussian(3, 1, rng), uniform(3, 1, rng, 0.3, 2.0)}});
  }
  c.push_back({"discrete_logprob",
               [](const std::vector<Var>& v) { return readout(discrete_logprob(softmax(v[0], 1), {1, 4})); },
               {gaussian(2, 5, rng)}});
  c.push_back({"relaxed_label",
               [](const std::vector<Var>& v) { return readout(sigmoid(relaxed_label(softmax(v[0], 1), 4))); },
               {gaussian(2, 5, rng)}});

  {
    Rng prng(5);
    GruParams shape_of = GruParams::random(3, 4, prng);
    std::vector<Tensor> in{gaussian(2, 3, rng), gaussian(2, 4, rng, 0.5)};
    for (const Var& p : shape_of.parameters()) in.push_back(gaussian(p.value().rows(), p.value().cols(), rng, 0.5));
    c.push_back({"gru_step",
                 [](const std::vector<Var>& v) {
                   GruParams p{v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10]};
                   return readout(gru_step(v[0], v[1], p));
                 },
                 std::move(in)});
  }
  c.push_back({"region_affinity",
               [](const std::vector<Var>& v) { return readout(region_affinity(v[0], v[1], v[2])); },
               {gaussian(4, 3, rng), gaussian(3, 3, rng), gaussian(3, 3, rng)}});
  {
    const Tensor mask = block_diagonal_mask(2, 3);
    c.push_back({"gcn_reason",
                 [mask](const std::vector<Var>& v) {
                   return readout(gcn_reason(v[0], region_affinity(v[0], v[1], v[2]), v[3], &mask));
                 },
                 {gaussian(6, 3, rng), gaussian(3, 3, rng, 0.5), gaussian(3, 3, rng, 0.5), gaussian(3, 3, rng)}});
  }
  c.push_back({"embed_words",
               [](const std::vector<Var>& v) { return readout(embed_words({3, 0, 3, 2}, v[0])); },
               {gaussian(4, 3, rng)}});

  c.push_back({"triplet_loss", [](const std::vector<Var>& v) { return triplet_loss(v[0], 0.2); },
               {gaussian(4, 4, rng, 0.3)}});
  c.push_back({"instance_loss",
               [](const std::vector<Var>& v) { return instance_loss(v[0], {2, 0, 1, 2}, v[1]); },
               {gaussian(4, 3, rng), gaussian(3, 5, rng)}});
  {
    Rng prng(9);
    DecoderParams shape_of = DecoderParams::random(5, 3, 4, 4, prng);
    std::vector<Tensor> in{gaussian(2, 3, rng)};
    for (const Var& p : shape_of.parameters()) in.push_back(gaussian(p.value().rows(), p.value().cols(), rng, 0.5));
    c.push_back({"text_decoding_loss",
                 [](const std::vector<Var>& v) {
                   DecoderParams d;
                   d.vocab = 5;
                   d.token_embed = v[1];
                   d.condition = v[2];
                   d.bias1 = v[3];
                   d.bias2 = v[4];
                   d.out = v[5];
                   d.out_bias = v[6];
                   for (std::size_t k = 0; k < 3; ++k) {
                     d.conv1[k] = v[7 + k];
                     d.conv2[k] = v[10 + k];
                   }
                   return text_decoding_loss(v[0], {{1, 4, 0, 2}, {3, 3, 1, 0}}, d);
                 },
                 std::move(in)});
  }
  {
    const std::vector<double> adv{0.7, -0.2, 1.1};
    c.push_back({"discrete_pg_loss",
                 [adv](const std::vector<Var>& v) {
                   return discrete_pg_loss(discrete_logprob(softmax(v[0], 1), {0, 3, 2}), adv);
                 },
                 {gaussian(3, 4, rng)}});
    Tensor x = gaussian(3, 1, rng);
    c.push_back({"continuous_pg_loss",
                 [adv, x](const std::vector<Var>& v) {
                   Var sigma = add_scalar(softplus(v[1]), kSigmaFloor);
                   return continuous_pg_loss(normal_logprob(constant(x), sigmoid(v[0]), sigma), adv, false);
                 },
                 {gaussian(3, 1, rng), gaussian(3, 1, rng)}});
  }
  return c;
}

// Rollout -> fuse -> similarity -> triplet + both PG losses on a small policy,
// with relaxed labels and the drawn Normal values held fixed. Inputs: step
// features, policy GRU (9), w_mu, w_std, fusion GRU (9), text embedding.
inline GradCase composite_gradcheck_case(std::size_t heads = 1) {
  detail::TinyPolicy tp;
  Rng rng(77 + heads);
  std::vector<Tensor> in;
  // Small features keep lambda-scaled GRU inputs out of saturation, where
  // true gradients fall below the finite-difference noise floor.
  for (std::size_t t = 0; t < tp.steps; ++t) in.push_back(detail::gaussian(tp.batch, tp.width, rng, 0.05));
  Rng prng(3);
  const GruParams policy = GruParams::random(tp.width, tp.hidden, prng);
  for (const Var& p : policy.parameters()) in.push_back(detail::gaussian(p.value().rows(), p.value().cols(), rng, 0.5));
  for (std::size_t h = 0; h < heads; ++h) {
    in.push_back(detail::gaussian(tp.hidden, tp.space.categories(), rng));
    in.push_back(detail::gaussian(tp.hidden, 1, rng));
  }
  const GruParams fusion = GruParams::random(tp.width, tp.width, prng);
  for (const Var& p : fusion.parameters()) in.push_back(detail::gaussian(p.value().rows(), p.value().cols(), rng, 0.5));
  in.push_back(detail::gaussian(tp.batch, tp.width, rng));

  auto build = [tp, heads](const std::vector<Var>& v, const std::vector<Tensor>* held, std::vector<Tensor>* drawn) {
    std::size_t i = 0;
    std::vector<Var> steps(v.begin(), v.begin() + static_cast<long>(tp.steps));
    i = tp.steps;
    auto gru_at = [&](std::size_t at) {
      return GruParams{v[at], v[at + 1], v[at + 2], v[at + 3], v[at + 4], v[at + 5], v[at + 6], v[at + 7], v[at + 8]};
    };
    PolicyParams policy{gru_at(i), {}};
    i += 9;
    for (std::size_t h = 0; h < heads; ++h, i += 2) policy.heads.push_back({v[i], v[i + 1], Var{}});
    const GruParams fusion = gru_at(i);
    i += 9;
    const Var& text = v[i];

    Rng noise(1234);
    RolloutOptions opt{RolloutMode::stochastic, PgMode::compound, LabelForward::soft};
    opt.held_samples = held;
    AttentionTrace trace = policy_rollout(steps, policy, tp.space, &noise, opt);
    if (drawn) *drawn = trace.raw_samples();
    Var image = normalize_rows(fuse(steps, trace, 20.0, fusion));
    Var s = matmul(image, transpose(normalize_rows(text)));
    const std::vector<double> adv{0.9, -0.4, 0.25};
    return add(triplet_loss(s, 0.2),
               add(discrete_pg_loss(trace, adv), continuous_pg_loss(trace, adv)));
  };

  std::vector<Var> constants;
  for (const auto& t : in) constants.push_back(Var::constant(t));
  auto held = std::make_shared<std::vector<Tensor>>();
  build(constants, nullptr, held.get());
  const std::string name = heads == 1 ? "composite_rollout_fuse_loss" : "composite_two_head_rollout";
  return {name, [build, held](const std::vector<Var>& v) { return build(v, held.get(), nullptr); }, std::move(in)};
}

// Differences the full training objective of `m` on `batch` over every
// parameter accepted by `select`, holding random draws and sampled values fixed.
inline GradCheckResult model_grad_check(Model& m, const Batch& batch, std::uint64_t seed, double eps = 1e-5,
                                        const std::function<bool(const std::string&)>& select = {}) {
  HeldSamples held;
  {
    Rng rng(seed);
    Objective o = build_objective(m, batch, rng);
    if (o.encoded.image_trace) held.image = o.encoded.image_trace->raw_samples();
    if (o.encoded.text_trace) held.text = o.encoded.text_trace->raw_samples();
  }
  auto params = m.named_parameters();
  for (auto& [n, v] : params) v.clear_grad();
  {
    Tape tape;
    Tape::Scope scope(tape);
    Rng rng(seed);
    Objective o = build_objective(m, batch, rng, &held);
    tape.backward(o.total);
  }
  auto objective = [&] {
    Rng rng(seed);
    return build_objective(m, batch, rng, &held).total.item();
  };
  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& [name, var] = params[p];
    if (select && !select(name)) continue;
    for (std::size_t e = 0; e < var.value().size(); ++e) {
      const double x = var.value()[e];
      var.mutable_value()[e] = x + eps;
      const double up = objective();
      var.mutable_value()[e] = x - eps;
      const double down = objective();
      var.mutable_value()[e] = x;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = var.has_grad() ? var.grad()[e] : 0.0;
      const double err = std::abs(analytic - numeric) / std::max(1e-8, std::abs(numeric));
      if (err > result.max_relative_error) result = {err, p, e, analytic, numeric};
    }
  }
  for (auto& [n, v] : params) v.clear_grad();
  return result;
}

// A config small enough to difference every parameter quickly.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.classes = 4;
  c.regions = 3;
  c.tokens = 3;
  c.region_dim = 4;
  c.vocab = 5;
  c.word_dim = 3;
  c.hidden = 4;
  c.embed = 4;
  c.decoder_width = 3;
  c.decoder_hidden = 4;
  c.actions = 5;
  c.noise = 0.3;
  c.train_per_class = 1;
  c.batch = 4;
  c.epochs = 1;
  return c;
}

// Parameters whose gradient does not pass through the straight-through label.
inline bool downstream_of_labels(const std::string& name) {
  for (const char* prefix : {"image_fusion", "text_fusion", "classifier", "decoder"}) {
    if (name.rfind(prefix, 0) == 0) return true;
  }
  return name.find(".w_std") != std::string::npos;
}

// ---- suites -------------------------------------------------------------------

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyCheck {
  std::string name;
  std::function<std::pair<bool, std::string>()> run;
};

namespace detail {

inline std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

inline std::pair<bool, std::string> grad_verdict(const GradCheckResult& r) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "max rel err %.3g (input %zu entry %zu: analytic %.6g numeric %.6g)",
                r.max_relative_error, r.worst_input, r.worst_entry, r.analytic, r.numeric);
  return {r.max_relative_error < kGradTolerance, buf};
}

inline std::vector<VerifyCheck> gradcheck_suite() {
  std::vector<VerifyCheck> out;
  for (auto& gc : gradcheck_cases()) {
    out.push_back({gc.name, [gc] { return grad_verdict(grad_check_detailed(gc.f, gc.inputs)); }});
  }
  for (std::size_t heads : {1, 2}) {
    auto gc = composite_gradcheck_case(heads);
    out.push_back({gc.name, [gc] { return grad_verdict(grad_check_detailed(gc.f, gc.inputs)); }});
  }
  out.push_back({"constant_graph", [] {
                   GraphBuilder f = [](const std::vector<Var>&) { return scalar_constant(3.0); };
                   const double err = grad_check(f, {Tensor::matrix(2, 2, {1, 2, 3, 4})});
                   return std::pair{err == 0.0, fmt("max rel err %.3g", err)};
                 }});
  auto model_case = [](LabelForward label, bool all) {
    return [label, all] {
      ModelConfig cfg = tiny_model_config();
      cfg.label_forward = label;
      const SyntheticDataset data = generate_dataset(DatasetSpec::from_config(cfg));
      Model m = Model::create(cfg);
      std::vector<std::size_t> idx(cfg.classes);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      Batch batch = make_batch(data.train, idx);
      for (auto& v : batch.regions.values()) v *= 0.5;
      const auto r = model_grad_check(m, batch, 99, 1e-5,
                                      all ? std::function<bool(const std::string&)>{} : downstream_of_labels);
      return grad_verdict(r);
    };
  };
  out.push_back({"model_objective_relaxed_labels", model_case(LabelForward::soft, true)});
  out.push_back({"model_objective_hard_labels_downstream", model_case(LabelForward::hard, false)});
  return out;
}

inline std::vector<VerifyCheck> distributions_suite() {
  std::vector<VerifyCheck> out;
  out.push_back({"gumbel_max_frequencies", [] {
                   const std::vector<double> logits{1.0, 0.2, -0.5, 0.0, 2.0};
                   std::vector<double> p(logits.size());
                   double z = 0.0;
                   for (double l : logits) z += std::exp(l);
                   for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(logits[i]) / z;
                   Rng rng(11);
                   const std::size_t draws = 100000;
                   std::vector<double> freq(p.size());
                   for (std::size_t d = 0; d < draws; ++d) {
                     std::size_t best = 0;
                     double best_v = -INFINITY;
                     for (std::size_t i = 0; i < p.size(); ++i) {
                       const double v = logits[i] - std::log(-std::log(uniform_open(rng)));
                       if (v > best_v) best_v = v, best = i;
                     }
                     freq[best] += 1.0 / draws;
                   }
                   double worst = 0.0;
                   for (std::size_t i = 0; i < p.size(); ++i) worst = std::max(worst, std::abs(freq[i] - p[i]));
                   return std::pair{worst <= 0.01, fmt("max |freq - softmax| = %.4g", worst)};
                 }});
  out.push_back({"gumbel_softmax_simplex", [] {
                   Rng rng(12);
                   Var y = gumbel_softmax(constant(standard_normal_noise(Shape{50, 101}, rng)), 1.0, rng);
                   double worst = 0.0;
                   for (std::size_t r = 0; r < 50; ++r) {
                     double s = 0.0;
                     for (double v : y.value().row(r)) s += v;
                     worst = std::max(worst, std::abs(s - 1.0));
                   }
                   return std::pair{worst <= 1e-9, fmt("max |sum - 1| = %.3g", worst)};
                 }});
  out.push_back({"categorical_frequencies", [] {
                   const std::vector<double> p{0.1, 0.6, 0.0, 0.3};
                   Rng rng(13);
                   std::vector<double> freq(p.size());
                   for (int d = 0; d < 100000; ++d) freq[categorical_sample(p, rng)] += 1e-5;
                   double worst = 0.0;
                   for (std::size_t i = 0; i < p.size(); ++i) worst = std::max(worst, std::abs(freq[i] - p[i]));
                   return std::pair{worst <= 0.01 && freq[2] == 0.0, fmt("max |freq - p| = %.4g", worst)};
                 }});
  out.push_back({"normal_density_integrates_to_one", [] {
                   double worst = 0.0;
                   for (auto [mu, sigma] : {std::pair{0.0, 1.0}, {0.3, 0.05}, {-2.0, 3.0}}) {
                     const double lo = mu - 12 * sigma, hi = mu + 12 * sigma;
                     const std::size_t n = 20000;
                     const double h = (hi - lo) / n;
                     double s = 0.0;
                     for (std::size_t i = 0; i <= n; ++i) {
                       const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
                       s += w * std::exp(normal_logprob(lo + i * h, mu, sigma));
                     }
                     worst = std::max(worst, std::abs(s * h / 3.0 - 1.0));
                   }
                   return std::pair{worst <= 1e-6, fmt("max |integral - 1| = %.3g", worst)};
                 }});
  out.push_back({"action_to_mu_endpoints", [] {
                   const double lo = action_to_mu(0, 100), hi = action_to_mu(100, 100);
                   const double expect_hi = 1.0 / (1.0 + std::exp(-1.0));
                   const bool ok = lo == 0.5 && std::abs(hi - expect_hi) <= 1e-15 && std::abs(hi - 0.7311) < 1e-4;
                   return std::pair{ok, fmt("mu(0) = %.17g, mu(n) = %.17g", lo, hi)};
                 }});
  out.push_back({"normal_reparam_moments", [] {
                   Rng rng(14);
                   const double mu = 0.4, sigma = 0.7;
                   double s = 0.0, ss = 0.0;
                   const int n = 100000;
                   for (int i = 0; i < n; ++i) {
                     const double x = normal_sample_reparam(mu, sigma, rng);
                     s += x;
                     ss += x * x;
                   }
                   const double m = s / n, sd = std::sqrt(ss / n - m * m);
                   const bool ok = std::abs(m - mu) < 0.01 && std::abs(sd - sigma) < 0.01;
                   return std::pair{ok, fmt("mean %.4f, std %.4f", m, sd)};
                 }});
  return out;
}

// Exhaustive rank of `relevant` under a stable descending sort.
inline std::size_t brute_force_rank(const std::vector<double>& scores, std::size_t relevant) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), relevant) - order.begin()) + 1;
}

inline std::vector<VerifyCheck> metrics_suite() {
  std::vector<VerifyCheck> out;
  out.push_back({"ranking_permutations", [] {
                   std::size_t cases = 0, mismatches = 0;
                   for (std::size_t g = 1; g <= 6; ++g) {
                     std::vector<double> scores(g);
                     std::iota(scores.begin(), scores.end(), 0.0);
                     do {
                       for (std::size_t rel = 0; rel < g; ++rel, ++cases) {
                         const std::size_t rank = brute_force_rank(scores, rel);
                         const double r1 = rank == 1 ? 1.0 : 0.0;
                         const double ap = 1.0 / static_cast<double>(rank);
                         if (average_precision(scores, rel) != ap || (rank_of(scores, rel) == 1 ? 1.0 : 0.0) != r1) {
                           ++mismatches;
                         }
                       }
                     } while (std::next_permutation(scores.begin(), scores.end()));
                   }
                   return std::pair{mismatches == 0, std::to_string(cases) + " cases, " + std::to_string(mismatches) +
                                                         " mismatches"};
                 }});
  out.push_back({"ranking_ties", [] {
                   std::size_t cases = 0, mismatches = 0;
                   for (std::size_t g = 1; g <= 6; ++g) {
                     std::size_t total = 1;
                     for (std::size_t i = 0; i < g; ++i) total *= 3;
                     for (std::size_t code = 0; code < total; ++code) {
                       std::vector<double> scores(g);
                       for (std::size_t i = 0, c = code; i < g; ++i, c /= 3) scores[i] = static_cast<double>(c % 3);
                       for (std::size_t rel = 0; rel < g; ++rel, ++cases) {
                         if (average_precision(scores, rel) != 1.0 / static_cast<double>(brute_force_rank(scores, rel))) {
                           ++mismatches;
                         }
                       }
                     }
                   }
                   return std::pair{mismatches == 0, std::to_string(cases) + " cases, " + std::to_string(mismatches) +
                                                         " mismatches"};
                 }});
  out.push_back({"matrix_metrics_both_directions", [] {
                   Rng rng(21);
                   std::size_t mismatches = 0;
                   for (int trial = 0; trial < 200; ++trial) {
                     const std::size_t k = 2 + trial % 5;
                     Tensor t(Shape{k, k});
                     for (auto& v : t.values()) v = std::floor(uniform_open(rng) * 4.0);
                     SimilarityMatrix s{t};
                     for (std::size_t q = 0; q < k; ++q) {
                       std::vector<double> row(k), col(k);
                       for (std::size_t j = 0; j < k; ++j) row[j] = t.at(q, j), col[j] = t.at(j, q);
                       const std::size_t ri = brute_force_rank(row, q), rt = brute_force_rank(col, q);
                       if (recall_at_1(s, q, Direction::image_to_text) != (ri == 1 ? 1.0 : 0.0)) ++mismatches;
                       if (recall_at_1(s, q, Direction::text_to_image) != (rt == 1 ? 1.0 : 0.0)) ++mismatches;
                       if (average_precision(s, q, Direction::image_to_text) != 1.0 / ri) ++mismatches;
                       if (average_precision(s, q, Direction::text_to_image) != 1.0 / rt) ++mismatches;
                     }
                   }
                   return std::pair{mismatches == 0, std::to_string(mismatches) + " mismatches"};
                 }});
  out.push_back({"recall_at_k_nesting", [] {
                   Rng rng(22);
                   bool ok = true;
                   for (int trial = 0; trial < 50; ++trial) {
                     SimilarityMatrix s{standard_normal_noise(Shape{12, 12}, rng)};
                     for (auto dir : {Direction::image_to_text, Direction::text_to_image}) {
                       const double r1 = recall_at_k(s, 1, dir), r5 = recall_at_k(s, 5, dir), r10 = recall_at_k(s, 10, dir);
                       ok = ok && r1 <= r5 && r5 <= r10;
                     }
                   }
                   return std::pair{ok, std::string(ok ? "R@1 <= R@5 <= R@10 on 50 matrices" : "nesting violated")};
                 }});
  return out;
}

}  // namespace detail

struct BanditGradient {
  std::vector<double> sampled, analytic;
  double worst_relative = 0.0;
};

// Mean of the REINFORCE gradient of discrete_pg_loss over `samples` draws
// from softmax(logits), against sum_a p_a R_a d log p_a.
inline BanditGradient bandit_gradient(const std::vector<double>& logits, const std::vector<double>& rewards,
                                      std::size_t samples, std::uint64_t seed) {
  const std::size_t arms = logits.size();
  Var theta = Var::parameter(Tensor::matrix(1, arms, logits), "theta");
  Tape tape;
  Tape::Scope scope(tape);
  Var probs = softmax(theta, 1);
  Rng rng(seed);
  std::vector<std::size_t> arm(samples);
  std::vector<double> r(samples);
  for (std::size_t k = 0; k < samples; ++k) {
    arm[k] = categorical_sample(probs.value().row(0), rng);
    r[k] = rewards[arm[k]];
  }
  Var lp = discrete_logprob(gather_rows(probs, std::vector<std::size_t>(samples, 0)), arm);
  tape.backward(discrete_pg_loss(lp, r));

  BanditGradient out;
  const auto p = probs.value().row(0);
  double expected = 0.0;
  for (std::size_t i = 0; i < arms; ++i) expected += p[i] * rewards[i];
  for (std::size_t i = 0; i < arms; ++i) {
    out.sampled.push_back(-theta.grad()[i]);
    out.analytic.push_back(p[i] * (rewards[i] - expected));
    out.worst_relative = std::max(out.worst_relative, std::abs(out.sampled[i] - out.analytic[i]) / std::abs(out.analytic[i]));
  }
  return out;
}

// Trains a softmax bandit policy with the batch baseline and Adam; returns
// the best-arm probability after each step.
inline std::vector<double> bandit_training(const std::vector<double>& rewards, std::size_t steps, std::size_t batch,
                                           double lr, std::uint64_t seed) {
  const std::size_t arms = rewards.size();
  Var theta = Var::parameter(Tensor(Shape{1, arms}), "theta");
  Adam opt({theta}, AdamOptions{lr});
  Rng rng(seed);
  const std::size_t best = argmax(rewards);
  std::vector<double> trace;
  for (std::size_t s = 0; s < steps; ++s) {
    Tape tape;
    Tape::Scope scope(tape);
    Var probs = softmax(theta, 1);
    std::vector<std::size_t> arm(batch);
    std::vector<double> r(batch);
    for (std::size_t k = 0; k < batch; ++k) {
      arm[k] = categorical_sample(probs.value().row(0), rng);
      r[k] = rewards[arm[k]];
    }
    const auto adv = pg_baseline(r, 0.5);
    Var lp = discrete_logprob(gather_rows(probs, std::vector<std::size_t>(batch, 0)), arm);
    tape.backward(discrete_pg_loss(lp, adv));
    opt.step();
    trace.push_back(softmax(constant(theta.value()), 1).value()[best]);
  }
  return trace;
}

namespace detail {

inline std::vector<VerifyCheck> bandit_suite() {
  std::vector<VerifyCheck> out;
  out.push_back({"reinforce_gradient_unbiased", [] {
                   const auto g = bandit_gradient({-1.0, 0.0, 1.0}, {1.0, 0.5, 0.0}, 100000, 31);
                   char buf[200];
                   std::snprintf(buf, sizeof buf, "sampled [%.4f %.4f %.4f] analytic [%.4f %.4f %.4f], max rel %.3g",
                                 g.sampled[0], g.sampled[1], g.sampled[2], g.analytic[0], g.analytic[1], g.analytic[2],
                                 g.worst_relative);
                   return std::pair{g.worst_relative < 0.05, std::string(buf)};
                 }});
  out.push_back({"bandit_converges_to_best_arm", [] {
                   const auto trace = bandit_training({1.0, 0.5, 0.0}, 2000, 16, 0.05, 32);
                   const auto hit = std::find_if(trace.begin(), trace.end(), [](double p) { return p > 0.95; });
                   const bool ok = hit != trace.end() && trace.back() > 0.95;
                   return std::pair{ok, fmt("best-arm prob %.4f after 2000 steps, first > 0.95 at step %.0f", trace.back(),
                                            static_cast<double>(hit - trace.begin() + 1))};
                 }});
  return out;
}

inline std::vector<VerifyCheck> baseline_suite() {
  std::vector<VerifyCheck> out;
  out.push_back({"reference_batch", [] {
                   std::vector<double> b;
                   pg_baseline(std::vector<double>{1, 2, 3}, 0.5, &b);
                   const bool ok = b == std::vector<double>{2.5, 2.0, 1.5};
                   return std::pair{ok, fmt("baselines [%.17g %.17g ...]", b[0], b[1])};
                 }});
  out.push_back({"beta_one_advantages_sum_to_zero", [] {
                   Rng rng(41);
                   double worst = 0.0;
                   for (int trial = 0; trial < 1000; ++trial) {
                     std::vector<double> r(2 + trial % 31);
                     for (auto& v : r) v = 2.0 * uniform_open(rng);
                     const auto adv = pg_baseline(r, 1.0);
                     worst = std::max(worst, std::abs(std::accumulate(adv.begin(), adv.end(), 0.0)));
                   }
                   return std::pair{worst <= 1e-12, fmt("max |sum advantages| = %.3g", worst)};
                 }});
  return out;
}

}  // namespace detail

inline std::vector<std::string> verify_suite_names() { return {"gradcheck", "distributions", "metrics", "bandit", "baseline"}; }

inline std::vector<VerifyCheck> verify_suite(const std::string& name) {
  if (name == "gradcheck") return detail::gradcheck_suite();
  if (name == "distributions") return detail::distributions_suite();
  if (name == "metrics") return detail::metrics_suite();
  if (name == "bandit") return detail::bandit_suite();
  if (name == "baseline") return detail::baseline_suite();
  std::string known;
  for (const auto& n : verify_suite_names()) known += (known.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown verification suite '" + name + "' (known: " + known + ", all)");
}

inline std::vector<CheckResult> run_verify(const std::vector<std::string>& suites,
                                           const std::function<void(const CheckResult&)>& on_result = {}) {
  std::vector<std::string> names;
  for (const auto& s : suites) {
    if (s == "all") {
      for (const auto& n : verify_suite_names()) names.push_back(n);
    } else {
      verify_suite(s);
      names.push_back(s);
    }
  }
  std::vector<CheckResult> out;
  for (const auto& suite : names) {
    for (const auto& check : verify_suite(suite)) {
      CheckResult r;
      r.suite = suite;
      r.name = check.name;
      const auto start = std::chrono::steady_clock::now();
      try {
        std::tie(r.passed, r.detail) = check.run();
      } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("threw: ") + e.what();
      }
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (on_result) on_result(r);
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace dcpg
