#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcpg/autodiff/ops.hpp"
#include "dcpg/encoders.hpp"
#include "dcpg/pg_attention.hpp"

namespace dcpg {

namespace detail {

inline Var advantage_weighted(const Var& logprob_sum, std::span<const double> advantages, bool batch_mean,
                              const char* op) {
  if (!logprob_sum.valid()) throw ParameterError(std::string(op) + ": trace carries no log-probabilities");
  const std::size_t k = logprob_sum.value().rows();
  if (advantages.size() != k) {
    throw ShapeError(std::string(op) + ": " + std::to_string(advantages.size()) + " advantages for " +
                     std::to_string(k) + " episodes");
  }
  Tensor adv(Shape{k, 1});
  for (std::size_t i = 0; i < k; ++i) adv[i] = advantages[i];
  Var weighted = sum(mul(logprob_sum, constant(std::move(adv))));
  return scale(weighted, batch_mean ? -1.0 / static_cast<double>(k) : -1.0);
}

}  // namespace detail

// REINFORCE loss over episode log-probability sums (one row per episode):
// -(1/K) sum_k advantage_k * logprob_k. Advantages are constants.
inline Var discrete_pg_loss(const Var& logprob_sum, std::span<const double> advantages, bool batch_mean = true) {
  return detail::advantage_weighted(logprob_sum, advantages, batch_mean, "discrete_pg_loss");
}

inline Var discrete_pg_loss(const AttentionTrace& trace, std::span<const double> advantages, bool batch_mean = true) {
  return discrete_pg_loss(trace.discrete_logprob_sum, advantages, batch_mean);
}

inline Var continuous_pg_loss(const Var& logprob_sum, std::span<const double> advantages, bool batch_mean = true) {
  return detail::advantage_weighted(logprob_sum, advantages, batch_mean, "continuous_pg_loss");
}

inline Var continuous_pg_loss(const AttentionTrace& trace, std::span<const double> advantages, bool batch_mean = true) {
  return continuous_pg_loss(trace.continuous_logprob_sum, advantages, batch_mean);
}

// Hinge triplet loss with the hardest in-batch negative for each anchor in
// both directions, averaged over the K matching pairs on the diagonal.
inline Var triplet_loss(const Var& similarity, double margin = 0.2) {
  const Tensor& s = similarity.value();
  const std::size_t k = s.rows();
  if (s.cols() != k) throw ShapeError("triplet_loss: similarity must be square, got " + to_string(s.shape()));
  if (k < 2) throw ParameterError("triplet_loss: need at least 2 pairs");
  std::vector<std::size_t> diag(k), row_neg(k), col_neg(k);
  for (std::size_t a = 0; a < k; ++a) {
    diag[a] = a * k + a;
    std::size_t best_j = a == 0 ? 1 : 0;
    std::size_t best_i = best_j;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == a) continue;
      if (s.at(a, j) > s.at(a, best_j)) best_j = j;
      if (s.at(j, a) > s.at(best_i, a)) best_i = j;
    }
    row_neg[a] = a * k + best_j;
    col_neg[a] = best_i * k + a;
  }
  Var pos = take(similarity, diag);
  Var text_hinge = relu(add_scalar(sub(take(similarity, row_neg), pos), margin));
  Var image_hinge = relu(add_scalar(sub(take(similarity, col_neg), pos), margin));
  return scale(add(sum(text_hinge), sum(image_hinge)), 1.0 / static_cast<double>(k));
}

// Mean softmax cross-entropy of embeddings . classifier at the given labels.
inline Var instance_loss(const Var& embeddings, const std::vector<std::size_t>& labels, const Var& classifier) {
  const std::size_t classes = classifier.value().cols();
  if (labels.size() != embeddings.value().rows()) throw ShapeError("instance_loss: label count differs from batch");
  for (auto l : labels) {
    if (l >= classes) {
      throw ShapeError("instance_loss: label " + std::to_string(l) + " outside " + std::to_string(classes) + " classes");
    }
  }
  Var logp = log_softmax(matmul(embeddings, classifier), 1);
  return neg(mean(pick(logp, labels)));
}

// Two-layer causal convolutional decoder (kernel 3) conditioned on a sentence
// or image embedding. One instance is shared by both branches.
struct DecoderParams {
  static constexpr std::size_t kKernel = 3;

  std::size_t vocab = 0;
  Var token_embed;                      // (vocab + 1) x width; last row is the start token
  std::array<Var, kKernel> conv1;       // width x hidden
  Var condition;                        // embed x hidden
  Var bias1;                            // 1 x hidden
  std::array<Var, kKernel> conv2;       // hidden x hidden
  Var bias2;                            // 1 x hidden
  Var out;                              // hidden x vocab
  Var out_bias;                         // 1 x vocab

  static DecoderParams random(std::size_t vocab, std::size_t embed, std::size_t width, std::size_t hidden, Rng& rng) {
    DecoderParams d;
    d.vocab = vocab;
    d.token_embed = Var::parameter(uniform_init(vocab + 1, width, rng), "decoder.token_embed");
    for (std::size_t k = 0; k < kKernel; ++k) {
      d.conv1[k] = Var::parameter(uniform_init(width, hidden, rng), "decoder.conv1." + std::to_string(k));
      d.conv2[k] = Var::parameter(uniform_init(hidden, hidden, rng), "decoder.conv2." + std::to_string(k));
    }
    d.condition = Var::parameter(uniform_init(embed, hidden, rng), "decoder.condition");
    d.bias1 = Var::parameter(Tensor(Shape{1, hidden}), "decoder.bias1");
    d.bias2 = Var::parameter(Tensor(Shape{1, hidden}), "decoder.bias2");
    d.out = Var::parameter(Tensor(Shape{hidden, vocab}), "decoder.out");
    d.out_bias = Var::parameter(Tensor(Shape{1, vocab}), "decoder.out_bias");
    return d;
  }

  std::vector<Var> parameters() const {
    std::vector<Var> p{token_embed, condition, bias1, bias2, out, out_bias};
    p.insert(p.end(), conv1.begin(), conv1.end());
    p.insert(p.end(), conv2.begin(), conv2.end());
    return p;
  }
};

// Teacher-forced next-token cross-entropy, averaged over every target token
// of every sequence. `embeddings` holds one conditioning row per sequence.
inline Var text_decoding_loss(const Var& embeddings, const std::vector<std::vector<std::size_t>>& targets,
                              const DecoderParams& dec) {
  const std::size_t batch = targets.size();
  if (batch == 0 || targets.front().empty()) throw ParameterError("text_decoding_loss: empty target sequence");
  if (embeddings.value().rows() != batch) throw ShapeError("text_decoding_loss: one embedding per target expected");
  const std::size_t len = targets.front().size();
  std::vector<std::size_t> inputs, flat, owner;
  inputs.reserve(batch * len);
  for (std::size_t b = 0; b < batch; ++b) {
    if (targets[b].size() != len) throw ShapeError("text_decoding_loss: ragged target batch");
    for (std::size_t i = 0; i < len; ++i) {
      if (targets[b][i] >= dec.vocab) throw ShapeError("text_decoding_loss: target token outside vocabulary");
      inputs.push_back(i == 0 ? dec.vocab : targets[b][i - 1]);
      flat.push_back(targets[b][i]);
      owner.push_back(b);
    }
  }
  Var x = gather_rows(dec.token_embed, inputs);
  Var cond = gather_rows(matmul(embeddings, dec.condition), owner);

  Var pre1 = add(cond, dec.bias1);
  for (std::size_t k = 0; k < DecoderParams::kKernel; ++k) {
    pre1 = add(pre1, matmul(k == 0 ? x : shift_rows(x, k, len), dec.conv1[k]));
  }
  Var h1 = relu(pre1);
  Var pre2 = dec.bias2;
  for (std::size_t k = 0; k < DecoderParams::kKernel; ++k) {
    pre2 = add(pre2, matmul(k == 0 ? h1 : shift_rows(h1, k, len), dec.conv2[k]));
  }
  Var h2 = add(relu(pre2), h1);
  Var logp = log_softmax(add(matmul(h2, dec.out), dec.out_bias), 1);
  return neg(mean(pick(logp, flat)));
}

struct LossTerms {
  Var triplet, instance, decode_image, decode_text;
  Var pg_discrete_image, pg_continuous_image, pg_discrete_text, pg_continuous_text;

  std::array<const Var*, 8> all() const {
    return {&triplet, &instance, &decode_image, &decode_text,
            &pg_discrete_image, &pg_continuous_image, &pg_discrete_text, &pg_continuous_text};
  }
};

struct LossBundle {
  double triplet = 0, instance = 0, decode_image = 0, decode_text = 0;
  double pg_discrete_image = 0, pg_continuous_image = 0, pg_discrete_text = 0, pg_continuous_text = 0;
  double total = 0;

  static constexpr std::array<const char*, 9> kNames{"triplet", "instance", "decode_image", "decode_text",
                                                     "pg_discrete_image", "pg_continuous_image", "pg_discrete_text",
                                                     "pg_continuous_text", "total"};

  std::array<double, 9> values() const {
    return {triplet, instance, decode_image, decode_text, pg_discrete_image,
            pg_continuous_image, pg_discrete_text, pg_continuous_text, total};
  }
};

// Unweighted sum of the enabled terms; disabled (invalid) terms count as 0.
inline std::pair<Var, LossBundle> total_loss(const LossTerms& terms) {
  Var total;
  LossBundle b;
  std::array<double*, 8> slots{&b.triplet, &b.instance, &b.decode_image, &b.decode_text,
                               &b.pg_discrete_image, &b.pg_continuous_image, &b.pg_discrete_text,
                               &b.pg_continuous_text};
  const auto vars = terms.all();
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (!vars[i]->valid()) continue;
    *slots[i] = vars[i]->item();
    total = total.valid() ? add(total, *vars[i]) : *vars[i];
  }
  if (!total.valid()) total = scalar_constant(0.0);
  b.total = total.item();
  return {total, b};
}

}  // namespace dcpg
