#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dcpg/autodiff/ops.hpp"
#include "dcpg/distributions.hpp"

namespace dcpg {

inline Tensor uniform_init(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(Shape{rows, cols});
  for (auto& v : t.values()) v = u(rng);
  return t;
}

struct GruParams {
  Var w_z, u_z, b_z;
  Var w_r, u_r, b_r;
  Var w_h, u_h, b_h;

  std::size_t input_size() const { return w_z.value().rows(); }
  std::size_t hidden_size() const { return u_z.value().rows(); }

  static GruParams zeros(std::size_t input, std::size_t hidden, const std::string& name = "gru") {
    auto p = [&](std::size_t r, std::size_t c, const char* part) {
      return Var::parameter(Tensor(Shape{r, c}), name + "." + part);
    };
    return {p(input, hidden, "w_z"), p(hidden, hidden, "u_z"), p(1, hidden, "b_z"),
            p(input, hidden, "w_r"), p(hidden, hidden, "u_r"), p(1, hidden, "b_r"),
            p(input, hidden, "w_h"), p(hidden, hidden, "u_h"), p(1, hidden, "b_h")};
  }

  static GruParams random(std::size_t input, std::size_t hidden, Rng& rng, const std::string& name = "gru") {
    GruParams g = zeros(input, hidden, name);
    for (Var* w : {&g.w_z, &g.w_r, &g.w_h}) w->mutable_value() = uniform_init(input, hidden, rng);
    for (Var* u : {&g.u_z, &g.u_r, &g.u_h}) u->mutable_value() = uniform_init(hidden, hidden, rng);
    return g;
  }

  std::vector<Var> parameters() const { return {w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h}; }
};

// h' = (1 - z) * h + z * tanh(x W_h + (r * h) U_h + b_h), with sigmoid update
// gate z and reset gate r. Rows of x and h are independent batch entries.
inline Var gru_step(const Var& x, const Var& h, const GruParams& p) {
  if (x.value().cols() != p.input_size() || h.value().cols() != p.hidden_size() ||
      x.value().rows() != h.value().rows()) {
    throw ShapeError("gru_step: input " + to_string(x.shape()) + " and hidden " + to_string(h.shape()) +
                     " do not match parameters " + std::to_string(p.input_size()) + " -> " +
                     std::to_string(p.hidden_size()));
  }
  Var z = sigmoid(add(add(matmul(x, p.w_z), matmul(h, p.u_z)), p.b_z));
  Var r = sigmoid(add(add(matmul(x, p.w_r), matmul(h, p.u_r)), p.b_r));
  Var cand = tanh(add(add(matmul(x, p.w_h), matmul(mul(r, h), p.u_h)), p.b_h));
  return add(h, mul(z, sub(cand, h)));
}

// Pairwise affinity (F W1)(F W2)^T between region features.
inline Var region_affinity(const Var& features, const Var& embed_i, const Var& embed_j) {
  return matmul(matmul(features, embed_i), transpose(matmul(features, embed_j)));
}

// Additive mask confining propagation to blocks of `regions` rows, so that
// several instances packed into one matrix never exchange messages.
inline Tensor block_diagonal_mask(std::size_t instances, std::size_t regions) {
  const std::size_t n = instances * regions;
  Tensor mask(Shape{n, n}, -1e30);
  for (std::size_t b = 0; b < instances; ++b)
    for (std::size_t i = 0; i < regions; ++i)
      for (std::size_t j = 0; j < regions; ++j) mask.at(b * regions + i, b * regions + j) = 0.0;
  return mask;
}

// Residual graph reasoning: F + ReLU(rowsoftmax(relation) F W_g).
inline Var gcn_reason(const Var& features, const Var& relation, const Var& weight, const Tensor* mask = nullptr) {
  const std::size_t t = features.value().rows();
  if (relation.value().rows() != t || relation.value().cols() != t) {
    throw ShapeError("gcn_reason: relation " + to_string(relation.shape()) + " does not match " +
                     std::to_string(t) + " regions");
  }
  Var logits = mask ? add(relation, constant(*mask)) : relation;
  Var propagated = matmul(matmul(softmax(logits, 1), features), weight);
  return add(features, relu(propagated));
}

inline Var embed_words(const std::vector<std::size_t>& ids, const Var& table) {
  const std::size_t vocab = table.value().rows();
  for (auto id : ids) {
    if (id >= vocab) {
      throw ShapeError("embed_words: token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    }
  }
  return gather_rows(table, ids);
}

// Reads a plain-text embedding table: one row per token, first column the
// token id, remaining columns the vector. Rows absent from the file keep the
// values in `fallback`.
inline Tensor load_embedding_table(const std::string& path, Tensor fallback) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_embedding_table: cannot open " + path);
  const std::size_t vocab = fallback.rows();
  const std::size_t width = fallback.cols();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    long long id = -1;
    if (!(row >> id) || id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad token id");
    }
    std::vector<double> values;
    double v;
    while (row >> v) values.push_back(v);
    if (values.size() != width) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                               " values, got " + std::to_string(values.size()));
    }
    std::copy(values.begin(), values.end(), fallback.row(static_cast<std::size_t>(id)).begin());
  }
  return fallback;
}

}  // namespace dcpg
