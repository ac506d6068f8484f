#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "dcpg/autodiff/tape.hpp"
#include "dcpg/autodiff/tensor.hpp"

// Differentiable operations over Var. Binary elementwise ops broadcast any
// extent of 1 against the other operand (rank-1 operands act as 1 x n rows).

namespace dcpg {

namespace detail {

inline Shape result_shape(const Tensor& a, const Tensor& b, std::size_t rows, std::size_t cols) {
  if (a.rank() == 1 && b.rank() == 1) return Shape{cols};
  return Shape{rows, cols};
}

struct Broadcast {
  std::size_t rows = 0, cols = 0;
  Shape shape;

  static std::size_t join(std::size_t x, std::size_t y, bool& ok) {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    ok = false;
    return 0;
  }

  Broadcast(const char* op, const Tensor& a, const Tensor& b) {
    bool ok = true;
    rows = join(a.rows(), b.rows(), ok);
    cols = join(a.cols(), b.cols(), ok);
    if (!ok) {
      throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                       to_string(b.shape()));
    }
    shape = result_shape(a, b, rows, cols);
  }

  static std::size_t index(const Tensor& t, std::size_t r, std::size_t c) {
    return (t.rows() == 1 ? 0 : r) * t.cols() + (t.cols() == 1 ? 0 : c);
  }
};

template <class Forward, class GradA, class GradB>
Var binary(const char* op, const Var& a, const Var& b, Forward f, GradA da, GradB db) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Broadcast bc(op, av, bv);
  Tensor out(bc.shape);
  for (std::size_t r = 0; r < bc.rows; ++r) {
    for (std::size_t c = 0; c < bc.cols; ++c) {
      out[r * bc.cols + c] = f(av[Broadcast::index(av, r, c)], bv[Broadcast::index(bv, r, c)]);
    }
  }
  return make_result(op, std::move(out), {a, b}, [bc, da, db](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const Tensor& g = *self.grad;
    for (std::size_t r = 0; r < bc.rows; ++r) {
      for (std::size_t c = 0; c < bc.cols; ++c) {
        const std::size_t ia = Broadcast::index(na.value, r, c);
        const std::size_t ib = Broadcast::index(nb.value, r, c);
        const double go = g[r * bc.cols + c];
        if (na.requires_grad) (*na.grad)[ia] += go * da(na.value[ia], nb.value[ib], self.value[r * bc.cols + c]);
        if (nb.requires_grad) (*nb.grad)[ib] += go * db(na.value[ia], nb.value[ib], self.value[r * bc.cols + c]);
      }
    }
  });
}

// Elementwise unary op; `df(x, y)` is dy/dx given input x and output y.
template <class Forward, class Derivative>
Var unary(const char* op, const Var& x, Forward f, Derivative df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result(op, std::move(out), {x}, [df](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    const Tensor& g = *self.grad;
    Tensor& gi = *in.grad;
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * df(in.value[i], self.value[i]);
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double stable_softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline void check_axis(const char* op, const Tensor& t, int axis) {
  if (axis < 0 || static_cast<std::size_t>(axis) >= t.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " + to_string(t.shape()));
  }
}

// Iterates the 1-D lanes of `t` along `axis`: calls fn(offset, stride, length).
template <class Fn>
void for_each_lane(const Tensor& t, int axis, Fn fn) {
  if (t.rank() == 1) {
    fn(std::size_t{0}, std::size_t{1}, t.size());
  } else if (axis == 1) {
    for (std::size_t r = 0; r < t.rows(); ++r) fn(r * t.cols(), std::size_t{1}, t.cols());
  } else {
    for (std::size_t c = 0; c < t.cols(); ++c) fn(c, t.cols(), t.rows());
  }
}

}  // namespace detail

inline Var constant(Tensor t) { return Var::constant(std::move(t)); }
inline Var scalar_constant(double v) { return Var::constant(Tensor::scalar(v)); }
inline Var detach(const Var& x) { return Var::constant(x.value()); }

inline Var add(const Var& a, const Var& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

inline Var div(const Var& a, const Var& b) {
  for (double v : b.value().values()) {
    if (v == 0.0) throw DomainError("div: zero in denominator");
  }
  return detail::binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

inline Var scale(const Var& x, double c) {
  return detail::unary(
      "scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var add_scalar(const Var& x, double c) {
  return detail::unary(
      "add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var neg(const Var& x) { return scale(x, -1.0); }

inline Var sigmoid(const Var& x) {
  return detail::unary(
      "sigmoid", x, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& x) {
  return detail::unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(const Var& x) {
  return detail::unary(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Var exp(const Var& x) {
  return detail::unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(const Var& x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  }
  return detail::unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var square(const Var& x) {
  return detail::unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Var softplus(const Var& x) {
  return detail::unary(
      "softplus", x, detail::stable_softplus, [](double v, double) { return detail::stable_sigmoid(v); });
}

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw ShapeError("matmul: inner extents differ, " + to_string(av.shape()) + " x " + to_string(bv.shape()));
  }
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[p * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return detail::make_result("matmul", std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const Tensor& g = *self.grad;
    if (na.requires_grad) {
      Tensor& ga = *na.grad;
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = &nb.value[p * n];
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          ga[i * k + p] += s;
        }
      }
    }
    if (nb.requires_grad) {
      Tensor& gb = *nb.grad;
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = na.value[i * k + p];
          if (aip == 0.0) continue;
          double* gbrow = &gb[p * n];
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

inline Var transpose(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return detail::make_result("transpose", std::move(out), {x}, [r, c](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*in.grad)[i * c + j] += (*self.grad)[j * r + i];
  });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return detail::make_result("sum", Tensor::scalar(s), {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    const double g = (*self.grad)[0];
    for (auto& v : in.grad->values()) v += g;
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

// Sums a rank-2 tensor along `axis` (0: over rows -> 1 x cols, 1: over cols -> rows x 1).
inline Var sum_axis(const Var& x, int axis) {
  const Tensor& xv = x.value();
  detail::check_axis("sum_axis", xv, axis);
  const std::size_t r = xv.rows(), c = xv.cols();
  const bool rank1 = xv.rank() == 1;
  Tensor out(rank1 ? Shape{1} : (axis == 0 ? Shape{1, c} : Shape{r, 1}));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[rank1 ? 0 : (axis == 0 ? j : i)] += xv[i * c + j];
  return detail::make_result("sum_axis", std::move(out), {x}, [r, c, axis, rank1](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        (*in.grad)[i * c + j] += (*self.grad)[rank1 ? 0 : (axis == 0 ? j : i)];
  });
}

inline Var softmax(const Var& x, int axis) {
  const Tensor& xv = x.value();
  detail::check_axis("softmax", xv, axis);
  Tensor out(xv.shape());
  detail::for_each_lane(xv, axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xv[off + i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) z += (out[off + i * stride] = std::exp(xv[off + i * stride] - mx));
    for (std::size_t i = 0; i < len; ++i) out[off + i * stride] /= z;
  });
  return detail::make_result("softmax", std::move(out), {x}, [axis](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    const Tensor& y = self.value;
    const Tensor& g = *self.grad;
    detail::for_each_lane(y, axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
      double dot = 0.0;
      for (std::size_t i = 0; i < len; ++i) dot += g[off + i * stride] * y[off + i * stride];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t k = off + i * stride;
        (*in.grad)[k] += y[k] * (g[k] - dot);
      }
    });
  });
}

inline Var log_softmax(const Var& x, int axis) {
  const Tensor& xv = x.value();
  detail::check_axis("log_softmax", xv, axis);
  Tensor out(xv.shape());
  detail::for_each_lane(xv, axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xv[off + i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) z += std::exp(xv[off + i * stride] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t i = 0; i < len; ++i) out[off + i * stride] = xv[off + i * stride] - lz;
  });
  return detail::make_result("log_softmax", std::move(out), {x}, [axis](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    const Tensor& y = self.value;
    const Tensor& g = *self.grad;
    detail::for_each_lane(y, axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
      double gs = 0.0;
      for (std::size_t i = 0; i < len; ++i) gs += g[off + i * stride];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t k = off + i * stride;
        (*in.grad)[k] += g[k] - std::exp(y[k]) * gs;
      }
    });
  });
}

// Concatenates along axis 0 (stack rows) or axis 1 (append columns).
inline Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  std::size_t rows = 0, cols = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& t = parts[p].value();
    if (axis == 0) {
      if (p && t.cols() != cols) {
        throw ShapeError("concat: column extents differ, " + to_string(parts[0].shape()) + " and " + to_string(t.shape()));
      }
      cols = t.cols();
      rows += t.rows();
    } else {
      if (p && t.rows() != rows) {
        throw ShapeError("concat: row extents differ, " + to_string(parts[0].shape()) + " and " + to_string(t.shape()));
      }
      rows = t.rows();
      cols += t.cols();
    }
  }
  Tensor out(Shape{rows, cols});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& t = p.value();
    offsets.push_back(off);
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t j = 0; j < t.cols(); ++j) {
        if (axis == 0)
          out[(off + i) * cols + j] = t[i * t.cols() + j];
        else
          out[i * cols + off + j] = t[i * t.cols() + j];
      }
    off += axis == 0 ? t.rows() : t.cols();
  }
  return detail::make_result("concat", std::move(out), parts, [offsets, axis, cols](Node& self) {
    for (std::size_t p = 0; p < self.inputs.size(); ++p) {
      Node& in = *self.inputs[p];
      if (!in.requires_grad) continue;
      const std::size_t r = in.value.rows(), c = in.value.cols();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const std::size_t src = axis == 0 ? (offsets[p] + i) * cols + j : i * cols + offsets[p] + j;
          (*in.grad)[i * c + j] += (*self.grad)[src];
        }
    }
  });
}

// Row lookup: out[i] = x[idx[i]]. Backward scatter-adds into the rows used.
inline Var gather_rows(const Var& x, std::vector<std::size_t> idx) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.cols();
  if (idx.empty()) throw ShapeError("gather_rows: empty index list");
  Tensor out(Shape{idx.size(), c});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= xv.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(idx[i]) + " out of range for shape " + to_string(xv.shape()));
    }
    std::copy_n(&xv[idx[i] * c], c, &out[i * c]);
  }
  return detail::make_result("gather_rows", std::move(out), {x}, [idx = std::move(idx), c](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) (*in.grad)[idx[i] * c + j] += (*self.grad)[i * c + j];
  });
}

// Selects one entry per row: out[i] = x[i, idx[i]], shape rows x 1.
inline Var pick(const Var& x, std::vector<std::size_t> idx) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (idx.size() != r) {
    throw ShapeError("pick: " + std::to_string(idx.size()) + " indices for shape " + to_string(xv.shape()));
  }
  Tensor out(Shape{r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    if (idx[i] >= c) throw ShapeError("pick: column " + std::to_string(idx[i]) + " out of range");
    out[i] = xv[i * c + idx[i]];
  }
  return detail::make_result("pick", std::move(out), {x}, [idx = std::move(idx), c](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    for (std::size_t i = 0; i < idx.size(); ++i) (*in.grad)[i * c + idx[i]] += (*self.grad)[i];
  });
}

// Flat-index selection; output is rank 1.
inline Var take(const Var& x, std::vector<std::size_t> flat) {
  const Tensor& xv = x.value();
  if (flat.empty()) throw ShapeError("take: empty index list");
  Tensor out(Shape{flat.size()});
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (flat[i] >= xv.size()) throw ShapeError("take: index out of range");
    out[i] = xv[flat[i]];
  }
  return detail::make_result("take", std::move(out), {x}, [flat = std::move(flat)](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    for (std::size_t i = 0; i < flat.size(); ++i) (*in.grad)[flat[i]] += (*self.grad)[i];
  });
}

// Shifts rows down by `k` within consecutive blocks of `block` rows, filling
// with zeros. Used for causal convolution over packed sequences.
inline Var shift_rows(const Var& x, std::size_t k, std::size_t block) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (block == 0 || r % block != 0) throw ShapeError("shift_rows: row count not a multiple of block");
  Tensor out(Shape{r, c});
  for (std::size_t i = 0; i < r; ++i) {
    if (i % block < k) continue;
    std::copy_n(&xv[(i - k) * c], c, &out[i * c]);
  }
  return detail::make_result("shift_rows", std::move(out), {x}, [k, block, r, c](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    for (std::size_t i = 0; i < r; ++i) {
      if (i % block < k) continue;
      for (std::size_t j = 0; j < c; ++j) (*in.grad)[(i - k) * c + j] += (*self.grad)[i * c + j];
    }
  });
}

// Forward value `hard`; gradient passes to `soft` unchanged.
inline Var straight_through(const Var& soft, Tensor hard) {
  if (hard.shape() != soft.shape()) {
    throw ShapeError("straight_through: shapes " + to_string(soft.shape()) + " and " + to_string(hard.shape()));
  }
  return detail::make_result("straight_through", std::move(hard), {soft}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    for (std::size_t i = 0; i < self.grad->size(); ++i) (*in.grad)[i] += (*self.grad)[i];
  });
}

// Scales each row to unit Euclidean norm.
inline Var normalize_rows(const Var& x, double floor = 1e-12) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out(xv.shape());
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += xv[i * c + j] * xv[i * c + j];
    norms[i] = std::max(std::sqrt(s), floor);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] / norms[i];
  }
  return detail::make_result("normalize_rows", std::move(out), {x}, [norms = std::move(norms), r, c](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    const Tensor& y = self.value;
    const Tensor& g = *self.grad;
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) (*in.grad)[i * c + j] += (g[i * c + j] - y[i * c + j] * dot) / norms[i];
    }
  });
}

// Pairwise cosine similarities between the rows of a and the rows of b.
inline Var cosine_similarity(const Var& a, const Var& b) {
  if (a.value().cols() != b.value().cols()) {
    throw ShapeError("cosine_similarity: row widths differ, " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  return matmul(normalize_rows(a), transpose(normalize_rows(b)));
}

}  // namespace dcpg
