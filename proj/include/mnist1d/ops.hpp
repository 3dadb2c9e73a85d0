#pragma once
// Differentiable tensor operations.
//
// Elementwise ops require identical shapes; the only broadcasts are the
// explicit ones (row-vector bias add, scalar tensors, channel bias inside
// conv1d). Unless noted, backward rules are composed from these same ops and
// therefore support differentiable (second-order) gradients. conv1d,
// batchnorm1d and gru_sequence are first-order only.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnist1d/prng.hpp"
#include "mnist1d/tensor.hpp"

namespace mnist1d {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

inline void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank)
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_str(a.shape()));
}

template <class F>
std::vector<double> map_values(const Tensor& a, F f) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return out;
}

template <class F>
std::vector<double> zip_values(const Tensor& a, const Tensor& b, F f) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  return detail::make_result(a.shape(), detail::zip_values(a, b, std::plus<>()), "add", {a, b},
                             [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

inline Tensor scale(const Tensor& a, double c);

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  return detail::make_result(
      a.shape(), detail::zip_values(a, b, std::minus<>()), "sub", {a, b},
      [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{g, scale(g, -1.0)}; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  return detail::make_result(a.shape(), detail::zip_values(a, b, std::multiplies<>()), "mul",
                             {a, b}, [a, b](const Tensor&, const Tensor& g) {
                               return std::vector<Tensor>{
                                   a.requires_grad() ? mul(g, b) : Tensor(),
                                   b.requires_grad() ? mul(g, a) : Tensor()};
                             });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::make_result(
      a.shape(), detail::map_values(a, [c](double x) { return x * c; }), "scale", {a},
      [c](const Tensor&, const Tensor& g) { return std::vector<Tensor>{scale(g, c)}; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  return detail::make_result(a.shape(), detail::map_values(a, [c](double x) { return x + c; }),
                             "add_scalar", {a},
                             [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{g}; });
}

inline Tensor sum(const Tensor& a);
inline Tensor reshape(const Tensor& a, Shape shape);

/// a * s where s holds a single value (any rank).
inline Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw std::invalid_argument("mul_scalar: s must hold one value");
  const double v = s.item();
  return detail::make_result(a.shape(), detail::map_values(a, [v](double x) { return x * v; }),
                             "mul_scalar", {a, s}, [a, s](const Tensor&, const Tensor& g) {
                               return std::vector<Tensor>{
                                   a.requires_grad() ? mul_scalar(g, s) : Tensor(),
                                   s.requires_grad() ? reshape(sum(mul(g, a)), s.shape())
                                                     : Tensor()};
                             });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Reductions and broadcasts

inline Tensor expand_scalar(const Tensor& s, Shape shape);

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.data()) acc += x;
  return detail::make_result(Shape{}, {acc}, "sum", {a}, [a](const Tensor&, const Tensor& g) {
    return std::vector<Tensor>{expand_scalar(g, a.shape())};
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

/// Tensor of `shape` filled with the single value of s.
inline Tensor expand_scalar(const Tensor& s, Shape shape) {
  if (s.numel() != 1) throw std::invalid_argument("expand_scalar: s must hold one value");
  const auto n = shape_numel(shape);
  return detail::make_result(std::move(shape), std::vector<double>(n, s.item()), "expand_scalar",
                             {s}, [s](const Tensor&, const Tensor& g) {
                               return std::vector<Tensor>{reshape(sum(g), s.shape())};
                             });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(shape));
  return detail::make_result(std::move(shape), a.vec(), "reshape", {a},
                             [a](const Tensor&, const Tensor& g) {
                               return std::vector<Tensor>{reshape(g, a.shape())};
                             });
}

inline Tensor broadcast_rows(const Tensor& v, std::size_t rows);
inline Tensor broadcast_cols(const Tensor& v, std::size_t cols);

/// [R x N] -> [N], summing over rows.
inline Tensor sum_rows(const Tensor& a) {
  detail::require_rank("sum_rows", a, 2);
  const std::size_t r = a.dim(0), n = a.dim(1);
  std::vector<double> out(n, 0.0);
  const auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += x[i * n + j];
  return detail::make_result({n}, std::move(out), "sum_rows", {a},
                             [r](const Tensor&, const Tensor& g) {
                               return std::vector<Tensor>{broadcast_rows(g, r)};
                             });
}

/// [N] -> [R x N], repeating v in every row.
inline Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
  detail::require_rank("broadcast_rows", v, 1);
  const std::size_t n = v.dim(0);
  std::vector<double> out(rows * n);
  for (std::size_t i = 0; i < rows; ++i) std::copy(v.data().begin(), v.data().end(), out.begin() + i * n);
  return detail::make_result({rows, n}, std::move(out), "broadcast_rows", {v},
                             [](const Tensor&, const Tensor& g) {
                               return std::vector<Tensor>{sum_rows(g)};
                             });
}

/// [R x N] -> [R], summing each row.
inline Tensor sum_cols(const Tensor& a) {
  detail::require_rank("sum_cols", a, 2);
  const std::size_t r = a.dim(0), n = a.dim(1);
  std::vector<double> out(r, 0.0);
  const auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += x[i * n + j];
  return detail::make_result({r}, std::move(out), "sum_cols", {a},
                             [n](const Tensor&, const Tensor& g) {
                               return std::vector<Tensor>{broadcast_cols(g, n)};
                             });
}

/// [R] -> [R x N], repeating v[i] across row i.
inline Tensor broadcast_cols(const Tensor& v, std::size_t cols) {
  detail::require_rank("broadcast_cols", v, 1);
  const std::size_t r = v.dim(0);
  std::vector<double> out(r * cols);
  for (std::size_t i = 0; i < r; ++i)
    std::fill_n(out.begin() + i * cols, cols, v.data()[i]);
  return detail::make_result({r, cols}, std::move(out), "broadcast_cols", {v},
                             [](const Tensor&, const Tensor& g) {
                               return std::vector<Tensor>{sum_cols(g)};
                             });
}

/// x[R x N] + b[N] broadcast over rows.
inline Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  detail::require_rank("add_rowvec", x, 2);
  detail::require_rank("add_rowvec", b, 1);
  if (b.dim(0) != x.dim(1))
    throw std::invalid_argument("add_rowvec: bias " + shape_str(b.shape()) + " vs input " +
                                shape_str(x.shape()));
  const std::size_t r = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.vec());
  const auto bv = b.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return detail::make_result(x.shape(), std::move(out), "add_rowvec", {x, b},
                             [b](const Tensor&, const Tensor& g) {
                               return std::vector<Tensor>{g, b.requires_grad() ? sum_rows(g) : Tensor()};
                             });
}

inline Tensor embed_column(const Tensor& g, std::size_t cols, std::size_t index);

/// Column `index` of x[R x N] as an [R x 1] tensor.
inline Tensor column(const Tensor& x, std::size_t index) {
  detail::require_rank("column", x, 2);
  const std::size_t r = x.dim(0), n = x.dim(1);
  if (index >= n) throw std::out_of_range("column: index out of range");
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = x.data()[i * n + index];
  return detail::make_result({r, 1}, std::move(out), "column", {x},
                             [n, index](const Tensor&, const Tensor& g) {
                               return std::vector<Tensor>{embed_column(g, n, index)};
                             });
}

/// [R x 1] -> [R x cols], zero except column `index`. Adjoint of column().
inline Tensor embed_column(const Tensor& g, std::size_t cols, std::size_t index) {
  const std::size_t r = g.dim(0);
  std::vector<double> out(r * cols, 0.0);
  for (std::size_t i = 0; i < r; ++i) out[i * cols + index] = g.data()[i];
  return detail::make_result({r, cols}, std::move(out), "embed_column", {g},
                             [index](const Tensor&, const Tensor& gg) {
                               return std::vector<Tensor>{column(gg, index)};
                             });
}

// ---------------------------------------------------------------------------
// Matrix products

/// op(a) * op(b), where op transposes when the matching flag is set.
inline Tensor gemm(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t k = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb)
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  std::vector<double> out(m * n);
  detail::ConstMap A(a.data().data(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(a.dim(1)));
  detail::ConstMap B(b.data().data(), static_cast<Eigen::Index>(b.dim(0)), static_cast<Eigen::Index>(b.dim(1)));
  detail::MutMap C(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (k == 0) {
    C.setZero();
  } else if (!trans_a && !trans_b) {
    C.noalias() = A * B;
  } else if (!trans_a && trans_b) {
    C.noalias() = A * B.transpose();
  } else if (trans_a && !trans_b) {
    C.noalias() = A.transpose() * B;
  } else {
    C.noalias() = A.transpose() * B.transpose();
  }
  return detail::make_result(
      {m, n}, std::move(out), "matmul", {a, b},
      [a, b, trans_a, trans_b](const Tensor&, const Tensor& g) {
        Tensor ga, gb;
        if (!trans_a && !trans_b) {
          if (a.requires_grad()) ga = gemm(g, b, false, true);
          if (b.requires_grad()) gb = gemm(a, g, true, false);
        } else if (!trans_a && trans_b) {
          if (a.requires_grad()) ga = gemm(g, b, false, false);
          if (b.requires_grad()) gb = gemm(g, a, true, false);
        } else if (trans_a && !trans_b) {
          if (a.requires_grad()) ga = gemm(b, g, false, true);
          if (b.requires_grad()) gb = gemm(a, g, false, false);
        } else {
          if (a.requires_grad()) ga = gemm(b, g, true, true);
          if (b.requires_grad()) gb = gemm(g, a, true, true);
        }
        return std::vector<Tensor>{ga, gb};
      });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) { return gemm(a, b, false, false); }

inline Tensor transpose(const Tensor& a) {
  detail::require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
  return detail::make_result({c, r}, std::move(out), "transpose", {a},
                             [](const Tensor&, const Tensor& g) {
                               return std::vector<Tensor>{transpose(g)};
                             });
}

// ---------------------------------------------------------------------------
// Activations

inline Tensor relu(const Tensor& x) {
  return detail::make_result(x.shape(), detail::map_values(x, [](double v) { return v > 0.0 ? v : 0.0; }),
                             "relu", {x}, [x](const Tensor&, const Tensor& g) {
                               // Derivative taken as 0 at exactly 0.
                               Tensor mask(x.shape(), detail::map_values(x, [](double v) {
                                             return v > 0.0 ? 1.0 : 0.0;
                                           }));
                               return std::vector<Tensor>{mul(g, mask)};
                             });
}

inline Tensor exp(const Tensor& x) {
  return detail::make_result(x.shape(), detail::map_values(x, [](double v) { return std::exp(v); }),
                             "exp", {x}, [](const Tensor& y, const Tensor& g) {
                               return std::vector<Tensor>{mul(g, y)};
                             });
}

inline Tensor tanh(const Tensor& x) {
  return detail::make_result(x.shape(), detail::map_values(x, [](double v) { return std::tanh(v); }),
                             "tanh", {x}, [](const Tensor& y, const Tensor& g) {
                               return std::vector<Tensor>{mul(g, add_scalar(scale(mul(y, y), -1.0), 1.0))};
                             });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::make_result(
      x.shape(), detail::map_values(x, [](double v) {
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      }),
      "sigmoid", {x}, [](const Tensor& y, const Tensor& g) {
        return std::vector<Tensor>{mul(g, mul(y, add_scalar(scale(y, -1.0), 1.0)))};
      });
}

/// ELU with alpha = 1: x for x >= 0, e^x - 1 otherwise.
inline Tensor elu(const Tensor& x) {
  return detail::make_result(
      x.shape(), detail::map_values(x, [](double v) { return v >= 0.0 ? v : std::expm1(v); }), "elu",
      {x}, [x](const Tensor&, const Tensor& g) {
        if (!GradMode::enabled()) {
          Tensor d(x.shape(), detail::map_values(x, [](double v) { return v >= 0.0 ? 1.0 : std::exp(v); }));
          return std::vector<Tensor>{mul(g, d)};
        }
        // elu'(x) = exp(min(x, 0)) = exp(x - relu(x)), written with graph ops.
        return std::vector<Tensor>{mul(g, exp(sub(x, relu(x))))};
      });
}

// ---------------------------------------------------------------------------
// Softmax and loss

/// Row-wise softmax of [B x K].
inline Tensor softmax(const Tensor& x) {
  detail::require_rank("softmax", x, 2);
  const std::size_t b = x.dim(0), k = x.dim(1);
  std::vector<double> out(b * k);
  const auto z = x.data();
  for (std::size_t i = 0; i < b; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, z[i * k + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += (out[i * k + j] = std::exp(z[i * k + j] - mx));
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= s;
  }
  return detail::make_result(x.shape(), std::move(out), "softmax", {x},
                             [k](const Tensor& y, const Tensor& g) {
                               Tensor dot = broadcast_cols(sum_cols(mul(g, y)), k);
                               return std::vector<Tensor>{mul(y, sub(g, dot))};
                             });
}

struct CrossEntropy {
  Tensor loss;   ///< scalar, mean over the batch
  Tensor probs;  ///< [B x K], no graph attached
};

/// Mean softmax cross-entropy via log-sum-exp.
inline CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  detail::require_rank("softmax_cross_entropy", logits, 2);
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (labels.size() != b) throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  std::vector<double> onehot(b * k, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                              " outside [0, " + std::to_string(k) + ")");
    onehot[i * k + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  std::vector<double> probs(b * k);
  const auto z = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, z[i * k + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += (probs[i * k + j] = std::exp(z[i * k + j] - mx));
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= s;
    total += mx + std::log(s) - z[i * k + static_cast<std::size_t>(labels[i])];
  }
  Tensor p(logits.shape(), probs);
  const double inv_b = 1.0 / static_cast<double>(b);
  Tensor target(logits.shape(), std::move(onehot));
  Tensor loss = detail::make_result(
      Shape{}, {total * inv_b}, "softmax_cross_entropy", {logits},
      [logits, p, target, inv_b](const Tensor&, const Tensor& g) {
        const Tensor probs_now = GradMode::enabled() ? softmax(logits) : p;
        return std::vector<Tensor>{mul_scalar(scale(sub(probs_now, target), inv_b), g)};
      });
  return {loss, p};
}

// ---------------------------------------------------------------------------
// Convolution, normalization, pooling, dropout

inline std::size_t conv1d_out_len(std::size_t len, std::size_t k, std::size_t stride,
                                  std::size_t pad, std::size_t dilation) {
  const std::size_t span = dilation * (k - 1) + 1;
  if (len + 2 * pad < span) return 0;
  return (len + 2 * pad - span) / stride + 1;
}

/// Cross-correlation of x[B x Cin x L] with w[Cout x Cin x k], zero padding.
/// `bias` may be undefined. First-order only.
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                     std::size_t pad, std::size_t dilation) {
  detail::require_rank("conv1d", x, 3);
  detail::require_rank("conv1d", w, 3);
  if (stride < 1 || dilation < 1) throw std::invalid_argument("conv1d: stride and dilation must be >= 1");
  const std::size_t B = x.dim(0), cin = x.dim(1), L = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin)
    throw std::invalid_argument("conv1d: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
    throw std::invalid_argument("conv1d: bias shape " + shape_str(bias.shape()));
  const std::size_t lout = conv1d_out_len(L, k, stride, pad, dilation);
  if (lout < 1) throw std::invalid_argument("conv1d: output length would be < 1");

  const std::size_t rows = B * lout, ck = cin * k;
  // cols[(b, o), (c, j)] = x[b, c, o*stride - pad + j*dilation]
  auto cols = std::make_shared<std::vector<double>>(rows * ck, 0.0);
  const auto xv = x.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < lout; ++o) {
      double* row = cols->data() + (b * lout + o) * ck;
      for (std::size_t c = 0; c < cin; ++c) {
        const double* src = xv.data() + (b * cin + c) * L;
        for (std::size_t j = 0; j < k; ++j) {
          const auto pos = static_cast<std::ptrdiff_t>(o * stride + j * dilation) -
                           static_cast<std::ptrdiff_t>(pad);
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(L)) row[c * k + j] = src[pos];
        }
      }
    }
  detail::RowMat prod(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cout));
  detail::ConstMap cm(cols->data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(ck));
  detail::ConstMap wm(w.data().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(ck));
  prod.noalias() = cm * wm.transpose();
  std::vector<double> out(B * cout * lout);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < cout; ++co) {
      const double bv = bias.defined() ? bias.data()[co] : 0.0;
      double* dst = out.data() + (b * cout + co) * lout;
      for (std::size_t o = 0; o < lout; ++o)
        dst[o] = prod(static_cast<Eigen::Index>(b * lout + o), static_cast<Eigen::Index>(co)) + bv;
    }

  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result(
      {B, cout, lout}, std::move(out), "conv1d", std::move(inputs),
      [x, w, bias, cols, B, cin, L, cout, k, lout, stride, pad, dilation](const Tensor&, const Tensor& g) {
        const std::size_t rows = B * lout, ck = cin * k;
        detail::RowMat gm(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cout));
        const auto gv = g.data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t o = 0; o < lout; ++o)
              gm(static_cast<Eigen::Index>(b * lout + o), static_cast<Eigen::Index>(co)) =
                  gv[(b * cout + co) * lout + o];
        std::vector<Tensor> res(bias.defined() ? 3 : 2);
        detail::ConstMap cm(cols->data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(ck));
        detail::ConstMap wm(w.data().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(ck));
        if (w.requires_grad()) {
          std::vector<double> gw(cout * ck);
          detail::MutMap(gw.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(ck)).noalias() =
              gm.transpose() * cm;
          res[1] = Tensor(w.shape(), std::move(gw));
        }
        if (bias.defined() && bias.requires_grad()) {
          std::vector<double> gb(cout);
          for (std::size_t co = 0; co < cout; ++co) gb[co] = gm.col(static_cast<Eigen::Index>(co)).sum();
          res[2] = Tensor(bias.shape(), std::move(gb));
        }
        if (x.requires_grad()) {
          detail::RowMat gcols = gm * wm;
          std::vector<double> gx(B * cin * L, 0.0);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < lout; ++o) {
              const double* row = gcols.data() + (b * lout + o) * ck;
              for (std::size_t c = 0; c < cin; ++c) {
                double* dst = gx.data() + (b * cin + c) * L;
                for (std::size_t j = 0; j < k; ++j) {
                  const auto pos = static_cast<std::ptrdiff_t>(o * stride + j * dilation) -
                                   static_cast<std::ptrdiff_t>(pad);
                  if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(L)) dst[pos] += row[c * k + j];
                }
              }
            }
          res[0] = Tensor(x.shape(), std::move(gx));
        }
        return res;
      },
      /*higher_order=*/false);
}

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Per-channel normalization of x[B x C x L] over (batch, length).
///
/// Train mode normalizes with the biased batch variance and folds the batch
/// statistics into the running ones as new = (1 - momentum) * old + momentum * batch,
/// using the unbiased variance for the running estimate. Eval mode reads the
/// running statistics and never writes them. First-order only.
inline Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          BatchNormState& state, Mode mode) {
  detail::require_rank("batchnorm1d", x, 3);
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (gamma.numel() != C || beta.numel() != C || state.running_mean.size() != C ||
      state.running_var.size() != C)
    throw std::invalid_argument("batchnorm1d: channel count mismatch for input " + shape_str(x.shape()));
  const std::size_t n = B * L;
  if (mode == Mode::kTrain && n < 2)
    throw std::invalid_argument("batchnorm1d: train mode needs batch*length >= 2");

  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> invstd(C);
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t c = 0; c < C; ++c) {
    double mu, var;
    if (mode == Mode::kTrain) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) s += xv[(b * C + c) * L + l];
      mu = s / static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) {
          const double d = xv[(b * C + c) * L + l] - mu;
          ss += d * d;
        }
      var = ss / static_cast<double>(n);
      const double m = state.momentum;
      state.running_mean[c] = (1.0 - m) * state.running_mean[c] + m * mu;
      state.running_var[c] =
          (1.0 - m) * state.running_var[c] + m * ss / static_cast<double>(n - 1);
    } else {
      mu = state.running_mean[c];
      var = state.running_var[c];
    }
    invstd[c] = 1.0 / std::sqrt(var + state.epsilon);
    const double gm = gamma.data()[c], bt = beta.data()[c];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l) {
        const std::size_t i = (b * C + c) * L + l;
        (*xhat)[i] = (xv[i] - mu) * invstd[c];
        out[i] = gm * (*xhat)[i] + bt;
      }
  }

  return detail::make_result(
      x.shape(), std::move(out), "batchnorm1d", {x, gamma, beta},
      [x, gamma, beta, xhat, invstd, B, C, L, n, mode](const Tensor&, const Tensor& g) {
        const auto gv = g.data();
        std::vector<double> gx(x.numel()), ggamma(C, 0.0), gbeta(C, 0.0);
        for (std::size_t c = 0; c < C; ++c) {
          double sg = 0.0, sgx = 0.0;
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t l = 0; l < L; ++l) {
              const std::size_t i = (b * C + c) * L + l;
              sg += gv[i];
              sgx += gv[i] * (*xhat)[i];
            }
          ggamma[c] = sgx;
          gbeta[c] = sg;
          const double gm = gamma.data()[c];
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t l = 0; l < L; ++l) {
              const std::size_t i = (b * C + c) * L + l;
              if (mode == Mode::kTrain) {
                const double nn = static_cast<double>(n);
                gx[i] = gm * invstd[c] * (gv[i] - sg / nn - (*xhat)[i] * sgx / nn);
              } else {
                gx[i] = gm * invstd[c] * gv[i];
              }
            }
        }
        return std::vector<Tensor>{Tensor(x.shape(), std::move(gx)), Tensor(gamma.shape(), std::move(ggamma)),
                                   Tensor(beta.shape(), std::move(gbeta))};
      },
      /*higher_order=*/false);
}

inline Tensor spread_mean(const Tensor& g, std::size_t len);

/// [B x C x L] -> [B x C], mean over the length axis.
inline Tensor global_avg_pool(const Tensor& x) {
  detail::require_rank("global_avg_pool", x, 3);
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (L == 0) throw std::invalid_argument("global_avg_pool: empty length axis");
  std::vector<double> out(B * C);
  const auto xv = x.data();
  for (std::size_t i = 0; i < B * C; ++i) {
    double s = 0.0;
    for (std::size_t l = 0; l < L; ++l) s += xv[i * L + l];
    out[i] = s / static_cast<double>(L);
  }
  return detail::make_result({B, C}, std::move(out), "global_avg_pool", {x},
                             [L](const Tensor&, const Tensor& g) {
                               return std::vector<Tensor>{spread_mean(g, L)};
                             });
}

/// [B x C] -> [B x C x len] with every entry g/len. Adjoint of global_avg_pool.
inline Tensor spread_mean(const Tensor& g, std::size_t len) {
  const std::size_t bc = g.numel();
  std::vector<double> out(bc * len);
  for (std::size_t i = 0; i < bc; ++i)
    std::fill_n(out.begin() + i * len, len, g.data()[i] / static_cast<double>(len));
  return detail::make_result({g.dim(0), g.dim(1), len}, std::move(out), "spread_mean", {g},
                             [](const Tensor&, const Tensor& gg) {
                               return std::vector<Tensor>{global_avg_pool(gg)};
                             });
}

/// Inverted dropout: train mode zeroes each element with probability `rate`
/// and scales survivors by 1/(1 - rate). Eval mode (or rate 0) returns x.
inline Tensor dropout(const Tensor& x, double rate, RngStream& rng, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (mode == Mode::kEval || rate == 0.0) return x;
  const double keep = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.next_uniform() < rate ? 0.0 : keep;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}


// ---------------------------------------------------------------------------
// Recurrent

/// Single-layer GRU over the columns of x [B x L] (one scalar input per time
/// step), starting from h = 0; returns the last hidden state [B x H].
/// `p` holds, in order, w_ir, w_iz, w_in [1 x H], w_hr, w_hz, w_hn [H x H],
/// b_ir, b_iz, b_in, b_hr, b_hz, b_hn [H]:
///   r = sigmoid(x w_ir + b_ir + h w_hr + b_hr)
///   z = sigmoid(x w_iz + b_iz + h w_hz + b_hz)
///   n = tanh(x w_in + b_in + r * (h w_hn + b_hn))
///   h' = (1 - z) * n + z * h
/// Fused kernel with hand-written backpropagation through time; first-order only.
inline Tensor gru_sequence(const Tensor& x, std::span<const Tensor> p) {
  using Eigen::Index;
  detail::require_rank("gru_sequence", x, 2);
  if (p.size() != 12) throw std::invalid_argument("gru_sequence: expected 12 parameter tensors");
  const std::size_t B = x.dim(0), L = x.dim(1), H = p[0].numel();
  for (int g = 0; g < 3; ++g) {
    if (p[g].shape() != Shape{1, H}) throw std::invalid_argument("gru_sequence: bad input weight shape");
    if (p[3 + g].shape() != Shape{H, H}) throw std::invalid_argument("gru_sequence: bad recurrent weight shape");
    if (p[6 + g].shape() != Shape{H} || p[9 + g].shape() != Shape{H})
      throw std::invalid_argument("gru_sequence: bad bias shape");
  }
  const Index b = static_cast<Index>(B), h = static_cast<Index>(H), h3 = 3 * h;
  // Gate-concatenated weights: Wi [1 x 3H], Wh [H x 3H], biases [1 x 3H].
  auto wi = std::make_shared<detail::RowMat>(1, h3);
  auto wh = std::make_shared<detail::RowMat>(h, h3);
  detail::RowMat bi(1, h3), bh(1, h3);
  for (Index g = 0; g < 3; ++g) {
    wi->middleCols(g * h, h) = detail::ConstMap(p[static_cast<std::size_t>(g)].data().data(), 1, h);
    wh->middleCols(g * h, h) = detail::ConstMap(p[static_cast<std::size_t>(3 + g)].data().data(), h, h);
    bi.middleCols(g * h, h) = detail::ConstMap(p[static_cast<std::size_t>(6 + g)].data().data(), 1, h);
    bh.middleCols(g * h, h) = detail::ConstMap(p[static_cast<std::size_t>(9 + g)].data().data(), 1, h);
  }
  // Per-step caches: previous hidden state, r, z, n and (h w_hn + b_hn).
  struct Cache {
    std::vector<detail::RowMat> hprev, r, z, n, ghn;
  };
  auto c = std::make_shared<Cache>();
  const detail::ConstMap xm(x.data().data(), b, static_cast<Index>(L));
  detail::RowMat hcur = detail::RowMat::Zero(b, h);
  detail::RowMat gh(b, h3), gi(b, h3);
  const bool keep = GradMode::enabled();
  for (std::size_t t = 0; t < L; ++t) {
    gh.noalias() = hcur * *wh;
    gh.rowwise() += bh.row(0);
    gi.noalias() = xm.col(static_cast<Index>(t)) * *wi;
    gi.rowwise() += bi.row(0);
    detail::RowMat r = (1.0 / (1.0 + (-(gi.leftCols(h) + gh.leftCols(h))).array().exp())).matrix();
    detail::RowMat z = (1.0 / (1.0 + (-(gi.middleCols(h, h) + gh.middleCols(h, h))).array().exp())).matrix();
    detail::RowMat ghn = gh.rightCols(h);
    detail::RowMat n = (gi.rightCols(h).array() + r.array() * ghn.array()).tanh().matrix();
    detail::RowMat hn = (n.array() + z.array() * (hcur.array() - n.array())).matrix();
    if (keep) {
      c->hprev.push_back(std::move(hcur));
      c->r.push_back(std::move(r));
      c->z.push_back(std::move(z));
      c->n.push_back(std::move(n));
      c->ghn.push_back(std::move(ghn));
    }
    hcur = std::move(hn);
  }
  std::vector<double> out(hcur.data(), hcur.data() + hcur.size());
  std::vector<Tensor> inputs{x};
  inputs.insert(inputs.end(), p.begin(), p.end());
  return detail::make_result(
      {B, H}, std::move(out), "gru_sequence", std::move(inputs),
      [c, wi, wh, x, B, L, H](const Tensor&, const Tensor& g) {
        const Index b = static_cast<Index>(B), h = static_cast<Index>(H), h3 = 3 * h;
        detail::RowMat dwi = detail::RowMat::Zero(1, h3), dwh = detail::RowMat::Zero(h, h3);
        detail::RowMat dbi = detail::RowMat::Zero(1, h3), dbh = detail::RowMat::Zero(1, h3);
        std::vector<double> dx(B * L, 0.0);
        const detail::ConstMap xm(x.data().data(), b, static_cast<Index>(L));
        detail::RowMat dh = detail::ConstMap(g.data().data(), b, h);
        detail::RowMat dgi(b, h3), dgh(b, h3);
        for (std::size_t t = L; t-- > 0;) {
          const auto& hp = c->hprev[t].array();
          const auto& r = c->r[t].array();
          const auto& z = c->z[t].array();
          const auto& n = c->n[t].array();
          const auto& ghn = c->ghn[t].array();
          const auto dn = (dh.array() * (1.0 - z) * (1.0 - n * n)).eval();  // through tanh
          const auto dz = (dh.array() * (hp - n) * z * (1.0 - z)).eval();
          const auto dr = (dn * ghn * r * (1.0 - r)).eval();
          dgi.leftCols(h) = dr.matrix();
          dgi.middleCols(h, h) = dz.matrix();
          dgi.rightCols(h) = dn.matrix();
          dgh.leftCols(h) = dr.matrix();
          dgh.middleCols(h, h) = dz.matrix();
          dgh.rightCols(h) = (dn * r).matrix();
          dwh.noalias() += c->hprev[t].transpose() * dgh;
          dbh += dgh.colwise().sum();
          dwi.noalias() += xm.col(static_cast<Index>(t)).transpose() * dgi;
          dbi += dgi.colwise().sum();
          if (x.requires_grad()) {
            const Eigen::VectorXd dxt = dgi * wi->row(0).transpose();
            for (std::size_t i = 0; i < B; ++i) dx[i * L + t] = dxt(static_cast<Index>(i));
          }
          detail::RowMat dprev = (dh.array() * z).matrix();
          dprev.noalias() += dgh * wh->transpose();
          dh = std::move(dprev);
        }
        std::vector<Tensor> res(13);
        if (x.requires_grad()) res[0] = Tensor(x.shape(), std::move(dx));
        auto take = [h](const detail::RowMat& m, Index g, Shape shape) {
          detail::RowMat part = m.middleCols(g * h, h);
          return Tensor(std::move(shape), std::vector<double>(part.data(), part.data() + part.size()));
        };
        for (Index gate = 0; gate < 3; ++gate) {
          const auto k = static_cast<std::size_t>(gate);
          res[1 + k] = take(dwi, gate, {1, H});
          res[4 + k] = take(dwh, gate, {H, H});
          res[7 + k] = take(dbi, gate, {H});
          res[10 + k] = take(dbh, gate, {H});
        }
        return res;
      },
      /*higher_order=*/false);
}

}  // namespace mnist1d
