#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "vcm/common.hpp"
#include "vcm/rng.hpp"

namespace vcm {

using DenseVector = std::vector<double>;

// Row-major dense matrix of 64-bit floats.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }
};

// out[i] = sum_j w[i*cols + j] * x[j] + b[i]
inline void affine_into(std::span<const double> w, std::size_t rows, std::size_t cols,
                        std::span<const double> b, std::span<const double> x,
                        std::span<double> out) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* wi = w.data() + i * cols;
    double acc = b[i];
    for (std::size_t j = 0; j < cols; ++j) acc += wi[j] * x[j];
    out[i] = acc;
  }
}

inline DenseVector affine(const DenseMatrix& w, const DenseVector& b, const DenseVector& x) {
  if (w.cols != x.size() || w.rows != b.size()) {
    throw ShapeError("affine: W is " + std::to_string(w.rows) + "x" + std::to_string(w.cols) +
                     ", b has dim " + std::to_string(b.size()) + ", x has dim " +
                     std::to_string(x.size()));
  }
  DenseVector out(w.rows);
  affine_into(w.values, w.rows, w.cols, b, x, out);
  return out;
}

// Accumulates gradients of y = W x + b given upstream dy.
//   dW[i,j] += dy[i] * x[j];  db[i] += dy[i];  dx[j] += sum_i W[i,j] * dy[i]
// dx may be empty when the input gradient is not needed.
inline void affine_backward(std::span<const double> w, std::size_t rows, std::size_t cols,
                            std::span<const double> x, std::span<const double> dy,
                            std::span<double> dw, std::span<double> db,
                            std::span<double> dx) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double g = dy[i];
    double* dwi = dw.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) dwi[j] += g * x[j];
    db[i] += g;
  }
  if (!dx.empty()) {
    for (std::size_t i = 0; i < rows; ++i) {
      const double g = dy[i];
      const double* wi = w.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) dx[j] += wi[j] * g;
    }
  }
}

inline void tanh_into(std::span<const double> in, std::span<double> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::tanh(in[i]);
}

inline DenseVector tanh_activation(const DenseVector& x) {
  DenseVector out(x.size());
  tanh_into(x, out);
  return out;
}

// d(pre) += (1 - tanh(pre)^2) * d(post), expressed through the cached outputs.
inline void tanh_backward(std::span<const double> post, std::span<const double> dpost,
                          std::span<double> dpre) {
  for (std::size_t i = 0; i < post.size(); ++i) {
    dpre[i] += (1.0 - post[i] * post[i]) * dpost[i];
  }
}

// Max-subtracted exp-normalize; invariant under adding a constant to all logits.
inline void softmax_into(std::span<const double> logits, std::span<double> out) {
  double mx = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  const double inv = 1.0 / sum;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
}

inline DenseVector softmax(const DenseVector& logits) {
  if (logits.empty()) throw ShapeError("softmax: empty logit vector");
  DenseVector out(logits.size());
  softmax_into(logits, out);
  return out;
}

// Inverted dropout: in training mode each entry is zeroed with probability
// `rate` and survivors are scaled by 1/(1-rate); inference is the identity.
inline void dropout_mask_into(double rate, RngStream& rng, std::span<double> mask) {
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = (rng.next_double() < rate) ? 0.0 : keep_scale;
  }
}

inline DenseVector dropout(const DenseVector& x, double rate, RngStream& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  DenseVector out(x.size());
  std::vector<double> mask(x.size());
  dropout_mask_into(rate, rng, mask);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
  return out;
}

inline DenseVector sample_standard_normal(std::size_t k, RngStream& rng) {
  if (k == 0) throw ConfigError("sample_standard_normal: k must be >= 1");
  DenseVector out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = rng.next_normal();
  return out;
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace vcm
