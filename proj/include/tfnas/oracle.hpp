#pragma once

// Plain-loop reference math on tensors, independent of the tape.

#include <cmath>
#include <span>
#include <vector>

#include "tfnas/tensor.hpp"

namespace tfnas::oracle {

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += (long double)a(i, k) * b(k, j);
      c(i, j) = (Real)s;
    }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  Tensor t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

inline Tensor scale(const Tensor& a, Real k) {
  Tensor c = a;
  for (auto& v : c.data()) v *= k;
  return c;
}

inline Tensor add_row(const Tensor& a, const Tensor& row) {
  Tensor c = a;
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j) c(i, j) += row(0, j);
  return c;
}

inline Real gelu(Real x) {
  const Real k = std::sqrt(Real(2) / Real(M_PI));
  return Real(0.5) * x * (1 + std::tanh(k * (x + Real(0.044715) * x * x * x)));
}

inline Tensor gelu(const Tensor& a) {
  Tensor c = a;
  for (auto& v : c.data()) v = gelu(v);
  return c;
}

inline Tensor softmax_rows(const Tensor& a) {
  Tensor c = a;
  for (std::size_t i = 0; i < c.rows(); ++i) {
    Real m = c(i, 0);
    for (std::size_t j = 0; j < c.cols(); ++j) m = std::max(m, c(i, j));
    Real s = 0;
    for (std::size_t j = 0; j < c.cols(); ++j) s += (c(i, j) = std::exp(c(i, j) - m));
    for (std::size_t j = 0; j < c.cols(); ++j) c(i, j) /= s;
  }
  return c;
}

// Rows [s*l, (s+1)*l) of a packed [B*l, n] tensor.
inline Tensor rows_of(const Tensor& a, std::size_t s, std::size_t l) {
  Tensor c(l, a.cols());
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) = a(s * l + i, j);
  return c;
}

inline void put_rows(Tensor& dst, const Tensor& src, std::size_t s) {
  for (std::size_t i = 0; i < src.rows(); ++i)
    for (std::size_t j = 0; j < src.cols(); ++j) dst(s * src.rows() + i, j) = src(i, j);
}

// One attention head applied to every packed sequence: softmax(c Q K^T) V Wo.
inline Tensor attention(const Tensor& x, std::size_t l, const Tensor& wq, const Tensor& wk,
                        const Tensor& wv, const Tensor& wo, Real c) {
  Tensor out(x.rows(), wo.cols());
  for (std::size_t s = 0; s < x.rows() / l; ++s) {
    Tensor xs = rows_of(x, s, l);
    Tensor scores = scale(matmul(matmul(xs, wq), transpose(matmul(xs, wk))), c);
    put_rows(out, matmul(matmul(softmax_rows(scores), matmul(xs, wv)), wo), s);
  }
  return out;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& alpha, const Tensor& beta, bool center,
                         Real eps = Real(1e-12)) {
  Tensor c = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    Real mu = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) mu += x(i, j);
    mu = center ? mu / x.cols() : 0;
    Real var = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    const Real sd = std::sqrt(var / x.cols() + eps);
    for (std::size_t j = 0; j < x.cols(); ++j)
      c(i, j) = alpha(0, j) * (x(i, j) - mu) / sd + beta(0, j);
  }
  return c;
}

}  // namespace tfnas::oracle
