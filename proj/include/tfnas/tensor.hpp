#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tfnas {

#ifdef TFNAS_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

// Dense row-major matrix. Every value in the engine is 2-D; vectors are
// [1, n] rows and scalars are [1, 1].
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, Real fill = Real(0));
  Tensor(std::size_t rows, std::size_t cols, std::vector<Real> data);

  static Tensor from_rows(std::initializer_list<std::initializer_list<Real>> rows);
  static Tensor scalar(Real v) { return Tensor(1, 1, v); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  Real* row(std::size_t r) { return data_.data() + r * cols_; }
  const Real* row(std::size_t r) const { return data_.data() + r * cols_; }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  // Value of a [1, 1] tensor.
  Real item() const;

  void fill(Real v);
  bool all_finite() const;
  std::string shape_str() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

Real max_abs_diff(const Tensor& a, const Tensor& b);
Real sum(const Tensor& t);

// Column-wise concatenation of equally tall tensors (plain values, no tape).
Tensor hconcat(std::span<const Tensor> parts);
// Row-wise concatenation of equally wide tensors.
Tensor vconcat(std::span<const Tensor> parts);

}  // namespace tfnas
