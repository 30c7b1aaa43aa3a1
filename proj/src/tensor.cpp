#include "tfnas/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "tfnas/errors.hpp"

namespace tfnas {

Tensor::Tensor(std::size_t rows, std::size_t cols, Real fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<Real> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape [" + std::to_string(rows) + "," +
                     std::to_string(cols) + "]");
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<Real>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<Real> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged rows in tensor literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

Real Tensor::item() const {
  if (rows_ != 1 || cols_ != 1) throw ShapeError("item() on non-scalar tensor " + shape_str());
  return data_[0];
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

std::string Tensor::shape_str() const {
  return "[" + std::to_string(rows_) + "," + std::to_string(cols_) + "]";
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

Real sum(const Tensor& t) {
  Real s = 0;
  for (Real v : t.data()) s += v;
  return s;
}

Tensor hconcat(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("hconcat: row mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy(p.row(r), p.row(r) + p.cols(), out.row(r) + off);
      off += p.cols();
    }
  }
  return out;
}

Tensor vconcat(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("vconcat: column mismatch");
    rows += p.rows();
  }
  std::vector<Real> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor(rows, cols, std::move(data));
}

}  // namespace tfnas
