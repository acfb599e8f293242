#ifndef VIGAT_TENSOR_HPP
#define VIGAT_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vigat/error.hpp"

namespace vigat {

/// Dense row-major matrix. Vectors are stored as 1 x n tensors.
template <typename T>
class Tensor2 {
 public:
  using value_type = T;

  Tensor2() = default;

  Tensor2(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Tensor2(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("Tensor2: data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string());
    }
  }

  static Tensor2 from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("Tensor2::from_rows: ragged rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor2(r, c, std::move(data));
  }

  static Tensor2 row_vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return Tensor2(1, n, std::move(values));
  }

  static Tensor2 identity(std::size_t n) {
    Tensor2 t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = T{1};
    return t;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Tensor2& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  std::string shape_string() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor2<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor2<U>(rows_, cols_, std::move(out));
  }

  Tensor2& operator+=(const Tensor2& o) {
    require_same_shape(o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Tensor2& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void require_same_shape(const Tensor2& o, const char* where) const {
    if (!same_shape(o)) {
      throw DimensionError(std::string(where) + ": shape " + shape_string() + " vs " +
                           o.shape_string());
    }
  }

  friend bool operator==(const Tensor2& a, const Tensor2& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// A value with an accumulated gradient of the same shape.
template <typename T>
struct GradPair {
  Tensor2<T> value;
  Tensor2<T> grad;

  GradPair() = default;
  explicit GradPair(Tensor2<T> v) : value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(T{0}); }
  void accumulate(const Tensor2<T>& g) { grad += g; }
};

}  // namespace vigat

#endif  // VIGAT_TENSOR_HPP
