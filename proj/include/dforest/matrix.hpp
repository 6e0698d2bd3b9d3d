#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dforest {

// Dense row-major matrix. Storage is a plain vector so capacity can be
// reused across batches without reallocating.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  const T& operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }

  // Changes the logical shape. Never shrinks capacity.
  void resize(std::size_t rows, std::size_t cols) {
    rows_ = rows;
    cols_ = cols;
    data_.resize(rows * cols);
  }
  void reserve(std::size_t n) { data_.reserve(n); }
  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  std::size_t capacity_bytes() const { return data_.capacity() * sizeof(T); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// Fixed-shape three-way tensor (samples x trees x outputs), row-major.
template <typename T>
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t d0, std::size_t d1, std::size_t d2, T fill = T{})
      : d0_(d0), d1_(d1), d2_(d2), data_(d0 * d1 * d2, fill) {}

  std::size_t dim0() const { return d0_; }
  std::size_t dim1() const { return d1_; }
  std::size_t dim2() const { return d2_; }

  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    assert(i < d0_ && j < d1_ && k < d2_);
    return data_[(i * d1_ + j) * d2_ + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    assert(i < d0_ && j < d1_ && k < d2_);
    return data_[(i * d1_ + j) * d2_ + k];
  }

  std::span<T> slice(std::size_t i, std::size_t j) {
    return {data_.data() + (i * d1_ + j) * d2_, d2_};
  }
  std::span<const T> slice(std::size_t i, std::size_t j) const {
    return {data_.data() + (i * d1_ + j) * d2_, d2_};
  }

  void resize(std::size_t d0, std::size_t d1, std::size_t d2) {
    d0_ = d0;
    d1_ = d1;
    d2_ = d2;
    data_.resize(d0 * d1 * d2);
  }
  void reserve(std::size_t n) { data_.reserve(n); }

  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }
  std::size_t capacity_bytes() const { return data_.capacity() * sizeof(T); }

  bool operator==(const Tensor3&) const = default;

 private:
  std::size_t d0_ = 0, d1_ = 0, d2_ = 0;
  std::vector<T> data_;
};

template <typename T>
std::size_t capacity_bytes(const std::vector<T>& v) {
  return v.capacity() * sizeof(T);
}

}  // namespace dforest
