#pragma once

#include <Eigen/Core>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace bevcal {

using Index = std::int64_t;

/// Dense double tensor with row-major layout. The last axis is contiguous.
class Tensor {
 public:
  using MatMap =
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatMap =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using VecMap = Eigen::Map<Eigen::VectorXd>;
  using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

  Tensor() = default;
  explicit Tensor(std::vector<Index> shape)
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(count(shape_)), 0.0) {}

  static Tensor zeros(std::vector<Index> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<Index> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor scalar(double v) {
    Tensor t({1});
    t.data_[0] = v;
    return t;
  }
  static Tensor from(std::vector<Index> shape, std::initializer_list<double> vals) {
    Tensor t(std::move(shape));
    assert(static_cast<std::size_t>(t.size()) == vals.size());
    std::copy(vals.begin(), vals.end(), t.data_.begin());
    return t;
  }
  static Tensor from(std::vector<Index> shape, std::vector<double> vals) {
    Tensor t;
    t.shape_ = std::move(shape);
    assert(count(t.shape_) == static_cast<Index>(vals.size()));
    t.data_ = std::move(vals);
    return t;
  }

  const std::vector<Index>& shape() const { return shape_; }
  Index dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at2(Index i, Index j) { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
  double at2(Index i, Index j) const { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
  double& at3(Index i, Index j, Index k) {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double at3(Index i, Index j, Index k) const {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  /// Reinterpret the flat buffer as a rows x cols row-major matrix.
  MatMap mat(Index rows, Index cols) {
    assert(rows * cols == size());
    return MatMap(data(), rows, cols);
  }
  ConstMatMap mat(Index rows, Index cols) const {
    assert(rows * cols == size());
    return ConstMatMap(data(), rows, cols);
  }
  /// Rank-2 tensors map to their natural matrix view.
  MatMap mat() { return mat(shape_[0], shape_[1]); }
  ConstMatMap mat() const { return mat(shape_[0], shape_[1]); }

  VecMap vec() { return VecMap(data(), size()); }
  ConstVecMap vec() const { return ConstVecMap(data(), size()); }

  Tensor reshaped(std::vector<Index> shape) const {
    Tensor t = *this;
    assert(count(shape) == size());
    t.shape_ = std::move(shape);
    return t;
  }

  static Index count(const std::vector<Index>& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
  }

 private:
  std::vector<Index> shape_;
  std::vector<double> data_;
};

}  // namespace bevcal
