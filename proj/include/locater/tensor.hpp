#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "locater/errors.hpp"

namespace locater {

// Dense row-major array of doubles. Everything numeric in the library flows
// through this type; shape is a plain vector of axis lengths.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel(shape_), 0.0);
  }

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<size_t>(numel(shape_)) != data_.size())
      throw ShapeError("tensor: shape/data length mismatch");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static int64_t numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw ShapeError("tensor: negative axis length");
      n *= d;
    }
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }

  // 2-D accessors; most of the model lives on [rows x cols] matrices.
  int rows() const {
    require_ndim(2);
    return shape_[0];
  }
  int cols() const {
    require_ndim(2);
    return shape_[1];
  }

  double& operator()(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double operator()(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }

  double& at3(int i, int j, int k) {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double at3(int i, int j, int k) const {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<int> shape) const {
    if (numel(shape) != size()) throw ShapeError("reshape: element count mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  void require_ndim(int n) const {
    if (ndim() != n) throw ShapeError("tensor: expected " + std::to_string(n) + "-d, got " + shape_str());
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace locater
