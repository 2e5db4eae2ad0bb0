#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace trajrep {

// Dense row-major tensor of doubles. Shapes are small (rank <= 4).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  // Uniform in [lo, hi).
  static Tensor uniform(std::vector<int> shape, double lo, double hi, std::mt19937_64& rng);

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int numel() const { return static_cast<int>(data_.size()); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return data_[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }
  double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }
  double& at(int i, int j, int k) {
    return data_[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
  }
  double at(int i, int j, int k) const {
    return data_[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
  }

  // Value of a one-element tensor.
  double item() const;
  bool all_finite() const;
  void fill(double v);

  std::vector<double>::iterator begin() { return data_.begin(); }
  std::vector<double>::iterator end() { return data_.end(); }
  std::vector<double>::const_iterator begin() const { return data_.begin(); }
  std::vector<double>::const_iterator end() const { return data_.end(); }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::string shape_str(const std::vector<int>& shape);

// C = A*B (optionally transposed operands); accumulate adds into C.
void matmul_raw(const double* a, const double* b, double* c, int m, int k, int n,
                bool trans_a, bool trans_b, bool accumulate);

}  // namespace trajrep
