#include "trajrep/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace trajrep {

namespace {
std::size_t shape_prod(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(shape_prod(shape_), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_prod(shape_) != data_.size()) {
    throw std::invalid_argument("shape " + trajrep::shape_str(shape_) + " does not match data length " +
                                std::to_string(data_.size()));
  }
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::uniform(std::vector<int> shape, double lo, double hi, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data_) v = dist(rng);
  return t;
}

std::string Tensor::shape_str() const { return trajrep::shape_str(shape_); }

double Tensor::item() const {
  if (data_.size() != 1) {
    throw std::logic_error("item() on tensor of shape " + shape_str());
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream ss;
  ss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) ss << 'x';
    ss << shape[i];
  }
  ss << ']';
  return ss.str();
}

void matmul_raw(const double* a, const double* b, double* c, int m, int k, int n,
                bool trans_a, bool trans_b, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<std::size_t>(m) * n);
  if (!trans_a && !trans_b) {
    // c[i][j] += a[i][p] * b[p][j], vector-friendly over j
    for (int i = 0; i < m; ++i) {
      const double* ai = a + static_cast<std::size_t>(i) * k;
      double* ci = c + static_cast<std::size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        const double av = ai[p];
        if (av == 0.0) continue;
        const double* bp = b + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // c[i][j] += a[i][p] * b[j][p]
    for (int i = 0; i < m; ++i) {
      const double* ai = a + static_cast<std::size_t>(i) * k;
      double* ci = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* bj = b + static_cast<std::size_t>(j) * k;
        double s = 0.0;
        for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
        ci[j] += s;
      }
    }
  } else if (trans_a && !trans_b) {
    // c[i][j] += a[p][i] * b[p][j]
    for (int p = 0; p < k; ++p) {
      const double* ap = a + static_cast<std::size_t>(p) * m;
      const double* bp = b + static_cast<std::size_t>(p) * n;
      for (int i = 0; i < m; ++i) {
        const double av = ap[i];
        if (av == 0.0) continue;
        double* ci = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      double* ci = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int p = 0; p < k; ++p) {
          s += a[static_cast<std::size_t>(p) * m + i] * b[static_cast<std::size_t>(j) * k + p];
        }
        ci[j] += s;
      }
    }
  }
}

}  // namespace trajrep
