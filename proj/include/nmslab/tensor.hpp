#pragma once

#include <cstddef>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmslab::ad {

// Dense row-major double tensor with a lazily allocated gradient buffer.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)) {
    values.assign(size_from_shape(shape), fill);
  }

  static std::size_t size_from_shape(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  std::size_t size() const { return values.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
  void zero_grad() { grad.assign(values.size(), 0.0); }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(std::vector<std::size_t> shape, double fill = 0.0) {
  return std::make_shared<Tensor>(std::move(shape), fill);
}

inline TensorPtr make_param(std::vector<std::size_t> shape, double fill = 0.0) {
  TensorPtr t = make_tensor(std::move(shape), fill);
  t->requires_grad = true;
  return t;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const std::string& op) {
  if (a.shape != b.shape) throw std::invalid_argument(op + ": shape mismatch");
}

}  // namespace nmslab::ad
