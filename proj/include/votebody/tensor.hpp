#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace votebody {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor of floating values. Value semantics; tensors that
// enter a graph are never mutated afterwards.
template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> data;
  bool requires_grad = false;

  Tensor() = default;

  explicit Tensor(Shape sh) : shape(std::move(sh)) {
    check_shape();
    data.assign(static_cast<size_t>(shape_numel(shape)), S(0));
  }

  Tensor(Shape sh, std::vector<S> values) : shape(std::move(sh)), data(std::move(values)) {
    check_shape();
    if (static_cast<int64_t>(data.size()) != shape_numel(shape)) {
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    }
  }

  static Tensor full(Shape sh, S value) {
    Tensor t(std::move(sh));
    for (S& x : t.data) x = value;
    return t;
  }

  static Tensor scalar(S value) { return Tensor({1}, {value}); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t extent(int axis) const { return shape[static_cast<size_t>(axis)]; }

  S& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  S at(int64_t i) const { return data[static_cast<size_t>(i)]; }
  S& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  S at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
  S& at(int64_t i, int64_t j, int64_t k) {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  S at(int64_t i, int64_t j, int64_t k) const {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  bool all_finite() const {
    for (S x : data)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.requires_grad = requires_grad;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }

 private:
  void check_shape() const {
    for (int64_t e : shape) {
      if (e <= 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
    }
  }
};

}  // namespace votebody
