#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vscreen/errors.hpp"

namespace vscreen {

// Dense N-dimensional array, row-major (last axis fastest). The scalar type
// is a template parameter: float for production weights and activations,
// double for gradient-check instantiations.
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> values;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    values.assign(numel_of(shape), T(0));
  }

  Tensor(std::vector<std::size_t> s, std::vector<T> v)
      : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != numel_of(shape))
      throw ShapeError("Tensor: value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
  }

  std::size_t numel() const { return values.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  T* data() { return values.data(); }
  const T* data() const { return values.data(); }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t e : s) {
      if (e == 0) throw ShapeError("Tensor: zero extent in shape " + shape_str(s));
      n *= e;
    }
    return n;
  }

  static std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
  }

  bool all_finite() const {
    for (T v : values)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape == b.shape;
}

}  // namespace vscreen
