#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "makevlp/errors.hpp"

namespace makevlp {

// Dense row-major tensor. Rank 0 is a scalar (one element). Training runs the
// float instantiation; the gradient checker uses the double one, where finite
// differences are not drowned by storage rounding.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> v;

  TensorT() = default;

  explicit TensorT(std::vector<int> s) : shape(std::move(s)), v(count(shape), T(0)) {}

  TensorT(std::vector<int> s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<size_t>(count(shape)) != v.size())
      throw ShapeMismatch("tensor data does not match shape");
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw ShapeMismatch("negative dimension");
      n *= d;
    }
    return n;
  }

  static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }

  static TensorT full(std::vector<int> s, T value) {
    TensorT t(std::move(s));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }

  static TensorT scalar(T value) { return TensorT({}, {value}); }

  template <typename U>
  static TensorT from(const TensorT<U>& o) {
    TensorT t(o.shape);
    for (size_t i = 0; i < o.v.size(); ++i) t.v[i] = static_cast<T>(o.v[i]);
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  int rows() const {
    if (rank() != 2) throw ShapeMismatch("rows() needs rank 2, got " + shape_string());
    return shape[0];
  }
  int cols() const {
    if (rank() != 2) throw ShapeMismatch("cols() needs rank 2, got " + shape_string());
    return shape[1];
  }

  T& at(int i) { return v[static_cast<size_t>(i)]; }
  T at(int i) const { return v[static_cast<size_t>(i)]; }
  T& at(int r, int c) { return v[static_cast<size_t>(r) * shape[1] + c]; }
  T at(int r, int c) const { return v[static_cast<size_t>(r) * shape[1] + c]; }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  std::string shape_string() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
  }

  void fill(T value) { std::fill(v.begin(), v.end(), value); }
};

using Tensor = TensorT<float>;

template <typename T>
inline void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeMismatch(std::string(op) + ": " + a.shape_string() + " vs " + b.shape_string());
}

}  // namespace makevlp
