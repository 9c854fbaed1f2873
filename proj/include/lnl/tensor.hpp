#pragma once
// N,C,H,W tensor with an optional same-shape gradient buffer.

#include <cstddef>
#include <string>
#include <vector>

#include "lnl/common.hpp"

namespace lnl {

struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  size_t numel() const {
    return static_cast<size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

template <typename T>
struct TensorT {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty unless ensure_grad() was called

  TensorT() = default;
  explicit TensorT(Shape s) : shape(s), data(s.numel(), T(0)) {}

  T& at(int n, int c, int h, int w) {
    return data[((static_cast<size_t>(n) * shape.c + c) * shape.h + h) *
                    shape.w +
                w];
  }
  T at(int n, int c, int h, int w) const {
    return data[((static_cast<size_t>(n) * shape.c + c) * shape.h + h) *
                    shape.w +
                w];
  }

  T* plane(int n, int c) {
    return data.data() +
           (static_cast<size_t>(n) * shape.c + c) * shape.h * shape.w;
  }
  const T* plane(int n, int c) const {
    return data.data() +
           (static_cast<size_t>(n) * shape.c + c) * shape.h * shape.w;
  }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    grad.assign(data.size(), T(0));
  }

  bool operator==(const TensorT&) const = default;
};

using Tensor = TensorT<float>;

template <typename U, typename T>
TensorT<U> tensor_cast(const TensorT<T>& t) {
  TensorT<U> out(t.shape);
  for (size_t i = 0; i < t.data.size(); ++i)
    out.data[i] = static_cast<U>(t.data[i]);
  return out;
}

inline void check_same_shape(const Shape& a, const Shape& b,
                             const char* what) {
  if (!(a == b))
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() +
                     " vs " + b.str());
}

}  // namespace lnl
