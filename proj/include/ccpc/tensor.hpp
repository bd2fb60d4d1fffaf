// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ccpc/errors.hpp"

namespace ccpc {

/// NCHW extents.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense NCHW tensor with value semantics.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape_(s), data_(s.numel(), fill) {}
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
               shape_.w +
           x;
  }
  T& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const {
    return data_[offset(n, c, y, x)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Pointer to the start of sample `n`.
  T* sample(int n) { return data_.data() + offset(n, 0, 0, 0); }
  const T* sample(int n) const { return data_.data() + offset(n, 0, 0, 0); }
  /// Pointer to the (n, c) spatial plane.
  T* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const T* plane(int n, int c) const {
    return data_.data() + offset(n, c, 0, 0);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(Shape s) {
    if (s.numel() != data_.size()) {
      throw DimensionError("reshape " + shape_.str() + " -> " + s.str());
    }
    shape_ = s;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      out[i] = static_cast<U>(data_[i]);
    }
    return out;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

inline std::string Shape::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" +
         std::to_string(h) + "x" + std::to_string(w);
}

// Channel-axis helpers used by the grouped attention and the entropy model.

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int end) {
  if (begin < 0 || end > x.c() || begin > end) {
    throw DimensionError("slice_channels [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") of " + x.shape().str());
  }
  Tensor<T> out(x.n(), end - begin, x.h(), x.w());
  const std::size_t plane = x.shape().plane();
  for (int n = 0; n < x.n(); ++n) {
    std::copy_n(x.plane(n, begin), plane * (end - begin), out.sample(n));
  }
  return out;
}

/// Writes `src` into channels [begin, begin + src.c()) of `dst`.
template <typename T>
void assign_channels(Tensor<T>& dst, const Tensor<T>& src, int begin) {
  if (src.n() != dst.n() || src.h() != dst.h() || src.w() != dst.w() ||
      begin + src.c() > dst.c()) {
    throw DimensionError("assign_channels " + src.shape().str() + " into " +
                         dst.shape().str());
  }
  const std::size_t plane = src.shape().plane();
  for (int n = 0; n < src.n(); ++n) {
    std::copy_n(src.sample(n), plane * src.c(), dst.plane(n, begin));
  }
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  const Shape s0 = parts.front()->shape();
  int total = 0;
  for (const auto* p : parts) {
    if (p->n() != s0.n || p->h() != s0.h || p->w() != s0.w) {
      throw DimensionError("concat " + p->shape().str() + " with " + s0.str());
    }
    total += p->c();
  }
  Tensor<T> out(s0.n, total, s0.h, s0.w);
  int at = 0;
  for (const auto* p : parts) {
    assign_channels(out, *p, at);
    at += p->c();
  }
  return out;
}

template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
  if (dst.shape() != src.shape()) {
    throw DimensionError("add " + src.shape().str() + " to " +
                         dst.shape().str());
  }
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace ccpc
