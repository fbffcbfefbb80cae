#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsim {

// Row-major dense tensor. T is float in training mode, double in
// verification mode (oracles, gradient checks).
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), T(0));
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::runtime_error("tensor: nonpositive extent");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  void fill(T v) { data.assign(data.size(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

}  // namespace gsim
