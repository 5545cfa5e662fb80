#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace semifreddo {

struct TensorShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  bool operator==(const TensorShape&) const = default;
  long long pixels() const { return (long long)height * width; }
  long long numel() const { return (long long)channels * height * width; }
  std::string str() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" +
           std::to_string(width);
  }
};

// Dense NCHW tensor. float for the real engine, double for the
// finite-difference probes in the tests.
template <typename T>
struct TensorT {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  TensorT() = default;
  TensorT(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v((size_t)n_ * c_ * h_ * w_, T(0)) {}
  TensorT(int n_, TensorShape s) : TensorT(n_, s.channels, s.height, s.width) {}

  size_t size() const { return v.size(); }
  TensorShape shape() const { return {c, h, w}; }

  T& at(int in, int ic, int iy, int ix) {
    return v[(((size_t)in * c + ic) * h + iy) * w + ix];
  }
  T at(int in, int ic, int iy, int ix) const {
    return v[(((size_t)in * c + ic) * h + iy) * w + ix];
  }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }
};

using Tensor = TensorT<float>;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

}  // namespace semifreddo
