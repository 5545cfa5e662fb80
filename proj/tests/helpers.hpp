#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "semifreddo/tensor.hpp"

namespace testutil {

using semifreddo::TensorT;

inline std::mt19937 make_gen(uint32_t seed) { return std::mt19937(seed); }

template <typename T>
void fill_uniform(std::vector<T>& v, std::mt19937& g, T lo = T(-1),
                  T hi = T(1)) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& x : v) x = (T)d(g);
}

template <typename T>
void fill_uniform(TensorT<T>& t, std::mt19937& g, T lo = T(-1), T hi = T(1)) {
  fill_uniform(t.v, g, lo, hi);
}

// Max relative error between an analytic gradient and central finite
// differences of `loss` with respect to `params`, in double precision.
inline double fd_max_rel_error(std::vector<double>& params,
                               const std::vector<double>& analytic,
                               const std::function<double()>& loss,
                               double h = 1e-5) {
  double worst = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    double keep = params[i];
    params[i] = keep + h;
    double up = loss();
    params[i] = keep - h;
    double dn = loss();
    params[i] = keep;
    double fd = (up - dn) / (2 * h);
    double denom = std::max({std::fabs(fd), std::fabs(analytic[i]), 1e-4});
    worst = std::max(worst, std::fabs(fd - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace testutil
