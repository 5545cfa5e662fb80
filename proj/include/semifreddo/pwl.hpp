#pragma once

#include <functional>
#include <vector>

namespace semifreddo {

// Continuous piecewise linear function stored as knots; segments interpolate
// consecutive knots, boundary segments extend past the ends.
struct PwlFunction {
  std::vector<double> xs;  // strictly increasing, >= 2 knots
  std::vector<double> ys;

  int segments() const { return (int)xs.size() - 1; }
  double slope(int seg) const {
    return (ys[seg + 1] - ys[seg]) / (xs[seg + 1] - xs[seg]);
  }
  double intercept(int seg) const { return ys[seg] - slope(seg) * xs[seg]; }
};

double eval_pwl(const PwlFunction& f, double x);

struct PwlFit {
  PwlFunction f;
  double max_error = 0.0;
};

// Minimax fit with at most `budget` segments whose breakpoints lie on the
// sample grid (knots interpolate the samples). Exact dynamic program.
PwlFit fit_pwl(const std::vector<double>& x, const std::vector<double>& y,
               int budget);

// Convenience: sample f on a uniform grid of n points over [lo, hi] and fit.
PwlFit fit_pwl(const std::function<double(double)>& f, double lo, double hi,
               int budget, int grid_points = 4096);

}  // namespace semifreddo
