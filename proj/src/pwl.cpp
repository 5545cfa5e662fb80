#include "semifreddo/pwl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "semifreddo/tensor.hpp"  // require()

namespace semifreddo {

double eval_pwl(const PwlFunction& f, double x) {
  require(f.xs.size() >= 2, "pwl: need at least one segment");
  int n = (int)f.xs.size();
  int seg;
  if (x <= f.xs.front()) {
    seg = 0;
  } else if (x >= f.xs.back()) {
    seg = n - 2;
  } else {
    seg = (int)(std::upper_bound(f.xs.begin(), f.xs.end(), x) - f.xs.begin()) - 1;
    seg = std::min(seg, n - 2);
  }
  return f.ys[seg] + f.slope(seg) * (x - f.xs[seg]);
}

namespace {

// Max |y_m - chord(x_m)| for all chords (i, j), packed triangular.
// Upper/lower hulls grown incrementally in j give the extreme deviation of a
// line against the point set without rescanning.
class ChordErrors {
 public:
  ChordErrors(const std::vector<double>& x, const std::vector<double>& y)
      : n_((int)x.size()), cost_((size_t)n_ * (n_ - 1) / 2, 0.0f) {
    std::vector<int> upper, lower;
    for (int i = 0; i < n_; ++i) {
      upper.assign(1, i);
      lower.assign(1, i);
      for (int j = i + 1; j < n_; ++j) {
        push_hull(x, y, upper, j, +1);
        push_hull(x, y, lower, j, -1);
        double s = (y[j] - y[i]) / (x[j] - x[i]);
        double b = y[i] - s * x[i];
        double above = extreme(x, y, upper, s, +1) - b;
        double below = b - extreme(x, y, lower, s, -1);
        at(i, j) = std::max(0.0, std::max(above, below));
      }
    }
  }

  double& at(int i, int j) {
    return cost_[(size_t)i * n_ - (size_t)i * (i + 1) / 2 + (j - i - 1)];
  }

 private:
  static void push_hull(const std::vector<double>& x,
                        const std::vector<double>& y, std::vector<int>& h,
                        int j, int sign) {
    auto bad = [&](int a, int b, int c) {
      // For the upper hull keep left turns out (cross <= 0 removes b).
      double cr = (x[b] - x[a]) * (y[c] - y[a]) - (y[b] - y[a]) * (x[c] - x[a]);
      return sign > 0 ? cr >= 0 : cr <= 0;
    };
    while (h.size() >= 2 && bad(h[h.size() - 2], h.back(), j)) h.pop_back();
    h.push_back(j);
  }

  // Extreme of y_m - s*x_m along the hull: edge slopes are monotone, so
  // binary-search for the edge whose slope crosses s.  sign>0 walks the upper
  // hull (decreasing slopes, maximum); sign<0 the lower hull (increasing
  // slopes, minimum).
  static double extreme(const std::vector<double>& x,
                        const std::vector<double>& y,
                        const std::vector<int>& h, double s, int sign) {
    int lo = 0, hi = (int)h.size() - 1;
    while (lo < hi) {
      int mid = lo + (hi - lo) / 2;
      double slope =
          (y[h[mid + 1]] - y[h[mid]]) / (x[h[mid + 1]] - x[h[mid]]);
      bool go_right = sign > 0 ? slope > s : slope < s;
      if (go_right) lo = mid + 1; else hi = mid;
    }
    return y[h[lo]] - s * x[h[lo]];
  }

  int n_;
  std::vector<double> cost_;
};

}  // namespace

PwlFit fit_pwl(const std::vector<double>& x, const std::vector<double>& y,
               int budget) {
  require(budget >= 1, "pwl: segment budget must be >= 1");
  require(x.size() == y.size(), "pwl: sample size mismatch");
  int n = (int)x.size();
  require(n >= budget + 1, "pwl: need at least budget+1 samples");
  for (int i = 1; i < n; ++i)
    require(x[i] > x[i - 1], "pwl: samples must be strictly increasing in x");

  ChordErrors cost(x, y);
  const double inf = std::numeric_limits<double>::infinity();

  // dp[j] = best max-error reaching grid point j with the current segment
  // budget; fewer segments always allowed.
  std::vector<double> dp(n, inf), next(n);
  std::vector<std::vector<int>> parent(budget, std::vector<int>(n, -1));
  dp[0] = 0.0f;
  for (int s = 0; s < budget; ++s) {
    next = dp;
    for (int i = 0; i < n - 1; ++i) {
      if (dp[i] == inf) continue;
      for (int j = i + 1; j < n; ++j) {
        double e = std::max(dp[i], cost.at(i, j));
        if (e < next[j]) {
          next[j] = e;
          parent[s][j] = i;
        }
      }
    }
    dp.swap(next);
  }

  PwlFit fit;
  fit.max_error = dp[n - 1];
  std::vector<int> knots{n - 1};
  int j = n - 1;
  for (int s = budget - 1; s >= 0 && j > 0; --s) {
    int i = parent[s][j];
    if (i < 0) continue;  // this level reused a shorter split
    knots.push_back(i);
    j = i;
  }
  require(j == 0, "pwl: dp reconstruction failed");
  std::reverse(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  for (int k : knots) {
    fit.f.xs.push_back(x[k]);
    fit.f.ys.push_back(y[k]);
  }
  return fit;
}

PwlFit fit_pwl(const std::function<double(double)>& f, double lo, double hi,
               int budget, int grid_points) {
  require(grid_points >= 2 && hi > lo, "pwl: bad grid");
  std::vector<double> xs(grid_points), ys(grid_points);
  for (int i = 0; i < grid_points; ++i) {
    xs[i] = lo + (hi - lo) * (double)i / (double)(grid_points - 1);
    ys[i] = f(xs[i]);
  }
  return fit_pwl(xs, ys, budget);
}

}  // namespace semifreddo
