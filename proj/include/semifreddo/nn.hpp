#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "semifreddo/tensor.hpp"

namespace semifreddo {
namespace nn {

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// ---------------------------------------------------------------------------
// Alpha blending: per-channel gate between the frozen and trainable streams.
// y = sigmoid(w_c) * x_f + (1 - sigmoid(w_c)) * x_t

template <typename T>
TensorT<T> alpha_blend(const TensorT<T>& xf, const TensorT<T>& xt,
                       const std::vector<T>& w) {
  require(xf.n == xt.n && xf.shape() == xt.shape(),
          "alpha_blend: shape mismatch");
  require((int)w.size() == xf.c, "alpha_blend: logit count != channels");
  TensorT<T> y(xf.n, xf.c, xf.h, xf.w);
  long long hw = (long long)xf.h * xf.w;
  for (int n = 0; n < xf.n; ++n)
    for (int c = 0; c < xf.c; ++c) {
      T a = sigmoid(w[c]);
      size_t base = ((size_t)n * xf.c + c) * hw;
      for (long long i = 0; i < hw; ++i)
        y.v[base + i] = a * xf.v[base + i] + (T(1) - a) * xt.v[base + i];
    }
  return y;
}

template <typename T>
void alpha_blend_backward(const TensorT<T>& xf, const TensorT<T>& xt,
                          const std::vector<T>& w, const TensorT<T>& dy,
                          TensorT<T>& dxf, TensorT<T>& dxt,
                          std::vector<T>& dw) {
  long long hw = (long long)xf.h * xf.w;
  for (int n = 0; n < xf.n; ++n)
    for (int c = 0; c < xf.c; ++c) {
      T a = sigmoid(w[c]);
      T dsig = a * (T(1) - a);
      size_t base = ((size_t)n * xf.c + c) * hw;
      T acc = 0;
      for (long long i = 0; i < hw; ++i) {
        T g = dy.v[base + i];
        dxf.v[base + i] += a * g;
        dxt.v[base + i] += (T(1) - a) * g;
        acc += (xf.v[base + i] - xt.v[base + i]) * g;
      }
      dw[c] += dsig * acc;
    }
}

// ---------------------------------------------------------------------------
// Channel shuffle: reshape (g, n) -> transpose -> flatten.
// Output channel k*g + j reads input channel j*n + k.

inline std::vector<int> shuffle_permutation(int channels, int groups) {
  require(groups >= 1 && channels % groups == 0,
          "channel_shuffle: channels not divisible by groups");
  int n = channels / groups;
  std::vector<int> src(channels);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < groups; ++j) src[k * groups + j] = j * n + k;
  return src;
}

template <typename T>
TensorT<T> permute_channels(const TensorT<T>& x, const std::vector<int>& src) {
  TensorT<T> y(x.n, x.c, x.h, x.w);
  long long hw = (long long)x.h * x.w;
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      std::copy_n(&x.v[((size_t)n * x.c + src[c]) * hw], hw,
                  &y.v[((size_t)n * x.c + c) * hw]);
  return y;
}

template <typename T>
TensorT<T> channel_shuffle(const TensorT<T>& x, int groups) {
  return permute_channels(x, shuffle_permutation(x.c, groups));
}

inline std::vector<int> invert_permutation(const std::vector<int>& src) {
  std::vector<int> inv(src.size());
  for (size_t i = 0; i < src.size(); ++i) inv[src[i]] = (int)i;
  return inv;
}

// ---------------------------------------------------------------------------
// Cross-core shuffle: swap the upper channel halves of the two streams.

template <typename T>
void cross_core_shuffle(const TensorT<T>& a, const TensorT<T>& b,
                        TensorT<T>& a_out, TensorT<T>& b_out) {
  require(a.n == b.n && a.shape() == b.shape(),
          "cross_core_shuffle: shape mismatch");
  require(a.c % 2 == 0, "cross_core_shuffle: odd channel count");
  int half = a.c / 2;
  a_out = TensorT<T>(a.n, a.c, a.h, a.w);
  b_out = TensorT<T>(a.n, a.c, a.h, a.w);
  long long hw = (long long)a.h * a.w;
  for (int n = 0; n < a.n; ++n) {
    size_t lo = (size_t)n * a.c * hw;
    size_t hi = lo + (size_t)half * hw;
    std::copy_n(&a.v[lo], half * hw, &a_out.v[lo]);
    std::copy_n(&b.v[hi], half * hw, &a_out.v[hi]);
    std::copy_n(&b.v[lo], half * hw, &b_out.v[lo]);
    std::copy_n(&a.v[hi], half * hw, &b_out.v[hi]);
  }
}

// ---------------------------------------------------------------------------
// Depthwise 3x3 convolution, zero padding 1, stride 1 or 2.

template <typename T>
TensorT<T> depthwise_conv3x3(const TensorT<T>& x, const std::vector<T>& k,
                             int stride) {
  require(stride == 1 || stride == 2, "depthwise: stride must be 1 or 2");
  require((int)k.size() == x.c * 9, "depthwise: kernel size mismatch");
  int oh = (x.h + stride - 1) / stride, ow = (x.w + stride - 1) / stride;
  TensorT<T> y(x.n, x.c, oh, ow);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      const T* kc = &k[(size_t)c * 9];
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T acc = 0;
          for (int i = 0; i < 3; ++i) {
            int iy = oy * stride + i - 1;
            if (iy < 0 || iy >= x.h) continue;
            for (int j = 0; j < 3; ++j) {
              int ix = ox * stride + j - 1;
              if (ix < 0 || ix >= x.w) continue;
              acc += kc[i * 3 + j] * x.at(n, c, iy, ix);
            }
          }
          y.at(n, c, oy, ox) = acc;
        }
    }
  return y;
}

template <typename T>
void depthwise_conv3x3_backward(const TensorT<T>& x, const std::vector<T>& k,
                                int stride, const TensorT<T>& dy,
                                TensorT<T>& dx, std::vector<T>& dk) {
  int oh = dy.h, ow = dy.w;
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      const T* kc = &k[(size_t)c * 9];
      T* dkc = &dk[(size_t)c * 9];
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T g = dy.at(n, c, oy, ox);
          if (g == T(0)) continue;
          for (int i = 0; i < 3; ++i) {
            int iy = oy * stride + i - 1;
            if (iy < 0 || iy >= x.h) continue;
            for (int j = 0; j < 3; ++j) {
              int ix = ox * stride + j - 1;
              if (ix < 0 || ix >= x.w) continue;
              dkc[i * 3 + j] += g * x.at(n, c, iy, ix);
              dx.at(n, c, iy, ix) += g * kc[i * 3 + j];
            }
          }
        }
    }
}

// ---------------------------------------------------------------------------
// Pointwise (1x1) grouped convolution with optional bias.
// W layout: [out][in/groups].

template <typename T>
TensorT<T> pointwise_conv(const TensorT<T>& x, const std::vector<T>& W,
                          int out_ch, int groups, const std::vector<T>* bias) {
  require(groups >= 1 && x.c % groups == 0 && out_ch % groups == 0,
          "pointwise: channels not divisible by groups");
  int ipg = x.c / groups, opg = out_ch / groups;
  require((int)W.size() == out_ch * ipg, "pointwise: weight size mismatch");
  TensorT<T> y(x.n, out_ch, x.h, x.w);
  long long hw = (long long)x.h * x.w;
  for (int n = 0; n < x.n; ++n)
    for (int o = 0; o < out_ch; ++o) {
      int g = o / opg;
      const T* wo = &W[(size_t)o * ipg];
      T* yo = &y.v[((size_t)n * out_ch + o) * hw];
      if (bias) {
        for (long long i = 0; i < hw; ++i) yo[i] = (*bias)[o];
      }
      for (int ii = 0; ii < ipg; ++ii) {
        const T* xi = &x.v[((size_t)n * x.c + g * ipg + ii) * hw];
        T wv = wo[ii];
        for (long long i = 0; i < hw; ++i) yo[i] += wv * xi[i];
      }
    }
  return y;
}

template <typename T>
void pointwise_conv_backward(const TensorT<T>& x, const std::vector<T>& W,
                             int out_ch, int groups, const TensorT<T>& dy,
                             TensorT<T>& dx, std::vector<T>& dW,
                             std::vector<T>* dbias) {
  int ipg = x.c / groups, opg = out_ch / groups;
  long long hw = (long long)x.h * x.w;
  for (int n = 0; n < x.n; ++n)
    for (int o = 0; o < out_ch; ++o) {
      int g = o / opg;
      const T* gy = &dy.v[((size_t)n * out_ch + o) * hw];
      if (dbias) {
        T acc = 0;
        for (long long i = 0; i < hw; ++i) acc += gy[i];
        (*dbias)[o] += acc;
      }
      for (int ii = 0; ii < ipg; ++ii) {
        const T* xi = &x.v[((size_t)n * x.c + g * ipg + ii) * hw];
        T* gxi = &dx.v[((size_t)n * x.c + g * ipg + ii) * hw];
        T wv = W[(size_t)o * ipg + ii];
        T acc = 0;
        for (long long i = 0; i < hw; ++i) {
          acc += gy[i] * xi[i];
          gxi[i] += gy[i] * wv;
        }
        dW[(size_t)o * ipg + ii] += acc;
      }
    }
}

// ---------------------------------------------------------------------------
// Dense 3x3 convolution (stem only). W layout: [out][in][3][3].

template <typename T>
TensorT<T> conv3x3(const TensorT<T>& x, const std::vector<T>& W, int out_ch,
                   int stride) {
  int oh = (x.h + stride - 1) / stride, ow = (x.w + stride - 1) / stride;
  TensorT<T> y(x.n, out_ch, oh, ow);
  for (int n = 0; n < x.n; ++n)
    for (int o = 0; o < out_ch; ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T acc = 0;
          for (int c = 0; c < x.c; ++c) {
            const T* wc = &W[(((size_t)o * x.c) + c) * 9];
            for (int i = 0; i < 3; ++i) {
              int iy = oy * stride + i - 1;
              if (iy < 0 || iy >= x.h) continue;
              for (int j = 0; j < 3; ++j) {
                int ix = ox * stride + j - 1;
                if (ix < 0 || ix >= x.w) continue;
                acc += wc[i * 3 + j] * x.at(n, c, iy, ix);
              }
            }
          }
          y.at(n, o, oy, ox) = acc;
        }
  return y;
}

template <typename T>
void conv3x3_backward(const TensorT<T>& x, const std::vector<T>& W, int out_ch,
                      int stride, const TensorT<T>& dy, TensorT<T>& dx,
                      std::vector<T>& dW) {
  for (int n = 0; n < x.n; ++n)
    for (int o = 0; o < out_ch; ++o)
      for (int oy = 0; oy < dy.h; ++oy)
        for (int ox = 0; ox < dy.w; ++ox) {
          T g = dy.at(n, o, oy, ox);
          if (g == T(0)) continue;
          for (int c = 0; c < x.c; ++c) {
            const T* wc = &W[(((size_t)o * x.c) + c) * 9];
            T* dwc = &dW[(((size_t)o * x.c) + c) * 9];
            for (int i = 0; i < 3; ++i) {
              int iy = oy * stride + i - 1;
              if (iy < 0 || iy >= x.h) continue;
              for (int j = 0; j < 3; ++j) {
                int ix = ox * stride + j - 1;
                if (ix < 0 || ix >= x.w) continue;
                dwc[i * 3 + j] += g * x.at(n, c, iy, ix);
                dx.at(n, c, iy, ix) += g * wc[i * 3 + j];
              }
            }
          }
        }
}

// ---------------------------------------------------------------------------
// Batch normalization.

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

template <typename T>
struct BnSaved {
  std::vector<T> mean, var;  // batch stats used in the forward pass
};

template <typename T>
TensorT<T> batch_norm_train(const TensorT<T>& x, const std::vector<T>& gamma,
                            const std::vector<T>& beta,
                            std::vector<T>& moving_mean,
                            std::vector<T>& moving_var, BnSaved<T>& saved,
                            bool update_stats = true) {
  long long cnt = (long long)x.n * x.h * x.w;
  long long hw = (long long)x.h * x.w;
  saved.mean.assign(x.c, T(0));
  saved.var.assign(x.c, T(0));
  TensorT<T> y(x.n, x.c, x.h, x.w);
  for (int c = 0; c < x.c; ++c) {
    T m = 0, v = 0;
    for (int n = 0; n < x.n; ++n) {
      const T* xc = &x.v[((size_t)n * x.c + c) * hw];
      for (long long i = 0; i < hw; ++i) m += xc[i];
    }
    m /= (T)cnt;
    for (int n = 0; n < x.n; ++n) {
      const T* xc = &x.v[((size_t)n * x.c + c) * hw];
      for (long long i = 0; i < hw; ++i) v += (xc[i] - m) * (xc[i] - m);
    }
    v /= (T)cnt;
    saved.mean[c] = m;
    saved.var[c] = v;
    if (update_stats) {
      moving_mean[c] = (T(1) - (T)kBnMomentum) * moving_mean[c] + (T)kBnMomentum * m;
      moving_var[c] = (T(1) - (T)kBnMomentum) * moving_var[c] + (T)kBnMomentum * v;
    }
    T inv = T(1) / std::sqrt(v + (T)kBnEps);
    for (int n = 0; n < x.n; ++n) {
      const T* xc = &x.v[((size_t)n * x.c + c) * hw];
      T* yc = &y.v[((size_t)n * x.c + c) * hw];
      for (long long i = 0; i < hw; ++i)
        yc[i] = gamma[c] * (xc[i] - m) * inv + beta[c];
    }
  }
  return y;
}

template <typename T>
void batch_norm_train_backward(const TensorT<T>& x, const std::vector<T>& gamma,
                               const BnSaved<T>& saved, const TensorT<T>& dy,
                               TensorT<T>& dx, std::vector<T>& dgamma,
                               std::vector<T>& dbeta) {
  long long cnt = (long long)x.n * x.h * x.w;
  long long hw = (long long)x.h * x.w;
  for (int c = 0; c < x.c; ++c) {
    T m = saved.mean[c], v = saved.var[c];
    T inv = T(1) / std::sqrt(v + (T)kBnEps);
    T sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < x.n; ++n) {
      const T* xc = &x.v[((size_t)n * x.c + c) * hw];
      const T* gc = &dy.v[((size_t)n * x.c + c) * hw];
      for (long long i = 0; i < hw; ++i) {
        sum_dy += gc[i];
        sum_dy_xhat += gc[i] * (xc[i] - m) * inv;
      }
    }
    dgamma[c] += sum_dy_xhat;
    dbeta[c] += sum_dy;
    T k1 = gamma[c] * inv / (T)cnt;
    for (int n = 0; n < x.n; ++n) {
      const T* xc = &x.v[((size_t)n * x.c + c) * hw];
      const T* gc = &dy.v[((size_t)n * x.c + c) * hw];
      T* dxc = &dx.v[((size_t)n * x.c + c) * hw];
      for (long long i = 0; i < hw; ++i) {
        T xhat = (xc[i] - m) * inv;
        dxc[i] += k1 * ((T)cnt * gc[i] - sum_dy - xhat * sum_dy_xhat);
      }
    }
  }
}

template <typename T>
TensorT<T> batch_norm_eval(const TensorT<T>& x, const std::vector<T>& gamma,
                           const std::vector<T>& beta,
                           const std::vector<T>& moving_mean,
                           const std::vector<T>& moving_var) {
  TensorT<T> y(x.n, x.c, x.h, x.w);
  long long hw = (long long)x.h * x.w;
  for (int c = 0; c < x.c; ++c) {
    T inv = T(1) / std::sqrt(moving_var[c] + (T)kBnEps);
    for (int n = 0; n < x.n; ++n) {
      const T* xc = &x.v[((size_t)n * x.c + c) * hw];
      T* yc = &y.v[((size_t)n * x.c + c) * hw];
      for (long long i = 0; i < hw; ++i)
        yc[i] = gamma[c] * (xc[i] - moving_mean[c]) * inv + beta[c];
    }
  }
  return y;
}

template <typename T>
void batch_norm_eval_backward(const TensorT<T>& x, const std::vector<T>& gamma,
                              const std::vector<T>& moving_mean,
                              const std::vector<T>& moving_var,
                              const TensorT<T>& dy, TensorT<T>& dx,
                              std::vector<T>& dgamma, std::vector<T>& dbeta) {
  long long hw = (long long)x.h * x.w;
  for (int c = 0; c < x.c; ++c) {
    T inv = T(1) / std::sqrt(moving_var[c] + (T)kBnEps);
    for (int n = 0; n < x.n; ++n) {
      const T* xc = &x.v[((size_t)n * x.c + c) * hw];
      const T* gc = &dy.v[((size_t)n * x.c + c) * hw];
      T* dxc = &dx.v[((size_t)n * x.c + c) * hw];
      for (long long i = 0; i < hw; ++i) {
        dgamma[c] += gc[i] * (xc[i] - moving_mean[c]) * inv;
        dbeta[c] += gc[i];
        dxc[i] += gc[i] * gamma[c] * inv;
      }
    }
  }
}

// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> y = x;
  for (auto& v : y.v) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
void relu_backward(const TensorT<T>& x, const TensorT<T>& dy, TensorT<T>& dx) {
  for (size_t i = 0; i < x.v.size(); ++i)
    dx.v[i] += x.v[i] > T(0) ? dy.v[i] : T(0);
}

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
  TensorT<T> y(x.n, x.c, 1, 1);
  long long hw = (long long)x.h * x.w;
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      double acc = 0;
      const T* xc = &x.v[((size_t)n * x.c + c) * hw];
      for (long long i = 0; i < hw; ++i) acc += (double)xc[i];
      y.at(n, c, 0, 0) = (T)(acc / (double)hw);
    }
  return y;
}

template <typename T>
void global_avg_pool_backward(const TensorT<T>& x, const TensorT<T>& dy,
                              TensorT<T>& dx) {
  long long hw = (long long)x.h * x.w;
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      T g = dy.at(n, c, 0, 0) / (T)hw;
      T* dxc = &dx.v[((size_t)n * x.c + c) * hw];
      for (long long i = 0; i < hw; ++i) dxc[i] += g;
    }
}

// ---------------------------------------------------------------------------
// Softmax cross entropy over (N, K) logits; mean loss over the batch.

template <typename T>
T softmax_cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels,
                        TensorT<T>& dlogits) {
  int N = logits.n, K = logits.c;
  require(K >= 2, "softmax_cross_entropy: need at least 2 classes");
  require((int)labels.size() == N, "softmax_cross_entropy: label count");
  dlogits = TensorT<T>(N, K, logits.h, logits.w);
  T loss = 0;
  for (int n = 0; n < N; ++n) {
    require(labels[n] >= 0 && labels[n] < K,
            "softmax_cross_entropy: label out of range");
    T mx = logits.at(n, 0, 0, 0);
    for (int k = 1; k < K; ++k) mx = std::max(mx, logits.at(n, k, 0, 0));
    T z = 0;
    for (int k = 0; k < K; ++k) z += std::exp(logits.at(n, k, 0, 0) - mx);
    loss += std::log(z) - (logits.at(n, labels[n], 0, 0) - mx);
    for (int k = 0; k < K; ++k) {
      T p = std::exp(logits.at(n, k, 0, 0) - mx) / z;
      dlogits.at(n, k, 0, 0) = (p - (k == labels[n] ? T(1) : T(0))) / (T)N;
    }
  }
  return loss / (T)N;
}

}  // namespace nn

// ---------------------------------------------------------------------------
// Running-average accumulator for global average pooling over frames that
// arrive row by row in raster order.
class StreamingPool {
 public:
  StreamingPool(int channels, int width, int height);

  // One raster row: `row[c * width + x]` for every channel.
  void push_row(const float* row);
  int rows_seen() const { return rows_; }
  const std::vector<double>& partial_sums() const { return sums_; }

  // Exact per-channel mean; throws "incomplete frame" before the last row.
  std::vector<float> finalize() const;

 private:
  int channels_, width_, height_, rows_ = 0;
  std::vector<double> sums_;
};

}  // namespace semifreddo
