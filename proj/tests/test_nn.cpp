#include <doctest.h>

#include <functional>
#include <numeric>

#include "semifreddo/nn.hpp"

#include "helpers.hpp"

using namespace semifreddo;
using testutil::fd_max_rel_error;
using testutil::fill_uniform;

namespace {

using DT = TensorT<double>;

// Scalar objective: weighted sum of a tensor with fixed random coefficients,
// so dL/dy is simply those coefficients.
struct Probe {
  std::vector<double> coeff;
  explicit Probe(size_t n, std::mt19937& g) : coeff(n) {
    fill_uniform(coeff, g);
  }
  double operator()(const DT& y) const {
    double s = 0;
    for (size_t i = 0; i < y.v.size(); ++i) s += coeff[i] * y.v[i];
    return s;
  }
  DT as_dy(const DT& like) const {
    DT d(like.n, like.c, like.h, like.w);
    d.v = coeff;
    return d;
  }
};

}  // namespace

TEST_CASE("alpha blend gradients match finite differences") {
  auto g = testutil::make_gen(11);
  for (int trial = 0; trial < 20; ++trial) {
    DT xf(2, 4, 3, 3), xt(2, 4, 3, 3);
    std::vector<double> w(4);
    fill_uniform(xf, g);
    fill_uniform(xt, g);
    fill_uniform(w, g, -2.0, 2.0);
    Probe probe(xf.v.size(), g);

    DT dxf(2, 4, 3, 3), dxt(2, 4, 3, 3);
    std::vector<double> dw(4, 0.0);
    DT y = nn::alpha_blend(xf, xt, w);
    nn::alpha_blend_backward(xf, xt, w, probe.as_dy(y), dxf, dxt, dw);

    auto loss = [&] { return probe(nn::alpha_blend(xf, xt, w)); };
    CHECK(fd_max_rel_error(w, dw, loss) < 1e-6);
    CHECK(fd_max_rel_error(xf.v, dxf.v, loss) < 1e-6);
    CHECK(fd_max_rel_error(xt.v, dxt.v, loss) < 1e-6);
  }
}

TEST_CASE("depthwise conv gradients, both strides") {
  auto g = testutil::make_gen(12);
  for (int stride : {1, 2}) {
    DT x(2, 3, 5, 5);
    std::vector<double> k(3 * 9);
    fill_uniform(x, g);
    fill_uniform(k, g);
    DT y = nn::depthwise_conv3x3(x, k, stride);
    Probe probe(y.v.size(), g);

    DT dx(2, 3, 5, 5);
    std::vector<double> dk(3 * 9, 0.0);
    nn::depthwise_conv3x3_backward(x, k, stride, probe.as_dy(y), dx, dk);

    auto loss = [&] { return probe(nn::depthwise_conv3x3(x, k, stride)); };
    CHECK(fd_max_rel_error(k, dk, loss) < 1e-6);
    CHECK(fd_max_rel_error(x.v, dx.v, loss) < 1e-6);
  }
}

TEST_CASE("grouped pointwise conv gradients with bias") {
  auto g = testutil::make_gen(13);
  for (int groups : {1, 2, 4}) {
    DT x(2, 8, 4, 4);
    int out_ch = 8;
    std::vector<double> W(out_ch * (8 / groups)), bias(out_ch);
    fill_uniform(x, g);
    fill_uniform(W, g);
    fill_uniform(bias, g);
    DT y = nn::pointwise_conv(x, W, out_ch, groups, &bias);
    Probe probe(y.v.size(), g);

    DT dx(2, 8, 4, 4);
    std::vector<double> dW(W.size(), 0.0), db(out_ch, 0.0);
    nn::pointwise_conv_backward(x, W, out_ch, groups, probe.as_dy(y), dx, dW,
                                &db);
    auto loss = [&] {
      return probe(nn::pointwise_conv(x, W, out_ch, groups, &bias));
    };
    CHECK(fd_max_rel_error(W, dW, loss) < 1e-6);
    CHECK(fd_max_rel_error(bias, db, loss) < 1e-6);
    CHECK(fd_max_rel_error(x.v, dx.v, loss) < 1e-6);
  }
}

TEST_CASE("dense 3x3 conv gradients") {
  auto g = testutil::make_gen(14);
  for (int stride : {1, 2}) {
    DT x(1, 3, 6, 6);
    std::vector<double> W(4 * 3 * 9);
    fill_uniform(x, g);
    fill_uniform(W, g);
    DT y = nn::conv3x3(x, W, 4, stride);
    Probe probe(y.v.size(), g);

    DT dx(1, 3, 6, 6);
    std::vector<double> dW(W.size(), 0.0);
    nn::conv3x3_backward(x, W, 4, stride, probe.as_dy(y), dx, dW);
    auto loss = [&] { return probe(nn::conv3x3(x, W, 4, stride)); };
    CHECK(fd_max_rel_error(W, dW, loss) < 1e-6);
    CHECK(fd_max_rel_error(x.v, dx.v, loss) < 1e-6);
  }
}

TEST_CASE("batch norm train-mode gradients") {
  auto g = testutil::make_gen(15);
  DT x(3, 4, 3, 3);
  std::vector<double> gamma(4), beta(4);
  fill_uniform(x, g);
  fill_uniform(gamma, g, 0.5, 1.5);
  fill_uniform(beta, g);

  auto fwd = [&] {
    std::vector<double> mm(4, 0.0), mv(4, 1.0);
    nn::BnSaved<double> saved;
    return nn::batch_norm_train(x, gamma, beta, mm, mv, saved, false);
  };
  DT y = fwd();
  Probe probe(y.v.size(), g);

  std::vector<double> mm(4, 0.0), mv(4, 1.0);
  nn::BnSaved<double> saved;
  nn::batch_norm_train(x, gamma, beta, mm, mv, saved, false);
  DT dx(3, 4, 3, 3);
  std::vector<double> dgamma(4, 0.0), dbeta(4, 0.0);
  nn::batch_norm_train_backward(x, gamma, saved, probe.as_dy(y), dx, dgamma,
                                dbeta);

  auto loss = [&] { return probe(fwd()); };
  CHECK(fd_max_rel_error(gamma, dgamma, loss) < 1e-5);
  CHECK(fd_max_rel_error(beta, dbeta, loss) < 1e-5);
  CHECK(fd_max_rel_error(x.v, dx.v, loss) < 1e-5);
}

TEST_CASE("relu, pooling and softmax-xent gradients") {
  auto g = testutil::make_gen(16);
  DT x(2, 5, 4, 4);
  fill_uniform(x, g);
  DT y = nn::relu(x);
  Probe probe(y.v.size(), g);
  DT dx(2, 5, 4, 4);
  nn::relu_backward(x, probe.as_dy(y), dx);
  auto loss = [&] { return probe(nn::relu(x)); };
  CHECK(fd_max_rel_error(x.v, dx.v, loss) < 1e-5);

  DT p = nn::global_avg_pool(x);
  Probe probe2(p.v.size(), g);
  DT dx2(2, 5, 4, 4);
  nn::global_avg_pool_backward(x, probe2.as_dy(p), dx2);
  auto loss2 = [&] { return probe2(nn::global_avg_pool(x)); };
  CHECK(fd_max_rel_error(x.v, dx2.v, loss2) < 1e-6);

  DT logits(4, 6, 1, 1);
  fill_uniform(logits, g, -3.0, 3.0);
  std::vector<int> labels = {0, 3, 5, 2};
  DT dlogits;
  nn::softmax_cross_entropy(logits, labels, dlogits);
  auto loss3 = [&] {
    DT scratch;
    return nn::softmax_cross_entropy(logits, labels, scratch);
  };
  CHECK(fd_max_rel_error(logits.v, dlogits.v, loss3) < 1e-6);
}

TEST_CASE("channel shuffle is the ShuffleNet transpose and inverts cleanly") {
  auto perm = nn::shuffle_permutation(6, 2);
  // output channel k*g+j reads input j*n+k, n=3
  std::vector<int> expect = {0, 3, 1, 4, 2, 5};
  CHECK(perm == expect);

  auto g = testutil::make_gen(17);
  TensorT<float> x(1, 8, 2, 2);
  fill_uniform(x, g);
  auto y = nn::channel_shuffle(x, 2);
  auto back = nn::permute_channels(y, nn::invert_permutation(perm = nn::shuffle_permutation(8, 2)));
  CHECK(back.v == x.v);
}

TEST_CASE("cross-core shuffle swaps upper halves and is an involution") {
  auto g = testutil::make_gen(18);
  TensorT<float> a(2, 6, 3, 3), b(2, 6, 3, 3);
  fill_uniform(a, g);
  fill_uniform(b, g);
  TensorT<float> a1, b1, a2, b2;
  nn::cross_core_shuffle(a, b, a1, b1);
  CHECK(a1.at(0, 0, 1, 1) == a.at(0, 0, 1, 1));   // lower half kept
  CHECK(a1.at(0, 4, 1, 1) == b.at(0, 4, 1, 1));   // upper half swapped
  CHECK(b1.at(0, 4, 1, 1) == a.at(0, 4, 1, 1));
  nn::cross_core_shuffle(a1, b1, a2, b2);
  CHECK(a2.v == a.v);
  CHECK(b2.v == b.v);
}

TEST_CASE("streaming pool equals batch pooling") {
  auto g = testutil::make_gen(19);

  SUBCASE("exact on integer-valued frames") {
    TensorT<float> x(1, 3, 16, 16);
    std::uniform_int_distribution<int> d(-8, 8);
    for (auto& v : x.v) v = (float)d(g);
    StreamingPool pool(3, 16, 16);
    std::vector<float> row(3 * 16);
    for (int y = 0; y < 16; ++y) {
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 16; ++i) row[c * 16 + i] = x.at(0, c, y, i);
      pool.push_row(row.data());
    }
    auto mean = pool.finalize();
    auto ref = nn::global_avg_pool(x);
    for (int c = 0; c < 3; ++c) CHECK(mean[c] == ref.at(0, c, 0, 0));
  }

  SUBCASE("within 1 ulp on random 256x256 frames") {
    TensorT<float> x(1, 2, 256, 256);
    fill_uniform(x, g);
    StreamingPool pool(2, 256, 256);
    std::vector<float> row(2 * 256);
    for (int y = 0; y < 256; ++y) {
      for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 256; ++i) row[c * 256 + i] = x.at(0, c, y, i);
      pool.push_row(row.data());
    }
    auto mean = pool.finalize();
    auto ref = nn::global_avg_pool(x);
    for (int c = 0; c < 2; ++c) {
      float lo = std::nextafter(ref.at(0, c, 0, 0), -1e30f);
      float hi = std::nextafter(ref.at(0, c, 0, 0), 1e30f);
      CHECK(mean[c] >= lo);
      CHECK(mean[c] <= hi);
    }
  }

  SUBCASE("incomplete frame is an error") {
    StreamingPool pool(1, 4, 4);
    std::vector<float> row(4, 1.0f);
    pool.push_row(row.data());
    CHECK_THROWS_WITH_AS(pool.finalize(), doctest::Contains("incomplete"),
                         std::runtime_error);
  }
}
