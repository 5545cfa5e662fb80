#include "semifreddo/nn.hpp"

namespace semifreddo {

StreamingPool::StreamingPool(int channels, int width, int height)
    : channels_(channels), width_(width), height_(height),
      sums_(channels, 0.0) {
  require(channels >= 1 && width >= 1 && height >= 1,
          "StreamingPool: bad frame geometry");
}

void StreamingPool::push_row(const float* row) {
  require(rows_ < height_, "StreamingPool: extra row past end of frame");
  for (int c = 0; c < channels_; ++c) {
    double acc = 0;
    for (int x = 0; x < width_; ++x) acc += (double)row[c * width_ + x];
    sums_[c] += acc;
  }
  ++rows_;
}

std::vector<float> StreamingPool::finalize() const {
  require(rows_ == height_, "incomplete frame");
  std::vector<float> mean(channels_);
  double cnt = (double)width_ * height_;
  for (int c = 0; c < channels_; ++c) mean[c] = (float)(sums_[c] / cnt);
  return mean;
}

}  // namespace semifreddo
