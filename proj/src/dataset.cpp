#include "semifreddo/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "semifreddo/rng.hpp"

namespace semifreddo {

namespace {

uint32_t read_be32(std::istream& in, const char* what) {
  unsigned char b[4];
  in.read((char*)b, 4);
  require(in.gcount() == 4, std::string("unexpected end of file reading ") + what);
  return ((uint32_t)b[0] << 24) | ((uint32_t)b[1] << 16) | ((uint32_t)b[2] << 8) |
         b[3];
}

void write_be32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v >> 24), (unsigned char)(v >> 16),
                        (unsigned char)(v >> 8), (unsigned char)v};
  out.write((char*)b, 4);
}

}  // namespace

Dataset Dataset::slice(const std::vector<int>& idx) const {
  Dataset out;
  out.images = Tensor((int)idx.size(), images.c, images.h, images.w);
  out.labels.resize(idx.size());
  size_t stride = (size_t)images.c * images.h * images.w;
  for (size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(&images.v[(size_t)idx[i] * stride], stride,
                &out.images.v[i * stride]);
    out.labels[i] = labels[idx[i]];
  }
  return out;
}

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  std::ifstream fi(images_path, std::ios::binary);
  require(fi.good(), "cannot open " + images_path);
  uint32_t magic = read_be32(fi, "image magic");
  require(magic == 0x00000803,
          "bad image magic: expected 0x803, got 0x" + std::to_string(magic));
  uint32_t n = read_be32(fi, "image count");
  uint32_t rows = read_be32(fi, "rows");
  uint32_t cols = read_be32(fi, "cols");

  std::ifstream fl(labels_path, std::ios::binary);
  require(fl.good(), "cannot open " + labels_path);
  uint32_t lmagic = read_be32(fl, "label magic");
  require(lmagic == 0x00000801,
          "bad label magic: expected 0x801, got 0x" + std::to_string(lmagic));
  uint32_t ln = read_be32(fl, "label count");
  require(ln == n, "label/image count mismatch: " + std::to_string(n) +
                       " images vs " + std::to_string(ln) + " labels");

  Dataset d;
  d.images = Tensor((int)n, 1, (int)rows, (int)cols);
  d.labels.resize(n);
  std::vector<unsigned char> buf((size_t)rows * cols);
  for (uint32_t i = 0; i < n; ++i) {
    fi.read((char*)buf.data(), (std::streamsize)buf.size());
    require((size_t)fi.gcount() == buf.size(),
            "unexpected end of file in image data");
    float* dst = &d.images.v[(size_t)i * rows * cols];
    for (size_t p = 0; p < buf.size(); ++p) dst[p] = buf[p] / 255.0f;
  }
  std::vector<unsigned char> lbuf(n);
  fl.read((char*)lbuf.data(), (std::streamsize)n);
  require((size_t)fl.gcount() == n, "unexpected end of file in label data");
  for (uint32_t i = 0; i < n; ++i) d.labels[i] = lbuf[i];
  return d;
}

void save_idx(const Dataset& data, const std::string& images_path,
              const std::string& labels_path) {
  require(data.images.c == 1, "IDX stores single-channel images");
  std::ofstream fi(images_path, std::ios::binary);
  require(fi.good(), "cannot open " + images_path + " for writing");
  write_be32(fi, 0x00000803);
  write_be32(fi, (uint32_t)data.count());
  write_be32(fi, (uint32_t)data.images.h);
  write_be32(fi, (uint32_t)data.images.w);
  for (float v : data.images.v) {
    float clamped = std::min(1.0f, std::max(0.0f, v));
    unsigned char b = (unsigned char)std::lround(clamped * 255.0f);
    fi.write((char*)&b, 1);
  }
  std::ofstream fl(labels_path, std::ios::binary);
  require(fl.good(), "cannot open " + labels_path + " for writing");
  write_be32(fl, 0x00000801);
  write_be32(fl, (uint32_t)data.count());
  for (int l : data.labels) {
    unsigned char b = (unsigned char)l;
    fl.write((char*)&b, 1);
  }
}

Dataset make_synthetic(int count, int classes, TensorShape shape,
                       uint32_t seed) {
  require(count > 0 && classes >= 2, "synthetic dataset needs data");
  Dataset d;
  d.images = Tensor(count, shape.channels, shape.height, shape.width);
  d.labels.resize(count);
  Rng rng(seed);
  const float pi = 3.14159265358979f;
  for (int i = 0; i < count; ++i) {
    int k = i % classes;  // exact class balance for any count % classes == 0
    d.labels[i] = k;
    // Orientation is the only class cue; frequency jitters per image and the
    // phase is random, so a classifier has to read the grating angle out of
    // noisy texture rather than latch onto a per-class intensity statistic.
    float theta = pi * (float)k / (float)classes;
    float freq = 0.5f * (0.9f + 0.2f * rng.uniform());
    float fx = freq * std::cos(theta), fy = freq * std::sin(theta);
    float phase = rng.uniform(0.0f, 2.0f * pi);
    for (int c = 0; c < shape.channels; ++c)
      for (int y = 0; y < shape.height; ++y)
        for (int x = 0; x < shape.width; ++x) {
          float s = 0.5f + 0.18f * std::sin(fx * (float)x + fy * (float)y + phase);
          s += 0.35f * (rng.uniform() - 0.5f) * 2.0f;
          d.images.at(i, c, y, x) = std::min(1.0f, std::max(0.0f, s));
        }
  }
  return d;
}

}  // namespace semifreddo
