#pragma once

#include <string>
#include <vector>

#include "semifreddo/tensor.hpp"

namespace semifreddo {

// Images are held as one (N,C,H,W) tensor with pixel values in [0,1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int count() const { return images.n; }
  TensorShape shape() const { return images.shape(); }

  Dataset slice(const std::vector<int>& idx) const;
};

// IDX files (big-endian dims, magic 0x803 for images / 0x801 for labels).
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path);
void save_idx(const Dataset& data, const std::string& images_path,
              const std::string& labels_path);

// Deterministic 10-class grating dataset for desk-scale experiments: each
// class is an oriented sinusoid with per-sample phase jitter and noise.
Dataset make_synthetic(int count, int classes, TensorShape shape,
                       uint32_t seed);

}  // namespace semifreddo
