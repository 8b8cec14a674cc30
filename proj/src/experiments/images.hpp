#pragma once

#include <cstdint>

#include "models/dataset.hpp"

namespace infusion::experiments {

// Seeded synthetic class-blob images: each class has a prototype made of a few
// coloured Gaussian bumps on a grey background; samples are the prototype
// jittered by a small translation plus pixel noise, clipped to [0, 1].
struct SyntheticImageSpec {
  int classes = 10;
  int channels = 3;
  int size = 32;
  int bumps = 3;
  double noise = 0.15;
  int max_shift = 2;
  std::uint64_t seed = 0;  // fixes the class prototypes
};

// `split` selects an independent sample stream (0 = train, 1 = test, ...).
models::Dataset gen_synthetic_images(const SyntheticImageSpec& spec, std::size_t count, std::uint64_t split);

}  // namespace infusion::experiments
