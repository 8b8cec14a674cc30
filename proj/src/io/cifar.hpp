#pragma once

// CIFAR-10 binary batches: records of 1 label byte followed by 3072 pixel
// bytes (R, G, B planes of 32x32).

#include <filesystem>

#include "models/dataset.hpp"

namespace infusion::io {

inline constexpr std::size_t kCifarRecord = 3073;

// Features are [3, 32, 32] scaled to [0, 1].
models::Dataset load_cifar10_file(const std::filesystem::path& file);

// train: data_batch_1.bin .. data_batch_5.bin (those present, at least one);
// test: test_batch.bin.
models::Dataset load_cifar10(const std::filesystem::path& dir, bool test = false);

// Average-pools each channel by `factor` (1 leaves the data unchanged).
models::Dataset downscale_images(const models::Dataset& data, int factor);

}  // namespace infusion::io
