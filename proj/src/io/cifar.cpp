#include "io/cifar.hpp"

#include "common/container.hpp"
#include "common/error.hpp"

namespace infusion::io {

models::Dataset load_cifar10_file(const std::filesystem::path& file) {
  require(std::filesystem::exists(file), ErrorCode::missing_artifact, "CIFAR-10 file " + file.string() + " not found");
  const auto bytes = read_file_bytes(file);
  require(!bytes.empty() && bytes.size() % kCifarRecord == 0, ErrorCode::format,
          file.string() + ": length " + std::to_string(bytes.size()) + " is not a multiple of " +
              std::to_string(kCifarRecord));
  const std::size_t n = bytes.size() / kCifarRecord;
  models::Dataset out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto* rec = bytes.data() + r * kCifarRecord;
    require(rec[0] <= 9, ErrorCode::format,
            file.string() + ": record " + std::to_string(r) + " has label " + std::to_string(rec[0]) + " (> 9)");
    auto& e = out[r];
    e.label = rec[0];
    e.features = Tensor({3, 32, 32});
    for (std::size_t i = 0; i < 3072; ++i) e.features[i] = rec[1 + i] / 255.0;
  }
  return out;
}

models::Dataset load_cifar10(const std::filesystem::path& dir, bool test) {
  if (test) return load_cifar10_file(dir / "test_batch.bin");
  models::Dataset out;
  for (int b = 1; b <= 5; ++b) {
    const auto f = dir / ("data_batch_" + std::to_string(b) + ".bin");
    if (!std::filesystem::exists(f)) continue;
    auto part = load_cifar10_file(f);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  require(!out.empty(), ErrorCode::missing_artifact, "no data_batch_*.bin files in " + dir.string());
  return out;
}

models::Dataset downscale_images(const models::Dataset& data, int factor) {
  require(factor >= 1, ErrorCode::config, "downscale factor must be >= 1");
  if (factor == 1) return data;
  models::Dataset out = data;
  for (auto& e : out) {
    const auto& s = e.features.shape();
    require(s.size() == 3 && s[1] % factor == 0 && s[2] % factor == 0, ErrorCode::shape,
            "image size is not divisible by the downscale factor");
    const std::size_t c = s[0], h = s[1] / factor, w = s[2] / factor, f = static_cast<std::size_t>(factor);
    Tensor t({c, h, w});
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (std::size_t dy = 0; dy < f; ++dy)
            for (std::size_t dx = 0; dx < f; ++dx) acc += e.features[(k * s[1] + y * f + dy) * s[2] + x * f + dx];
          t[(k * h + y) * w + x] = acc / static_cast<double>(f * f);
        }
    e.features = std::move(t);
  }
  return out;
}

}  // namespace infusion::io
