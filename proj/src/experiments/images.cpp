#include "experiments/images.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace infusion::experiments {

models::Dataset gen_synthetic_images(const SyntheticImageSpec& spec, std::size_t count, std::uint64_t split) {
  require(spec.classes >= 2 && spec.channels >= 1 && spec.size >= 4 && spec.bumps >= 1, ErrorCode::config,
          "invalid synthetic image settings");
  const auto C = static_cast<std::size_t>(spec.channels), S = static_cast<std::size_t>(spec.size);
  std::vector<Tensor> protos;
  Rng prng = make_rng(spec.seed, {0x1A6E, 0});
  for (int k = 0; k < spec.classes; ++k) {
    Tensor p({C, S, S}, 0.5);
    for (int b = 0; b < spec.bumps; ++b) {
      const double cy = uniform(prng, 0.15, 0.85) * spec.size, cx = uniform(prng, 0.15, 0.85) * spec.size;
      const double r = uniform(prng, 0.08, 0.2) * spec.size;
      std::vector<double> amp(C);
      for (auto& a : amp) a = uniform(prng, -0.45, 0.45);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < S; ++y)
          for (std::size_t x = 0; x < S; ++x) {
            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            p[(c * S + y) * S + x] += amp[c] * std::exp(-d2 / (2 * r * r));
          }
    }
    protos.push_back(std::move(p));
  }
  Rng rng = make_rng(spec.seed, {0x1A6E, 1, split});
  models::Dataset out;
  out.reserve(count);
  const int span = 2 * spec.max_shift + 1;
  for (std::size_t i = 0; i < count; ++i) {
    models::Example e;
    e.label = static_cast<int>(i % static_cast<std::size_t>(spec.classes));
    const int dy = static_cast<int>(uniform_index(rng, span)) - spec.max_shift;
    const int dx = static_cast<int>(uniform_index(rng, span)) - spec.max_shift;
    const Tensor& p = protos[static_cast<std::size_t>(e.label)];
    e.features = Tensor({C, S, S});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
          const auto sy = std::clamp<long>(static_cast<long>(y) - dy, 0, static_cast<long>(S) - 1);
          const auto sx = std::clamp<long>(static_cast<long>(x) - dx, 0, static_cast<long>(S) - 1);
          const double v = p[(c * S + static_cast<std::size_t>(sy)) * S + static_cast<std::size_t>(sx)];
          e.features[(c * S + y) * S + x] = std::clamp(v + spec.noise * normal(rng), 0.0, 1.0);
        }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace infusion::experiments
