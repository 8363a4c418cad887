#include "perseg/descriptors.hpp"

#include <cmath>

#include "perseg/common.hpp"

namespace perseg {

DescriptorFn pixel_stat_descriptor() {
  return [](const Tensor<float>& image) {
    check(image.rank() == 3 && image.dim(0) == 3, "descriptor: expected [3,H,W] image");
    const std::int64_t H = image.dim(1), W = image.dim(2), hw = H * W;
    constexpr int G = 8;     // thumbnail grid
    constexpr int BINS = 8;  // histogram bins per channel
    std::vector<double> out(3 * G * G + 3 * BINS, 0.0);

    for (int c = 0; c < 3; ++c) {
      std::array<double, G * G> acc{};
      std::array<std::int64_t, G * G> cnt{};
      const float* plane = image.v.data() + c * hw;
      for (std::int64_t y = 0; y < H; ++y) {
        int gy = static_cast<int>(y * G / H);
        for (std::int64_t x = 0; x < W; ++x) {
          int gx = static_cast<int>(x * G / W);
          double v = plane[y * W + x];
          acc[static_cast<std::size_t>(gy * G + gx)] += v;
          cnt[static_cast<std::size_t>(gy * G + gx)]++;
          int b = std::min(BINS - 1, static_cast<int>(v * BINS));
          out[static_cast<std::size_t>(3 * G * G + c * BINS + b)] += 1.0;
        }
      }
      for (int i = 0; i < G * G; ++i)
        out[static_cast<std::size_t>(c * G * G + i)] =
            acc[static_cast<std::size_t>(i)] / static_cast<double>(cnt[static_cast<std::size_t>(i)]);
      for (int b = 0; b < BINS; ++b)
        out[static_cast<std::size_t>(3 * G * G + c * BINS + b)] /= static_cast<double>(hw);
    }
    return out;
  };
}

std::vector<Descriptor> embed_images(const std::vector<UnlabeledSample>& samples,
                                     const DescriptorFn& fn) {
  check(!samples.empty(), "embed_images: empty sample list");
  std::vector<Descriptor> out(samples.size());
  parallel_for(static_cast<std::int64_t>(samples.size()), [&](std::int64_t i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    Descriptor d;
    d.id = s.id;
    d.vec = fn(s.image);
    out[static_cast<std::size_t>(i)] = std::move(d);
  });
  std::size_t dim = out[0].vec.size();
  for (const auto& d : out) {
    check(d.vec.size() == dim, "descriptor " + d.id + ": inconsistent dimension");
    for (double v : d.vec)
      check(std::isfinite(v), "descriptor " + d.id + ": non-finite value");
  }
  return out;
}

}  // namespace perseg
