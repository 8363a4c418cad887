#pragma once

#include <functional>
#include <string>
#include <vector>

#include "perseg/data.hpp"

namespace perseg {

struct Descriptor {
  std::string id;
  std::vector<double> vec;
};

using DescriptorFn = std::function<std::vector<double>(const Tensor<float>& image)>;

// Cheap fixed-size appearance descriptor: an 8x8 box-downsampled RGB thumb
// (192 dims) plus 8-bin per-channel intensity histograms (24 dims). The
// network layer provides the alternative pooled-backbone descriptor.
DescriptorFn pixel_stat_descriptor();

// Order-preserving extraction over a personal set; rejects non-finite
// descriptor values and inconsistent dimensions.
std::vector<Descriptor> embed_images(const std::vector<UnlabeledSample>& samples,
                                     const DescriptorFn& fn);

}  // namespace perseg
