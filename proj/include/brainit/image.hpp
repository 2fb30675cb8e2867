#pragma once

#include <string>

#include "brainit/tensor.hpp"

namespace brainit::img {

/// Images are [H,W,3] tensors in [0,1] at module boundaries and [3,H,W]
/// inside network code. Conversions are explicit.
Tensor hwc_to_chw(const Tensor& hwc);
Tensor chw_to_hwc(const Tensor& chw);

/// Bilinear resize of an [H,W,3] image.
Tensor resize(const Tensor& hwc, std::int64_t out_h, std::int64_t out_w);

Tensor clip01(Tensor img);

void write_png(const std::string& path, const Tensor& hwc);
Tensor read_png(const std::string& path);

}  // namespace brainit::img
