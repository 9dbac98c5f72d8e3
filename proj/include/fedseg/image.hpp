#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedseg/tensor.hpp"

namespace fedseg {

// 8-bit interleaved RGB.
struct ImageU8 {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> rgb;  // h*w*3
};

// PNG or JPEG, dispatched on the file signature; other formats are decoded
// to RGB (gray replicated, alpha dropped).
ImageU8 decode_image_file(const std::string& path);
void encode_png(const std::string& path, const ImageU8& img);

// u8 -> float HxWx3 scaled by `rescale` (1/255 maps into [0,1]).
Tensor image_to_float(const ImageU8& img, double rescale);
// floats clamped to [0,1] then rounded to u8.
ImageU8 float_to_image(const Tensor& hw3);

// Sample positions use the half-pixel convention
// src = (dst + 0.5) * (in/out) - 0.5 for bilinear and
// src = floor((dst + 0.5) * (in/out)) for nearest, clamped to bounds.
Tensor resize_bilinear(const Tensor& hw3, int out_h, int out_w);
Tensor resize_nearest(const Tensor& hw3, int out_h, int out_w);

}  // namespace fedseg
