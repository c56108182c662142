#pragma once

#include <cstdint>
#include <vector>

namespace asap {

// Row-major interleaved RGB image with 8-bit channels. The dataset
// generator draws directly in this representation so that in-memory
// samples match what a PNG round trip produces.
struct ImageU8 {
  int h = 0, w = 0;
  std::vector<uint8_t> px;  // h * w * 3

  ImageU8() = default;
  ImageU8(int height, int width)
      : h(height), w(width), px(static_cast<size_t>(height) * width * 3, 0) {}

  uint8_t& at(int y, int x, int c) {
    return px[(static_cast<size_t>(y) * w + x) * 3 + c];
  }
  uint8_t at(int y, int x, int c) const {
    return px[(static_cast<size_t>(y) * w + x) * 3 + c];
  }
};

// Same layout with pixel values in [0, 1]; the model-facing form.
struct ImageF {
  int h = 0, w = 0;
  std::vector<float> px;

  float at(int y, int x, int c) const {
    return px[(static_cast<size_t>(y) * w + x) * 3 + c];
  }
};

inline ImageF to_float(const ImageU8& img) {
  ImageF out;
  out.h = img.h;
  out.w = img.w;
  out.px.resize(img.px.size());
  for (size_t i = 0; i < img.px.size(); ++i)
    out.px[i] = static_cast<float>(img.px[i]) / 255.0f;
  return out;
}

}  // namespace asap
