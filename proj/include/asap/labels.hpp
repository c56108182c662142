#pragma once

#include <array>
#include <vector>

#include "asap/box.hpp"
#include "asap/errors.hpp"

namespace asap {

// Manipulation classes, in the fixed head/metric order.
enum class ManipClass { FS = 0, FA = 1, TS = 2, TA = 3 };

inline const char* manip_class_name(ManipClass c) {
  switch (c) {
    case ManipClass::FS: return "face_swap";
    case ManipClass::FA: return "face_attribute";
    case ManipClass::TS: return "text_swap";
    case ManipClass::TA: return "text_attribute";
  }
  return "?";
}

struct SampleLabels {
  int y_bin = 0;                 // 1 = manipulated
  std::array<int, 4> y_mul{};    // FS, FA, TS, TA multi-hot
  Box y_box{0, 0, 0, 0};         // zero box when no image manipulation
  std::vector<int> y_tok;        // 0/1 per token position
  bool pristine = true;

  bool has_image_manip() const { return y_mul[0] == 1 || y_mul[1] == 1; }
  bool has_text_manip() const { return y_mul[2] == 1 || y_mul[3] == 1; }

  void validate() const {
    if (pristine) {
      if (y_bin != 0) throw InputError("labels: pristine sample with y_bin=1");
      for (int m : y_mul)
        if (m != 0) throw InputError("labels: pristine sample with y_mul set");
      if (!box_is_zero(y_box))
        throw InputError("labels: pristine sample with nonzero box");
      for (int v : y_tok)
        if (v != 0) throw InputError("labels: pristine sample with y_tok set");
    } else if (y_bin != 1) {
      throw InputError("labels: manipulated sample with y_bin=0");
    }
  }
};

}  // namespace asap
