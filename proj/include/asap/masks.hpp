#pragma once

#include <Eigen/Core>

#include <vector>

#include "asap/box.hpp"
#include "asap/errors.hpp"

namespace asap {

enum class Adjacency { four = 4, eight = 8 };

// Token-by-patch attention guidance: rows are word tokens, columns image
// patches; an entry is 1 when the token or the patch is manipulated.
struct GuidanceMask {
  Eigen::MatrixXi g;
  bool active = false;  // false when the sample carries no manipulation
};

// Per-patch supervision target: 1 manipulated, 0 hard negative (adjacent to
// a manipulated patch), -1 ignored.
struct PatchIndicator {
  Eigen::VectorXi p;
  int n_effective = 0;  // entries != -1
};

GuidanceMask build_guidance_mask(const std::vector<bool>& token_flags,
                                 const std::vector<bool>& patch_flags);

// Flags every patch whose cell overlaps the box with strictly positive
// area; grid cells are laid out row-major.
std::vector<bool> patch_flags_from_bbox(const Box& box, int grid_rows,
                                        int grid_cols);

PatchIndicator build_patch_indicator(const std::vector<bool>& patch_flags,
                                     int grid_rows, int grid_cols,
                                     Adjacency adjacency = Adjacency::eight);

}  // namespace asap
