#include "asap/masks.hpp"

namespace asap {

GuidanceMask build_guidance_mask(const std::vector<bool>& token_flags,
                                 const std::vector<bool>& patch_flags) {
  if (token_flags.empty() || patch_flags.empty())
    throw InputError("build_guidance_mask: empty flag vector");
  GuidanceMask out;
  out.g.setZero(static_cast<Eigen::Index>(token_flags.size()),
                static_cast<Eigen::Index>(patch_flags.size()));
  for (Eigen::Index i = 0; i < out.g.rows(); ++i)
    for (Eigen::Index j = 0; j < out.g.cols(); ++j)
      out.g(i, j) = (token_flags[static_cast<size_t>(i)] ||
                     patch_flags[static_cast<size_t>(j)])
                        ? 1
                        : 0;
  out.active = out.g.sum() > 0;
  return out;
}

std::vector<bool> patch_flags_from_bbox(const Box& box, int grid_rows,
                                        int grid_cols) {
  std::vector<bool> flags(static_cast<size_t>(grid_rows) *
                              static_cast<size_t>(grid_cols),
                          false);
  const Corners c = to_corners(box);
  if (box[2] <= 0.0 || box[3] <= 0.0) return flags;
  for (int r = 0; r < grid_rows; ++r) {
    const double y1 = static_cast<double>(r) / grid_rows;
    const double y2 = static_cast<double>(r + 1) / grid_rows;
    for (int col = 0; col < grid_cols; ++col) {
      const double x1 = static_cast<double>(col) / grid_cols;
      const double x2 = static_cast<double>(col + 1) / grid_cols;
      const double w = std::min(c.x2, x2) - std::max(c.x1, x1);
      const double h = std::min(c.y2, y2) - std::max(c.y1, y1);
      if (w > 0.0 && h > 0.0)
        flags[static_cast<size_t>(r) * grid_cols + col] = true;
    }
  }
  return flags;
}

PatchIndicator build_patch_indicator(const std::vector<bool>& patch_flags,
                                     int grid_rows, int grid_cols,
                                     Adjacency adjacency) {
  const size_t n = static_cast<size_t>(grid_rows) * grid_cols;
  if (patch_flags.size() != n)
    throw InputError("build_patch_indicator: flag count != rows * cols");
  PatchIndicator out;
  out.p.setConstant(static_cast<Eigen::Index>(n), -1);

  auto flagged = [&](int r, int c) {
    return r >= 0 && r < grid_rows && c >= 0 && c < grid_cols &&
           patch_flags[static_cast<size_t>(r) * grid_cols + c];
  };

  for (int r = 0; r < grid_rows; ++r) {
    for (int c = 0; c < grid_cols; ++c) {
      const Eigen::Index i = static_cast<Eigen::Index>(r) * grid_cols + c;
      if (patch_flags[static_cast<size_t>(i)]) {
        out.p(i) = 1;
        continue;
      }
      bool near = false;
      if (adjacency == Adjacency::eight) {
        for (int dr = -1; dr <= 1 && !near; ++dr)
          for (int dc = -1; dc <= 1 && !near; ++dc)
            near = (dr != 0 || dc != 0) && flagged(r + dr, c + dc);
      } else {
        near = flagged(r - 1, c) || flagged(r + 1, c) || flagged(r, c - 1) ||
               flagged(r, c + 1);
      }
      if (near) out.p(i) = 0;
    }
  }
  out.n_effective =
      static_cast<int>((out.p.array() != -1).template cast<int>().sum());
  return out;
}

}  // namespace asap
