#pragma once

// Attention-map visualization: renders the head/layer-averaged text-biased
// cross-attention for one word and for the whole sentence as grayscale
// heatmaps at image resolution, with the ground-truth box overlaid.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "asap/data.hpp"
#include "asap/image_io.hpp"
#include "asap/masks.hpp"
#include "asap/model.hpp"

namespace asap {

// Fraction of a word's patch-attention mass that falls inside the box.
inline double attention_mass_in_box(const std::vector<double>& weights,
                                    const Box& box, int grid) {
  const auto flags = patch_flags_from_bbox(box, grid, grid);
  double inside = 0, total = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    total += weights[i];
    if (i < flags.size() && flags[i]) inside += weights[i];
  }
  return total > 0 ? inside / total : 0.0;
}

namespace vizdetail {

// Bilinear upsample of a grid x grid field to size x size grayscale.
inline std::vector<double> upsample(const std::vector<double>& cells, int grid,
                                    int size) {
  std::vector<double> out(static_cast<size_t>(size) * size, 0.0);
  const double scale = static_cast<double>(grid) / size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double gy = (y + 0.5) * scale - 0.5;
      const double gx = (x + 0.5) * scale - 0.5;
      const int y0 = std::clamp(static_cast<int>(std::floor(gy)), 0, grid - 1);
      const int x0 = std::clamp(static_cast<int>(std::floor(gx)), 0, grid - 1);
      const int y1 = std::min(y0 + 1, grid - 1);
      const int x1 = std::min(x0 + 1, grid - 1);
      const double fy = std::clamp(gy - y0, 0.0, 1.0);
      const double fx = std::clamp(gx - x0, 0.0, 1.0);
      const double v =
          cells[static_cast<size_t>(y0) * grid + x0] * (1 - fy) * (1 - fx) +
          cells[static_cast<size_t>(y0) * grid + x1] * (1 - fy) * fx +
          cells[static_cast<size_t>(y1) * grid + x0] * fy * (1 - fx) +
          cells[static_cast<size_t>(y1) * grid + x1] * fy * fx;
      out[static_cast<size_t>(y) * size + x] = v;
    }
  }
  return out;
}

// Min-max normalized grayscale heatmap with an optional red box outline.
inline ImageU8 heatmap_image(const std::vector<double>& cells, int grid,
                             int size, const Box& box) {
  double lo = cells[0], hi = cells[0];
  for (double v : cells) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<double> norm(cells.size());
  for (size_t i = 0; i < cells.size(); ++i)
    norm[i] = hi > lo ? (cells[i] - lo) / (hi - lo) : 0.0;
  const auto up = upsample(norm, grid, size);

  ImageU8 im(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const auto v = static_cast<uint8_t>(
          std::lround(255.0 * up[static_cast<size_t>(y) * size + x]));
      im.at(y, x, 0) = im.at(y, x, 1) = im.at(y, x, 2) = v;
    }

  if (!box_is_zero(box)) {
    const Corners c = to_corners(box);
    const int x0 = std::clamp(static_cast<int>(std::lround(c.x1 * size)), 0,
                              size - 1);
    const int x1 = std::clamp(static_cast<int>(std::lround(c.x2 * size)), 0,
                              size - 1);
    const int y0 = std::clamp(static_cast<int>(std::lround(c.y1 * size)), 0,
                              size - 1);
    const int y1 = std::clamp(static_cast<int>(std::lround(c.y2 * size)), 0,
                              size - 1);
    auto mark = [&](int y, int x) {
      im.at(y, x, 0) = 255;
      im.at(y, x, 1) = 40;
      im.at(y, x, 2) = 40;
    };
    for (int x = x0; x <= x1; ++x) {
      mark(y0, x);
      mark(y1, x);
    }
    for (int y = y0; y <= y1; ++y) {
      mark(y, x0);
      mark(y, x1);
    }
  }
  return im;
}

}  // namespace vizdetail

struct AttnVizResult {
  int word_index = -1;
  std::vector<double> word_attention;      // raw weights over patches
  std::vector<double> sentence_attention;  // mean over real words
  double word_mass_in_bbox = 0.0;
  std::string word_png, sentence_png, raw_json;
};

// Extracts the layer/head-averaged text-biased attention for one sample.
// word_index -1 picks the first manipulated token (or token 0).
template <class S>
AttnVizResult extract_word_attention(const AsapModel<S>& model,
                                     const MediaSample& sample,
                                     int word_index = -1) {
  Tape<S> t(false);
  auto img = model.encode_image(t, {to_float(sample.image)});
  auto txt = model.encode_text(t, {sample.text_ids});
  auto mm = model.multimodal_forward(t, img, txt);

  const int n_real = static_cast<int>(
      std::count(txt.pad_mask[0].begin(), txt.pad_mask[0].end(), true));
  if (n_real == 0) throw InputError("attention viz: sample has no tokens");

  if (word_index < 0) {
    word_index = 0;
    for (size_t i = 0; i < sample.labels.y_tok.size(); ++i)
      if (sample.labels.y_tok[i] == 1) {
        word_index = static_cast<int>(i);
        break;
      }
  }
  if (word_index >= n_real)
    throw InputError("attention viz: word index beyond real tokens");

  const int P = model.config().num_patches();
  const auto& avg = mm.attn_t2i_avg->val[0];  // (T+1) x (P+1), cls first

  AttnVizResult out;
  out.word_index = word_index;
  out.word_attention.resize(static_cast<size_t>(P));
  for (int j = 0; j < P; ++j)
    out.word_attention[static_cast<size_t>(j)] =
        static_cast<double>(avg(word_index + 1, j + 1));
  out.sentence_attention.assign(static_cast<size_t>(P), 0.0);
  for (int i = 0; i < n_real; ++i)
    for (int j = 0; j < P; ++j)
      out.sentence_attention[static_cast<size_t>(j)] +=
          static_cast<double>(avg(i + 1, j + 1)) / n_real;
  out.word_mass_in_bbox = attention_mass_in_box(
      out.word_attention, sample.labels.y_box, model.config().grid());
  return out;
}

// Full file-producing pipeline: two heatmap PNGs plus the raw weights.
template <class S>
AttnVizResult viz_attention(const AsapModel<S>& model,
                            const MediaSample& sample, int word_index,
                            const std::string& out_dir) {
  namespace fs = std::filesystem;
  AttnVizResult out = extract_word_attention(model, sample, word_index);
  fs::create_directories(out_dir);
  const int grid = model.config().grid();
  const int size = model.config().image_size;

  out.word_png = (fs::path(out_dir) / (sample.id + "_attn_word.png")).string();
  write_png(out.word_png, vizdetail::heatmap_image(out.word_attention, grid,
                                                   size, sample.labels.y_box));
  out.sentence_png =
      (fs::path(out_dir) / (sample.id + "_attn_sentence.png")).string();
  write_png(out.sentence_png,
            vizdetail::heatmap_image(out.sentence_attention, grid, size,
                                     sample.labels.y_box));

  out.raw_json = (fs::path(out_dir) / (sample.id + "_attn_raw.json")).string();
  std::ofstream raw(out.raw_json, std::ios::binary);
  raw.precision(17);
  raw << "{\"id\":\"" << sample.id << "\",\"word_index\":" << out.word_index
      << ",\"word_mass_in_bbox\":" << out.word_mass_in_bbox
      << ",\"word_attention\":[";
  for (size_t i = 0; i < out.word_attention.size(); ++i)
    raw << (i ? "," : "") << out.word_attention[i];
  raw << "],\"sentence_attention\":[";
  for (size_t i = 0; i < out.sentence_attention.size(); ++i)
    raw << (i ? "," : "") << out.sentence_attention[i];
  raw << "]}\n";
  return out;
}

}  // namespace asap
