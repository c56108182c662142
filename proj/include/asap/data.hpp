#pragma once

// Deterministic synthetic dataset: procedurally drawn scenes (a face glyph
// with an expression, a colored shape, a plain background) paired with
// template texts, plus the four manipulation types and their mixes.
// Everything is reproducible from (seed, index) alone.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "asap/image.hpp"
#include "asap/labels.hpp"

namespace asap {

// --- tokenizer ---------------------------------------------------------------

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;

// Closed word-to-id table over the generator vocabulary; unknown words map
// to kUnkId. Ids are stable across runs and platforms.
const std::vector<std::string>& vocabulary();
int token_id(const std::string& word);
std::vector<int> tokenize(const std::string& text);
std::string detokenize(const std::vector<int>& ids);

// --- samples -----------------------------------------------------------------

enum class ManipType { none, fs, fa, ts, ta, fs_ta, fa_ts };

const char* manip_type_name(ManipType t);

// Word-level scene description retained with each generated sample; the
// caption derives from the image-truth fields, the explanation from the
// text-claim fields.
struct SceneInfo {
  int face_color = 0, face_style = 0, emotion = 0;   // original scene
  int shape_color = 0, shape_kind = 0, bg_color = 0;
  int img_face_style = 0, img_emotion = 0;           // post-manipulation image
  int txt_shape_color = 0, txt_shape_kind = 0, txt_emotion = 0;  // text claims
};

struct MediaSample {
  std::string id;
  ImageU8 image;
  std::string text, caption, explanation;
  std::vector<int> text_ids, caption_ids, explanation_ids;
  SampleLabels labels;
  ManipType manip_type = ManipType::none;
  SceneInfo scene;
};

// --- manifest ----------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::string image;  // path relative to the manifest
  std::string text;
  std::vector<std::string> fake_cls;
  Box fake_image_box{0, 0, 0, 0};
  std::vector<int> fake_text_pos;
  std::string caption, explanation;  // optional at load time
};

void save_manifest(const std::string& path,
                   const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> load_manifest(const std::string& path);

// --- generation --------------------------------------------------------------

struct MixConfig {
  // Fractions per manipulation type; must sum to 1 within 1e-6.
  std::map<ManipType, double> fractions = {
      {ManipType::none, 0.337}, {ManipType::fs, 0.11},
      {ManipType::fa, 0.11},    {ManipType::ts, 0.11},
      {ManipType::ta, 0.11},    {ManipType::fs_ta, 0.11},
      {ManipType::fa_ts, 0.113}};

  void validate() const;
  // Parses "none=0.3,fs=0.2,..."; missing types get zero.
  static MixConfig parse(const std::string& spec);
};

struct GenConfig {
  int n = 1;
  uint64_t seed = 0;
  MixConfig mix;
  int image_size = 64;
  int max_text_len = 24;
};

struct Dataset {
  std::vector<MediaSample> samples;
  std::vector<ManifestEntry> manifest;
};

// Deterministic in (seed, index); manipulation types follow the mix via
// exact largest-remainder quotas, shuffled by the seed.
Dataset generate_dataset(const GenConfig& cfg);

// Template renderings. The caption describes the (possibly manipulated)
// image content; the explanation elaborates what the text claims.
std::string stub_caption(const MediaSample& sample);
std::string stub_explanation(const MediaSample& sample);

// Writes images/<id>.png plus manifest.jsonl under dir.
void save_dataset(const Dataset& ds, const std::string& dir);

// Loads a dataset directory; caption/explanation fields may be absent.
// max_text_len controls the reconstructed y_tok length.
Dataset load_dataset(const std::string& dir, int max_text_len = 24);

}  // namespace asap
