#include "asap/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "asap/image_io.hpp"
#include "asap/masks.hpp"
#include "asap/rng.hpp"

namespace fs = std::filesystem;

namespace asap {

// --- palettes ----------------------------------------------------------------

namespace {

struct Rgb {
  uint8_t r, g, b;
};

constexpr int kNumColors = 6;
const std::array<Rgb, kNumColors> kPalette = {{{210, 60, 50},
                                               {60, 180, 80},
                                               {60, 90, 210},
                                               {220, 200, 60},
                                               {150, 70, 190},
                                               {230, 140, 50}}};
const std::array<const char*, kNumColors> kColorWords = {
    "red", "green", "blue", "yellow", "purple", "orange"};

constexpr int kNumBg = 3;
const std::array<Rgb, kNumBg> kBgPalette = {
    {{24, 24, 30}, {105, 105, 112}, {94, 66, 40}}};
const std::array<const char*, kNumBg> kBgWords = {"black", "gray", "brown"};

constexpr int kNumShapes = 4;
const std::array<const char*, kNumShapes> kShapeWords = {"square", "circle",
                                                         "triangle", "ring"};

constexpr int kNumEmotions = 3;
const std::array<const char*, kNumEmotions> kEmotionWords = {"happy", "sad",
                                                             "surprised"};

const std::array<const char*, 2> kStyleWords = {"round", "boxy"};

const Rgb kInk = {26, 22, 22};

}  // namespace

// --- tokenizer ---------------------------------------------------------------

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v = {"<pad>", "<unk>"};
    const char* glue[] = {"a",       "the",    "on",      "near",  "looks",
                          "face",    "background", "picture", "shows",
                          "looking", "beside", "image",   "depicts", "and",
                          "object",  "in",     "view",    "sits",  "that"};
    for (const char* w : glue) v.push_back(w);
    for (const char* w : kColorWords) v.push_back(w);
    for (const char* w : kBgWords) v.push_back(w);
    for (const char* w : kShapeWords) v.push_back(w);
    for (const char* w : kEmotionWords) v.push_back(w);
    for (const char* w : kStyleWords) v.push_back(w);
    return v;
  }();
  return vocab;
}

namespace {

const std::unordered_map<std::string, int>& vocab_index() {
  static const std::unordered_map<std::string, int> index = [] {
    std::unordered_map<std::string, int> m;
    const auto& v = vocabulary();
    for (size_t i = 0; i < v.size(); ++i) m[v[i]] = static_cast<int>(i);
    return m;
  }();
  return index;
}

}  // namespace

int token_id(const std::string& word) {
  auto it = vocab_index().find(word);
  return it == vocab_index().end() ? kUnkId : it->second;
}

std::vector<int> tokenize(const std::string& text) {
  std::vector<int> ids;
  std::istringstream in(text);
  std::string word;
  while (in >> word) ids.push_back(token_id(word));
  return ids;
}

std::string detokenize(const std::vector<int>& ids) {
  const auto& v = vocabulary();
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += (id >= 0 && id < static_cast<int>(v.size())) ? v[static_cast<size_t>(id)]
                                                        : "<unk>";
  }
  return out;
}

const char* manip_type_name(ManipType t) {
  switch (t) {
    case ManipType::none: return "none";
    case ManipType::fs: return "fs";
    case ManipType::fa: return "fa";
    case ManipType::ts: return "ts";
    case ManipType::ta: return "ta";
    case ManipType::fs_ta: return "fs+ta";
    case ManipType::fa_ts: return "fa+ts";
  }
  return "?";
}

// --- drawing -----------------------------------------------------------------

namespace {

void put(ImageU8& im, int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= im.w || y >= im.h) return;
  im.at(y, x, 0) = c.r;
  im.at(y, x, 1) = c.g;
  im.at(y, x, 2) = c.b;
}

void fill_rect(ImageU8& im, int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) put(im, x, y, c);
}

void fill_circle(ImageU8& im, int cx, int cy, int r, Rgb c) {
  for (int y = cy - r; y <= cy + r; ++y)
    for (int x = cx - r; x <= cx + r; ++x)
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) put(im, x, y, c);
}

void fill_ring(ImageU8& im, int cx, int cy, int ro, int ri, Rgb c) {
  for (int y = cy - ro; y <= cy + ro; ++y)
    for (int x = cx - ro; x <= cx + ro; ++x) {
      const int d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      if (d2 <= ro * ro && d2 >= ri * ri) put(im, x, y, c);
    }
}

void fill_triangle(ImageU8& im, int cx, int cy, int half, Rgb c) {
  for (int y = cy - half; y <= cy + half; ++y) {
    const double frac =
        static_cast<double>(y - (cy - half)) / static_cast<double>(2 * half);
    const int hw = static_cast<int>(std::lround(frac * half));
    for (int x = cx - hw; x <= cx + hw; ++x) put(im, x, y, c);
  }
}

void draw_shape(ImageU8& im, int kind, int cx, int cy, int half, Rgb c) {
  switch (kind) {
    case 0: fill_rect(im, cx - half, cy - half, cx + half, cy + half, c); break;
    case 1: fill_circle(im, cx, cy, half, c); break;
    case 2: fill_triangle(im, cx, cy, half, c); break;
    default: fill_ring(im, cx, cy, half, std::max(1, half - 3), c); break;
  }
}

void draw_mouth(ImageU8& im, int emotion, int cx, int cy, int r) {
  const int mw = std::max(3, (r * 3) / 5);
  const int ybase = cy + (r * 2) / 5;
  const int c = std::max(2, r / 3);
  if (emotion == 2) {  // surprised: open mouth
    fill_circle(im, cx, ybase, std::max(2, r / 4), kInk);
    return;
  }
  for (int dx = -mw; dx <= mw; ++dx) {
    const double f = static_cast<double>(dx * dx) / (mw * mw);
    const int y = emotion == 0
                      ? ybase + c - static_cast<int>(std::lround(c * f))   // smile
                      : ybase - c + static_cast<int>(std::lround(c * f));  // frown
    for (int dy = 0; dy < 3; ++dy) put(im, cx + dx, y + dy, kInk);
  }
}

void draw_face(ImageU8& im, int style, int emotion, Rgb color, int cx, int cy,
               int r) {
  if (style == 0)
    fill_circle(im, cx, cy, r, color);
  else
    fill_rect(im, cx - r, cy - r, cx + r, cy + r, color);
  const int er = std::max(1, r / 5);
  const int ex = (r * 2) / 5, ey = r / 3;
  fill_circle(im, cx - ex, cy - ey, er, kInk);
  fill_circle(im, cx + ex, cy - ey, er, kInk);
  draw_mouth(im, emotion, cx, cy, r);
}

// High-frequency +-amp noise inside the manipulated region: the editing
// artifact that makes manipulated patches statistically distinct.
void dither_region(ImageU8& im, int x0, int y0, int x1, int y1, Rng& rng,
                   int amp) {
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      if (x < 0 || y < 0 || x >= im.w || y >= im.h) continue;
      for (int c = 0; c < 3; ++c) {
        const int d = static_cast<int>(rng.below(2 * amp + 1)) - amp;
        const int v = static_cast<int>(im.at(y, x, c)) + d;
        im.at(y, x, c) = static_cast<uint8_t>(std::clamp(v, 0, 255));
      }
    }
}

// --- text templates ----------------------------------------------------------

struct TextBuild {
  std::vector<std::string> words;
  int em_pos = -1, sc_pos = -1, sh_pos = -1;
};

TextBuild build_text(const SceneInfo& s, int variant) {
  TextBuild b;
  auto w = [&](const std::string& word) { b.words.push_back(word); };
  auto em = [&] {
    b.em_pos = static_cast<int>(b.words.size());
    w(kEmotionWords[static_cast<size_t>(s.txt_emotion)]);
  };
  auto sc = [&] {
    b.sc_pos = static_cast<int>(b.words.size());
    w(kColorWords[static_cast<size_t>(s.txt_shape_color)]);
  };
  auto sh = [&] {
    b.sh_pos = static_cast<int>(b.words.size());
    w(kShapeWords[static_cast<size_t>(s.txt_shape_kind)]);
  };
  const std::string fc = kColorWords[static_cast<size_t>(s.face_color)];
  const std::string fstyle = kStyleWords[static_cast<size_t>(s.face_style)];
  const std::string bg = kBgWords[static_cast<size_t>(s.bg_color)];

  switch (variant) {
    case 0:
      w("a"); w(fc); w(fstyle); w("face"); w("looks"); em(); w("near");
      w("a"); sc(); sh(); w("on"); w("a"); w(bg); w("background");
      break;
    case 1:
      w("on"); w("a"); w(bg); w("background"); w("a"); w(fc); w(fstyle);
      w("face"); w("looks"); em(); w("near"); w("a"); sc(); sh();
      break;
    default:
      w("a"); sc(); sh(); w("sits"); w("near"); w("a"); w(fc); w(fstyle);
      w("face"); w("that"); w("looks"); em();
      break;
  }
  return b;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace

std::string stub_caption(const MediaSample& sample) {
  const SceneInfo& s = sample.scene;
  std::vector<std::string> w = {
      "the", "picture", "shows", "a",
      kColorWords[static_cast<size_t>(s.face_color)],
      kStyleWords[static_cast<size_t>(s.img_face_style)],
      "face", "looking",
      kEmotionWords[static_cast<size_t>(s.img_emotion)],
      "beside", "a",
      kColorWords[static_cast<size_t>(s.shape_color)],
      kShapeWords[static_cast<size_t>(s.shape_kind)]};
  return join_words(w);
}

std::string stub_explanation(const MediaSample& sample) {
  const SceneInfo& s = sample.scene;
  std::vector<std::string> w = {
      "the", "image", "depicts", "a",
      kEmotionWords[static_cast<size_t>(s.txt_emotion)],
      kColorWords[static_cast<size_t>(s.face_color)],
      kStyleWords[static_cast<size_t>(s.face_style)],
      "face", "and", "a",
      kColorWords[static_cast<size_t>(s.txt_shape_color)],
      kShapeWords[static_cast<size_t>(s.txt_shape_kind)],
      "object", "in", "view"};
  return join_words(w);
}

// --- mix ----------------------------------------------------------------------

void MixConfig::validate() const {
  double sum = 0;
  for (const auto& [type, f] : fractions) {
    if (f < 0) throw ConfigError("mix: negative fraction");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw ConfigError("mix: fractions sum to " + std::to_string(sum) +
                      ", expected 1");
}

MixConfig MixConfig::parse(const std::string& spec) {
  MixConfig cfg;
  for (auto& [type, f] : cfg.fractions) f = 0.0;
  static const std::map<std::string, ManipType> names = {
      {"none", ManipType::none},   {"pristine", ManipType::none},
      {"fs", ManipType::fs},       {"fa", ManipType::fa},
      {"ts", ManipType::ts},       {"ta", ManipType::ta},
      {"fs+ta", ManipType::fs_ta}, {"fs_ta", ManipType::fs_ta},
      {"fa+ts", ManipType::fa_ts}, {"fa_ts", ManipType::fa_ts}};
  std::stringstream in(spec);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      throw ConfigError("mix: expected name=fraction, got '" + item + "'");
    const std::string name = item.substr(0, eq);
    auto it = names.find(name);
    if (it == names.end()) throw ConfigError("mix: unknown type '" + name + "'");
    try {
      cfg.fractions[it->second] = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("mix: bad fraction in '" + item + "'");
    }
  }
  return cfg;
}

// --- generation ---------------------------------------------------------------

namespace {

// Exact largest-remainder quotas per type, shuffled deterministically.
std::vector<ManipType> assign_types(const GenConfig& cfg) {
  const std::array<ManipType, 7> order = {
      ManipType::none, ManipType::fs,    ManipType::fa,   ManipType::ts,
      ManipType::ta,   ManipType::fs_ta, ManipType::fa_ts};
  std::vector<int> counts(order.size(), 0);
  std::vector<double> remainders(order.size(), 0.0);
  int assigned = 0;
  for (size_t i = 0; i < order.size(); ++i) {
    auto it = cfg.mix.fractions.find(order[i]);
    const double f = it == cfg.mix.fractions.end() ? 0.0 : it->second;
    const double exact = f * cfg.n;
    counts[i] = static_cast<int>(std::floor(exact));
    remainders[i] = exact - counts[i];
    assigned += counts[i];
  }
  while (assigned < cfg.n) {
    size_t best = 0;
    for (size_t i = 1; i < order.size(); ++i)
      if (remainders[i] > remainders[best]) best = i;
    counts[best] += 1;
    remainders[best] = -1;
    ++assigned;
  }
  std::vector<ManipType> types;
  types.reserve(static_cast<size_t>(cfg.n));
  for (size_t i = 0; i < order.size(); ++i)
    types.insert(types.end(), static_cast<size_t>(counts[i]), order[i]);

  Rng shuffle_rng(Rng::substream(cfg.seed, 0x517F));
  for (size_t i = types.size(); i > 1; --i)
    std::swap(types[i - 1], types[shuffle_rng.below(i)]);
  return types;
}

MediaSample generate_sample(int index, ManipType type, const GenConfig& cfg) {
  Rng rng(Rng::substream(cfg.seed, 1000003ull + static_cast<uint64_t>(index)));
  const int size = cfg.image_size;

  SceneInfo s;
  s.face_color = static_cast<int>(rng.below(kNumColors));
  s.emotion = static_cast<int>(rng.below(kNumEmotions));
  s.face_style = 0;
  s.shape_kind = static_cast<int>(rng.below(kNumShapes));
  do {
    s.shape_color = static_cast<int>(rng.below(kNumColors));
  } while (s.shape_color == s.face_color);
  s.bg_color = static_cast<int>(rng.below(kNumBg));
  s.img_face_style = s.face_style;
  s.img_emotion = s.emotion;
  s.txt_shape_color = s.shape_color;
  s.txt_shape_kind = s.shape_kind;
  s.txt_emotion = s.emotion;

  const int face_r = 12 + static_cast<int>(rng.below(4));
  const int margin = face_r + 3;
  const int face_cx = margin + static_cast<int>(rng.below(
                                   static_cast<uint64_t>(size - 2 * margin)));
  const int face_cy = margin + static_cast<int>(rng.below(
                                   static_cast<uint64_t>(size - 2 * margin)));

  const int half = 5 + static_cast<int>(rng.below(4));
  int shape_cx = 0, shape_cy = 0;
  {
    const int smargin = half + 1;
    bool placed = false;
    for (int attempt = 0; attempt < 12 && !placed; ++attempt) {
      shape_cx = smargin + static_cast<int>(
                               rng.below(static_cast<uint64_t>(size - 2 * smargin)));
      shape_cy = smargin + static_cast<int>(
                               rng.below(static_cast<uint64_t>(size - 2 * smargin)));
      const int dx = shape_cx - face_cx, dy = shape_cy - face_cy;
      placed = dx * dx + dy * dy >=
               (face_r + half + 4) * (face_r + half + 4);
    }
    if (!placed) {
      // Deterministic fallback: the corner farthest from the face.
      shape_cx = face_cx < size / 2 ? size - smargin - 2 : smargin + 2;
      shape_cy = face_cy < size / 2 ? size - smargin - 2 : smargin + 2;
    }
  }
  const int variant = static_cast<int>(rng.below(3));

  const bool manip_fs = type == ManipType::fs || type == ManipType::fs_ta;
  const bool manip_fa = type == ManipType::fa || type == ManipType::fa_ts;
  const bool manip_ts = type == ManipType::ts || type == ManipType::fa_ts;
  const bool manip_ta = type == ManipType::ta || type == ManipType::fs_ta;

  if (manip_fs) s.img_face_style = 1;
  if (manip_fa)
    s.img_emotion = static_cast<int>(
        (s.emotion + 1 + rng.below(kNumEmotions - 1)) % kNumEmotions);
  if (manip_ts) {
    s.txt_shape_color = static_cast<int>(
        (s.shape_color + 1 + rng.below(kNumColors - 1)) % kNumColors);
    s.txt_shape_kind = static_cast<int>(
        (s.shape_kind + 1 + rng.below(kNumShapes - 1)) % kNumShapes);
  }
  if (manip_ta)
    s.txt_emotion = static_cast<int>(
        (s.emotion + 1 + rng.below(kNumEmotions - 1)) % kNumEmotions);

  // Raster the post-manipulation scene.
  MediaSample sample;
  sample.image = ImageU8(size, size);
  fill_rect(sample.image, 0, 0, size - 1, size - 1,
            kBgPalette[static_cast<size_t>(s.bg_color)]);
  draw_shape(sample.image, s.shape_kind, shape_cx, shape_cy, half,
             kPalette[static_cast<size_t>(s.shape_color)]);
  draw_face(sample.image, s.img_face_style, s.img_emotion,
            kPalette[static_cast<size_t>(s.face_color)], face_cx, face_cy,
            face_r);

  const int bx0 = std::max(0, face_cx - face_r - 2);
  const int by0 = std::max(0, face_cy - face_r - 2);
  const int bx1 = std::min(size - 1, face_cx + face_r + 2);
  const int by1 = std::min(size - 1, face_cy + face_r + 2);
  if (manip_fs || manip_fa)
    dither_region(sample.image, bx0, by0, bx1, by1, rng, 16);

  const TextBuild text = build_text(s, variant);

  char idbuf[16];
  std::snprintf(idbuf, sizeof(idbuf), "s%06d", index);
  sample.id = idbuf;
  sample.scene = s;
  sample.manip_type = type;
  sample.text = join_words(text.words);
  sample.text_ids = tokenize(sample.text);
  sample.caption = stub_caption(sample);
  sample.caption_ids = tokenize(sample.caption);
  sample.explanation = stub_explanation(sample);
  sample.explanation_ids = tokenize(sample.explanation);

  SampleLabels& lab = sample.labels;
  lab.pristine = type == ManipType::none;
  lab.y_bin = lab.pristine ? 0 : 1;
  lab.y_mul = {manip_fs ? 1 : 0, manip_fa ? 1 : 0, manip_ts ? 1 : 0,
               manip_ta ? 1 : 0};
  lab.y_tok.assign(sample.text_ids.size(), 0);
  if (manip_ts) {
    lab.y_tok[static_cast<size_t>(text.sc_pos)] = 1;
    lab.y_tok[static_cast<size_t>(text.sh_pos)] = 1;
  }
  if (manip_ta) lab.y_tok[static_cast<size_t>(text.em_pos)] = 1;
  if (manip_fs || manip_fa) {
    const double inv = 1.0 / size;
    lab.y_box = {(bx0 + bx1 + 1) * 0.5 * inv, (by0 + by1 + 1) * 0.5 * inv,
                 (bx1 - bx0 + 1) * inv, (by1 - by0 + 1) * inv};
  }
  lab.validate();
  return sample;
}

ManifestEntry manifest_entry(const MediaSample& s) {
  ManifestEntry e;
  e.id = s.id;
  e.image = "images/" + s.id + ".png";
  e.text = s.text;
  for (int c = 0; c < 4; ++c)
    if (s.labels.y_mul[static_cast<size_t>(c)] == 1)
      e.fake_cls.push_back(manip_class_name(static_cast<ManipClass>(c)));
  e.fake_image_box = s.labels.y_box;
  for (size_t i = 0; i < s.labels.y_tok.size(); ++i)
    if (s.labels.y_tok[i] == 1) e.fake_text_pos.push_back(static_cast<int>(i));
  e.caption = s.caption;
  e.explanation = s.explanation;
  return e;
}

}  // namespace

Dataset generate_dataset(const GenConfig& cfg) {
  if (cfg.n < 1) throw ConfigError("generate_dataset: n must be >= 1");
  cfg.mix.validate();
  const auto types = assign_types(cfg);
  Dataset ds;
  ds.samples.reserve(static_cast<size_t>(cfg.n));
  ds.manifest.reserve(static_cast<size_t>(cfg.n));
  for (int i = 0; i < cfg.n; ++i) {
    ds.samples.push_back(
        generate_sample(i, types[static_cast<size_t>(i)], cfg));
    ds.manifest.push_back(manifest_entry(ds.samples.back()));
  }
  return ds;
}

// --- manifest I/O --------------------------------------------------------------

void save_manifest(const std::string& path,
                   const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  for (const auto& e : entries) {
    nlohmann::json j;
    j["id"] = e.id;
    j["image"] = e.image;
    j["text"] = e.text;
    j["fake_cls"] = e.fake_cls;
    j["fake_image_box"] = e.fake_image_box;
    j["fake_text_pos"] = e.fake_text_pos;
    j["caption"] = e.caption;
    j["explanation"] = e.explanation;
    out << j.dump() << "\n";
  }
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open: " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("manifest line " + std::to_string(line_no) + ": " +
                        e.what());
    }
    for (const char* key :
         {"id", "image", "text", "fake_cls", "fake_image_box", "fake_text_pos"})
      if (!j.contains(key))
        throw SchemaError("manifest line " + std::to_string(line_no) +
                          ": missing key " + key);
    ManifestEntry e;
    try {
      e.id = j["id"].get<std::string>();
      e.image = j["image"].get<std::string>();
      e.text = j["text"].get<std::string>();
      e.fake_cls = j["fake_cls"].get<std::vector<std::string>>();
      e.fake_image_box = j["fake_image_box"].get<Box>();
      e.fake_text_pos = j["fake_text_pos"].get<std::vector<int>>();
      e.caption = j.value("caption", std::string{});
      e.explanation = j.value("explanation", std::string{});
    } catch (const nlohmann::json::exception& ex) {
      throw SchemaError("manifest line " + std::to_string(line_no) + ": " +
                        ex.what());
    }
    static const std::vector<std::string> known = {
        "face_swap", "face_attribute", "text_swap", "text_attribute"};
    for (const auto& c : e.fake_cls)
      if (std::find(known.begin(), known.end(), c) == known.end())
        throw SchemaError("manifest line " + std::to_string(line_no) +
                          ": unknown fake_cls '" + c + "'");
    out.push_back(std::move(e));
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  for (const auto& s : ds.samples)
    write_png((fs::path(dir) / "images" / (s.id + ".png")).string(), s.image);
  save_manifest((fs::path(dir) / "manifest.jsonl").string(), ds.manifest);
}

Dataset load_dataset(const std::string& dir, int max_text_len) {
  Dataset ds;
  ds.manifest = load_manifest((fs::path(dir) / "manifest.jsonl").string());
  ds.samples.reserve(ds.manifest.size());
  for (const auto& e : ds.manifest) {
    MediaSample s;
    s.id = e.id;
    s.image = read_png((fs::path(dir) / e.image).string());
    s.text = e.text;
    s.text_ids = tokenize(e.text);
    s.caption = e.caption;
    s.caption_ids = tokenize(e.caption);
    s.explanation = e.explanation;
    s.explanation_ids = tokenize(e.explanation);

    SampleLabels& lab = s.labels;
    lab.pristine = e.fake_cls.empty();
    lab.y_bin = lab.pristine ? 0 : 1;
    for (const auto& c : e.fake_cls) {
      if (c == "face_swap") lab.y_mul[0] = 1;
      if (c == "face_attribute") lab.y_mul[1] = 1;
      if (c == "text_swap") lab.y_mul[2] = 1;
      if (c == "text_attribute") lab.y_mul[3] = 1;
    }
    lab.y_box = e.fake_image_box;
    const int n_tok = std::min<int>(static_cast<int>(s.text_ids.size()),
                                    max_text_len);
    lab.y_tok.assign(static_cast<size_t>(n_tok), 0);
    for (int pos : e.fake_text_pos) {
      if (pos < 0 || pos >= n_tok)
        throw SchemaError("manifest sample " + e.id +
                          ": fake_text_pos outside real tokens");
      lab.y_tok[static_cast<size_t>(pos)] = 1;
    }
    lab.validate();

    const bool manip_fs = lab.y_mul[0] == 1, manip_fa = lab.y_mul[1] == 1;
    const bool manip_ts = lab.y_mul[2] == 1, manip_ta = lab.y_mul[3] == 1;
    if (manip_fs && manip_ta) s.manip_type = ManipType::fs_ta;
    else if (manip_fa && manip_ts) s.manip_type = ManipType::fa_ts;
    else if (manip_fs) s.manip_type = ManipType::fs;
    else if (manip_fa) s.manip_type = ManipType::fa;
    else if (manip_ts) s.manip_type = ManipType::ts;
    else if (manip_ta) s.manip_type = ManipType::ta;
    else s.manip_type = ManipType::none;

    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace asap
