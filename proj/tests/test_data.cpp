#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "asap/data.hpp"
#include "asap/image_io.hpp"
#include "asap/masks.hpp"
#include "asap/rng.hpp"

using namespace asap;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double token_overlap(const std::vector<int>& a, const std::vector<int>& b) {
  std::set<int> bset(b.begin(), b.end());
  int hits = 0;
  for (int id : a) hits += bset.count(id) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("tokenizer basics") {
  CHECK(token_id("<pad>") == kPadId);
  CHECK(token_id("<unk>") == kUnkId);
  CHECK(token_id("zebra") == kUnkId);
  CHECK(vocabulary().size() <= 256);

  const std::string text = "a red round face looks happy";
  const auto ids = tokenize(text);
  CHECK(ids.size() == 6);
  CHECK(detokenize(ids) == text);
  for (int id : ids) CHECK(id != kUnkId);
}

TEST_CASE("generation is deterministic byte for byte") {
  GenConfig cfg;
  cfg.n = 24;
  cfg.seed = 99;
  auto a = generate_dataset(cfg);
  auto b = generate_dataset(cfg);

  const auto da = fresh_dir("asap_data_a"), db = fresh_dir("asap_data_b");
  save_dataset(a, da.string());
  save_dataset(b, db.string());
  CHECK(slurp(da / "manifest.jsonl") == slurp(db / "manifest.jsonl"));
  CHECK(slurp(da / "images" / (a.samples[0].id + ".png")) ==
        slurp(db / "images" / (b.samples[0].id + ".png")));
  CHECK(stub_caption(a.samples[3]) == stub_caption(b.samples[3]));
  CHECK(stub_explanation(a.samples[3]) == stub_explanation(b.samples[3]));
  fs::remove_all(da);
  fs::remove_all(db);
}

TEST_CASE("mix validation and quota assignment") {
  MixConfig bad;
  bad.fractions[ManipType::none] = 0.9;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  GenConfig all_pristine;
  all_pristine.n = 40;
  all_pristine.seed = 7;
  for (auto& [t, f] : all_pristine.mix.fractions) f = 0.0;
  all_pristine.mix.fractions[ManipType::none] = 1.0;
  auto ds = generate_dataset(all_pristine);
  for (const auto& s : ds.samples) {
    CHECK(s.labels.pristine);
    CHECK(box_is_zero(s.labels.y_box));
    CHECK(s.manip_type == ManipType::none);
  }

  GenConfig big;
  big.n = 1000;
  big.seed = 1;
  auto big_ds = generate_dataset(big);
  int pristine = 0;
  for (const auto& s : big_ds.samples) pristine += s.labels.pristine ? 1 : 0;
  const double frac = pristine / 1000.0;
  CHECK(frac >= 0.337 - 0.02);
  CHECK(frac <= 0.337 + 0.02);

  CHECK(MixConfig::parse("none=0.5,fs=0.5").fractions.at(ManipType::none) ==
        doctest::Approx(0.5));
  CHECK_THROWS_AS(MixConfig::parse("bogus=1.0"), ConfigError);
}

TEST_CASE("labels are sound on a generated corpus") {
  GenConfig cfg;
  cfg.n = 300;
  cfg.seed = 31;
  auto ds = generate_dataset(cfg);
  int with_image_manip = 0, with_text_manip = 0;
  for (const auto& s : ds.samples) {
    s.labels.validate();
    const bool img_manip = s.labels.has_image_manip();
    auto flags = patch_flags_from_bbox(s.labels.y_box, 8, 8);
    const int n_flagged =
        static_cast<int>(std::count(flags.begin(), flags.end(), true));
    CHECK((img_manip ? n_flagged > 0 : n_flagged == 0));
    with_image_manip += img_manip ? 1 : 0;

    int marked = 0;
    for (size_t i = 0; i < s.labels.y_tok.size(); ++i) {
      if (s.labels.y_tok[i] == 1) {
        ++marked;
        CHECK(i < s.text_ids.size());  // marks only real tokens
      }
    }
    CHECK((s.labels.has_text_manip() ? marked > 0 : marked == 0));
    with_text_manip += s.labels.has_text_manip() ? 1 : 0;

    CHECK(s.text_ids.size() <= 24);
    CHECK(s.image.h == 64);
    CHECK(s.image.w == 64);
  }
  CHECK(with_image_manip > 0);
  CHECK(with_text_manip > 0);
}

TEST_CASE("stub texts: overlap for pristine, divergence under manipulation") {
  GenConfig cfg;
  cfg.n = 240;
  cfg.seed = 77;
  auto ds = generate_dataset(cfg);
  for (const auto& s : ds.samples) {
    if (s.labels.pristine) {
      CHECK(token_overlap(s.caption_ids, s.text_ids) >= 0.5);
      CHECK(token_overlap(s.explanation_ids, s.text_ids) >= 0.5);
    }
    if (s.manip_type == ManipType::fa) {
      // Caption speaks about the redrawn expression, the text keeps the
      // original word.
      const std::string cap = s.caption;
      const std::string original =
          vocabulary()[static_cast<size_t>(
              tokenize(s.text)[0])];  // placeholder to keep ids alive
      (void)original;
      CHECK(s.scene.img_emotion != s.scene.emotion);
      CHECK(cap.find(vocabulary()[static_cast<size_t>(token_id(
                std::array<const char*, 3>{"happy", "sad", "surprised"}
                    [static_cast<size_t>(s.scene.img_emotion)]))]) !=
            std::string::npos);
    }
    if (s.manip_type == ManipType::fs)
      CHECK(s.caption.find("boxy") != std::string::npos);
  }
}

TEST_CASE("manifest round trip preserves every field") {
  GenConfig cfg;
  cfg.n = 16;
  cfg.seed = 5;
  auto ds = generate_dataset(cfg);
  const auto dir = fresh_dir("asap_manifest_rt");
  const auto path = (dir / "manifest.jsonl").string();
  save_manifest(path, ds.manifest);
  auto loaded = load_manifest(path);
  REQUIRE(loaded.size() == ds.manifest.size());
  for (size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].id == ds.manifest[i].id);
    CHECK(loaded[i].image == ds.manifest[i].image);
    CHECK(loaded[i].text == ds.manifest[i].text);
    CHECK(loaded[i].fake_cls == ds.manifest[i].fake_cls);
    CHECK(loaded[i].fake_image_box == ds.manifest[i].fake_image_box);
    CHECK(loaded[i].fake_text_pos == ds.manifest[i].fake_text_pos);
    CHECK(loaded[i].caption == ds.manifest[i].caption);
    CHECK(loaded[i].explanation == ds.manifest[i].explanation);
  }
  fs::remove_all(dir);
}

TEST_CASE("hand-written manifest fixture and schema errors") {
  const auto dir = fresh_dir("asap_manifest_fix");
  const auto path = (dir / "manifest.jsonl").string();
  {
    std::ofstream out(path);
    out << R"({"id":"x1","image":"images/x1.png","text":"a red round face looks happy near a blue square on a black background","fake_cls":[],"fake_image_box":[0,0,0,0],"fake_text_pos":[],"caption":"c","explanation":"e"})"
        << "\n";
    out << R"({"id":"x2","image":"images/x2.png","text":"a red round face looks sad near a blue ring on a gray background","fake_cls":["face_swap"],"fake_image_box":[0.5,0.5,0.4,0.4],"fake_text_pos":[]})"
        << "\n";
    out << R"({"id":"x3","image":"images/x3.png","text":"a red round face looks sad near a blue ring on a gray background","fake_cls":["text_attribute"],"fake_image_box":[0,0,0,0],"fake_text_pos":[5]})"
        << "\n";
  }
  auto entries = load_manifest(path);
  REQUIRE(entries.size() == 3);
  CHECK(entries[0].caption == "c");
  CHECK(entries[1].caption.empty());  // optional field
  CHECK(entries[1].fake_cls == std::vector<std::string>{"face_swap"});
  CHECK(entries[1].fake_image_box[2] == doctest::Approx(0.4));
  CHECK(entries[2].fake_text_pos == std::vector<int>{5});

  {
    std::ofstream out(path);
    out << R"({"id":"x1","text":"a"})" << "\n";
  }
  CHECK_THROWS_AS(load_manifest(path), SchemaError);

  {
    std::ofstream out(path);
    out << R"({"id":"x1","image":"i.png","text":"a","fake_cls":["bogus"],"fake_image_box":[0,0,0,0],"fake_text_pos":[]})"
        << "\n";
  }
  CHECK_THROWS_AS(load_manifest(path), SchemaError);
  fs::remove_all(dir);
}

TEST_CASE("dataset save/load round trip") {
  GenConfig cfg;
  cfg.n = 12;
  cfg.seed = 13;
  auto ds = generate_dataset(cfg);
  const auto dir = fresh_dir("asap_ds_rt");
  save_dataset(ds, dir.string());
  auto loaded = load_dataset(dir.string());
  REQUIRE(loaded.samples.size() == ds.samples.size());
  for (size_t i = 0; i < loaded.samples.size(); ++i) {
    const auto& a = ds.samples[i];
    const auto& b = loaded.samples[i];
    CHECK(a.id == b.id);
    CHECK(a.image.px == b.image.px);  // lossless round trip
    CHECK(a.text_ids == b.text_ids);
    CHECK(a.caption_ids == b.caption_ids);
    CHECK(a.explanation_ids == b.explanation_ids);
    CHECK(a.labels.y_bin == b.labels.y_bin);
    CHECK(a.labels.y_mul == b.labels.y_mul);
    CHECK(a.labels.y_tok == b.labels.y_tok);
    CHECK(a.labels.pristine == b.labels.pristine);
    CHECK(a.manip_type == b.manip_type);
    for (int j = 0; j < 4; ++j)
      CHECK(a.labels.y_box[static_cast<size_t>(j)] ==
            doctest::Approx(b.labels.y_box[static_cast<size_t>(j)]));
  }
  fs::remove_all(dir);
}

TEST_CASE("png round trip preserves random pixels") {
  Rng rng(27182);
  ImageU8 im(32, 48);
  for (auto& p : im.px) p = static_cast<uint8_t>(rng.below(256));
  const auto dir = fresh_dir("asap_png_rt");
  const auto path = (dir / "t.png").string();
  write_png(path, im);
  auto back = read_png(path);
  CHECK(back.h == im.h);
  CHECK(back.w == im.w);
  CHECK(back.px == im.px);
  fs::remove_all(dir);
}
