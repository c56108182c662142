#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "asap/model.hpp"
#include "gradcheck.hpp"

using namespace asap;

namespace {

ImageF random_image(Rng& rng, int size) {
  ImageF im;
  im.h = im.w = size;
  im.px.resize(static_cast<size_t>(size) * size * 3);
  for (auto& p : im.px) p = static_cast<float>(rng.uniform());
  return im;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 8;
  cfg.embed_dim = 16;
  cfg.num_heads = 2;
  cfg.num_layers_unimodal = 1;
  cfg.num_layers_multimodal = 1;
  cfg.vocab_size = 32;
  cfg.max_text_len = 6;
  return cfg;
}

}  // namespace

TEST_CASE("model config invariants") {
  ModelConfig bad;
  bad.image_size = 63;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ModelConfig{};
  bad.embed_dim = 130;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ModelConfig{};
  bad.num_layers_unimodal = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_NOTHROW(ModelConfig{}.validate());
}

TEST_CASE("encode_image shape contract and determinism") {
  ModelConfig cfg;  // 64x64, patch 8
  AsapModel<double> model(cfg, 7);
  Rng rng(3);
  Tape<double> t;

  auto im = random_image(rng, 64);
  auto f = model.encode_image(t, {im});
  CHECK(f.tokens->val[0].rows() == 64);
  CHECK(f.cls->val[0].rows() == 1);
  CHECK(f.pad_mask[0].size() == 64);
  CHECK(all_finite(f.seq));

  auto g = model.encode_image(t, {im});
  CHECK((f.seq->val[0] - g.seq->val[0]).cwiseAbs().maxCoeff() == 0.0);

  ImageF bad;
  bad.h = 63;
  bad.w = 64;
  bad.px.resize(63 * 64 * 3, 0.0f);
  CHECK_THROWS_AS(model.encode_image(t, {bad}), ShapeError);
}

TEST_CASE("encode_text padding, truncation and errors") {
  ModelConfig cfg;
  AsapModel<double> model(cfg, 7);
  Tape<double> t;

  auto empty = model.encode_text(t, {{}});
  CHECK(empty.cls->val[0].rows() == 1);
  for (bool real : empty.pad_mask[0]) CHECK_FALSE(real);
  CHECK(all_finite(empty.seq));

  std::vector<int> full(static_cast<size_t>(cfg.max_text_len), 5);
  auto f = model.encode_text(t, {full});
  for (bool real : f.pad_mask[0]) CHECK(real);
  CHECK(f.tokens->val[0].rows() == cfg.max_text_len);

  auto a = model.encode_text(t, {{1, 2, 3}});
  auto b = model.encode_text(t, {{1, 2, 3}});
  CHECK((a.seq->val[0] - b.seq->val[0]).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(model.encode_text(t, {{cfg.vocab_size}}), InputError);
  CHECK_THROWS_AS(model.encode_text(t, {{-1}}), InputError);
}

TEST_CASE("single cross-attention application matches hand values") {
  Tape<double> t;
  ParamStore<double> ps;
  Rng rng(1);
  MultiHeadAttention<double> mha(ps, "mha", 1, 1, rng);
  mha.wq.w->val[0](0, 0) = 1.0;
  mha.wk.w->val[0](0, 0) = 1.0;
  mha.wv.w->val[0](0, 0) = 1.0;
  mha.wo.w->val[0](0, 0) = 1.0;

  auto feats = [&](Mat<double> seq, int real_tokens) {
    EncodedFeatures<double> f;
    f.seq = constant<double>(std::move(seq));
    f.cls = slice_rows(t, f.seq, 0, 1);
    f.tokens = slice_rows(t, f.seq, 1,
                          static_cast<int>(f.seq->val[0].rows()) - 1);
    f.pad_mask = {std::vector<bool>(
        static_cast<size_t>(f.seq->val[0].rows() - 1), false)};
    for (int i = 0; i < real_tokens; ++i) f.pad_mask[0][i] = true;
    return f;
  };

  // 1 query over 1 key: softmax of a singleton.
  {
    auto q = feats(Mat<double>::Ones(1, 1), 0);
    auto k = feats(Mat<double>::Ones(1, 1), 0);
    auto [out, maps] = cross_attention(t, q, k, mha);
    CHECK(maps[0].weights[0][0](0, 0) == doctest::Approx(1.0));
  }
  // 1 query over 2 keys with equal logits.
  {
    auto q = feats(Mat<double>::Ones(1, 1), 0);
    Mat<double> ks(2, 1);
    ks << 1.0, 1.0;
    auto k = feats(ks, 1);
    auto [out, maps] = cross_attention(t, q, k, mha);
    CHECK(maps[0].weights[0][0](0, 0) == doctest::Approx(0.5));
    CHECK(maps[0].weights[0][0](0, 1) == doctest::Approx(0.5));
  }
  // Head dimension 1, scores (1/sqrt(1)) * [1, 0]: scaled softmax by hand.
  {
    auto q = feats(Mat<double>::Ones(1, 1), 0);
    Mat<double> ks(2, 1);
    ks << 1.0, 0.0;
    auto k = feats(ks, 1);
    auto [out, maps] = cross_attention(t, q, k, mha);
    CHECK(maps[0].weights[0][0](0, 0) == doctest::Approx(0.7310585786).epsilon(1e-6));
    CHECK(maps[0].weights[0][0](0, 1) == doctest::Approx(0.2689414214).epsilon(1e-6));
  }
}

TEST_CASE("multimodal forward: delta fusion and row-stochastic attention") {
  ModelConfig cfg = tiny_config();
  AsapModel<double> model(cfg, 11);
  Rng rng(5);
  Tape<double> t;

  std::vector<ImageF> ims = {random_image(rng, cfg.image_size),
                             random_image(rng, cfg.image_size)};
  std::vector<std::vector<int>> ids = {{3, 4, 5}, {}};  // one empty text
  auto img = model.encode_image(t, ims);
  auto txt = model.encode_text(t, ids);

  model.delta()->val[0](0, 0) = 0.0;
  auto mm0 = model.multimodal_forward(t, img, txt);
  CHECK((mm0.fused_cls->val[0] - mm0.text_biased.cls->val[0])
            .cwiseAbs()
            .maxCoeff() == 0.0);

  model.delta()->val[0](0, 0) = 1.0;
  auto mm1 = model.multimodal_forward(t, img, txt);
  Mat<double> expect =
      mm1.vision_biased.cls->val[0] + mm1.text_biased.cls->val[0];
  CHECK((mm1.fused_cls->val[0] - expect).cwiseAbs().maxCoeff() < 1e-12);

  // Row-stochastic over real keys; padded key columns carry zero weight.
  for (int b = 0; b < 2; ++b) {
    for (const auto& layer : mm1.attn_vision_biased[b].weights) {
      for (const auto& head : layer) {
        for (Eigen::Index r = 0; r < head.rows(); ++r)
          CHECK(head.row(r).sum() == doctest::Approx(1.0).epsilon(1e-5));
        for (size_t k = 0; k < txt.pad_mask[b].size(); ++k)
          if (!txt.pad_mask[b][k])
            CHECK(head.col(static_cast<Eigen::Index>(k) + 1).cwiseAbs().maxCoeff() ==
                  0.0);
      }
    }
    for (const auto& layer : mm1.attn_text_biased[b].weights)
      for (const auto& head : layer)
        for (Eigen::Index r = 0; r < head.rows(); ++r)
          CHECK(head.row(r).sum() == doctest::Approx(1.0).epsilon(1e-5));
  }
  model.delta()->val[0](0, 0) = cfg.delta_init;
}

TEST_CASE("fused cls is affine in delta (finite difference)") {
  ModelConfig cfg = tiny_config();
  AsapModel<double> model(cfg, 13);
  Rng rng(17);
  Tape<double> t;
  auto img = model.encode_image(t, {random_image(rng, cfg.image_size)});
  auto txt = model.encode_text(t, {{1, 2}});

  const double h = 1e-4;
  model.delta()->val[0](0, 0) = cfg.delta_init + h;
  auto hi = model.multimodal_forward(t, img, txt);
  model.delta()->val[0](0, 0) = cfg.delta_init - h;
  auto lo = model.multimodal_forward(t, img, txt);
  model.delta()->val[0](0, 0) = cfg.delta_init;
  auto mid = model.multimodal_forward(t, img, txt);

  Mat<double> fd = (hi.fused_cls->val[0] - lo.fused_cls->val[0]) / (2 * h);
  Mat<double> vis = mid.vision_biased.cls->val[0];
  for (Eigen::Index i = 0; i < fd.size(); ++i)
    CHECK(std::abs(fd(i) - vis(i)) / std::max(1e-3, std::abs(vis(i))) < 1e-4);
}

TEST_CASE("head outputs: ranges, shapes and the zero-input fixed point") {
  ModelConfig cfg = tiny_config();
  AsapModel<double> model(cfg, 23);
  Rng rng(29);
  Tape<double> t;
  auto img = model.encode_image(t, {random_image(rng, cfg.image_size)});
  auto txt = model.encode_text(t, {{7, 8, 9}});
  auto mm = model.multimodal_forward(t, img, txt);
  auto heads = model.run_heads(t, mm);

  const double p = heads.authenticity_prob->val[0](0, 0);
  CHECK(p > 0.0);
  CHECK(p < 1.0);
  for (int i = 0; i < 4; ++i) {
    CHECK(heads.bbox->val[0](0, i) >= 0.0);
    CHECK(heads.bbox->val[0](0, i) <= 1.0);
  }
  CHECK(heads.token_logits->val[0].rows() == cfg.max_text_len);
  CHECK(heads.patch_logits->val[0].rows() == cfg.num_patches());
  CHECK(heads.multilabel_logits->val[0].cols() == 4);

  // Zero fused vector through zero-initialized biases gives logit 0.
  MultimodalFeatures<double> fake = mm;
  fake.fused_cls = constant<double>(Mat<double>::Zero(1, cfg.embed_dim));
  auto zero_heads = model.run_heads(t, fake);
  CHECK(zero_heads.authenticity_prob->val[0](0, 0) == doctest::Approx(0.5));
}

TEST_CASE("every head output reaches encoder parameters with gradient") {
  ModelConfig cfg = tiny_config();
  AsapModel<double> model(cfg, 31);
  Rng rng(37);

  auto run = [&](auto pick) {
    Tape<double> t;
    auto img = model.encode_image(t, {random_image(rng, cfg.image_size)});
    auto txt = model.encode_text(t, {{3, 1, 4}});
    auto mm = model.multimodal_forward(t, img, txt);
    auto heads = model.run_heads(t, mm);
    model.params().zero_grads();
    backward(sum_all(t, pick(heads)));
  };

  auto patch_w = model.params().at("img/patch_proj/w");
  auto embed = model.params().at("txt/embed");

  run([](const HeadOutputs<double>& h) { return h.authenticity_prob; });
  CHECK(patch_w->grad[0].cwiseAbs().maxCoeff() > 0.0);
  CHECK(embed->grad[0].cwiseAbs().maxCoeff() > 0.0);

  run([](const HeadOutputs<double>& h) { return h.multilabel_logits; });
  CHECK(patch_w->grad[0].cwiseAbs().maxCoeff() > 0.0);

  run([](const HeadOutputs<double>& h) { return h.bbox; });
  CHECK(patch_w->grad[0].cwiseAbs().maxCoeff() > 0.0);

  run([](const HeadOutputs<double>& h) { return h.token_logits; });
  CHECK(embed->grad[0].cwiseAbs().maxCoeff() > 0.0);

  run([](const HeadOutputs<double>& h) { return h.patch_logits; });
  CHECK(patch_w->grad[0].cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("teacher copies track the student subset") {
  ModelConfig cfg = tiny_config();
  AsapModel<double> model(cfg, 41);
  TextBiasedTeacher<double> teacher(cfg);
  teacher.copy_from(model.params());

  for (auto& [name, p] : teacher.params().items()) {
    CHECK(AsapModel<double>::teacher_tracked(name));
    CHECK((p->val[0] - model.params().at(name)->val[0]).cwiseAbs().maxCoeff() ==
          0.0);
  }

  Rng rng(43);
  Tape<double> t;
  auto img = model.encode_image(t, {random_image(rng, cfg.image_size)});
  auto txt = model.encode_text(t, {{2, 3}});
  auto probs = teacher.token_probs(txt, img);
  CHECK(probs[0].rows() == cfg.max_text_len);
  for (Eigen::Index r = 0; r < probs[0].rows(); ++r)
    CHECK(probs[0].row(r).sum() == doctest::Approx(1.0).epsilon(1e-9));
}
