#pragma once

// Dual-encoder manipulation detection model: a patch-based image encoder, a
// token-based text encoder, vision-biased and text-biased multimodal
// encoders with instrumented cross-attention, and five prediction heads.

#include <string>
#include <utility>
#include <vector>

#include "asap/image.hpp"
#include "asap/nn.hpp"

namespace asap {

struct ModelConfig {
  int image_size = 64;
  int patch_size = 8;
  int embed_dim = 128;
  int num_heads = 4;
  int num_layers_unimodal = 2;
  int num_layers_multimodal = 2;
  int vocab_size = 256;
  int max_text_len = 24;
  double delta_init = 0.5;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int patch_px() const { return patch_size * patch_size * 3; }
  int ffn_dim() const { return 2 * embed_dim; }
  int head_dim() const { return embed_dim / num_heads; }

  void validate() const {
    if (image_size < 1 || patch_size < 1 || embed_dim < 1 || num_heads < 1 ||
        num_layers_unimodal < 1 || num_layers_multimodal < 1 ||
        vocab_size < 1 || max_text_len < 1)
      throw ConfigError("model config: all counts must be >= 1");
    if (image_size % patch_size != 0)
      throw ConfigError("model config: image_size not divisible by patch_size");
    if (embed_dim % num_heads != 0)
      throw ConfigError("model config: embed_dim not divisible by num_heads");
  }
};

// cls plus per-position token embeddings from an encoder. `seq` is the
// [cls; tokens] matrix the multimodal encoders consume.
template <class S>
struct EncodedFeatures {
  NodePtr<S> cls;     // B slots, 1 x d
  NodePtr<S> tokens;  // B slots, L x d, cls excluded
  NodePtr<S> seq;     // B slots, (L+1) x d
  std::vector<std::vector<bool>> pad_mask;  // [B][L], true = real position
};

enum class QuerySide { text, vision };

// Raw cross-attention weights for one sample: [layer][head] row-stochastic
// matrices including the cls row/column.
struct AttentionMapData {
  std::vector<std::vector<Eigen::MatrixXd>> weights;
  QuerySide query_side = QuerySide::text;
};

template <class S>
struct MultimodalFeatures {
  EncodedFeatures<S> vision_biased;  // queries = image patches
  EncodedFeatures<S> text_biased;    // queries = word tokens
  NodePtr<S> fused_cls;              // delta * vision cls + text cls
  std::vector<AttentionMapData> attn_text_biased;
  std::vector<AttentionMapData> attn_vision_biased;
  // Layer- and head-averaged cross-attention kept in the graph for the
  // guidance loss. Shapes include the cls row/column.
  NodePtr<S> attn_t2i_avg;  // B slots, (T+1) x (P+1)
  NodePtr<S> attn_i2t_avg;  // B slots, (P+1) x (T+1)
};

template <class S>
struct HeadOutputs {
  NodePtr<S> manip_logit;        // 1 x 1, evidence the pair is manipulated
  NodePtr<S> authenticity_prob;  // sigmoid(-manip_logit), in (0, 1)
  NodePtr<S> multilabel_logits;  // 1 x 4 (FS, FA, TS, TA)
  NodePtr<S> bbox;               // 1 x 4 sigmoided (cx, cy, w, h)
  NodePtr<S> token_logits;       // max_text_len x 2
  NodePtr<S> patch_logits;       // num_patches x 1
};

template <class S>
class AsapModel {
 public:
  AsapModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(Rng::substream(seed, 0xA5A9));
    const int d = cfg_.embed_dim;
    const int f = cfg_.ffn_dim();

    patch_proj_ = Linear<S>(params_, "img/patch_proj", cfg_.patch_px(), d, rng);
    img_cls_ = params_.add("img/cls", init::normal<S>(rng, 1, d));
    img_pos_ =
        params_.add("img/pos", init::normal<S>(rng, cfg_.num_patches() + 1, d));
    for (int l = 0; l < cfg_.num_layers_unimodal; ++l)
      img_blocks_.emplace_back(params_, "img/blk" + std::to_string(l), d,
                               cfg_.num_heads, f, rng);
    img_ln_ = LayerNormLayer<S>(params_, "img/ln", d);

    txt_embed_ = params_.add("txt/embed",
                             init::normal<S>(rng, cfg_.vocab_size, d));
    txt_cls_ = params_.add("txt/cls", init::normal<S>(rng, 1, d));
    txt_pos_ =
        params_.add("txt/pos", init::normal<S>(rng, cfg_.max_text_len + 1, d));
    for (int l = 0; l < cfg_.num_layers_unimodal; ++l)
      txt_blocks_.emplace_back(params_, "txt/blk" + std::to_string(l), d,
                               cfg_.num_heads, f, rng);
    txt_ln_ = LayerNormLayer<S>(params_, "txt/ln", d);

    for (int l = 0; l < cfg_.num_layers_multimodal; ++l)
      mmv_blocks_.emplace_back(params_, "mm_v/blk" + std::to_string(l), d,
                               cfg_.num_heads, f, rng);
    mmv_ln_ = LayerNormLayer<S>(params_, "mm_v/ln", d);
    for (int l = 0; l < cfg_.num_layers_multimodal; ++l)
      mmt_blocks_.emplace_back(params_, "mm_t/blk" + std::to_string(l), d,
                               cfg_.num_heads, f, rng);
    mmt_ln_ = LayerNormLayer<S>(params_, "mm_t/ln", d);

    delta_ = params_.add(
        "fuse/delta", Mat<S>::Constant(1, 1, static_cast<S>(cfg_.delta_init)));
    tau_ = params_.add("vlc/tau", Mat<S>::Constant(1, 1, S(0.07)));

    detect_head_ = Mlp<S>(params_, "heads/detect", {d, d, d / 2, 1}, rng);
    multilabel_head_ = Mlp<S>(params_, "heads/multilabel", {d, d, 4}, rng);
    bbox_head_ = Mlp<S>(params_, "heads/bbox", {d, d, d / 2, 4}, rng);
    token_head_ = Mlp<S>(params_, "heads/token", {d, d, 2}, rng);
    patch_head_ = Mlp<S>(params_, "heads/patch", {d, 1}, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }
  const NodePtr<S>& delta() const { return delta_; }
  const NodePtr<S>& tau() const { return tau_; }

  // Clamps the contrastive temperature from below after optimizer steps.
  void clamp_tau(S floor = S(1e-3)) const {
    if (tau_->val[0](0, 0) < floor) tau_->val[0](0, 0) = floor;
  }

  EncodedFeatures<S> encode_image(Tape<S>& t,
                                  const std::vector<ImageF>& images) const {
    if (images.empty()) throw InputError("encode_image: empty batch");
    const int n = cfg_.num_patches();
    std::vector<Mat<S>> patches(images.size());
    for (size_t b = 0; b < images.size(); ++b) {
      const ImageF& im = images[b];
      if (im.h != cfg_.image_size || im.w != cfg_.image_size)
        throw ShapeError("encode_image: expected " +
                         std::to_string(cfg_.image_size) + "x" +
                         std::to_string(cfg_.image_size) + " image");
      Mat<S> p(n, cfg_.patch_px());
      const int g = cfg_.grid(), ps = cfg_.patch_size;
      for (int pr = 0; pr < g; ++pr)
        for (int pc = 0; pc < g; ++pc) {
          const int row = pr * g + pc;
          int col = 0;
          for (int y = 0; y < ps; ++y)
            for (int x = 0; x < ps; ++x)
              for (int c = 0; c < 3; ++c)
                p(row, col++) =
                    static_cast<S>(im.at(pr * ps + y, pc * ps + x, c));
        }
      patches[b] = std::move(p);
    }
    auto x = patch_proj_(t, constant<S>(std::move(patches)));
    x = concat_rows(t, img_cls_, x);
    x = add(t, x, img_pos_);
    for (const auto& blk : img_blocks_) x = blk(t, x, nullptr);
    x = img_ln_(t, x);
    EncodedFeatures<S> out;
    out.seq = x;
    out.cls = slice_rows(t, x, 0, 1);
    out.tokens = slice_rows(t, x, 1, n);
    out.pad_mask.assign(images.size(), std::vector<bool>(n, true));
    return out;
  }

  EncodedFeatures<S> encode_text(
      Tape<S>& t, const std::vector<std::vector<int>>& token_ids) const {
    if (token_ids.empty()) throw InputError("encode_text: empty batch");
    const int L = cfg_.max_text_len;
    std::vector<std::vector<int>> padded(token_ids.size());
    std::vector<std::vector<bool>> mask(token_ids.size());
    for (size_t b = 0; b < token_ids.size(); ++b) {
      padded[b].assign(static_cast<size_t>(L), 0);
      mask[b].assign(static_cast<size_t>(L), false);
      const size_t len =
          std::min(token_ids[b].size(), static_cast<size_t>(L));
      for (size_t i = 0; i < len; ++i) {
        const int id = token_ids[b][i];
        if (id < 0 || id >= cfg_.vocab_size)
          throw InputError("encode_text: token id out of vocabulary");
        padded[b][i] = id;
        mask[b][i] = true;
      }
    }
    auto x = embedding(t, txt_embed_, padded);
    x = concat_rows(t, txt_cls_, x);
    x = add(t, x, txt_pos_);
    auto bias = self_key_bias(mask);
    for (const auto& blk : txt_blocks_) x = blk(t, x, bias);
    x = txt_ln_(t, x);
    EncodedFeatures<S> out;
    out.seq = x;
    out.cls = slice_rows(t, x, 0, 1);
    out.tokens = slice_rows(t, x, 1, L);
    out.pad_mask = std::move(mask);
    return out;
  }

  // instrument=true copies every layer/head attention map out of the
  // graph for inspection; the averaged maps used by the guidance loss are
  // always present.
  MultimodalFeatures<S> multimodal_forward(Tape<S>& t,
                                           const EncodedFeatures<S>& img,
                                           const EncodedFeatures<S>& txt,
                                           bool instrument = true) const {
    MultimodalFeatures<S> out;
    auto txt_bias = self_key_bias(txt.pad_mask);

    // Vision-biased stream: image sequence queries, text keys/values.
    {
      auto x = img.seq;
      std::vector<NodePtr<S>> attn_nodes;
      std::vector<std::vector<NodePtr<S>>> per_layer;
      for (const auto& blk : mmv_blocks_) {
        auto o = blk(t, x, nullptr, txt.seq, txt_bias);
        x = o.y;
        for (auto& h : o.cross_head_attn) attn_nodes.push_back(h);
        per_layer.push_back(std::move(o.cross_head_attn));
      }
      x = mmv_ln_(t, x);
      out.vision_biased.seq = x;
      out.vision_biased.cls = slice_rows(t, x, 0, 1);
      out.vision_biased.tokens = slice_rows(t, x, 1, cfg_.num_patches());
      out.vision_biased.pad_mask = img.pad_mask;
      out.attn_i2t_avg = average_nodes(t, attn_nodes);
      if (instrument)
        out.attn_vision_biased = capture_maps(per_layer, QuerySide::vision);
    }

    // Text-biased stream: token sequence queries, image keys/values.
    {
      auto x = txt.seq;
      std::vector<NodePtr<S>> attn_nodes;
      std::vector<std::vector<NodePtr<S>>> per_layer;
      for (const auto& blk : mmt_blocks_) {
        auto o = blk(t, x, txt_bias, img.seq, nullptr);
        x = o.y;
        for (auto& h : o.cross_head_attn) attn_nodes.push_back(h);
        per_layer.push_back(std::move(o.cross_head_attn));
      }
      x = mmt_ln_(t, x);
      out.text_biased.seq = x;
      out.text_biased.cls = slice_rows(t, x, 0, 1);
      out.text_biased.tokens = slice_rows(t, x, 1, cfg_.max_text_len);
      out.text_biased.pad_mask = txt.pad_mask;
      out.attn_t2i_avg = average_nodes(t, attn_nodes);
      if (instrument)
        out.attn_text_biased = capture_maps(per_layer, QuerySide::text);
    }

    out.fused_cls =
        add(t, cmul(t, out.vision_biased.cls, delta_), out.text_biased.cls);
    return out;
  }

  HeadOutputs<S> run_heads(Tape<S>& t, const MultimodalFeatures<S>& mm) const {
    HeadOutputs<S> out;
    out.manip_logit = detect_head_(t, mm.fused_cls);
    out.authenticity_prob = sigmoid(t, neg(t, out.manip_logit));
    out.multilabel_logits = multilabel_head_(t, mm.fused_cls);
    out.bbox = sigmoid(t, bbox_head_(t, mean_rows(t, mm.vision_biased.tokens)));
    out.token_logits = token_head_(t, mm.text_biased.tokens);
    out.patch_logits = patch_head_(t, mm.vision_biased.tokens);
    return out;
  }

  // Multimodal text-biased blocks and the token head: the subset the
  // momentum teacher tracks.
  static bool teacher_tracked(const std::string& name) {
    return name.rfind("mm_t/", 0) == 0 || name.rfind("heads/token", 0) == 0;
  }

  const std::vector<CrossBlock<S>>& text_biased_blocks() const {
    return mmt_blocks_;
  }
  const LayerNormLayer<S>& text_biased_ln() const { return mmt_ln_; }
  const Mlp<S>& token_head() const { return token_head_; }

 private:
  static NodePtr<S> self_key_bias(const std::vector<std::vector<bool>>& mask) {
    // Leading cls position is always a real key.
    std::vector<std::vector<bool>> with_cls(mask.size());
    for (size_t b = 0; b < mask.size(); ++b) {
      with_cls[b].reserve(mask[b].size() + 1);
      with_cls[b].push_back(true);
      with_cls[b].insert(with_cls[b].end(), mask[b].begin(), mask[b].end());
    }
    return key_bias_from_mask<S>(with_cls);
  }

  static NodePtr<S> average_nodes(Tape<S>& t,
                                  const std::vector<NodePtr<S>>& nodes) {
    NodePtr<S> acc = nodes[0];
    for (size_t i = 1; i < nodes.size(); ++i) acc = add(t, acc, nodes[i]);
    return scale(t, acc, S(1) / S(nodes.size()));
  }

  static std::vector<AttentionMapData> capture_maps(
      const std::vector<std::vector<NodePtr<S>>>& per_layer, QuerySide side) {
    const int B = per_layer[0][0]->slots();
    std::vector<AttentionMapData> maps(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
      maps[b].query_side = side;
      maps[b].weights.resize(per_layer.size());
      for (size_t l = 0; l < per_layer.size(); ++l)
        for (const auto& head : per_layer[l])
          maps[b].weights[l].push_back(
              head->val[head->slots() == 1 ? 0 : b].template cast<double>());
    }
    return maps;
  }

  ModelConfig cfg_;
  ParamStore<S> params_;

  Linear<S> patch_proj_;
  NodePtr<S> img_cls_, img_pos_;
  std::vector<TransformerBlock<S>> img_blocks_;
  LayerNormLayer<S> img_ln_;

  NodePtr<S> txt_embed_, txt_cls_, txt_pos_;
  std::vector<TransformerBlock<S>> txt_blocks_;
  LayerNormLayer<S> txt_ln_;

  std::vector<CrossBlock<S>> mmv_blocks_;
  LayerNormLayer<S> mmv_ln_;
  std::vector<CrossBlock<S>> mmt_blocks_;
  LayerNormLayer<S> mmt_ln_;

  NodePtr<S> delta_, tau_;

  Mlp<S> detect_head_, multilabel_head_, bbox_head_, token_head_, patch_head_;
};

// One cross-attention application between encoded feature sets, returning
// the updated query features and the raw per-sample attention maps.
template <class S>
std::pair<EncodedFeatures<S>, std::vector<AttentionMapData>> cross_attention(
    Tape<S>& t, const EncodedFeatures<S>& query, const EncodedFeatures<S>& key,
    const MultiHeadAttention<S>& params) {
  if (!all_finite(query.seq) || !all_finite(key.seq))
    throw InputError("cross_attention: non-finite inputs");
  std::vector<std::vector<bool>> with_cls(key.pad_mask.size());
  for (size_t b = 0; b < key.pad_mask.size(); ++b) {
    with_cls[b].push_back(true);
    with_cls[b].insert(with_cls[b].end(), key.pad_mask[b].begin(),
                       key.pad_mask[b].end());
  }
  auto bias = key_bias_from_mask<S>(with_cls);
  auto o = params.forward(t, query.seq, key.seq, bias);

  EncodedFeatures<S> out;
  out.seq = o.y;
  out.cls = slice_rows(t, o.y, 0, 1);
  out.tokens =
      slice_rows(t, o.y, 1, static_cast<int>(o.y->val[0].rows()) - 1);
  out.pad_mask = query.pad_mask;

  const int B = o.y->slots();
  std::vector<AttentionMapData> maps(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) {
    maps[b].weights.resize(1);
    for (const auto& h : o.head_attn)
      maps[b].weights[0].push_back(
          h->val[h->slots() == 1 ? 0 : b].template cast<double>());
  }
  return {std::move(out), std::move(maps)};
}

// Momentum copy of the text-biased multimodal encoder and token head. It
// consumes detached unimodal features and produces per-token pseudo-label
// distributions without touching the gradient graph.
template <class S>
class TextBiasedTeacher {
 public:
  explicit TextBiasedTeacher(const ModelConfig& cfg) : cfg_(cfg) {
    Rng rng(0);
    const int d = cfg.embed_dim;
    for (int l = 0; l < cfg.num_layers_multimodal; ++l)
      blocks_.emplace_back(params_, "mm_t/blk" + std::to_string(l), d,
                           cfg.num_heads, cfg.ffn_dim(), rng);
    ln_ = LayerNormLayer<S>(params_, "mm_t/ln", d);
    token_head_ = Mlp<S>(params_, "heads/token", {d, d, 2}, rng);
  }

  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  void copy_from(const ParamStore<S>& student) {
    for (auto& [name, p] : params_.items()) p->val = student.at(name)->val;
  }

  // Per-sample max_text_len x 2 row-stochastic matrices.
  std::vector<Mat<S>> token_probs(const EncodedFeatures<S>& txt,
                                  const EncodedFeatures<S>& img) const {
    Tape<S> t(false);
    auto x = detach(txt.seq);
    auto kv = detach(img.seq);
    std::vector<std::vector<bool>> with_cls(txt.pad_mask.size());
    for (size_t b = 0; b < txt.pad_mask.size(); ++b) {
      with_cls[b].push_back(true);
      with_cls[b].insert(with_cls[b].end(), txt.pad_mask[b].begin(),
                         txt.pad_mask[b].end());
    }
    auto bias = key_bias_from_mask<S>(with_cls);
    for (const auto& blk : blocks_) x = blk(t, x, bias, kv, nullptr).y;
    x = ln_(t, x);
    auto tokens = slice_rows(t, x, 1, cfg_.max_text_len);
    auto probs = softmax_rows(t, token_head_(t, tokens));
    return probs->val;
  }

 private:
  ModelConfig cfg_;
  ParamStore<S> params_;
  std::vector<CrossBlock<S>> blocks_;
  LayerNormLayer<S> ln_;
  Mlp<S> token_head_;
};

}  // namespace asap
