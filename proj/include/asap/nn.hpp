#pragma once

// Parameter store and transformer building blocks on top of the autodiff
// ops. Modules are plain structs: construction registers parameters,
// operator() builds graph nodes.

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "asap/autodiff.hpp"
#include "asap/rng.hpp"

namespace asap {

template <class S>
class ParamStore {
 public:
  NodePtr<S> add(const std::string& name, Mat<S> init) {
    if (index_.count(name))
      throw ConfigError("duplicate parameter name: " + name);
    auto p = param<S>(std::move(init));
    index_[name] = items_.size();
    items_.emplace_back(name, p);
    return p;
  }

  const NodePtr<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return items_[it->second].second;
  }

  bool contains(const std::string& name) const { return index_.count(name); }

  // Registration order, used by the optimizer and checkpoints; fixed by
  // construction order, so iteration is deterministic.
  const std::vector<std::pair<std::string, NodePtr<S>>>& items() const {
    return items_;
  }

  void zero_grads() {
    for (auto& [name, p] : items_) p->zero_grad();
  }

  size_t count() const { return items_.size(); }

 private:
  std::vector<std::pair<std::string, NodePtr<S>>> items_;
  std::unordered_map<std::string, size_t> index_;
};

namespace init {

// Normal(0, std) entries drawn in double so float and double models see the
// same initial values.
template <class S>
Mat<S> normal(Rng& rng, int rows, int cols, double std_dev = 0.02) {
  Mat<S> m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m(r, c) = static_cast<S>(rng.normal() * std_dev);
  return m;
}

template <class S>
Mat<S> zeros(int rows, int cols) {
  return Mat<S>::Zero(rows, cols);
}

template <class S>
Mat<S> ones(int rows, int cols) {
  return Mat<S>::Ones(rows, cols);
}

}  // namespace init

template <class S>
struct Linear {
  NodePtr<S> w;  // in x out
  NodePtr<S> b;  // 1 x out

  Linear() = default;
  Linear(ParamStore<S>& ps, const std::string& name, int in, int out,
         Rng& rng) {
    w = ps.add(name + "/w", init::normal<S>(rng, in, out));
    b = ps.add(name + "/b", init::zeros<S>(1, out));
  }

  NodePtr<S> operator()(Tape<S>& t, NodePtr<S> x) const {
    return add_rowvec(t, matmul(t, x, w), b);
  }
};

template <class S>
struct LayerNormLayer {
  NodePtr<S> gamma, beta;

  LayerNormLayer() = default;
  LayerNormLayer(ParamStore<S>& ps, const std::string& name, int dim) {
    gamma = ps.add(name + "/g", init::ones<S>(1, dim));
    beta = ps.add(name + "/b", init::zeros<S>(1, dim));
  }

  NodePtr<S> operator()(Tape<S>& t, NodePtr<S> x) const {
    return layer_norm(t, x, gamma, beta);
  }
};

// Multi-layer perceptron with GELU between layers and a linear output.
template <class S>
struct Mlp {
  std::vector<Linear<S>> layers;

  Mlp() = default;
  Mlp(ParamStore<S>& ps, const std::string& name,
      const std::vector<int>& dims, Rng& rng) {
    for (size_t i = 0; i + 1 < dims.size(); ++i)
      layers.emplace_back(ps, name + "/l" + std::to_string(i), dims[i],
                          dims[i + 1], rng);
  }

  NodePtr<S> operator()(Tape<S>& t, NodePtr<S> x) const {
    for (size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](t, x);
      if (i + 1 < layers.size()) x = gelu(t, x);
    }
    return x;
  }
};

// Additive key bias for padded positions: 0 for real keys, -1e30 for pads,
// which underflows to exactly zero attention weight after softmax.
template <class S>
NodePtr<S> key_bias_from_mask(const std::vector<std::vector<bool>>& real_keys) {
  std::vector<Mat<S>> v(real_keys.size());
  for (size_t b = 0; b < real_keys.size(); ++b) {
    Mat<S> m(1, static_cast<Eigen::Index>(real_keys[b].size()));
    for (size_t k = 0; k < real_keys[b].size(); ++k)
      m(0, static_cast<Eigen::Index>(k)) = real_keys[b][k] ? S(0) : S(-1e30);
    v[b] = std::move(m);
  }
  return constant<S>(std::move(v));
}

template <class S>
struct MultiHeadAttention {
  Linear<S> wq, wk, wv, wo;
  int heads = 1;
  int head_dim = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<S>& ps, const std::string& name, int dim,
                     int num_heads, Rng& rng)
      : wq(ps, name + "/q", dim, dim, rng),
        wk(ps, name + "/k", dim, dim, rng),
        wv(ps, name + "/v", dim, dim, rng),
        wo(ps, name + "/o", dim, dim, rng),
        heads(num_heads),
        head_dim(dim / num_heads) {}

  struct Out {
    NodePtr<S> y;
    std::vector<NodePtr<S>> head_attn;  // per head, rows = queries
  };

  // Queries from q_in, keys/values from kv_in; key_bias may be null when
  // every key is real.
  Out forward(Tape<S>& t, NodePtr<S> q_in, NodePtr<S> kv_in,
              NodePtr<S> key_bias) const {
    auto qm = wq(t, q_in);
    auto km = wk(t, kv_in);
    auto vm = wv(t, kv_in);
    const S inv_sqrt = S(1) / S(std::sqrt(static_cast<double>(head_dim)));
    std::vector<NodePtr<S>> ctx(heads), attn(heads);
    for (int h = 0; h < heads; ++h) {
      auto qh = slice_cols(t, qm, h * head_dim, head_dim);
      auto kh = slice_cols(t, km, h * head_dim, head_dim);
      auto vh = slice_cols(t, vm, h * head_dim, head_dim);
      auto scores = scale(t, matmul_nt(t, qh, kh), inv_sqrt);
      if (key_bias) scores = add_rowvec(t, scores, key_bias);
      attn[h] = softmax_rows(t, scores);
      ctx[h] = matmul(t, attn[h], vh);
    }
    return {wo(t, concat_cols(t, ctx)), std::move(attn)};
  }
};

// Pre-norm self-attention transformer block.
template <class S>
struct TransformerBlock {
  LayerNormLayer<S> ln1, ln2;
  MultiHeadAttention<S> attn;
  Linear<S> fc1, fc2;

  TransformerBlock() = default;
  TransformerBlock(ParamStore<S>& ps, const std::string& name, int dim,
                   int heads, int ffn_dim, Rng& rng)
      : ln1(ps, name + "/ln1", dim),
        ln2(ps, name + "/ln2", dim),
        attn(ps, name + "/attn", dim, heads, rng),
        fc1(ps, name + "/fc1", dim, ffn_dim, rng),
        fc2(ps, name + "/fc2", ffn_dim, dim, rng) {}

  NodePtr<S> operator()(Tape<S>& t, NodePtr<S> x, NodePtr<S> key_bias) const {
    auto n1 = ln1(t, x);
    auto a = attn.forward(t, n1, n1, key_bias);
    x = add(t, x, a.y);
    auto h = fc2(t, gelu(t, fc1(t, ln2(t, x))));
    return add(t, x, h);
  }
};

// Pre-norm block with self-attention, cross-attention to a fixed external
// sequence, and a feed-forward tail. Cross-attention weights are returned
// for instrumentation and attention-guidance losses.
template <class S>
struct CrossBlock {
  LayerNormLayer<S> ln1, ln2, ln3;
  MultiHeadAttention<S> self_attn, cross_attn;
  Linear<S> fc1, fc2;

  CrossBlock() = default;
  CrossBlock(ParamStore<S>& ps, const std::string& name, int dim, int heads,
             int ffn_dim, Rng& rng)
      : ln1(ps, name + "/ln1", dim),
        ln2(ps, name + "/ln2", dim),
        ln3(ps, name + "/ln3", dim),
        self_attn(ps, name + "/self", dim, heads, rng),
        cross_attn(ps, name + "/cross", dim, heads, rng),
        fc1(ps, name + "/fc1", dim, ffn_dim, rng),
        fc2(ps, name + "/fc2", ffn_dim, dim, rng) {}

  struct Out {
    NodePtr<S> y;
    std::vector<NodePtr<S>> cross_head_attn;
  };

  Out operator()(Tape<S>& t, NodePtr<S> x, NodePtr<S> self_key_bias,
                 NodePtr<S> kv, NodePtr<S> kv_key_bias) const {
    auto n1 = ln1(t, x);
    auto sa = self_attn.forward(t, n1, n1, self_key_bias);
    x = add(t, x, sa.y);
    auto ca = cross_attn.forward(t, ln2(t, x), kv, kv_key_bias);
    x = add(t, x, ca.y);
    auto h = fc2(t, gelu(t, fc1(t, ln3(t, x))));
    return {add(t, x, h), std::move(ca.head_attn)};
  }
};

}  // namespace asap
