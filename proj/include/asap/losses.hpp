#pragma once

// Training objectives: batch contrastive alignment, explanation-pair
// detection, attention guidance, patch manipulation modeling, and the four
// detection/grounding task losses, plus their weighted composition.

#include <array>
#include <limits>
#include <vector>

#include "asap/autodiff.hpp"
#include "asap/labels.hpp"
#include "asap/masks.hpp"

namespace asap {

constexpr double kProbClamp = 1e-7;  // floor wherever a log is taken

namespace lossdetail {

template <class S>
NodePtr<S> col_constant(const std::vector<S>& v) {
  Mat<S> m(static_cast<Eigen::Index>(v.size()), 1);
  for (size_t i = 0; i < v.size(); ++i)
    m(static_cast<Eigen::Index>(i), 0) = v[i];
  return constant<S>(std::move(m));
}

inline int count_true(const std::vector<bool>& v) {
  int n = 0;
  for (bool b : v) n += b ? 1 : 0;
  return n;
}

}  // namespace lossdetail

// In-batch contrastive loss. anchor and positive are B x d matrices aligned
// by sample index; row i is scored against every gated positive in the
// batch at temperature tau. Gated-out samples contribute no term and are
// also masked out of the candidate pool.
template <class S>
NodePtr<S> info_nce(Tape<S>& t, NodePtr<S> anchor, NodePtr<S> positive,
                    NodePtr<S> tau, const std::vector<bool>& gate) {
  const Eigen::Index B = anchor->val[0].rows();
  if (B < 1 || positive->val[0].rows() != B)
    throw InputError("info_nce: anchor/positive batch sizes disagree");
  if (static_cast<Eigen::Index>(gate.size()) != B)
    throw InputError("info_nce: gate size mismatch");
  const int n_gated = lossdetail::count_true(gate);
  if (n_gated == 0) return scalar_constant<S>(0);

  auto an = l2_normalize_rows(t, anchor);
  auto pn = l2_normalize_rows(t, positive);
  auto logits = cdiv(t, matmul_nt(t, an, pn), tau);

  // Exclude gated-out candidates from every denominator.
  Mat<S> col_bias(1, B);
  for (Eigen::Index j = 0; j < B; ++j)
    col_bias(0, j) = gate[static_cast<size_t>(j)] ? S(0) : S(-1e30);
  logits = add_rowvec(t, logits, constant<S>(std::move(col_bias)));

  auto lsm = log_softmax_rows(t, logits);
  auto d = diag_(t, lsm);  // B x 1 log-softmax at the paired positive

  std::vector<S> row_w(static_cast<size_t>(B), S(0));
  for (Eigen::Index i = 0; i < B; ++i)
    if (gate[static_cast<size_t>(i)]) row_w[static_cast<size_t>(i)] = S(1);
  auto picked = cmul(t, d, lossdetail::col_constant<S>(row_w));
  return scale(t, sum_all(t, picked), S(-1) / S(n_gated));
}

// Vision-language contrastive objective over the original text, the
// caption, and the explanation text:
//   (L_i2t + L_t2i)/2 + (L_i2c + L_c2i + L_i2e + L_e2i)/4
// Caption terms are ungated; explanation terms only run on pristine pairs.
template <class S>
NodePtr<S> vlc_loss(Tape<S>& t, NodePtr<S> img_cls, NodePtr<S> txt_cls,
                    NodePtr<S> cap_cls, NodePtr<S> expl_cls,
                    const std::vector<bool>& pristine, NodePtr<S> tau) {
  const Eigen::Index B = img_cls->val[0].rows();
  if (txt_cls->val[0].rows() != B || cap_cls->val[0].rows() != B ||
      expl_cls->val[0].rows() != B)
    throw InputError("vlc_loss: feature batch sizes disagree");
  const std::vector<bool> all(static_cast<size_t>(B), true);

  auto i2t = info_nce(t, img_cls, txt_cls, tau, all);
  auto t2i = info_nce(t, txt_cls, img_cls, tau, all);
  auto i2c = info_nce(t, img_cls, cap_cls, tau, all);
  auto c2i = info_nce(t, cap_cls, img_cls, tau, all);
  auto i2e = info_nce(t, img_cls, expl_cls, tau, pristine);
  auto e2i = info_nce(t, expl_cls, img_cls, tau, pristine);

  auto half = scale(t, add(t, i2t, t2i), S(0.5));
  auto quarter = scale(
      t, add(t, add(t, i2c, c2i), add(t, i2e, e2i)), S(0.25));
  return add(t, half, quarter);
}

// Binary cross-entropy of the authenticity probability p(I, E) against the
// pristine indicator. p is a B x 1 column of probabilities.
template <class S>
NodePtr<S> ied_loss(Tape<S>& t, NodePtr<S> p,
                    const std::vector<bool>& pristine) {
  const Eigen::Index B = p->val[0].rows();
  if (static_cast<Eigen::Index>(pristine.size()) != B)
    throw InputError("ied_loss: batch size mismatch");
  auto pc = clamp_(t, p, S(kProbClamp), S(1) - S(kProbClamp));
  std::vector<S> y(static_cast<size_t>(B)), ny(static_cast<size_t>(B));
  for (Eigen::Index i = 0; i < B; ++i) {
    y[static_cast<size_t>(i)] = pristine[static_cast<size_t>(i)] ? S(1) : S(0);
    ny[static_cast<size_t>(i)] = S(1) - y[static_cast<size_t>(i)];
  }
  auto log_p = log_(t, pc);
  auto log_np = log_(t, add_scalar(t, neg(t, pc), S(1)));
  auto term = add(t, cmul(t, log_p, lossdetail::col_constant<S>(y)),
                  cmul(t, log_np, lossdetail::col_constant<S>(ny)));
  return scale(t, sum_all(t, term), S(-1) / S(B));
}

// Attention guidance: -(1/|A|) * sum_ij G(i,j) log A(i,j), averaged over
// batch slots. `guides` holds one 0/1 matrix per slot shaped like the
// attention slice it applies to; `n_elements` is |A| per slot (all counted
// cells, guided or not). Cells excluded from |A| must carry G=0.
template <class S>
NodePtr<S> mgca_loss(Tape<S>& t, NodePtr<S> attn,
                     const std::vector<Mat<S>>& guides,
                     const std::vector<int>& n_elements) {
  const int B = attn->slots();
  if (static_cast<int>(guides.size()) != B ||
      static_cast<int>(n_elements.size()) != B)
    throw InputError("mgca_loss: slot count mismatch");
  for (int b = 0; b < B; ++b)
    if (guides[b].rows() != attn->val[b].rows() ||
        guides[b].cols() != attn->val[b].cols())
      throw InputError("mgca_loss: guide shape mismatch");
  auto log_a = log_(
      t, clamp_(t, attn, S(kProbClamp), std::numeric_limits<S>::infinity()));
  auto guided = cmul(t, log_a, constant<S>(std::vector<Mat<S>>(guides)));
  auto sums = sum_all(t, guided);  // per-slot scalars
  std::vector<S> w(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b)
    w[static_cast<size_t>(b)] =
        n_elements[b] > 0 ? S(-1) / (S(n_elements[b]) * S(B)) : S(0);
  return batch_weighted_sum(t, sums, w);
}

// Convenience overload for a single sample with an already-sliced map.
template <class S>
NodePtr<S> mgca_loss(Tape<S>& t, NodePtr<S> attn, const GuidanceMask& mask) {
  std::vector<Mat<S>> guides(static_cast<size_t>(attn->slots()));
  std::vector<int> counts(static_cast<size_t>(attn->slots()));
  for (int b = 0; b < attn->slots(); ++b) {
    guides[static_cast<size_t>(b)] = mask.g.template cast<S>();
    counts[static_cast<size_t>(b)] =
        static_cast<int>(mask.g.rows() * mask.g.cols());
  }
  return mgca_loss(t, attn, guides, counts);
}

// Patch manipulation modeling: mean binary cross-entropy over patches
// marked 1 or 0, normalized per sample by that count and averaged over the
// samples that have any; 0 when no sample contributes.
template <class S>
NodePtr<S> pmm_loss(Tape<S>& t, NodePtr<S> patch_logits,
                    const std::vector<PatchIndicator>& indicators) {
  const int B = patch_logits->slots();
  if (static_cast<int>(indicators.size()) != B)
    throw InputError("pmm_loss: indicator count mismatch");
  int contributing = 0;
  std::vector<Mat<S>> sel(static_cast<size_t>(B)), tgt(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) {
    const auto& p = indicators[static_cast<size_t>(b)].p;
    if (p.size() != patch_logits->val[b].rows())
      throw InputError("pmm_loss: patch count mismatch");
    sel[static_cast<size_t>(b)] =
        (p.array() != -1).template cast<S>().matrix();
    tgt[static_cast<size_t>(b)] = (p.array() == 1).template cast<S>().matrix();
    if (indicators[static_cast<size_t>(b)].n_effective > 0) ++contributing;
  }
  if (contributing == 0) return scalar_constant<S>(0);
  auto bce = bce_logits(t, patch_logits, constant<S>(std::move(tgt)));
  auto masked = cmul(t, bce, constant<S>(std::move(sel)));
  auto sums = sum_all(t, masked);
  std::vector<S> w(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) {
    const int ne = indicators[static_cast<size_t>(b)].n_effective;
    w[static_cast<size_t>(b)] =
        ne > 0 ? S(1) / (S(ne) * S(contributing)) : S(0);
  }
  return batch_weighted_sum(t, sums, w);
}

enum class IouPenalty { giou, iou };

// Box regression: L1 distance plus (1 - GIoU), on samples that either have
// an image manipulation (nonzero target box) or are pristine (trained
// toward the zero box); averaged over contributing samples. Boxes are
// (cx, cy, w, h) columns of a B x 4 matrix.
template <class S>
NodePtr<S> img_loss(Tape<S>& t, NodePtr<S> pred_box,
                    const std::vector<Box>& y_box,
                    const std::vector<bool>& contributes,
                    IouPenalty penalty = IouPenalty::giou) {
  const Eigen::Index B = pred_box->val[0].rows();
  if (static_cast<Eigen::Index>(y_box.size()) != B ||
      static_cast<Eigen::Index>(contributes.size()) != B)
    throw InputError("img_loss: batch size mismatch");
  const int n = lossdetail::count_true(contributes);
  if (n == 0) return scalar_constant<S>(0);

  Mat<S> target(B, 4);
  for (Eigen::Index i = 0; i < B; ++i)
    for (int j = 0; j < 4; ++j)
      target(i, j) = static_cast<S>(y_box[static_cast<size_t>(i)][j]);
  auto tgt = constant<S>(target);

  auto l1 = rowsum(t, abs_(t, sub(t, pred_box, tgt)));  // B x 1

  const S eps = S(1e-7);
  const S inf = std::numeric_limits<S>::infinity();
  auto col = [&](NodePtr<S> m, int j) { return slice_cols(t, m, j, 1); };
  auto half = [&](NodePtr<S> m) { return scale(t, m, S(0.5)); };

  auto px1 = sub(t, col(pred_box, 0), half(col(pred_box, 2)));
  auto px2 = add(t, col(pred_box, 0), half(col(pred_box, 2)));
  auto py1 = sub(t, col(pred_box, 1), half(col(pred_box, 3)));
  auto py2 = add(t, col(pred_box, 1), half(col(pred_box, 3)));
  auto tx1 = sub(t, col(tgt, 0), half(col(tgt, 2)));
  auto tx2 = add(t, col(tgt, 0), half(col(tgt, 2)));
  auto ty1 = sub(t, col(tgt, 1), half(col(tgt, 3)));
  auto ty2 = add(t, col(tgt, 1), half(col(tgt, 3)));

  auto iw = clamp_(t, sub(t, minimum(t, px2, tx2), maximum(t, px1, tx1)),
                   S(0), inf);
  auto ih = clamp_(t, sub(t, minimum(t, py2, ty2), maximum(t, py1, ty1)),
                   S(0), inf);
  auto inter = cmul(t, iw, ih);
  auto area_p = cmul(t, col(pred_box, 2), col(pred_box, 3));
  auto area_t = cmul(t, col(tgt, 2), col(tgt, 3));
  auto uni = sub(t, add(t, area_p, area_t), inter);
  auto iou = cdiv(t, inter, add_scalar(t, uni, eps));

  NodePtr<S> score = iou;
  if (penalty == IouPenalty::giou) {
    auto hw = sub(t, maximum(t, px2, tx2), minimum(t, px1, tx1));
    auto hh = sub(t, maximum(t, py2, ty2), minimum(t, py1, ty1));
    auto hull = cmul(t, hw, hh);
    auto gap = cdiv(t, sub(t, hull, uni), add_scalar(t, hull, eps));
    score = sub(t, iou, gap);
  }
  auto penalty_term = add_scalar(t, neg(t, score), S(1));

  // A zero predicted box against a zero target box is a perfect match;
  // drop the (otherwise 0/0-shaped) penalty there and let L1 carry it.
  std::vector<S> keep(static_cast<size_t>(B), S(1));
  for (Eigen::Index i = 0; i < B; ++i) {
    const bool pred_empty = pred_box->val[0](i, 2) * pred_box->val[0](i, 3) <
                            S(1e-12);
    const bool tgt_empty = box_area(y_box[static_cast<size_t>(i)]) < 1e-12;
    if (pred_empty && tgt_empty) keep[static_cast<size_t>(i)] = S(0);
  }
  auto per_sample =
      add(t, l1, cmul(t, penalty_term, lossdetail::col_constant<S>(keep)));

  std::vector<S> w(static_cast<size_t>(B), S(0));
  for (Eigen::Index i = 0; i < B; ++i)
    if (contributes[static_cast<size_t>(i)])
      w[static_cast<size_t>(i)] = S(1) / S(n);
  return scale(t, sum_all(t, cmul(t, per_sample,
                                  lossdetail::col_constant<S>(w))),
               S(1));
}

// Binary classification loss on the manipulation logit (1 = manipulated).
template <class S>
NodePtr<S> bic_loss(Tape<S>& t, NodePtr<S> manip_logit,
                    const std::vector<int>& y_bin) {
  const Eigen::Index B = manip_logit->val[0].rows();
  if (static_cast<Eigen::Index>(y_bin.size()) != B)
    throw InputError("bic_loss: batch size mismatch");
  std::vector<S> y(static_cast<size_t>(B));
  for (Eigen::Index i = 0; i < B; ++i)
    y[static_cast<size_t>(i)] = S(y_bin[static_cast<size_t>(i)]);
  return mean_all(t,
                  bce_logits(t, manip_logit, lossdetail::col_constant<S>(y)));
}

// Multi-label classification: per-class binary cross-entropy summed over
// the four classes, averaged over the batch.
template <class S>
NodePtr<S> mlc_loss(Tape<S>& t, NodePtr<S> logits,
                    const std::vector<std::array<int, 4>>& y_mul) {
  const Eigen::Index B = logits->val[0].rows();
  if (static_cast<Eigen::Index>(y_mul.size()) != B || logits->val[0].cols() != 4)
    throw InputError("mlc_loss: expected B x 4 logits");
  Mat<S> y(B, 4);
  for (Eigen::Index i = 0; i < B; ++i)
    for (int j = 0; j < 4; ++j)
      y(i, j) = S(y_mul[static_cast<size_t>(i)][static_cast<size_t>(j)]);
  auto bce = bce_logits(t, logits, constant<S>(std::move(y)));
  return scale(t, sum_all(t, bce), S(1) / S(B));
}

// Token grounding: (1 - alpha) * hard cross-entropy + alpha * KL(student ||
// teacher) over real token positions. token_logits is a batch of L x 2
// matrices; teacher_probs are constant row-stochastic pseudo-labels.
template <class S>
NodePtr<S> tmg_loss(Tape<S>& t, NodePtr<S> token_logits,
                    const std::vector<std::vector<int>>& y_tok,
                    const std::vector<std::vector<bool>>& real_tokens,
                    const std::vector<Mat<S>>& teacher_probs, S alpha_mom) {
  const int B = token_logits->slots();
  if (static_cast<int>(y_tok.size()) != B ||
      static_cast<int>(real_tokens.size()) != B ||
      static_cast<int>(teacher_probs.size()) != B)
    throw InputError("tmg_loss: batch size mismatch");

  std::vector<Mat<S>> onehot(static_cast<size_t>(B)),
      rowmask(static_cast<size_t>(B)), log_teacher(static_cast<size_t>(B));
  std::vector<int> n_real(static_cast<size_t>(B), 0);
  int contributing = 0;
  for (int b = 0; b < B; ++b) {
    const Eigen::Index L = token_logits->val[b].rows();
    if (static_cast<Eigen::Index>(y_tok[b].size()) < 0 ||
        teacher_probs[b].rows() != L)
      throw InputError("tmg_loss: teacher shape mismatch");
    onehot[b] = Mat<S>::Zero(L, 2);
    rowmask[b] = Mat<S>::Zero(L, 2);
    for (Eigen::Index l = 0; l < L; ++l) {
      const bool real = l < static_cast<Eigen::Index>(real_tokens[b].size()) &&
                        real_tokens[b][static_cast<size_t>(l)];
      if (!real) continue;
      ++n_real[b];
      const int lab =
          l < static_cast<Eigen::Index>(y_tok[b].size()) && y_tok[b][l] ? 1 : 0;
      onehot[b](l, lab) = S(1);
      rowmask[b](l, 0) = rowmask[b](l, 1) = S(1);
    }
    log_teacher[b] = teacher_probs[b]
                         .array()
                         .max(S(kProbClamp))
                         .log()
                         .matrix();
    if (n_real[b] > 0) ++contributing;
  }
  if (contributing == 0) return scalar_constant<S>(0);

  auto lsm = log_softmax_rows(t, token_logits);
  auto ce_cells = cmul(t, lsm, constant<S>(std::move(onehot)));
  auto ce_sums = sum_all(t, ce_cells);  // per-slot, negated below

  auto p_student = exp_(t, lsm);
  auto kl_cells = cmul(
      t, cmul(t, p_student,
              sub(t, lsm, constant<S>(std::move(log_teacher)))),
      constant<S>(std::move(rowmask)));
  auto kl_sums = sum_all(t, kl_cells);

  std::vector<S> w_ce(static_cast<size_t>(B), S(0)),
      w_kl(static_cast<size_t>(B), S(0));
  for (int b = 0; b < B; ++b) {
    if (n_real[b] == 0) continue;
    const S inv = S(1) / (S(n_real[b]) * S(contributing));
    w_ce[b] = -(S(1) - alpha_mom) * inv;
    w_kl[b] = alpha_mom * inv;
  }
  return add(t, batch_weighted_sum(t, ce_sums, w_ce),
             batch_weighted_sum(t, kl_sums, w_kl));
}

// Graph nodes for each objective; a null entry means the term is ablated
// (or structurally absent) and reports exactly zero.
template <class S>
struct LossTerms {
  NodePtr<S> vlc, ied, mgca, pmm, img, bic, mlc, tmg;
};

struct LossBundle {
  double l_vlc = 0, l_ied = 0, l_lma = 0, l_mgca = 0, l_pmm = 0;
  double l_img = 0, l_bic = 0, l_mlc = 0, l_tmg = 0, l_dgm = 0;
  double total = 0;
};

// Weighted composition: total = L_DGM + L_LMA + alpha * L_MGCA +
// lambda * L_PMM, with L_DGM = img + bic + mlc + tmg and L_LMA = vlc + ied.
template <class S>
std::pair<NodePtr<S>, LossBundle> total_loss(Tape<S>& t,
                                             const LossTerms<S>& terms,
                                             S alpha_mgca, S lambda_pmm) {
  auto zero = [&] { return scalar_constant<S>(0); };
  auto or_zero = [&](const NodePtr<S>& n) { return n ? n : zero(); };

  auto dgm = add(t, add(t, or_zero(terms.img), or_zero(terms.bic)),
                 add(t, or_zero(terms.mlc), or_zero(terms.tmg)));
  auto lma = add(t, or_zero(terms.vlc), or_zero(terms.ied));
  auto total = add(t, add(t, dgm, lma),
                   add(t, scale(t, or_zero(terms.mgca), alpha_mgca),
                       scale(t, or_zero(terms.pmm), lambda_pmm)));

  LossBundle b;
  auto val = [](const NodePtr<S>& n) { return n ? scalar_value(n) : 0.0; };
  b.l_vlc = val(terms.vlc);
  b.l_ied = val(terms.ied);
  b.l_lma = b.l_vlc + b.l_ied;
  b.l_mgca = val(terms.mgca);
  b.l_pmm = val(terms.pmm);
  b.l_img = val(terms.img);
  b.l_bic = val(terms.bic);
  b.l_mlc = val(terms.mlc);
  b.l_tmg = val(terms.tmg);
  b.l_dgm = b.l_img + b.l_bic + b.l_mlc + b.l_tmg;
  b.total = scalar_value(total);
  return {total, b};
}

}  // namespace asap
