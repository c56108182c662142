#pragma once

// Optimization loop: warmup + cosine schedule, decoupled-weight-decay Adam,
// the momentum teacher, per-batch assembly of every objective, ablation
// switches, evaluation, and checkpointing.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

#include "asap/checkpoint.hpp"
#include "asap/config.hpp"
#include "asap/data.hpp"
#include "asap/losses.hpp"
#include "asap/metrics.hpp"
#include "asap/model.hpp"

namespace asap {

// Linear warmup from zero to lr_peak over warmup_steps, then cosine decay
// reaching lr_floor exactly at the last step.
inline double lr_at(int step, int total_steps, const TrainConfig& cfg) {
  if (step < 0 || total_steps < 1) throw InputError("lr_at: bad step range");
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.lr_peak * static_cast<double>(step) /
           static_cast<double>(cfg.warmup_steps);
  const int last = total_steps - 1;
  if (last <= cfg.warmup_steps) return cfg.lr_peak;
  if (step >= last) return cfg.lr_floor;
  const double progress = static_cast<double>(step - cfg.warmup_steps) /
                          static_cast<double>(last - cfg.warmup_steps);
  return cfg.lr_floor +
         0.5 * (cfg.lr_peak - cfg.lr_floor) * (1.0 + std::cos(M_PI * progress));
}

// EMA update of every teacher-tracked parameter toward the student.
template <class S>
void momentum_update(ParamStore<S>& teacher, const ParamStore<S>& student,
                     S momentum) {
  for (auto& [name, p] : teacher.items()) {
    const auto& sp = student.at(name);
    p->val[0] = momentum * p->val[0] + (S(1) - momentum) * sp->val[0];
  }
}

// Adam with decoupled weight decay; decay applies only to weight matrices
// (rows > 1 and cols > 1), not to biases, norms or scalars.
template <class S>
class AdamW {
 public:
  explicit AdamW(double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-8)
      : beta1_(S(beta1)), beta2_(S(beta2)), eps_(S(eps)) {}

  void step(ParamStore<S>& params, double lr, double weight_decay) {
    ++t_;
    if (m_.empty()) {
      m_.resize(params.count());
      v_.resize(params.count());
      for (size_t i = 0; i < params.count(); ++i) {
        const auto& val = params.items()[i].second->val[0];
        m_[i] = Mat<S>::Zero(val.rows(), val.cols());
        v_[i] = Mat<S>::Zero(val.rows(), val.cols());
      }
    }
    const S bc1 = S(1) - S(std::pow(static_cast<double>(beta1_), t_));
    const S bc2 = S(1) - S(std::pow(static_cast<double>(beta2_), t_));
    for (size_t i = 0; i < params.count(); ++i) {
      auto& p = params.items()[i].second;
      Mat<S>& val = p->val[0];
      const Mat<S> g = p->has_grad()
                           ? p->grad[0]
                           : Mat<S>::Zero(val.rows(), val.cols());
      m_[i] = beta1_ * m_[i] + (S(1) - beta1_) * g;
      v_[i] = (beta2_ * v_[i].array() +
               (S(1) - beta2_) * g.array().square())
                  .matrix();
      if (weight_decay > 0 && val.rows() > 1 && val.cols() > 1)
        val -= S(lr * weight_decay) * val;
      val -= (S(lr) * (m_[i] / bc1).array() /
              ((v_[i] / bc2).array().sqrt() + eps_))
                 .matrix();
    }
  }

 private:
  S beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Mat<S>> m_, v_;
};

struct StepLog {
  int step = 0;
  int epoch = 0;
  double lr = 0;
  LossBundle bundle;
};

template <class S>
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, size_t n_train)
      : cfg_(cfg),
        model_(with_delta(cfg), cfg.seed),
        teacher_(with_delta(cfg)),
        steps_per_epoch_(static_cast<int>((n_train + cfg.batch_size - 1) /
                                          cfg.batch_size)),
        total_steps_(steps_per_epoch_ * cfg.epochs) {
    cfg_.validate();
    teacher_.copy_from(model_.params());
  }

  AsapModel<S>& model() { return model_; }
  const AsapModel<S>& model() const { return model_; }
  TextBiasedTeacher<S>& teacher() { return teacher_; }
  int step() const { return step_; }
  int total_steps() const { return total_steps_; }
  int steps_per_epoch() const { return steps_per_epoch_; }

  // Deterministic per-epoch sample order.
  std::vector<size_t> epoch_order(int epoch, size_t n) const {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(Rng::substream(cfg_.seed, 0xE60C00ull + static_cast<uint64_t>(epoch)));
    for (size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
  }

  // One optimization step over a batch; returns every loss term.
  LossBundle train_step(const std::vector<const MediaSample*>& batch) {
    if (batch.empty()) throw InputError("train_step: empty batch");
    const double lr = lr_at(step_, total_steps_, cfg_);
    Tape<S> t;

    auto [total, bundle] = assemble_losses(t, batch, /*instrument=*/false);
    if (!std::isfinite(bundle.total)) {
      std::ostringstream ss;
      ss << "non-finite loss at step " << step_ << ": total=" << bundle.total
         << " vlc=" << bundle.l_vlc << " ied=" << bundle.l_ied
         << " mgca=" << bundle.l_mgca << " pmm=" << bundle.l_pmm
         << " img=" << bundle.l_img << " bic=" << bundle.l_bic
         << " mlc=" << bundle.l_mlc << " tmg=" << bundle.l_tmg;
      throw TrainError(ss.str());
    }

    model_.params().zero_grads();
    backward(total);
    opt_.step(model_.params(), lr, cfg_.weight_decay);
    model_.clamp_tau();
    momentum_update(teacher_.params(), model_.params(),
                    S(cfg_.teacher_momentum));
    ++step_;
    return bundle;
  }

  // Builds the full loss graph for a batch. Public so the acceptance suite
  // can probe loss composition on controlled batches.
  std::pair<NodePtr<S>, LossBundle> assemble_losses(
      Tape<S>& t, const std::vector<const MediaSample*>& batch,
      bool instrument) {
    const size_t B = batch.size();
    const ModelConfig& mc = model_.config();
    const int grid = mc.grid();

    std::vector<ImageF> images;
    std::vector<std::vector<int>> text_ids;
    std::vector<bool> pristine;
    std::vector<int> y_bin;
    std::vector<std::array<int, 4>> y_mul;
    std::vector<Box> y_box;
    std::vector<bool> box_contrib;
    std::vector<std::vector<int>> y_tok;
    images.reserve(B);
    for (const MediaSample* s : batch) {
      images.push_back(to_float(s->image));
      text_ids.push_back(s->text_ids);
      pristine.push_back(s->labels.pristine);
      y_bin.push_back(s->labels.y_bin);
      y_mul.push_back(s->labels.y_mul);
      y_box.push_back(s->labels.y_box);
      box_contrib.push_back(s->labels.has_image_manip() ||
                            s->labels.pristine);
      y_tok.push_back(s->labels.y_tok);
    }

    auto img = model_.encode_image(t, images);
    auto txt = model_.encode_text(t, text_ids);
    auto mm = model_.multimodal_forward(t, img, txt, instrument);
    auto heads = model_.run_heads(t, mm);
    if (instrument) last_mm_ = mm;

    LossTerms<S> terms;

    // Task losses on the original pair.
    terms.bic = bic_loss(t, stack_batch(t, heads.manip_logit), y_bin);
    terms.mlc = mlc_loss(t, stack_batch(t, heads.multilabel_logits), y_mul);
    terms.img = img_loss(t, stack_batch(t, heads.bbox), y_box, box_contrib);
    {
      auto teacher_probs = teacher_.token_probs(txt, img);
      terms.tmg = tmg_loss(t, heads.token_logits, y_tok, txt.pad_mask,
                           teacher_probs, S(cfg_.alpha_mom));
    }

    // Alignment losses on the auxiliary texts and the explanation pair.
    if (!cfg_.ablated(Ablation::lma)) {
      std::vector<std::vector<int>> cap_ids, expl_ids;
      for (const MediaSample* s : batch) {
        cap_ids.push_back(s->caption_ids);
        expl_ids.push_back(s->explanation_ids);
      }
      auto cap = model_.encode_text(t, cap_ids);
      auto expl = model_.encode_text(t, expl_ids);
      terms.vlc = vlc_loss(t, stack_batch(t, img.cls), stack_batch(t, txt.cls),
                           stack_batch(t, cap.cls), stack_batch(t, expl.cls),
                           pristine, model_.tau());
      auto mm_ie = model_.multimodal_forward(t, img, expl, false);
      auto heads_ie = model_.run_heads(t, mm_ie);
      terms.ied =
          ied_loss(t, stack_batch(t, heads_ie.authenticity_prob), pristine);
    }

    // Attention guidance from the manipulation annotations.
    if (!cfg_.ablated(Ablation::mgca)) {
      std::vector<Mat<S>> g_txt(B), g_vis(B);
      std::vector<int> counts(B);
      for (size_t b = 0; b < B; ++b) {
        const int n_real = count_real(txt.pad_mask[b]);
        const auto pf = patch_flags_from_bbox(y_box[b], grid, grid);
        g_txt[b] = Mat<S>::Zero(mc.max_text_len + 1, mc.num_patches() + 1);
        g_vis[b] = Mat<S>::Zero(mc.num_patches() + 1, mc.max_text_len + 1);
        counts[b] = n_real * mc.num_patches();
        if (y_bin[b] == 1 && n_real > 0) {
          std::vector<bool> tf(static_cast<size_t>(n_real), false);
          for (size_t i = 0;
               i < y_tok[b].size() && i < static_cast<size_t>(n_real); ++i)
            tf[i] = y_tok[b][i] == 1;
          const auto gm = build_guidance_mask(tf, pf);
          if (gm.active) {
            for (int i = 0; i < n_real; ++i)
              for (int j = 0; j < mc.num_patches(); ++j) {
                g_txt[b](i + 1, j + 1) = S(gm.g(i, j));
                g_vis[b](j + 1, i + 1) = S(gm.g(i, j));
              }
          }
        }
      }
      auto m_txt = mgca_loss(t, mm.attn_t2i_avg, g_txt, counts);
      auto m_vis = mgca_loss(t, mm.attn_i2t_avg, g_vis, counts);
      terms.mgca = scale(t, add(t, m_txt, m_vis), S(0.5));
    }

    // Patch manipulation modeling with hard-negative selection.
    if (!cfg_.ablated(Ablation::pmm)) {
      std::vector<PatchIndicator> indicators(B);
      for (size_t b = 0; b < B; ++b) {
        const auto pf = patch_flags_from_bbox(y_box[b], grid, grid);
        const bool any =
            std::find(pf.begin(), pf.end(), true) != pf.end();
        if (!any) {
          indicators[b].p = Eigen::VectorXi::Constant(mc.num_patches(), -1);
          indicators[b].n_effective = 0;
        } else if (cfg_.ablated(Ablation::hnp)) {
          // Without hard-negative selection every clean patch is a negative.
          indicators[b].p.resize(mc.num_patches());
          for (int i = 0; i < mc.num_patches(); ++i)
            indicators[b].p(i) = pf[static_cast<size_t>(i)] ? 1 : 0;
          indicators[b].n_effective = mc.num_patches();
        } else {
          indicators[b] = build_patch_indicator(pf, grid, grid);
        }
      }
      terms.pmm = pmm_loss(t, heads.patch_logits, indicators);
    }

    return total_loss(t, terms, S(cfg_.alpha_mgca), S(cfg_.lambda_pmm));
  }

  const MultimodalFeatures<S>& last_multimodal() const { return last_mm_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  static ModelConfig with_delta(const TrainConfig& cfg) {
    ModelConfig m = cfg.model;
    m.delta_init = cfg.delta_init;
    return m;
  }

  static int count_real(const std::vector<bool>& mask) {
    int n = 0;
    for (bool b : mask) n += b ? 1 : 0;
    return n;
  }

  TrainConfig cfg_;
  AsapModel<S> model_;
  TextBiasedTeacher<S> teacher_;
  AdamW<S> opt_;
  int steps_per_epoch_ = 0;
  int total_steps_ = 0;
  int step_ = 0;
  MultimodalFeatures<S> last_mm_;
};

// --- evaluation ----------------------------------------------------------------

template <class S>
struct EvalOutput {
  std::vector<EvalRecord> records;
  MetricTable metrics;
};

// Inference consumes only the original image-text pair and the task heads;
// captions, explanations, masks and auxiliary losses are never touched.
template <class S>
EvalOutput<S> evaluate(const AsapModel<S>& model,
                       const std::vector<MediaSample>& samples,
                       int batch_size = 32) {
  if (samples.empty()) throw InputError("evaluate: no samples");
  EvalOutput<S> out;
  out.records.reserve(samples.size());
  for (size_t begin = 0; begin < samples.size();
       begin += static_cast<size_t>(batch_size)) {
    const size_t end =
        std::min(samples.size(), begin + static_cast<size_t>(batch_size));
    Tape<S> t(false);
    std::vector<ImageF> images;
    std::vector<std::vector<int>> text_ids;
    for (size_t i = begin; i < end; ++i) {
      images.push_back(to_float(samples[i].image));
      text_ids.push_back(samples[i].text_ids);
    }
    auto img = model.encode_image(t, images);
    auto txt = model.encode_text(t, text_ids);
    auto mm = model.multimodal_forward(t, img, txt, false);
    auto heads = model.run_heads(t, mm);

    Tape<S> t2(false);
    auto tok_probs = softmax_rows(t2, heads.token_logits);

    for (size_t i = begin; i < end; ++i) {
      const size_t b = i - begin;
      const MediaSample& s = samples[i];
      EvalRecord r;
      r.id = s.id;
      r.y_bin = s.labels.y_bin;
      r.y_mul = s.labels.y_mul;
      r.y_box = s.labels.y_box;

      const double z =
          static_cast<double>(heads.manip_logit->val[b](0, 0));
      r.s_bin = 1.0 / (1.0 + std::exp(-z));
      for (int c = 0; c < 4; ++c) {
        const double logit =
            static_cast<double>(heads.multilabel_logits->val[b](0, c));
        r.s_mul[static_cast<size_t>(c)] = 1.0 / (1.0 + std::exp(-logit));
      }
      for (int c = 0; c < 4; ++c)
        r.s_box[static_cast<size_t>(c)] =
            static_cast<double>(heads.bbox->val[b](0, c));

      const int n_real = static_cast<int>(
          std::count(txt.pad_mask[b].begin(), txt.pad_mask[b].end(), true));
      for (int p = 0; p < n_real; ++p) {
        r.s_tok.push_back(static_cast<double>(tok_probs->val[b](p, 1)));
        r.y_tok.push_back(
            p < static_cast<int>(s.labels.y_tok.size()) &&
                    s.labels.y_tok[static_cast<size_t>(p)] == 1
                ? 1
                : 0);
      }
      out.records.push_back(std::move(r));
    }
  }
  out.metrics = compute_metrics(out.records);
  return out;
}

// --- full training loop ----------------------------------------------------------

struct FitResult {
  std::vector<StepLog> history;
  MetricTable final_metrics;
  bool has_metrics = false;
  double best_auc = -1;
  std::string best_checkpoint;
};

// Runs the configured number of epochs; when out_dir is non-empty, writes a
// per-step JSONL loss log, per-epoch checkpoints and a best-AUC checkpoint.
template <class S>
FitResult fit(Trainer<S>& trainer, const std::vector<MediaSample>& train,
              const std::vector<MediaSample>* val,
              const std::string& out_dir, std::ostream* progress = nullptr) {
  namespace fs = std::filesystem;
  const TrainConfig& cfg = trainer.config();
  std::unique_ptr<std::ofstream> log;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    log = std::make_unique<std::ofstream>(
        (fs::path(out_dir) / "train_log.jsonl").string(), std::ios::binary);
  }

  FitResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = trainer.epoch_order(epoch, train.size());
    for (size_t begin = 0; begin < order.size();
         begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(
          order.size(), begin + static_cast<size_t>(cfg.batch_size));
      std::vector<const MediaSample*> batch;
      batch.reserve(end - begin);
      for (size_t i = begin; i < end; ++i)
        batch.push_back(&train[order[i]]);

      StepLog entry;
      entry.step = trainer.step();
      entry.epoch = epoch;
      entry.lr = lr_at(trainer.step(), trainer.total_steps(), cfg);
      entry.bundle = trainer.train_step(batch);
      if (log) {
        std::ostringstream line;
        const LossBundle& b = entry.bundle;
        line.precision(17);
        line << "{\"step\":" << entry.step << ",\"epoch\":" << entry.epoch
             << ",\"lr\":" << entry.lr << ",\"l_vlc\":" << b.l_vlc
             << ",\"l_ied\":" << b.l_ied << ",\"l_lma\":" << b.l_lma
             << ",\"l_mgca\":" << b.l_mgca << ",\"l_pmm\":" << b.l_pmm
             << ",\"l_img\":" << b.l_img << ",\"l_bic\":" << b.l_bic
             << ",\"l_mlc\":" << b.l_mlc << ",\"l_tmg\":" << b.l_tmg
             << ",\"l_dgm\":" << b.l_dgm << ",\"total\":" << b.total << "}";
        *log << line.str() << "\n";
      }
      result.history.push_back(std::move(entry));
    }

    if (!out_dir.empty()) {
      CheckpointMeta meta;
      meta.seed = cfg.seed;
      meta.step = trainer.step();
      meta.note = "epoch " + std::to_string(epoch + 1);
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt_epoch_%03d.bin", epoch + 1);
      save_model_checkpoint((fs::path(out_dir) / name).string(),
                            trainer.model(), &trainer.teacher(), meta);
    }

    if (val && !val->empty()) {
      try {
        auto ev = evaluate(trainer.model(), *val, cfg.batch_size);
        result.final_metrics = ev.metrics;
        result.has_metrics = true;
        if (progress)
          *progress << "epoch " << (epoch + 1) << "/" << cfg.epochs
                    << " loss=" << result.history.back().bundle.total
                    << " val AUC=" << ev.metrics.auc
                    << " F1=" << ev.metrics.f1 << "\n";
        if (ev.metrics.auc > result.best_auc) {
          result.best_auc = ev.metrics.auc;
          if (!out_dir.empty()) {
            CheckpointMeta meta;
            meta.seed = cfg.seed;
            meta.step = trainer.step();
            meta.note = "best AUC " + std::to_string(ev.metrics.auc);
            result.best_checkpoint =
                (fs::path(out_dir) / "ckpt_best.bin").string();
            save_model_checkpoint(result.best_checkpoint, trainer.model(),
                                  &trainer.teacher(), meta);
          }
        }
      } catch (const MetricError&) {
        // Validation split with a single class; skip best tracking.
      }
    } else if (progress) {
      *progress << "epoch " << (epoch + 1) << "/" << cfg.epochs
                << " loss=" << result.history.back().bundle.total << "\n";
    }
  }
  return result;
}

}  // namespace asap
