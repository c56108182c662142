#include "asap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace asap {

namespace {

void require_both_classes(const std::vector<int>& labels) {
  bool pos = false, neg = false;
  for (int l : labels) (l == 1 ? pos : neg) = true;
  if (!pos || !neg)
    throw MetricError("metric undefined: needs both classes present");
}

struct F1Counts {
  double tp = 0, fp = 0, fn = 0;

  double precision() const { return tp + fp > 0 ? tp / (tp + fp) : 0.0; }
  double recall() const { return tp + fn > 0 ? tp / (tp + fn) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
};

}  // namespace

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw InputError("auc: size mismatch");
  require_both_classes(labels);

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Average ranks across tied scores, then the rank-sum statistic.
  std::vector<double> rank(scores.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]])
      ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 +
                       1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double n_pos = 0, n_neg = 0, rank_sum = 0;
  for (size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] == 1) {
      n_pos += 1;
      rank_sum += rank[k];
    } else {
      n_neg += 1;
    }
  }
  return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

double eer(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw InputError("eer: size mismatch");
  require_both_classes(labels);

  double n_pos = 0, n_neg = 0;
  for (int l : labels) (l == 1 ? n_pos : n_neg) += 1;

  std::vector<double> uniq = scores;
  std::sort(uniq.begin(), uniq.end(), std::greater<double>());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

  // Predict positive when score >= threshold; start above every score.
  double prev_fpr = 0.0, prev_fnr = 1.0;
  for (double th : uniq) {
    double fp = 0, fn = 0;
    for (size_t k = 0; k < scores.size(); ++k) {
      const bool pred = scores[k] >= th;
      if (pred && labels[k] == 0) fp += 1;
      if (!pred && labels[k] == 1) fn += 1;
    }
    const double fpr = fp / n_neg, fnr = fn / n_pos;
    if (fnr <= fpr) {
      const double d_prev = prev_fnr - prev_fpr;
      const double d_cur = fnr - fpr;
      if (d_prev == d_cur) return fpr;
      const double w = d_prev / (d_prev - d_cur);
      return prev_fpr + w * (fpr - prev_fpr);
    }
    prev_fpr = fpr;
    prev_fnr = fnr;
  }
  return 1.0;
}

double acc(const std::vector<double>& scores, const std::vector<int>& labels,
           double threshold) {
  if (scores.size() != labels.size() || scores.empty())
    throw InputError("acc: size mismatch");
  double correct = 0;
  for (size_t k = 0; k < scores.size(); ++k)
    if ((scores[k] >= threshold ? 1 : 0) == labels[k]) correct += 1;
  return correct / static_cast<double>(scores.size());
}

MultiLabelMetrics map_cf1_of1(const std::vector<std::array<double, 4>>& scores,
                              const std::vector<std::array<int, 4>>& labels,
                              double threshold) {
  if (scores.size() != labels.size() || scores.empty())
    throw InputError("map_cf1_of1: size mismatch");
  MultiLabelMetrics out;

  double ap_sum = 0;
  int ap_classes = 0;
  double macro_f1 = 0;
  F1Counts micro;
  for (int c = 0; c < 4; ++c) {
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return scores[a][static_cast<size_t>(c)] >
             scores[b][static_cast<size_t>(c)];
    });
    double hits = 0, ap = 0, positives = 0;
    for (const auto& l : labels)
      positives += l[static_cast<size_t>(c)] == 1 ? 1 : 0;
    if (positives > 0) {
      for (size_t r = 0; r < order.size(); ++r) {
        if (labels[order[r]][static_cast<size_t>(c)] == 1) {
          hits += 1;
          ap += hits / static_cast<double>(r + 1);
        }
      }
      ap_sum += ap / positives;
      ++ap_classes;
    }

    F1Counts cls;
    for (size_t k = 0; k < scores.size(); ++k) {
      const bool pred = scores[k][static_cast<size_t>(c)] >= threshold;
      const bool truth = labels[k][static_cast<size_t>(c)] == 1;
      if (pred && truth) cls.tp += 1;
      if (pred && !truth) cls.fp += 1;
      if (!pred && truth) cls.fn += 1;
    }
    macro_f1 += cls.f1();
    micro.tp += cls.tp;
    micro.fp += cls.fp;
    micro.fn += cls.fn;
  }
  out.map = ap_classes > 0 ? ap_sum / ap_classes : 0.0;
  out.cf1 = macro_f1 / 4.0;
  out.of1 = micro.f1();
  return out;
}

double iou(const Box& a, const Box& b) { return iou_boxes(a, b); }

GroundingMetrics grounding_metrics(const std::vector<EvalRecord>& records) {
  GroundingMetrics out;
  double n = 0;
  for (const auto& r : records) {
    if (box_is_zero(r.y_box)) continue;
    const double v = iou(r.s_box, r.y_box);
    out.iou_mean += v;
    out.iou50 += v >= 0.5 ? 1 : 0;
    out.iou75 += v >= 0.75 ? 1 : 0;
    n += 1;
  }
  if (n > 0) {
    out.iou_mean /= n;
    out.iou50 /= n;
    out.iou75 /= n;
  }
  return out;
}

TokenPrf token_prf(const std::vector<EvalRecord>& records, double threshold) {
  F1Counts c;
  for (const auto& r : records) {
    const size_t n = std::min(r.y_tok.size(), r.s_tok.size());
    for (size_t i = 0; i < n; ++i) {
      const bool pred = r.s_tok[i] >= threshold;
      const bool truth = r.y_tok[i] == 1;
      if (pred && truth) c.tp += 1;
      if (pred && !truth) c.fp += 1;
      if (!pred && truth) c.fn += 1;
    }
  }
  TokenPrf out;
  out.precision = c.precision();
  out.recall = c.recall();
  out.f1 = c.f1();
  return out;
}

std::map<std::string, double> per_type_f1(
    const std::vector<EvalRecord>& records, double threshold) {
  std::map<std::string, double> out;
  for (int c = 0; c < 4; ++c) {
    F1Counts counts;
    for (const auto& r : records) {
      const bool pred = r.s_mul[static_cast<size_t>(c)] >= threshold;
      const bool truth = r.y_mul[static_cast<size_t>(c)] == 1;
      if (pred && truth) counts.tp += 1;
      if (pred && !truth) counts.fp += 1;
      if (!pred && truth) counts.fn += 1;
    }
    out[manip_class_name(static_cast<ManipClass>(c))] = counts.f1();
  }
  return out;
}

MetricTable compute_metrics(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw InputError("compute_metrics: no records");
  MetricTable m;
  std::vector<double> s_bin;
  std::vector<int> y_bin;
  std::vector<std::array<double, 4>> s_mul;
  std::vector<std::array<int, 4>> y_mul;
  for (const auto& r : records) {
    s_bin.push_back(r.s_bin);
    y_bin.push_back(r.y_bin);
    s_mul.push_back(r.s_mul);
    y_mul.push_back(r.y_mul);
  }
  m.auc = auc(s_bin, y_bin);
  m.eer = eer(s_bin, y_bin);
  m.acc = acc(s_bin, y_bin);
  const auto ml = map_cf1_of1(s_mul, y_mul);
  m.map = ml.map;
  m.cf1 = ml.cf1;
  m.of1 = ml.of1;
  const auto g = grounding_metrics(records);
  m.iou_mean = g.iou_mean;
  m.iou50 = g.iou50;
  m.iou75 = g.iou75;
  const auto tk = token_prf(records);
  m.precision = tk.precision;
  m.recall = tk.recall;
  m.f1 = tk.f1;
  m.per_type = per_type_f1(records);
  return m;
}

void write_eval_records(const std::string& path,
                        const std::vector<EvalRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  for (const auto& r : records) {
    nlohmann::json j;
    j["id"] = r.id;
    j["y_bin"] = r.y_bin;
    j["y_mul"] = r.y_mul;
    j["y_box"] = r.y_box;
    j["y_tok"] = r.y_tok;
    j["s_bin"] = r.s_bin;
    j["s_mul"] = r.s_mul;
    j["s_box"] = r.s_box;
    j["s_tok"] = r.s_tok;
    out << j.dump() << "\n";
  }
}

std::vector<EvalRecord> read_eval_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open: " + path);
  std::vector<EvalRecord> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("eval records line " + std::to_string(line_no) + ": " +
                        e.what());
    }
    for (const char* key : {"id", "y_bin", "y_mul", "y_box", "y_tok", "s_bin",
                            "s_mul", "s_box", "s_tok"})
      if (!j.contains(key))
        throw SchemaError("eval records line " + std::to_string(line_no) +
                          ": missing key " + key);
    EvalRecord r;
    r.id = j["id"].get<std::string>();
    r.y_bin = j["y_bin"].get<int>();
    r.y_mul = j["y_mul"].get<std::array<int, 4>>();
    r.y_box = j["y_box"].get<Box>();
    r.y_tok = j["y_tok"].get<std::vector<int>>();
    r.s_bin = j["s_bin"].get<double>();
    r.s_mul = j["s_mul"].get<std::array<double, 4>>();
    r.s_box = j["s_box"].get<Box>();
    r.s_tok = j["s_tok"].get<std::vector<double>>();
    out.push_back(std::move(r));
  }
  return out;
}

std::string metric_table_json(const MetricTable& m) {
  nlohmann::json j;
  j["AUC"] = m.auc;
  j["EER"] = m.eer;
  j["ACC"] = m.acc;
  j["mAP"] = m.map;
  j["CF1"] = m.cf1;
  j["OF1"] = m.of1;
  j["IoUmean"] = m.iou_mean;
  j["IoU50"] = m.iou50;
  j["IoU75"] = m.iou75;
  j["Precision"] = m.precision;
  j["Recall"] = m.recall;
  j["F1"] = m.f1;
  j["per_type_F1"] = m.per_type;
  return j.dump(2);
}

}  // namespace asap
