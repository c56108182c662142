#pragma once

// Evaluation metrics for the four tasks: binary classification (AUC, EER,
// ACC), multi-label type identification (mAP, CF1, OF1), box grounding
// (IoUmean, IoU50, IoU75) and token grounding (Precision, Recall, F1),
// plus per-manipulation-type F1.

#include <array>
#include <map>
#include <string>
#include <vector>

#include "asap/box.hpp"
#include "asap/errors.hpp"
#include "asap/labels.hpp"

namespace asap {

// One evaluated sample: ground truth plus model scores. Token vectors hold
// only real (non-padded) positions.
struct EvalRecord {
  std::string id;
  int y_bin = 0;
  std::array<int, 4> y_mul{};
  Box y_box{0, 0, 0, 0};
  std::vector<int> y_tok;
  double s_bin = 0;  // score that the pair is manipulated
  std::array<double, 4> s_mul{};
  Box s_box{0, 0, 0, 0};
  std::vector<double> s_tok;
};

// Mann-Whitney statistic (ties count one half). Throws MetricError unless
// both classes are present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Operating point where the false positive and false negative rates meet,
// with linear interpolation on the ROC polyline.
double eer(const std::vector<double>& scores, const std::vector<int>& labels);

double acc(const std::vector<double>& scores, const std::vector<int>& labels,
           double threshold = 0.5);

struct MultiLabelMetrics {
  double map = 0, cf1 = 0, of1 = 0;
};

MultiLabelMetrics map_cf1_of1(
    const std::vector<std::array<double, 4>>& scores,
    const std::vector<std::array<int, 4>>& labels, double threshold = 0.5);

double iou(const Box& a, const Box& b);

struct GroundingMetrics {
  double iou_mean = 0, iou50 = 0, iou75 = 0;
};

// Computed over records with an image manipulation (nonzero target box).
GroundingMetrics grounding_metrics(const std::vector<EvalRecord>& records);

struct TokenPrf {
  double precision = 0, recall = 0, f1 = 0;
};

// Micro counts over the real token positions of every record.
TokenPrf token_prf(const std::vector<EvalRecord>& records,
                   double threshold = 0.5);

// Per manipulation class F1 of the multi-label scores.
std::map<std::string, double> per_type_f1(
    const std::vector<EvalRecord>& records, double threshold = 0.5);

// All twelve headline metrics.
struct MetricTable {
  double auc = 0, eer = 0, acc = 0;
  double map = 0, cf1 = 0, of1 = 0;
  double iou_mean = 0, iou50 = 0, iou75 = 0;
  double precision = 0, recall = 0, f1 = 0;
  std::map<std::string, double> per_type;
};

MetricTable compute_metrics(const std::vector<EvalRecord>& records);

// JSON Lines round trip; fields exactly
// id, y_bin, y_mul, y_box, y_tok, s_bin, s_mul, s_box, s_tok.
void write_eval_records(const std::string& path,
                        const std::vector<EvalRecord>& records);
std::vector<EvalRecord> read_eval_records(const std::string& path);

// Metric table as a JSON document (one key per metric name).
std::string metric_table_json(const MetricTable& m);

}  // namespace asap
