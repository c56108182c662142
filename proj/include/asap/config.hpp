#pragma once

// Training configuration and its JSON form. File keys match the field
// names one to one; the optional "model" object carries ModelConfig fields.

#include <set>
#include <string>

#include "asap/model.hpp"

namespace asap {

enum class Ablation { lma, mgca, pmm, hnp };

const char* ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);

struct TrainConfig {
  int batch_size = 32;
  int epochs = 10;
  int warmup_steps = 1000;
  double lr_peak = 1e-4;
  double lr_floor = 1e-6;
  double weight_decay = 0.02;
  double alpha_mgca = 0.1;
  double lambda_pmm = 0.01;
  double delta_init = 0.5;
  double alpha_mom = 0.4;
  double teacher_momentum = 0.995;
  std::set<Ablation> ablations;
  uint64_t seed = 0;
  ModelConfig model;

  bool ablated(Ablation a) const { return ablations.count(a) > 0; }

  void validate() const {
    if (batch_size < 1 || epochs < 1)
      throw ConfigError("train config: batch_size and epochs must be >= 1");
    if (warmup_steps < 0) throw ConfigError("train config: negative warmup");
    if (lr_floor >= lr_peak)
      throw ConfigError("train config: lr_floor must be below lr_peak");
    if (weight_decay < 0 || alpha_mgca < 0 || lambda_pmm < 0)
      throw ConfigError("train config: weights must be >= 0");
    if (alpha_mom < 0 || alpha_mom > 1)
      throw ConfigError("train config: alpha_mom must be in [0, 1]");
    if (teacher_momentum < 0 || teacher_momentum > 1)
      throw ConfigError("train config: teacher_momentum must be in [0, 1]");
    ModelConfig m = model;
    m.delta_init = delta_init;
    m.validate();
  }
};

std::string train_config_json(const TrainConfig& cfg);
TrainConfig parse_train_config_json(const std::string& text);
TrainConfig load_train_config(const std::string& path);

std::string model_config_json(const ModelConfig& cfg);
ModelConfig parse_model_config_json(const std::string& text);

}  // namespace asap
