#include "asap/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace asap {

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::lma: return "lma";
    case Ablation::mgca: return "mgca";
    case Ablation::pmm: return "pmm";
    case Ablation::hnp: return "hnp";
  }
  return "?";
}

Ablation parse_ablation(const std::string& name) {
  if (name == "lma") return Ablation::lma;
  if (name == "mgca") return Ablation::mgca;
  if (name == "pmm") return Ablation::pmm;
  if (name == "hnp") return Ablation::hnp;
  throw ConfigError("unknown ablation '" + name +
                    "' (expected lma, mgca, pmm or hnp)");
}

namespace {

nlohmann::json model_to_json(const ModelConfig& m) {
  nlohmann::json j;
  j["image_size"] = m.image_size;
  j["patch_size"] = m.patch_size;
  j["embed_dim"] = m.embed_dim;
  j["num_heads"] = m.num_heads;
  j["num_layers_unimodal"] = m.num_layers_unimodal;
  j["num_layers_multimodal"] = m.num_layers_multimodal;
  j["vocab_size"] = m.vocab_size;
  j["max_text_len"] = m.max_text_len;
  j["delta_init"] = m.delta_init;
  return j;
}

ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.image_size = j.value("image_size", m.image_size);
  m.patch_size = j.value("patch_size", m.patch_size);
  m.embed_dim = j.value("embed_dim", m.embed_dim);
  m.num_heads = j.value("num_heads", m.num_heads);
  m.num_layers_unimodal = j.value("num_layers_unimodal", m.num_layers_unimodal);
  m.num_layers_multimodal =
      j.value("num_layers_multimodal", m.num_layers_multimodal);
  m.vocab_size = j.value("vocab_size", m.vocab_size);
  m.max_text_len = j.value("max_text_len", m.max_text_len);
  m.delta_init = j.value("delta_init", m.delta_init);
  return m;
}

}  // namespace

std::string model_config_json(const ModelConfig& cfg) {
  return model_to_json(cfg).dump(2);
}

ModelConfig parse_model_config_json(const std::string& text) {
  try {
    return model_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

std::string train_config_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["warmup_steps"] = cfg.warmup_steps;
  j["lr_peak"] = cfg.lr_peak;
  j["lr_floor"] = cfg.lr_floor;
  j["weight_decay"] = cfg.weight_decay;
  j["alpha_mgca"] = cfg.alpha_mgca;
  j["lambda_pmm"] = cfg.lambda_pmm;
  j["delta_init"] = cfg.delta_init;
  j["alpha_mom"] = cfg.alpha_mom;
  j["teacher_momentum"] = cfg.teacher_momentum;
  nlohmann::json abl = nlohmann::json::array();
  for (Ablation a : cfg.ablations) abl.push_back(ablation_name(a));
  j["ablations"] = abl;
  j["seed"] = cfg.seed;
  j["model"] = model_to_json(cfg.model);
  return j.dump(2);
}

TrainConfig parse_train_config_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  TrainConfig cfg;
  try {
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.warmup_steps = j.value("warmup_steps", cfg.warmup_steps);
    cfg.lr_peak = j.value("lr_peak", cfg.lr_peak);
    cfg.lr_floor = j.value("lr_floor", cfg.lr_floor);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.alpha_mgca = j.value("alpha_mgca", cfg.alpha_mgca);
    cfg.lambda_pmm = j.value("lambda_pmm", cfg.lambda_pmm);
    cfg.delta_init = j.value("delta_init", cfg.delta_init);
    cfg.alpha_mom = j.value("alpha_mom", cfg.alpha_mom);
    cfg.teacher_momentum = j.value("teacher_momentum", cfg.teacher_momentum);
    if (j.contains("ablations"))
      for (const auto& a : j["ablations"])
        cfg.ablations.insert(parse_ablation(a.get<std::string>()));
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("model")) cfg.model = model_from_json(j["model"]);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  cfg.model.delta_init = cfg.delta_init;
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_train_config_json(ss.str());
}

}  // namespace asap
