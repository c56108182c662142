#pragma once

// Single-file checkpoint container: magic + version, a JSON header with the
// model configuration and named tensor directory, then raw little-endian
// float64 tensor data in directory order.

#include <string>
#include <utility>
#include <vector>

#include "asap/model.hpp"

namespace asap {

struct CheckpointMeta {
  uint64_t seed = 0;
  int step = 0;
  std::string note;
};

struct CheckpointData {
  ModelConfig model;
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;
};

void write_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::string& path);

// --- ParamStore glue ----------------------------------------------------------

template <class S>
void collect_params(const ParamStore<S>& store, const std::string& prefix,
                    std::vector<std::pair<std::string, Eigen::MatrixXd>>& out) {
  for (const auto& [name, p] : store.items())
    out.emplace_back(prefix + name, p->val[0].template cast<double>());
}

template <class S>
void apply_params(ParamStore<S>& store, const std::string& prefix,
                  const std::vector<std::pair<std::string, Eigen::MatrixXd>>&
                      tensors) {
  size_t applied = 0;
  for (const auto& [name, m] : tensors) {
    if (name.rfind(prefix, 0) != 0) continue;
    if (prefix.empty() && name.rfind("teacher/", 0) == 0) continue;
    const std::string local = name.substr(prefix.size());
    if (!store.contains(local))
      throw TrainError("checkpoint tensor has no destination: " + name);
    const auto& p = store.at(local);
    if (p->val[0].rows() != m.rows() || p->val[0].cols() != m.cols())
      throw TrainError("checkpoint tensor shape mismatch: " + name);
    p->val[0] = m.template cast<S>();
    ++applied;
  }
  if (applied != store.count())
    throw TrainError("checkpoint is missing tensors for prefix '" + prefix +
                     "'");
}

template <class S>
void save_model_checkpoint(const std::string& path, const AsapModel<S>& model,
                           const TextBiasedTeacher<S>* teacher,
                           const CheckpointMeta& meta) {
  CheckpointData data;
  data.model = model.config();
  data.meta = meta;
  collect_params(model.params(), "", data.tensors);
  if (teacher) collect_params(teacher->params(), "teacher/", data.tensors);
  write_checkpoint(path, data);
}

// Loads a checkpoint into a freshly constructed model (and teacher when the
// checkpoint carries one).
template <class S>
struct LoadedModel {
  ModelConfig config;
  CheckpointMeta meta;
  std::unique_ptr<AsapModel<S>> model;
  std::unique_ptr<TextBiasedTeacher<S>> teacher;
};

template <class S>
LoadedModel<S> load_model_checkpoint(const std::string& path) {
  CheckpointData data = read_checkpoint(path);
  LoadedModel<S> out;
  out.config = data.model;
  out.meta = data.meta;
  out.model = std::make_unique<AsapModel<S>>(data.model, data.meta.seed);
  apply_params(out.model->params(), "", data.tensors);
  bool has_teacher = false;
  for (const auto& [name, m] : data.tensors)
    if (name.rfind("teacher/", 0) == 0) has_teacher = true;
  if (has_teacher) {
    out.teacher = std::make_unique<TextBiasedTeacher<S>>(data.model);
    apply_params(out.teacher->params(), "teacher/", data.tensors);
  }
  return out;
}

}  // namespace asap
