#include "asap/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "asap/config.hpp"

namespace asap {

namespace {
constexpr char kMagic[8] = {'A', 'S', 'A', 'P', 'C', 'K', 'P', '1'};
}

void write_checkpoint(const std::string& path, const CheckpointData& data) {
  nlohmann::json j;
  j["version"] = 1;
  j["model"] = nlohmann::json::parse(model_config_json(data.model));
  j["meta"] = {{"seed", data.meta.seed},
               {"step", data.meta.step},
               {"note", data.meta.note}};
  nlohmann::json dir = nlohmann::json::array();
  for (const auto& [name, m] : data.tensors)
    dir.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  j["tensors"] = dir;
  const std::string header = j.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  const uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, m] : data.tensors) {
    // Column-major storage written as row-major scan for readability.
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double v = m(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
  }
  if (!out) throw ConfigError("short write: " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw TrainError("not a checkpoint file: " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ull << 30))
    throw TrainError("corrupt checkpoint header: " + path);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw TrainError("truncated checkpoint header: " + path);

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw TrainError(std::string("corrupt checkpoint json: ") + e.what());
  }
  if (j.value("version", 0) != 1)
    throw TrainError("unsupported checkpoint version");

  CheckpointData data;
  data.model = parse_model_config_json(j["model"].dump());
  if (j.contains("meta")) {
    data.meta.seed = j["meta"].value("seed", uint64_t{0});
    data.meta.step = j["meta"].value("step", 0);
    data.meta.note = j["meta"].value("note", std::string{});
  }
  for (const auto& entry : j["tensors"]) {
    const std::string name = entry.at("name").get<std::string>();
    const Eigen::Index rows = entry.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = entry.at("cols").get<Eigen::Index>();
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        double v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        m(r, c) = v;
      }
    if (!in) throw TrainError("truncated checkpoint data: " + path);
    data.tensors.emplace_back(name, std::move(m));
  }
  return data;
}

}  // namespace asap
