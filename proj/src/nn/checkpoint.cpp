#include "s2t/nn/checkpoint.hpp"

#include "s2t/error.hpp"
#include "s2t/feature_io.hpp"

namespace s2t::nn {

using nlohmann::json;

void save_checkpoint(const std::filesystem::path& path, const ParamStore<float>& store, const json& config) {
  json params = json::array();
  std::vector<float> values;
  values.reserve(store.scalar_count());
  for (const auto& [name, t] : store.params()) {
    params.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"offset", values.size()}});
    values.insert(values.end(), t.value().data(), t.value().data() + t.value().size());
  }
  const json header = {{"format", "s2t-checkpoint"}, {"config", config}, {"params", std::move(params)}};
  write_container(path, header.dump(), values);
}

json load_checkpoint(const std::filesystem::path& path, ParamStore<float>& store) {
  const ContainerFile file = read_container(path);
  json header;
  try {
    header = json::parse(file.header);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (header.value("format", "") != "s2t-checkpoint" || !header.contains("params")) {
    throw DataError(path.string() + ": not an s2t checkpoint");
  }
  const auto& params = header["params"];
  if (params.size() != store.params().size()) {
    throw DataError(path.string() + ": checkpoint has " + std::to_string(params.size()) + " tensors, model has " +
                    std::to_string(store.params().size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = store.params()[i];
    const auto& p = params[i];
    const auto rows = p["shape"][0].get<Index>();
    const auto cols = p["shape"][1].get<Index>();
    const auto offset = p["offset"].get<std::size_t>();
    if (p["name"].get<std::string>() != name || rows != t.rows() || cols != t.cols()) {
      throw DataError(path.string() + ": tensor " + std::to_string(i) + " (" + p["name"].get<std::string>() +
                      ") does not match model parameter " + name);
    }
    if (offset + static_cast<std::size_t>(rows * cols) > file.values.size()) {
      throw DataError(path.string() + ": truncated tensor data");
    }
    std::copy_n(file.values.begin() + static_cast<std::ptrdiff_t>(offset), rows * cols, t.mutable_value().data());
  }
  return header.value("config", json::object());
}

}  // namespace s2t::nn
