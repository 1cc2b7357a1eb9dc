#include "s2t/feature_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "s2t/error.hpp"

namespace s2t {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

void check_token_grid(const TokenGrid& grid) {
  if (grid.frames == 0 || grid.cells == 0 || grid.dim == 0) throw ShapeError("token grid dims must be >= 1");
  if (grid.data.size() != grid.frames * grid.cells * grid.dim) {
    throw ShapeError("token grid buffer has " + std::to_string(grid.data.size()) + " values, expected " +
                     std::to_string(grid.frames * grid.cells * grid.dim));
  }
  for (float v : grid.data) {
    if (!std::isfinite(v)) throw ShapeError("token grid contains a non-finite value");
  }
}

void write_container(const std::filesystem::path& path, const std::string& header_json,
                     std::span<const float> values) {
  if (header_json.find('\n') != std::string::npos) throw DataError("container header must be a single line");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << header_json << '\n';
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw DataError("short write to " + path.string());
}

ContainerFile read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  ContainerFile file;
  if (!std::getline(in, file.header)) throw DataError(path.string() + ": missing header line");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % sizeof(float) != 0) throw DataError(path.string() + ": payload is not a whole number of f32 values");
  file.values.resize(bytes.size() / sizeof(float));
  std::memcpy(file.values.data(), bytes.data(), bytes.size());
  return file;
}

void write_feature_file(const std::filesystem::path& path, const TokenGrid& grid) {
  check_token_grid(grid);
  nlohmann::json header = {{"dtype", "f32"},
                           {"shape", {grid.frames, grid.cells, grid.dim}},
                           {"byte_order", "little"}};
  write_container(path, header.dump(), grid.data);
}

TokenGrid read_feature_file(const std::filesystem::path& path) {
  auto file = read_container(path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(file.header);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": bad header: " + e.what());
  }
  if (header.value("dtype", "") != "f32" || header.value("byte_order", "") != "little" ||
      !header.contains("shape") || !header["shape"].is_array() || header["shape"].size() != 3) {
    throw DataError(path.string() + ": expected f32 little-endian array of rank 3");
  }
  TokenGrid grid;
  grid.frames = header["shape"][0].get<std::size_t>();
  grid.cells = header["shape"][1].get<std::size_t>();
  grid.dim = header["shape"][2].get<std::size_t>();
  if (file.values.size() != grid.frames * grid.cells * grid.dim) {
    throw DataError(path.string() + ": payload size does not match shape");
  }
  grid.data = std::move(file.values);
  return grid;
}

}  // namespace s2t
