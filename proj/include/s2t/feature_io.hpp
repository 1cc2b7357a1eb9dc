#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "s2t/tokens.hpp"

namespace s2t {

// Binary container shared by feature and checkpoint files: one line of JSON
// header terminated by '\n', followed by little-endian f32 values.
struct ContainerFile {
  std::string header;  // JSON text without the trailing newline
  std::vector<float> values;
};

void write_container(const std::filesystem::path& path, const std::string& header_json,
                     std::span<const float> values);
ContainerFile read_container(const std::filesystem::path& path);

// Feature file: header {"dtype":"f32","shape":[T,N,D],"byte_order":"little"}.
void write_feature_file(const std::filesystem::path& path, const TokenGrid& grid);
TokenGrid read_feature_file(const std::filesystem::path& path);

}  // namespace s2t
