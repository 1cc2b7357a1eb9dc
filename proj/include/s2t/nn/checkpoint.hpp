#pragma once

#include <filesystem>

#include "json.hpp"
#include "s2t/nn/layers.hpp"

namespace s2t::nn {

// Header {"format":"s2t-checkpoint","config":...,"params":[{name,shape,offset}]}
// followed by every parameter in registration order as f32.
void save_checkpoint(const std::filesystem::path& path, const ParamStore<float>& store,
                     const nlohmann::json& config = nlohmann::json::object());

// Copies stored values into `store`. Names and shapes must match exactly
// (DataError otherwise). Returns the stored config.
nlohmann::json load_checkpoint(const std::filesystem::path& path, ParamStore<float>& store);

}  // namespace s2t::nn
