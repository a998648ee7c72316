#pragma once

#include <string>
#include <vector>

#include "robustcnn/model.hpp"

namespace robustcnn {

// Flat "key = value" config with '#' comments. Unspecified keys keep the
// ModelSpec defaults; unknown or duplicate keys are errors.
ModelSpec parse_model_config(const std::string& text);
std::string format_model_config(const ModelSpec& spec);
ModelSpec load_model_config(const std::string& path);
void save_model_config(const ModelSpec& spec, const std::string& path);

std::vector<std::string> preset_names();
ModelSpec get_preset(const std::string& name);
std::string preset_summary(const std::string& name);

}  // namespace robustcnn
