#pragma once

#include <iosfwd>
#include <string>

#include "robustcnn/model.hpp"

namespace robustcnn {

// Checkpoint layout: magic, config echo, length-prefixed name table, then the
// named tensors (trainable parameters plus batch-norm running stats) in table
// order, then per-norm initialized flags. Loading rebuilds the model from the
// config echo and fills every tensor by name with shape checks.
void save_checkpoint(std::ostream& os, Model<float>& model);
Model<float> load_checkpoint(std::istream& is);

void save_checkpoint_file(const std::string& path, Model<float>& model);
Model<float> load_checkpoint_file(const std::string& path);

}  // namespace robustcnn
