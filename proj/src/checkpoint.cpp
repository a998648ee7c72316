#include "robustcnn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "robustcnn/config.hpp"
#include "robustcnn/serialize.hpp"

namespace robustcnn {

namespace {

constexpr char kCheckpointMagic[6] = {'R', 'B', 'C', 'K', '1', '\n'};

}  // namespace

void save_checkpoint(std::ostream& os, Model<float>& model) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_prefixed_string(os, format_model_config(model.spec));

  std::vector<std::pair<std::string, Tensor>> entries;
  std::vector<std::pair<std::string, uint64_t>> flags;
  model.visit_params(
      [&](const std::string& name, Tensor& t) { entries.emplace_back(name, t); });
  model.visit_norms([&](const std::string& name, BatchNormStateT<float>& st) {
    const Shape sh(1, st.channels(), 1, 1);
    entries.emplace_back(name + ".running_mean", Tensor::from_vector(sh, st.running_mean));
    entries.emplace_back(name + ".running_var", Tensor::from_vector(sh, st.running_var));
    flags.emplace_back(name, st.stats_initialized ? 1 : 0);
  });

  detail::write_u64(os, entries.size());
  for (const auto& [name, t] : entries) write_prefixed_string(os, name);
  for (auto& [name, t] : entries) save_tensor(os, t);
  detail::write_u64(os, flags.size());
  for (const auto& [name, v] : flags) {
    write_prefixed_string(os, name);
    detail::write_u64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

Model<float> load_checkpoint(std::istream& is) {
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const ModelSpec spec = parse_model_config(read_prefixed_string(is));
  Model<float> model = build_model<float>(spec, 0);

  std::map<std::string, Tensor> params;  // tensors alias model storage
  model.visit_params([&](const std::string& name, Tensor& t) { params.emplace(name, t); });
  std::map<std::string, BatchNormStateT<float>*> norms;
  model.visit_norms(
      [&](const std::string& name, BatchNormStateT<float>& st) { norms.emplace(name, &st); });

  const uint64_t count = detail::read_u64(is);
  std::vector<std::string> names(count);
  for (auto& name : names) name = read_prefixed_string(is);

  std::set<std::string> filled;
  for (const auto& name : names) {
    Tensor t = load_tensor<float>(is);
    if (!filled.insert(name).second) {
      throw std::runtime_error("checkpoint: duplicate tensor '" + name + "'");
    }
    if (auto it = params.find(name); it != params.end()) {
      if (t.shape() != it->second.shape()) {
        throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': expected " +
                                 it->second.shape().str() + ", got " + t.shape().str());
      }
      it->second.mutable_data() = t.data();
      continue;
    }
    const bool mean = name.ends_with(".running_mean");
    const bool var = name.ends_with(".running_var");
    if (mean || var) {
      const std::string base = name.substr(0, name.rfind('.'));
      auto it = norms.find(base);
      if (it != norms.end()) {
        if (t.shape().c != it->second->channels() || t.numel() != it->second->channels()) {
          throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        }
        (mean ? it->second->running_mean : it->second->running_var) = t.data();
        continue;
      }
    }
    throw std::runtime_error("checkpoint: unknown tensor '" + name + "'");
  }

  for (const auto& [name, t] : params) {
    if (!filled.count(name)) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
  }
  for (const auto& [name, st] : norms) {
    for (const char* suffix : {".running_mean", ".running_var"}) {
      if (!filled.count(name + suffix)) {
        throw std::runtime_error("checkpoint: missing tensor '" + name + suffix + "'");
      }
    }
  }

  const uint64_t nflags = detail::read_u64(is);
  for (uint64_t i = 0; i < nflags; ++i) {
    const std::string name = read_prefixed_string(is);
    const uint64_t v = detail::read_u64(is);
    auto it = norms.find(name);
    if (it == norms.end()) throw std::runtime_error("checkpoint: unknown norm '" + name + "'");
    it->second->stats_initialized = v != 0;
  }
  if (!is) throw std::runtime_error("checkpoint: truncated stream");
  return model;
}

void save_checkpoint_file(const std::string& path, Model<float>& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  save_checkpoint(os, model);
}

Model<float> load_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  return load_checkpoint(is);
}

}  // namespace robustcnn
