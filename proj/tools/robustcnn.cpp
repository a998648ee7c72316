#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "robustcnn/checkpoint.hpp"
#include "robustcnn/config.hpp"
#include "robustcnn/corrupt.hpp"
#include "robustcnn/dataset.hpp"
#include "robustcnn/evaluate.hpp"
#include "robustcnn/flops.hpp"
#include "robustcnn/serialize.hpp"
#include "robustcnn/train.hpp"
#include "robustcnn/tuner.hpp"

namespace fs = std::filesystem;
using namespace robustcnn;

namespace {

// Exactly one model source: a config file or a named preset.
ModelSpec resolve_model(const std::string& config_path, const std::string& preset) {
  if (config_path.empty() == preset.empty()) {
    throw std::invalid_argument("give exactly one of --config or --preset");
  }
  if (!preset.empty()) return get_preset(preset);
  if (!fs::exists(config_path)) {
    throw std::invalid_argument("config file '" + config_path + "' not found");
  }
  return load_model_config(config_path);
}

void require_dataset_dir(const std::string& dir) {
  if (dir.empty()) throw std::invalid_argument("--dataset is required");
  if (!fs::exists(fs::path(dir) / "manifest.tsv")) {
    throw std::invalid_argument("dataset '" + dir + "' has no manifest.tsv");
  }
}

void require_checkpoint_file(const std::string& path) {
  if (path.empty()) throw std::invalid_argument("--checkpoint is required");
  if (!fs::exists(path)) {
    throw std::invalid_argument("checkpoint '" + path + "' not found");
  }
}

std::vector<CorruptionFamily> parse_families(const std::string& csv) {
  if (csv == "none") return {};
  if (csv.empty() || csv == "all") return all_corruption_families();
  std::vector<CorruptionFamily> out;
  std::istringstream is(csv);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(parse_corruption_family(item));
  }
  return out;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

struct TrainFlags {
  std::string dataset;
  std::string val_dataset;
  std::string checkpoint_out;
  TrainConfig cfg;
};

void add_train_options(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--dataset", f.dataset, "training dataset directory");
  cmd->add_option("--val-dataset", f.val_dataset, "validation dataset directory");
  cmd->add_option("--checkpoint", f.checkpoint_out, "where to write the trained checkpoint");
  cmd->add_option("--epochs", f.cfg.epochs, "training epochs");
  cmd->add_option("--batch-size", f.cfg.batch_size, "batch size");
  cmd->add_option("--lr", f.cfg.base_lr, "peak learning rate");
  cmd->add_option("--min-lr", f.cfg.min_lr, "final cosine learning rate");
  cmd->add_option("--warmup-epochs", f.cfg.warmup_epochs, "linear warmup epochs");
  cmd->add_option("--weight-decay", f.cfg.weight_decay, "decoupled weight decay");
  cmd->add_option("--mixup-alpha", f.cfg.mixup_alpha, "mixup Beta alpha (0 disables)");
  cmd->add_option("--cutmix-alpha", f.cfg.cutmix_alpha, "cutmix Beta alpha (0 disables)");
  cmd->add_option("--erase-prob", f.cfg.erase_prob, "random erasing probability");
  cmd->add_option("--drop-path", f.cfg.drop_path, "stochastic depth rate");
  cmd->add_option("--label-smoothing", f.cfg.label_smoothing, "label smoothing epsilon");
  cmd->add_option("--early-stop-acc", f.cfg.early_stop_train_acc,
                  "stop once train accuracy exceeds this fraction");
}

int run_training(const ModelSpec& spec, const TrainFlags& f, uint64_t seed,
                 DistillConfig* kd) {
  require_dataset_dir(f.dataset);
  Dataset data = load_dataset(f.dataset);
  Dataset val;
  if (!f.val_dataset.empty()) {
    require_dataset_dir(f.val_dataset);
    val = load_dataset(f.val_dataset);
  }
  TrainConfig cfg = f.cfg;
  cfg.seed = seed;
  cfg.validate();

  Model<float> model = build_model<float>(spec, seed);
  train(model, data, cfg, kd, f.val_dataset.empty() ? nullptr : &val, &std::cout);
  if (!f.checkpoint_out.empty()) {
    save_checkpoint_file(f.checkpoint_out, model);
    std::cout << "# checkpoint written to " << f.checkpoint_out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robustness-oriented CNN architecture toolkit"};
  app.require_subcommand(1);

  std::string config, preset, format = "text";
  uint64_t seed = 0;
  auto add_model_options = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "model config file");
    cmd->add_option("--preset", preset, "named preset (see `presets`)");
  };
  auto add_format_option = [&](CLI::App* cmd) {
    cmd->add_option("--format", format, "output format")
        ->check(CLI::IsMember({"text", "tsv"}));
  };

  // flops
  auto* cmd_flops = app.add_subcommand("flops", "count per-layer multiply-accumulates");
  add_model_options(cmd_flops);
  add_format_option(cmd_flops);

  // tune
  double budget = 0.0, tol = 0.05;
  auto* cmd_tune =
      app.add_subcommand("tune", "pick the stage-3 depth that matches a compute budget");
  add_model_options(cmd_tune);
  add_format_option(cmd_tune);
  cmd_tune->add_option("--budget", budget, "target total MACs, e.g. 4.6e9")->required();
  cmd_tune->add_option("--tol", tol, "relative tolerance around the budget");

  // train / distill
  TrainFlags train_flags;
  auto* cmd_train = app.add_subcommand("train", "train a model on a dataset");
  add_model_options(cmd_train);
  cmd_train->add_option("--seed", seed, "master seed");
  add_train_options(cmd_train, train_flags);

  std::string teacher_path;
  double kd_temperature = 1.0, kd_weight = 0.5;
  auto* cmd_distill =
      app.add_subcommand("distill", "train a student against a teacher checkpoint");
  add_model_options(cmd_distill);
  cmd_distill->add_option("--seed", seed, "master seed");
  add_train_options(cmd_distill, train_flags);
  cmd_distill->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
  cmd_distill->add_option("--temperature", kd_temperature, "softmax temperature");
  cmd_distill->add_option("--kd-weight", kd_weight, "distillation loss weight in [0,1]");

  // eval
  std::string eval_checkpoint, eval_dataset, families_csv = "all", normalize_by;
  int64_t eval_batch = 32;
  int threads = 1;
  auto* cmd_eval = app.add_subcommand("eval", "clean + corruption robustness report");
  cmd_eval->add_option("--checkpoint", eval_checkpoint, "trained checkpoint");
  cmd_eval->add_option("--dataset", eval_dataset, "evaluation dataset directory");
  cmd_eval->add_option("--families", families_csv,
                       "comma-separated corruption families, 'all' or 'none'");
  cmd_eval->add_option("--seed", seed, "corruption seed");
  cmd_eval->add_option("--threads", threads, "worker threads over corruption cells");
  cmd_eval->add_option("--batch-size", eval_batch, "evaluation batch size");
  cmd_eval->add_option("--normalize-by", normalize_by,
                       "baseline tsv report for relative corruption error");
  add_format_option(cmd_eval);

  // corrupt-gen
  std::string corrupt_dataset, corrupt_out, corrupt_families_csv = "all";
  auto* cmd_corrupt =
      app.add_subcommand("corrupt-gen", "write a corrupted copy of a dataset per cell");
  cmd_corrupt->add_option("--dataset", corrupt_dataset, "source dataset directory");
  cmd_corrupt->add_option("--out", corrupt_out, "output tree root")->required();
  cmd_corrupt->add_option("--families", corrupt_families_csv,
                          "comma-separated corruption families or 'all'");
  cmd_corrupt->add_option("--seed", seed, "corruption seed");

  // presets
  std::string show_preset;
  auto* cmd_presets = app.add_subcommand("presets", "list named model configurations");
  cmd_presets->add_option("--show", show_preset, "print the full config for one preset");

  // synth-data
  std::string synth_out;
  int64_t synth_samples = 1000, synth_classes = 10, synth_resolution = 32;
  auto* cmd_synth =
      app.add_subcommand("synth-data", "generate a small class-separable dataset");
  cmd_synth->add_option("--out", synth_out, "output dataset directory")->required();
  cmd_synth->add_option("--samples", synth_samples, "sample count");
  cmd_synth->add_option("--classes", synth_classes, "class count");
  cmd_synth->add_option("--resolution", synth_resolution, "image side length");
  cmd_synth->add_option("--seed", seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad flags are config errors
  }

  try {
    if (app.got_subcommand(cmd_flops)) {
      const FlopsReport report = count_flops(resolve_model(config, preset));
      std::cout << (format == "tsv" ? format_report_tsv(report) : format_report_text(report));
      return 0;
    }

    if (app.got_subcommand(cmd_tune)) {
      const ModelSpec spec = resolve_model(config, preset);
      if (budget <= 0.0) throw std::invalid_argument("--budget must be positive");
      const uint64_t budget_macs = static_cast<uint64_t>(budget);

      // Optional memoization keyed by (config, budget, tol).
      fs::path cache_file;
      if (const char* cache_dir = std::getenv("ROBUSTCNN_CACHE")) {
        std::ostringstream key;
        key << format_model_config(spec) << "|" << budget_macs << "|" << tol;
        std::ostringstream name;
        name << std::hex << fnv1a(key.str()) << ".tune";
        fs::create_directories(cache_dir);
        cache_file = fs::path(cache_dir) / name.str();
      }

      TuneResult result;
      bool cached = false;
      if (!cache_file.empty() && fs::exists(cache_file)) {
        std::ifstream in(cache_file);
        if (in >> result.depth >> result.total_macs) cached = true;
      }
      if (!cached) {
        result = tune_stage3_depth(spec, budget_macs, tol);
        if (!cache_file.empty()) {
          std::ofstream out(cache_file);
          out << result.depth << " " << result.total_macs << "\n";
        }
      }

      if (format == "tsv") {
        std::cout << "stage3_depth\t" << result.depth << "\n"
                  << "total_macs\t" << result.total_macs << "\n";
      } else {
        std::cout << "stage-3 depth: " << result.depth << "\n"
                  << "total MACs:    " << result.total_macs << " ("
                  << std::fixed << std::setprecision(2) << result.total_macs / 1e9
                  << "G, budget " << budget / 1e9 << "G +-" << std::setprecision(0)
                  << tol * 100 << "%)\n";
      }
      return 0;
    }

    if (app.got_subcommand(cmd_train)) {
      return run_training(resolve_model(config, preset), train_flags, seed, nullptr);
    }

    if (app.got_subcommand(cmd_distill)) {
      require_checkpoint_file(teacher_path);
      Model<float> teacher = load_checkpoint_file(teacher_path);
      DistillConfig kd;
      kd.teacher = &teacher;
      kd.temperature = kd_temperature;
      kd.weight = kd_weight;
      return run_training(resolve_model(config, preset), train_flags, seed, &kd);
    }

    if (app.got_subcommand(cmd_eval)) {
      require_checkpoint_file(eval_checkpoint);
      require_dataset_dir(eval_dataset);
      RobustnessReport baseline;
      bool have_baseline = false;
      if (!normalize_by.empty()) {
        if (!fs::exists(normalize_by)) {
          throw std::invalid_argument("baseline report '" + normalize_by + "' not found");
        }
        std::ifstream in(normalize_by);
        std::stringstream buf;
        buf << in.rdbuf();
        baseline = parse_robustness_report(buf.str());
        have_baseline = true;
      }
      Model<float> model = load_checkpoint_file(eval_checkpoint);
      Dataset data = load_dataset(eval_dataset);
      EvalOptions opts;
      opts.batch_size = eval_batch;
      opts.threads = threads;
      opts.corruption_seed = seed;
      const RobustnessReport report =
          evaluate(model, data, parse_families(families_csv), opts);
      std::cout << format_robustness_report(report, format,
                                            have_baseline ? &baseline : nullptr);
      return 0;
    }

    if (app.got_subcommand(cmd_corrupt)) {
      require_dataset_dir(corrupt_dataset);
      Dataset data = load_dataset(corrupt_dataset);
      const auto families = parse_families(corrupt_families_csv);
      if (families.empty()) throw std::invalid_argument("no corruption families selected");
      int64_t written = 0;
      for (CorruptionFamily family : families) {
        for (int severity = 1; severity <= 5; ++severity) {
          const fs::path cell_dir = fs::path(corrupt_out) / corruption_family_name(family) /
                                    ("s" + std::to_string(severity));
          fs::create_directories(cell_dir);
          std::ofstream manifest(cell_dir / "manifest.tsv");
          for (int64_t i = 0; i < data.size(); ++i) {
            CorruptionSpec spec{family, severity,
                                split_seed(seed, static_cast<uint64_t>(i))};
            const Tensor img = corrupt(load_image(data, i), spec);
            const std::string name = "img_" + std::to_string(i) + ".rbt";
            save_tensor_file((cell_dir / name).string(), img);
            manifest << name << "\t" << data.labels[i] << "\n";
            ++written;
          }
        }
      }
      std::cout << "wrote " << written << " corrupted images under " << corrupt_out << "\n";
      return 0;
    }

    if (app.got_subcommand(cmd_presets)) {
      if (!show_preset.empty()) {
        // Full config text; feeds straight back into --config files.
        std::cout << format_model_config(get_preset(show_preset));
        return 0;
      }
      for (const std::string& name : preset_names()) {
        std::cout << std::left << std::setw(30) << name << preset_summary(name) << "\n";
      }
      return 0;
    }

    if (app.got_subcommand(cmd_synth)) {
      generate_synth_dataset(synth_out, synth_samples, synth_classes, synth_resolution, seed);
      std::cout << "wrote " << synth_samples << " samples, " << synth_classes
                << " classes at " << synth_resolution << "x" << synth_resolution << " to "
                << synth_out << "\n";
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
