#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "s2t/error.hpp"
#include "s2t/experiment.hpp"

namespace {

std::string command_list() {
  std::string s;
  for (const auto& c : s2t::experiment_commands()) s += (s.empty() ? "" : ", ") + c;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shot and tactic captioning experiments"};
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "runs";
  app.add_option("command", command, "One of: " + command_list())->required();
  app.add_option("--config", config_path, "Flat JSON config")->required();
  app.add_option("--seed", seed, "Overrides every seed in the config");
  app.add_option("--out", out_dir, "Output directory");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    s2t::ExperimentConfig cfg = s2t::load_config(config_path);
    if (seed) {
      cfg.synthetic.seed = *seed;
      cfg.detector_train.seed = *seed;
      cfg.captioner_train.seed = *seed;
    }
    if (const char* dir = std::getenv("S2T_DATA_DIR"); dir && *dir) cfg.data_root = dir;
    const auto manifest = s2t::run_experiment(command, cfg, out_dir);
    if (manifest.contains("table")) std::cout << manifest["table"].get<std::string>();
    if (manifest.contains("metrics")) std::cout << manifest["metrics"].dump(2) << "\n";
    if (manifest.contains("outputs")) std::cout << manifest["outputs"].dump(2) << "\n";
    std::cout << "manifest: " << (std::filesystem::path(out_dir) / (command + ".manifest.json")).string() << "\n";
    return 0;
  } catch (const s2t::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const s2t::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
