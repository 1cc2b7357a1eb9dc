#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "s2t/captioner.hpp"
#include "s2t/config.hpp"
#include "s2t/detector.hpp"
#include "s2t/metrics.hpp"

namespace s2t {

const std::vector<std::string>& experiment_commands();

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL);
// Hash over every regular file under `root` (relative path and content), in
// path order. Hex string.
std::string data_checksum(const std::filesystem::path& root);

// Annotations plus per-shot features, grouped by split.
struct Dataset {
  std::vector<SyntheticSample> train, val, test;
};

// Loads <root>/annotations and the referenced features, then splits by match.
Dataset load_dataset(const ExperimentConfig& cfg);
std::vector<SyntheticSample> load_rallies(const std::vector<MatchAnnotation>& matches,
                                          const std::filesystem::path& data_root);

// Decodes every pair; candidates are vocabulary tokens, references the
// tokenized caption text.
MetricReport evaluate_shot_captions(const Captioner& model, std::span<const ShotPair> pairs,
                                    const std::vector<std::string>& references);
MetricReport evaluate_tactic_captions(const Captioner& model, std::span<const TacticPair> pairs,
                                      const std::vector<std::string>& references);

struct AblationRow {
  std::string prompt;  // none | flat | shot_wise
  std::uint64_t seed = 0;
  MetricReport report;
  double final_loss = 0.0;
};

// Trains one tactic captioner per prompt setting on `train` and scores it on
// `test`. Same data and seed for all three rows.
std::vector<AblationRow> prompt_ablation(const std::vector<SyntheticSample>& train,
                                         const std::vector<SyntheticSample>& test, const ExperimentConfig& cfg,
                                         std::uint64_t seed);

// Runs one command and writes its outputs plus <command>.manifest.json into
// `out_dir`. Returns the manifest. UnknownCommand for anything else.
nlohmann::json run_experiment(const std::string& command, const ExperimentConfig& cfg,
                              const std::filesystem::path& out_dir);

}  // namespace s2t
