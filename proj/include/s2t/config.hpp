#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "s2t/losses.hpp"
#include "s2t/synthetic.hpp"

namespace s2t {

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 1e-5;
  double weight_decay = 0.01;
  int batch_size = 4;
  double warmup_fraction = 0.10;
  bool constant_after_warmup = false;
  std::uint64_t seed = 0;
};

void validate_train_config(const TrainConfig& c);

enum class Pooling { Attention, Mean };
enum class StateMode { PerShot, Pooled };

struct DetectorConfig {
  int shot_frames = 16;
  int feature_dim = 16;  // per-token width of the feature files
  int encoder_dim = 512;
  int encoder_layers = 2;
  int heads = 8;
  int ff_mult = 4;
  int max_shots = 9;
  Pooling pooling = Pooling::Attention;
  StateMode state_mode = StateMode::PerShot;
  double binary_threshold = 0.5;
};

void validate_detector_config(const DetectorConfig& c);

enum class DecodeMode { Greedy, Beam };
enum class PromptMode { ShotWise, Flat };

struct CaptionerConfig {
  int embed_dim = 768;
  int encoder_layers = 2;
  int decoder_layers = 4;
  int heads = 8;
  int ff_mult = 4;
  int feature_dim = 16;
  int max_frames = 16;
  int max_cells = 196;
  int max_shots = 9;
  int max_shot_caption_len = 24;
  int max_tactic_caption_len = 110;
  DecodeMode decode = DecodeMode::Greedy;
  int beam_size = 3;
  int min_frequency = 2;
};

void validate_captioner_config(const CaptionerConfig& c);

// Every setting of a run. Loaded from flat JSON with namespaced keys such as
// "train.lr" or "detector.pooling"; unknown keys are rejected.
struct ExperimentConfig {
  std::filesystem::path data_root = "data/synthetic";
  std::filesystem::path grammar_path;  // empty: built-in grammar
  std::uint64_t split_seed = 0;
  bool strict = false;
  SyntheticConfig synthetic;
  TrainConfig detector_train;
  TrainConfig captioner_train;
  LossWeights loss;
  bool inverse_frequency_alpha = true;  // derive alpha_type from training counts
  MarginSchedule margin;
  DetectorConfig detector;
  CaptionerConfig captioner;
  // Prompt used by `caption` and `train-captioners`: "shot_wise", "flat" or "none".
  std::string prompt = "shot_wise";
  // Ground-truth prompts or prompts from the detector checkpoint.
  std::string prompt_source = "ground_truth";
  std::filesystem::path detector_checkpoint;
  std::filesystem::path captioner_checkpoint;
  std::filesystem::path input;  // annotation file (detect, caption) or predictions (evaluate)
  int ablation_seeds = 1;
};

ExperimentConfig parse_config(const nlohmann::json& flat);
ExperimentConfig load_config(const std::filesystem::path& path);
// Flat JSON with every key, suitable for parse_config.
nlohmann::json config_json(const ExperimentConfig& c);

nlohmann::json detector_config_json(const DetectorConfig& c);
DetectorConfig detector_config_from_json(const nlohmann::json& j);
nlohmann::json captioner_config_json(const CaptionerConfig& c);
CaptionerConfig captioner_config_from_json(const nlohmann::json& j);

}  // namespace s2t
