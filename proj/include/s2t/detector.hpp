#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "s2t/annotation.hpp"
#include "s2t/config.hpp"
#include "s2t/losses.hpp"
#include "s2t/nn/layers.hpp"
#include "s2t/synthetic.hpp"

namespace s2t {

using ShotFeatures = std::vector<TokenGrid>;

// One labelled window: per-shot features, validity, and for positives the
// tactic type and per-shot states.
struct DetectorSample {
  ShotFeatures shots;
  int label = 0;
  TacticType tactic_type = TacticType::ServeAndAttack;
  std::vector<TacticState> states;
};

struct DetectionOutput {
  double valid_prob = 0.0;
  std::optional<std::array<double, kTacticTypeCount>> type_dist;
  // One distribution per shot (a single one in pooled state mode).
  std::optional<std::vector<std::array<double, kTacticStateCount>>> state_dist;
};

// Positives from tactic units, negatives from rallies without any unit whose
// length is a window length (5..9 shots). Rally order, units in file order.
std::vector<DetectorSample> detector_samples(const std::vector<SyntheticSample>& corpus);
std::vector<DetectorSample> detector_samples(const std::vector<MatchAnnotation>& matches,
                                             const std::filesystem::path& data_root);

// Reads every shot's feature file (paths relative to data_root).
ShotFeatures load_rally_features(const RallyAnnotation& rally, const std::filesystem::path& data_root);

class TacticUnitDetector {
 public:
  using Tensor = nn::Tensor<float>;

  TacticUnitDetector(const DetectorConfig& cfg, std::uint64_t seed);
  TacticUnitDetector(const TacticUnitDetector&) = delete;
  TacticUnitDetector& operator=(const TacticUnitDetector&) = delete;
  TacticUnitDetector(TacticUnitDetector&&) = default;

  struct Encoded {
    Tensor shots;   // L x D contextualised shot embeddings
    Tensor pooled;  // 1 x D
    Tensor logit;   // 1 x 1 validity logit
  };
  // ShapeError on a wrong shot count, frame count or feature width.
  Encoded encode(std::span<const TokenGrid> shots) const;
  Tensor type_logits(const Encoded& e) const;   // 1 x 9
  Tensor state_logits(const Encoded& e) const;  // L x 5, or 1 x 5 pooled

  // Stage two runs only when valid_prob >= threshold.
  DetectionOutput detect(std::span<const TokenGrid> shots) const;
  // Stage two regardless of the gate.
  DetectionOutput classify(std::span<const TokenGrid> shots) const;

  const DetectorConfig& config() const { return cfg_; }
  nn::ParamStore<float>& params() { return store_; }
  const nn::ParamStore<float>& params() const { return store_; }

 private:
  DetectorConfig cfg_;
  nn::ParamStore<float> store_;
  nn::Linear<float> shot_proj_;
  nn::Tensor<float> shot_pos_;  // max_shots x D
  nn::Encoder<float> encoder_;
  nn::AttentionPool<float> pool_;
  nn::Linear<float> binary_head_;
  nn::Linear<float> type_hidden_, type_out_;
  nn::Linear<float> state_hidden_, state_out_;
};

struct DetectorEpoch {
  int epoch = 0;
  double margin = 0.0;
  double loss = 0.0;  // mean per step
  double detection_loss = 0.0;
  double classification_loss = 0.0;
  double last_lr = 0.0;
};

struct DetectorTrainResult {
  std::vector<DetectorEpoch> history;
  LossWeights weights_used;  // after inverse-frequency alpha, if requested
};

// Throws DegenerateCorpus unless both classes are present. Each step runs a
// batch: detection loss over all samples plus classification loss over the
// batch's positives. `on_epoch` may be empty.
DetectorTrainResult train_detector(TacticUnitDetector& model, std::span<const DetectorSample> train,
                                   const TrainConfig& train_cfg, LossWeights weights, const MarginSchedule& margin,
                                   bool inverse_frequency_alpha = true,
                                   const std::function<void(const DetectorEpoch&)>& on_epoch = {});

// Columns of the detector table, in percent.
struct ClassMetrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double precision = 0.0;  // binary: positive class; multi-class: macro
  double recall = 0.0;
};

// Rows are true classes. EmptyInput on no predictions.
ClassMetrics report_detector_metrics(std::span<const int> predictions, std::span<const int> labels,
                                     int num_classes = 2);

struct DetectorEvaluation {
  ClassMetrics binary;
  ClassMetrics type;        // stage two on ground-truth positives
  ClassMetrics type_gated;  // end-to-end: a rejected positive counts as wrong
  double state_accuracy = 0.0;  // per shot, ground-truth positives, percent
};

DetectorEvaluation evaluate_detector(const TacticUnitDetector& model, std::span<const DetectorSample> samples);
nlohmann::json detector_evaluation_json(const DetectorEvaluation& e);

// The detector config travels with the weights.
void save_detector(const std::filesystem::path& path, const TacticUnitDetector& model,
                   const nlohmann::json& extra = nlohmann::json::object());
TacticUnitDetector load_detector(const std::filesystem::path& path);

}  // namespace s2t
