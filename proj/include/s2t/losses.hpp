#pragma once

#include <array>
#include <span>
#include <vector>

#include "s2t/annotation.hpp"
#include "s2t/nn/tensor.hpp"

namespace s2t {

inline constexpr double kProbClamp = 1e-12;

struct LossWeights {
  double lambda_margin = 2.0;
  double beta = 0.5;
  double lambda_sc = 0.3;
  double lambda_tc = 6.0;
  double gamma = 2.0;         // type focal loss
  double gamma_binary = 2.0;  // binary focal loss
  double alpha_binary = 0.25;
  std::vector<double> alpha_type = std::vector<double>(kTacticTypeCount, 1.0);
};

// Throws ConfigError on negative entries or a wrong alpha_type size.
void validate_loss_weights(const LossWeights& w);

// Per-class weights proportional to 1/count, normalized to mean 1. Classes
// with zero count get the largest observed weight.
std::vector<double> inverse_frequency_weights(std::span<const std::size_t> counts);

struct MarginSchedule {
  double m_start = 0.1;
  double m_end = 0.5;
  int warmup_epochs = 5;
};

double margin_at_epoch(const MarginSchedule& s, int epoch);

// -alpha_t (1 - p_t)^gamma log p_t. p_t is clamped at kProbClamp from below
// unless `clamp` is false, in which case p_t <= 0 throws DomainError.
double focal_binary(double p_t, double alpha_t, double gamma, bool clamp = true);

// Mean over negatives of max(0, sigmoid(z) - m); 0 for no negatives.
double margin_penalty(std::span<const double> negative_logits, double m);

double sigmoid(double z);

// Binary stage: one logit and label per window.
struct BinaryBatch {
  std::vector<double> logits;
  std::vector<int> labels;  // 1 valid, 0 invalid
};

// alpha_t = alpha for positives and 1 - alpha for negatives.
double detection_loss(const BinaryBatch& batch, const LossWeights& w, double margin);
double detection_loss(const BinaryBatch& batch, const LossWeights& w, const MarginSchedule& s, int epoch);

// Stage two, positives only. Distributions rather than logits.
struct ClassificationItem {
  std::array<double, kTacticTypeCount> type_probs{};
  int type_label = 0;
  std::vector<std::array<double, kTacticStateCount>> state_probs;  // one per shot (or one pooled)
  std::vector<int> state_labels;
};

// Focal type term -alpha_k (1 - p_k)^gamma log p_k plus beta times the state
// cross-entropy (averaged over the item's shots); mean over items.
double classification_loss(std::span<const ClassificationItem> batch, const LossWeights& w);

// -sum_t log softmax(logits_t)[y_t] over non-pad positions; per-token mean
// with `mean`. Throws IndexError for ids outside [0, V).
double caption_ce(const nn::Mat<double>& logits, std::span<const int> targets, int pad_id, bool mean = false);

double total_loss(double l_sc, double l_tc, const LossWeights& w);

// Differentiable versions with analytic backward passes. Each returns 1x1.
namespace autograd {

// logits: n x 1.
template <typename T>
nn::Tensor<T> detection_loss(const nn::Tensor<T>& logits, std::span<const int> labels, const LossWeights& w,
                             double margin);

// type_logits: B x 9; state_logits[b]: S_b x 5.
template <typename T>
nn::Tensor<T> classification_loss(const nn::Tensor<T>& type_logits, std::span<const int> type_labels,
                                  std::span<const nn::Tensor<T>> state_logits,
                                  const std::vector<std::vector<int>>& state_labels, const LossWeights& w);

template <typename T>
nn::Tensor<T> caption_ce(const nn::Tensor<T>& logits, std::span<const int> targets, int pad_id, bool mean = false);

template <typename T>
nn::Tensor<T> total_loss(const nn::Tensor<T>& l_sc, const nn::Tensor<T>& l_tc, const LossWeights& w);

}  // namespace autograd

}  // namespace s2t
