#include "s2t/losses.hpp"

#include <algorithm>
#include <cmath>

#include "s2t/error.hpp"

namespace s2t {

namespace {

template <typename T>
T stable_sigmoid(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

// Row softmax of a 1 x C row.
template <typename T>
nn::Mat<T> softmax_row(const nn::Mat<T>& z, nn::Index row) {
  nn::Mat<T> p = z.row(row);
  const T m = p.maxCoeff();
  p = (p.array() - m).exp().matrix();
  p /= p.sum();
  return p;
}

// Focal value and g = p_t * dL/dp_t. Softmax: dL/dz_j = g (delta_kj - p_j).
// Sigmoid: dL/dz = +-g (1 - p_t).
template <typename T>
void focal_terms(T p, T alpha, T gamma, T& value, T& g) {
  const T pc = std::max(p, T(kProbClamp));
  const T q = T(1) - p;
  value = -alpha * std::pow(q, gamma) * std::log(pc);
  if (p < T(kProbClamp)) {
    g = T(0);
    return;
  }
  const T lead = (gamma > T(0) && q > T(0)) ? gamma * std::pow(q, gamma - T(1)) * p * std::log(p) : T(0);
  g = alpha * (lead - std::pow(q, gamma));
}

}  // namespace

void validate_loss_weights(const LossWeights& w) {
  if (w.lambda_margin < 0 || w.beta < 0 || w.lambda_sc < 0 || w.lambda_tc < 0 || w.gamma < 0 || w.gamma_binary < 0 ||
      w.alpha_binary < 0 || w.alpha_binary > 1) {
    throw ConfigError("loss weights must be non-negative (alpha_binary within [0, 1])");
  }
  if (w.alpha_type.size() != kTacticTypeCount) throw ConfigError("alpha_type needs one weight per tactic type");
  for (double a : w.alpha_type) {
    if (!(a >= 0)) throw ConfigError("alpha_type weights must be non-negative");
  }
}

std::vector<double> inverse_frequency_weights(std::span<const std::size_t> counts) {
  std::vector<double> w(counts.size(), 0.0);
  double largest = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > 0) {
      w[i] = 1.0 / static_cast<double>(counts[i]);
      largest = std::max(largest, w[i]);
    }
  }
  if (largest == 0.0) return std::vector<double>(counts.size(), 1.0);
  double total = 0.0;
  for (auto& x : w) {
    if (x == 0.0) x = largest;
    total += x;
  }
  const double mean = total / static_cast<double>(w.size());
  for (auto& x : w) x /= mean;
  return w;
}

double margin_at_epoch(const MarginSchedule& s, int epoch) {
  if (s.warmup_epochs <= 0) return s.m_end;
  const int e = std::clamp(epoch, 0, s.warmup_epochs);
  if (e == s.warmup_epochs) return s.m_end;
  return s.m_start + (s.m_end - s.m_start) * static_cast<double>(e) / static_cast<double>(s.warmup_epochs);
}

double sigmoid(double z) { return stable_sigmoid(z); }

double focal_binary(double p_t, double alpha_t, double gamma, bool clamp) {
  if (std::isnan(p_t) || p_t > 1.0) throw DomainError("p_t must lie in (0, 1]");
  if (!clamp && p_t <= 0.0) throw DomainError("p_t must be positive when clamping is disabled");
  const double p = std::max(p_t, kProbClamp);
  return -alpha_t * std::pow(1.0 - p_t, gamma) * std::log(p);
}

double margin_penalty(std::span<const double> z, double m) {
  if (z.empty()) return 0.0;
  double total = 0.0;
  for (double v : z) total += std::max(0.0, sigmoid(v) - m);
  return total / static_cast<double>(z.size());
}

double detection_loss(const BinaryBatch& batch, const LossWeights& w, double margin) {
  if (batch.logits.size() != batch.labels.size()) throw ShapeError("logits and labels differ in length");
  if (batch.logits.empty()) throw EmptyInput("detection_loss on an empty batch");
  double focal = 0.0;
  std::vector<double> negatives;
  for (std::size_t i = 0; i < batch.logits.size(); ++i) {
    const double s = sigmoid(batch.logits[i]);
    const bool pos = batch.labels[i] == 1;
    focal += focal_binary(pos ? s : 1.0 - s, pos ? w.alpha_binary : 1.0 - w.alpha_binary, w.gamma_binary);
    if (!pos) negatives.push_back(batch.logits[i]);
  }
  return focal / static_cast<double>(batch.logits.size()) + w.lambda_margin * margin_penalty(negatives, margin);
}

double detection_loss(const BinaryBatch& batch, const LossWeights& w, const MarginSchedule& s, int epoch) {
  return detection_loss(batch, w, margin_at_epoch(s, epoch));
}

double classification_loss(std::span<const ClassificationItem> batch, const LossWeights& w) {
  if (batch.empty()) throw EmptyInput("classification_loss on an empty batch");
  double total = 0.0;
  for (const auto& item : batch) {
    if (item.type_label < 0 || item.type_label >= static_cast<int>(kTacticTypeCount)) {
      throw IndexError("type label out of range");
    }
    if (item.state_probs.size() != item.state_labels.size() || item.state_probs.empty()) {
      throw ShapeError("state distributions and labels differ in count");
    }
    const auto k = static_cast<std::size_t>(item.type_label);
    const double p = item.type_probs[k];
    const double type_term = -w.alpha_type[k] * std::pow(1.0 - p, w.gamma) * std::log(std::max(p, kProbClamp));
    double state_term = 0.0;
    for (std::size_t s = 0; s < item.state_probs.size(); ++s) {
      const int lbl = item.state_labels[s];
      if (lbl < 0 || lbl >= static_cast<int>(kTacticStateCount)) throw IndexError("state label out of range");
      state_term -= std::log(std::max(item.state_probs[s][static_cast<std::size_t>(lbl)], kProbClamp));
    }
    state_term /= static_cast<double>(item.state_probs.size());
    total += type_term + w.beta * state_term;
  }
  return total / static_cast<double>(batch.size());
}

double caption_ce(const nn::Mat<double>& logits, std::span<const int> targets, int pad_id, bool mean) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) throw ShapeError("one target per logit row expected");
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const int y = targets[t];
    if (y == pad_id) continue;
    if (y < 0 || y >= logits.cols()) throw IndexError("target id " + std::to_string(y) + " outside vocabulary");
    const auto row = logits.row(static_cast<nn::Index>(t));
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row(y);
    ++counted;
  }
  if (mean && counted > 0) total /= static_cast<double>(counted);
  return total;
}

double total_loss(double l_sc, double l_tc, const LossWeights& w) { return w.lambda_sc * l_sc + w.lambda_tc * l_tc; }

namespace autograd {

using nn::Index;
using nn::Mat;
using nn::Node;
using nn::Tensor;

template <typename T>
Tensor<T> detection_loss(const Tensor<T>& logits, std::span<const int> labels, const LossWeights& w, double margin) {
  if (logits.cols() != 1 || static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw ShapeError("detection logits must be n x 1 with one label each");
  }
  if (labels.empty()) throw EmptyInput("detection_loss on an empty batch");
  const Index n = logits.rows();
  Index negatives = 0;
  for (int y : labels) negatives += (y == 1) ? 0 : 1;
  Mat<T> grad(n, 1);
  T focal = T(0), hinge = T(0);
  const T a = static_cast<T>(w.alpha_binary);
  const T gamma = static_cast<T>(w.gamma_binary);
  const T m = static_cast<T>(margin);
  for (Index i = 0; i < n; ++i) {
    const T z = logits.value()(i, 0);
    const T s = stable_sigmoid(z);
    const bool pos = labels[static_cast<std::size_t>(i)] == 1;
    const T pt = pos ? s : T(1) - s;
    T value, g;
    focal_terms<T>(pt, pos ? a : T(1) - a, gamma, value, g);
    focal += value;
    grad(i, 0) = (pos ? g : -g) * (T(1) - pt) / T(n);
    if (!pos && s > m) {
      hinge += s - m;
      grad(i, 0) += static_cast<T>(w.lambda_margin) * s * (T(1) - s) / T(negatives);
    }
  }
  Mat<T> out(1, 1);
  out(0, 0) = focal / T(n) + (negatives > 0 ? static_cast<T>(w.lambda_margin) * hinge / T(negatives) : T(0));
  auto pl = logits.node().get();
  return nn::make_result<T>(std::move(out), {logits.node()}, [pl, grad = std::move(grad)](Node<T>& self) {
    pl->grad_buffer() += grad * self.grad(0, 0);
  });
}

template <typename T>
Tensor<T> classification_loss(const Tensor<T>& type_logits, std::span<const int> type_labels,
                              std::span<const Tensor<T>> state_logits, const std::vector<std::vector<int>>& state_labels,
                              const LossWeights& w) {
  const Index b = type_logits.rows();
  if (b == 0) throw EmptyInput("classification_loss on an empty batch");
  if (type_logits.cols() != static_cast<Index>(kTacticTypeCount) || static_cast<std::size_t>(b) != type_labels.size() ||
      state_logits.size() != type_labels.size() || state_labels.size() != type_labels.size()) {
    throw ShapeError("classification inputs disagree in batch size");
  }
  const T gamma = static_cast<T>(w.gamma);
  const T beta = static_cast<T>(w.beta);
  Mat<T> type_grad = Mat<T>::Zero(b, type_logits.cols());
  std::vector<Mat<T>> state_grads;
  T total = T(0);
  for (Index i = 0; i < b; ++i) {
    const int k = type_labels[static_cast<std::size_t>(i)];
    if (k < 0 || k >= static_cast<int>(kTacticTypeCount)) throw IndexError("type label out of range");
    const Mat<T> p = softmax_row(type_logits.value(), i);
    T value, g;
    focal_terms<T>(p(0, k), static_cast<T>(w.alpha_type[static_cast<std::size_t>(k)]), gamma, value, g);
    total += value;
    Mat<T> d = -p * g;
    d(0, k) += g;
    type_grad.row(i) = d / T(b);

    const auto& sl = state_logits[static_cast<std::size_t>(i)];
    const auto& labels = state_labels[static_cast<std::size_t>(i)];
    if (sl.cols() != static_cast<Index>(kTacticStateCount) || static_cast<std::size_t>(sl.rows()) != labels.size() ||
        labels.empty()) {
      throw ShapeError("state logits must be S x 5 with one label per row");
    }
    const Index s_count = sl.rows();
    Mat<T> sg = Mat<T>::Zero(s_count, sl.cols());
    T state_term = T(0);
    for (Index s = 0; s < s_count; ++s) {
      const int y = labels[static_cast<std::size_t>(s)];
      if (y < 0 || y >= static_cast<int>(kTacticStateCount)) throw IndexError("state label out of range");
      const Mat<T> ps = softmax_row(sl.value(), s);
      const T py = ps(0, y);
      state_term -= std::log(std::max(py, T(kProbClamp)));
      if (py >= T(kProbClamp)) {
        Mat<T> row = ps;
        row(0, y) -= T(1);
        sg.row(s) = row * (beta / (T(s_count) * T(b)));
      }
    }
    total += beta * state_term / T(s_count);
    state_grads.push_back(std::move(sg));
  }
  Mat<T> out(1, 1);
  out(0, 0) = total / T(b);
  std::vector<std::shared_ptr<Node<T>>> parents{type_logits.node()};
  for (const auto& s : state_logits) parents.push_back(s.node());
  return nn::make_result<T>(std::move(out), std::move(parents),
                            [type_grad = std::move(type_grad), state_grads = std::move(state_grads)](Node<T>& self) {
                              const T up = self.grad(0, 0);
                              if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer() += type_grad * up;
                              for (std::size_t i = 0; i < state_grads.size(); ++i) {
                                auto& p = self.parents[i + 1];
                                if (p->requires_grad) p->grad_buffer() += state_grads[i] * up;
                              }
                            });
}

template <typename T>
Tensor<T> caption_ce(const Tensor<T>& logits, std::span<const int> targets, int pad_id, bool mean) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) throw ShapeError("one target per logit row expected");
  const Index v = logits.cols();
  Mat<T> grad = Mat<T>::Zero(logits.rows(), v);
  T total = T(0);
  std::size_t counted = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const int y = targets[t];
    if (y == pad_id) continue;
    if (y < 0 || y >= v) throw IndexError("target id " + std::to_string(y) + " outside vocabulary");
    const auto row = static_cast<Index>(t);
    const T m = logits.value().row(row).maxCoeff();
    const auto shifted = (logits.value().row(row).array() - m).exp();
    const T z = shifted.sum();
    total += m + std::log(z) - logits.value()(row, y);
    grad.row(row) = shifted.matrix() / z;
    grad(row, y) -= T(1);
    ++counted;
  }
  if (mean && counted > 0) {
    total /= T(counted);
    grad /= T(counted);
  }
  Mat<T> out(1, 1);
  out(0, 0) = total;
  auto pl = logits.node().get();
  return nn::make_result<T>(std::move(out), {logits.node()}, [pl, grad = std::move(grad)](Node<T>& self) {
    pl->grad_buffer() += grad * self.grad(0, 0);
  });
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_sc, const Tensor<T>& l_tc, const LossWeights& w) {
  return nn::add(nn::scale(l_sc, static_cast<T>(w.lambda_sc)), nn::scale(l_tc, static_cast<T>(w.lambda_tc)));
}

#define S2T_INSTANTIATE(T)                                                                                      \
  template Tensor<T> detection_loss<T>(const Tensor<T>&, std::span<const int>, const LossWeights&, double);      \
  template Tensor<T> classification_loss<T>(const Tensor<T>&, std::span<const int>, std::span<const Tensor<T>>, \
                                            const std::vector<std::vector<int>>&, const LossWeights&);          \
  template Tensor<T> caption_ce<T>(const Tensor<T>&, std::span<const int>, int, bool);                          \
  template Tensor<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, const LossWeights&);

S2T_INSTANTIATE(float)
S2T_INSTANTIATE(double)

#undef S2T_INSTANTIATE

}  // namespace autograd

}  // namespace s2t
