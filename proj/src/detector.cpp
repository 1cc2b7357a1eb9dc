#include "s2t/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "s2t/error.hpp"
#include "s2t/feature_io.hpp"
#include "s2t/nn/checkpoint.hpp"
#include "s2t/optim.hpp"

namespace s2t {

namespace {

using nn::Index;
using nn::Mat;
using Tensor = nn::Tensor<float>;

nn::EncoderConfig encoder_config(const DetectorConfig& c) {
  nn::EncoderConfig e;
  e.layers = c.encoder_layers;
  e.heads = c.heads;
  e.dim = c.encoder_dim;
  e.ff_mult = c.ff_mult;
  e.max_frames = c.shot_frames;
  e.max_cells = 1;
  return e;
}

std::vector<double> softmax(const Mat<float>& row) {
  std::vector<double> p(static_cast<std::size_t>(row.cols()));
  double m = -INFINITY;
  for (Index j = 0; j < row.cols(); ++j) m = std::max(m, static_cast<double>(row(0, j)));
  double total = 0.0;
  for (Index j = 0; j < row.cols(); ++j) {
    p[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(row(0, j)) - m);
    total += p[static_cast<std::size_t>(j)];
  }
  for (auto& x : p) x /= total;
  return p;
}

template <std::size_t N>
std::array<double, N> to_array(const std::vector<double>& v) {
  std::array<double, N> a{};
  std::copy_n(v.begin(), N, a.begin());
  return a;
}

template <std::size_t N>
int argmax(const std::array<double, N>& a) {
  return static_cast<int>(std::max_element(a.begin(), a.end()) - a.begin());
}

// Label of the single pooled state: the state of the shot before Finish.
int pooled_state_label(const std::vector<TacticState>& states) {
  return static_cast<int>(index_of(states.size() >= 2 ? states[states.size() - 2] : states.back()));
}

}  // namespace

std::vector<DetectorSample> detector_samples(const std::vector<SyntheticSample>& corpus) {
  std::vector<DetectorSample> out;
  for (const auto& s : corpus) {
    const auto& rally = s.annotation;
    if (rally.tactic_units.empty()) {
      const int n = static_cast<int>(rally.shots.size());
      if (n >= kMinTacticShots && n <= kMaxTacticShots) {
        DetectorSample d;
        d.shots = s.features;
        out.push_back(std::move(d));
      }
      continue;
    }
    for (const auto& u : rally.tactic_units) {
      DetectorSample d;
      d.label = 1;
      d.shots.assign(s.features.begin() + u.first_shot, s.features.begin() + u.last_shot + 1);
      d.tactic_type = u.tactic_type;
      d.states = u.states;
      out.push_back(std::move(d));
    }
  }
  return out;
}

ShotFeatures load_rally_features(const RallyAnnotation& rally, const std::filesystem::path& data_root) {
  ShotFeatures shots;
  for (std::size_t i = 0; i < rally.shots.size(); ++i) {
    const auto& rel = rally.shots[i].features;
    if (!rel) throw DataError("shot " + std::to_string(i) + " has no feature file");
    shots.push_back(read_feature_file(data_root / *rel));
  }
  return shots;
}

std::vector<DetectorSample> detector_samples(const std::vector<MatchAnnotation>& matches,
                                             const std::filesystem::path& data_root) {
  std::vector<DetectorSample> out;
  for (const auto& m : matches) {
    for (const auto& rally : m.rallies) {
      const int n = static_cast<int>(rally.shots.size());
      const bool negative = rally.tactic_units.empty() && n >= kMinTacticShots && n <= kMaxTacticShots;
      if (!negative && rally.tactic_units.empty()) continue;
      const ShotFeatures feats = load_rally_features(rally, data_root);
      if (negative) {
        DetectorSample d;
        d.shots = feats;
        out.push_back(std::move(d));
        continue;
      }
      for (const auto& u : rally.tactic_units) {
        DetectorSample d;
        d.label = 1;
        d.shots.assign(feats.begin() + u.first_shot, feats.begin() + u.last_shot + 1);
        d.tactic_type = u.tactic_type;
        d.states = u.states;
        out.push_back(std::move(d));
      }
    }
  }
  return out;
}

TacticUnitDetector::TacticUnitDetector(const DetectorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  validate_detector_config(cfg);
  Rng rng(seed);
  const Index d = cfg.encoder_dim;
  shot_proj_ = nn::Linear<float>(store_, "detector.shot_proj", cfg.feature_dim, d, rng);
  shot_pos_ = store_.add("detector.shot_pos", nn::normal_init<float>(cfg.max_shots, d, 0.02, rng));
  encoder_ = nn::Encoder<float>(store_, "detector.encoder", encoder_config(cfg), rng);
  pool_ = nn::AttentionPool<float>(store_, "detector.pool", d, rng, cfg.pooling == Pooling::Mean);
  binary_head_ = nn::Linear<float>(store_, "detector.binary", d, 1, rng);
  type_hidden_ = nn::Linear<float>(store_, "detector.type.hidden", d, d, rng);
  type_out_ = nn::Linear<float>(store_, "detector.type.out", d, static_cast<Index>(kTacticTypeCount), rng);
  state_hidden_ = nn::Linear<float>(store_, "detector.state.hidden", d, d, rng);
  state_out_ = nn::Linear<float>(store_, "detector.state.out", d, static_cast<Index>(kTacticStateCount), rng);
}

TacticUnitDetector::Encoded TacticUnitDetector::encode(std::span<const TokenGrid> shots) const {
  const auto n = static_cast<Index>(shots.size());
  if (n < kMinTacticShots || n > cfg_.max_shots) {
    throw ShapeError("detector takes " + std::to_string(kMinTacticShots) + ".." + std::to_string(cfg_.max_shots) +
                     " shots, got " + std::to_string(n));
  }
  // Toy per-shot extractor: mean over all frame/cell tokens.
  Mat<float> means(n, cfg_.feature_dim);
  for (Index i = 0; i < n; ++i) {
    const auto& g = shots[static_cast<std::size_t>(i)];
    check_token_grid(g);
    if (static_cast<int>(g.frames) != cfg_.shot_frames || static_cast<int>(g.dim) != cfg_.feature_dim) {
      throw ShapeError("shot features must be " + std::to_string(cfg_.shot_frames) + " frames x " +
                       std::to_string(cfg_.feature_dim) + " dims");
    }
    const Eigen::Map<const Mat<float>> tokens(g.data.data(), static_cast<Index>(g.token_count()),
                                              static_cast<Index>(g.dim));
    means.row(i) = tokens.colwise().mean();
  }
  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  const Tensor h = shot_proj_(Tensor(std::move(means))) + nn::gather_rows<float>(shot_pos_, ids);
  Encoded e;
  e.shots = encoder_(h);
  e.pooled = pool_(e.shots);
  e.logit = binary_head_(e.pooled);
  return e;
}

Tensor TacticUnitDetector::type_logits(const Encoded& e) const { return type_out_(nn::gelu(type_hidden_(e.pooled))); }

Tensor TacticUnitDetector::state_logits(const Encoded& e) const {
  const Tensor& src = cfg_.state_mode == StateMode::PerShot ? e.shots : e.pooled;
  return state_out_(nn::gelu(state_hidden_(src)));
}

DetectionOutput TacticUnitDetector::classify(std::span<const TokenGrid> shots) const {
  nn::NoGradGuard guard;
  const Encoded e = encode(shots);
  DetectionOutput out;
  out.valid_prob = sigmoid(static_cast<double>(e.logit.item()));
  out.type_dist = to_array<kTacticTypeCount>(softmax(type_logits(e).value()));
  const Tensor s = state_logits(e);
  std::vector<std::array<double, kTacticStateCount>> states;
  for (Index i = 0; i < s.rows(); ++i) states.push_back(to_array<kTacticStateCount>(softmax(s.value().row(i))));
  out.state_dist = std::move(states);
  return out;
}

DetectionOutput TacticUnitDetector::detect(std::span<const TokenGrid> shots) const {
  nn::NoGradGuard guard;
  const Encoded e = encode(shots);
  DetectionOutput out;
  out.valid_prob = sigmoid(static_cast<double>(e.logit.item()));
  if (out.valid_prob < cfg_.binary_threshold) return out;
  out.type_dist = to_array<kTacticTypeCount>(softmax(type_logits(e).value()));
  const Tensor s = state_logits(e);
  std::vector<std::array<double, kTacticStateCount>> states;
  for (Index i = 0; i < s.rows(); ++i) states.push_back(to_array<kTacticStateCount>(softmax(s.value().row(i))));
  out.state_dist = std::move(states);
  return out;
}

DetectorTrainResult train_detector(TacticUnitDetector& model, std::span<const DetectorSample> train,
                                   const TrainConfig& tc, LossWeights weights, const MarginSchedule& margin,
                                   bool inverse_frequency_alpha,
                                   const std::function<void(const DetectorEpoch&)>& on_epoch) {
  validate_train_config(tc);
  std::size_t positives = 0;
  std::array<std::size_t, kTacticTypeCount> type_counts{};
  for (const auto& s : train) {
    if (s.label == 1) {
      ++positives;
      ++type_counts[index_of(s.tactic_type)];
      if (s.states.size() != s.shots.size()) throw DataError("positive sample needs one state per shot");
    }
  }
  if (positives == 0 || positives == train.size()) {
    throw DegenerateCorpus("detector training needs both valid and invalid windows");
  }
  if (inverse_frequency_alpha) weights.alpha_type = inverse_frequency_weights(type_counts);
  validate_loss_weights(weights);

  const bool pooled = model.config().state_mode == StateMode::Pooled;
  AdamWConfig ac;
  ac.weight_decay = tc.weight_decay;
  AdamW<float> opt(model.params(), ac);
  const auto batch = static_cast<std::size_t>(tc.batch_size);
  const long steps_per_epoch = static_cast<long>((train.size() + batch - 1) / batch);
  const long total_steps = steps_per_epoch * tc.epochs;
  long step = 0;

  DetectorTrainResult result;
  result.weights_used = weights;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng rng(derive_seed(tc.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    DetectorEpoch stats;
    stats.epoch = epoch;
    stats.margin = margin_at_epoch(margin, epoch);
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      std::vector<Tensor> logits, type_rows, state_rows;
      std::vector<int> labels, type_labels;
      std::vector<std::vector<int>> state_labels;
      for (std::size_t k = begin; k < end; ++k) {
        const auto& s = train[order[k]];
        const auto e = model.encode(s.shots);
        logits.push_back(e.logit);
        labels.push_back(s.label);
        if (s.label == 1) {
          type_rows.push_back(model.type_logits(e));
          type_labels.push_back(static_cast<int>(index_of(s.tactic_type)));
          state_rows.push_back(model.state_logits(e));
          std::vector<int> sl;
          if (pooled) {
            sl.push_back(pooled_state_label(s.states));
          } else {
            for (auto st : s.states) sl.push_back(static_cast<int>(index_of(st)));
          }
          state_labels.push_back(std::move(sl));
        }
      }
      Tensor det = autograd::detection_loss<float>(nn::concat_rows<float>(logits), labels, weights, stats.margin);
      Tensor loss = det;
      double cls_value = 0.0;
      if (!type_rows.empty()) {
        Tensor cls = autograd::classification_loss<float>(nn::concat_rows<float>(type_rows), type_labels, state_rows,
                                                          state_labels, weights);
        cls_value = cls.item();
        loss = det + cls;
      }
      model.params().zero_grad();
      nn::backward(loss);
      const double lr = lr_at_step(tc.learning_rate, tc.warmup_fraction, step, total_steps, tc.constant_after_warmup);
      opt.step(lr);
      ++step;
      stats.loss += loss.item();
      stats.detection_loss += det.item();
      stats.classification_loss += cls_value;
      stats.last_lr = lr;
    }
    const double n = static_cast<double>(steps_per_epoch);
    stats.loss /= n;
    stats.detection_loss /= n;
    stats.classification_loss /= n;
    if (!std::isfinite(stats.loss)) throw NonFiniteGradient("detector loss diverged in epoch " + std::to_string(epoch));
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  model.params().zero_grad();
  return result;
}

ClassMetrics report_detector_metrics(std::span<const int> predictions, std::span<const int> labels, int num_classes) {
  if (predictions.empty()) throw EmptyInput("no predictions to score");
  if (predictions.size() != labels.size()) throw ShapeError("predictions and labels differ in length");
  const auto k = static_cast<std::size_t>(num_classes);
  std::vector<std::vector<std::size_t>> cm(k, std::vector<std::size_t>(k, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes || predictions[i] < 0 || predictions[i] >= num_classes) {
      throw IndexError("class index out of range");
    }
    ++cm[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predictions[i])];
    if (labels[i] == predictions[i]) ++correct;
  }
  const auto prf = [&](std::size_t c) {
    std::size_t tp = cm[c][c], fp = 0, fn = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == c) continue;
      fp += cm[j][c];
      fn += cm[c][j];
    }
    const double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double f = p + r == 0.0 ? 0.0 : 2 * p * r / (p + r);
    return std::array<double, 3>{p, r, f};
  };
  ClassMetrics m;
  m.count = labels.size();
  m.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
  double f_sum = 0.0, p_sum = 0.0, r_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t support = 0, predicted = 0;
    for (std::size_t j = 0; j < k; ++j) {
      support += cm[c][j];
      predicted += cm[j][c];
    }
    if (support == 0 && predicted == 0) continue;
    const auto v = prf(c);
    p_sum += v[0];
    r_sum += v[1];
    f_sum += v[2];
    ++present;
  }
  m.macro_f1 = 100.0 * f_sum / static_cast<double>(present);
  if (num_classes == 2) {
    const auto v = prf(1);
    m.precision = 100.0 * v[0];
    m.recall = 100.0 * v[1];
  } else {
    m.precision = 100.0 * p_sum / static_cast<double>(present);
    m.recall = 100.0 * r_sum / static_cast<double>(present);
  }
  return m;
}

DetectorEvaluation evaluate_detector(const TacticUnitDetector& model, std::span<const DetectorSample> samples) {
  if (samples.empty()) throw EmptyInput("no samples to evaluate");
  std::vector<int> bin_pred, bin_true, type_pred, type_true, gated_pred;
  std::size_t state_hits = 0, state_total = 0;
  const bool pooled = model.config().state_mode == StateMode::Pooled;
  const int rejected = static_cast<int>(kTacticTypeCount);
  for (const auto& s : samples) {
    const auto out = model.classify(s.shots);
    const bool accepted = out.valid_prob >= model.config().binary_threshold;
    bin_pred.push_back(accepted ? 1 : 0);
    bin_true.push_back(s.label);
    if (s.label != 1) continue;
    const int t = argmax(*out.type_dist);
    type_pred.push_back(t);
    type_true.push_back(static_cast<int>(index_of(s.tactic_type)));
    gated_pred.push_back(accepted ? t : rejected);
    const auto& sd = *out.state_dist;
    if (pooled) {
      state_hits += argmax(sd.front()) == pooled_state_label(s.states) ? 1 : 0;
      ++state_total;
    } else {
      for (std::size_t i = 0; i < sd.size(); ++i) {
        state_hits += argmax(sd[i]) == static_cast<int>(index_of(s.states[i])) ? 1 : 0;
        ++state_total;
      }
    }
  }
  DetectorEvaluation e;
  e.binary = report_detector_metrics(bin_pred, bin_true, 2);
  if (!type_true.empty()) {
    e.type = report_detector_metrics(type_pred, type_true, static_cast<int>(kTacticTypeCount));
    e.type_gated = report_detector_metrics(gated_pred, type_true, static_cast<int>(kTacticTypeCount) + 1);
    e.state_accuracy = 100.0 * static_cast<double>(state_hits) / static_cast<double>(state_total);
  }
  return e;
}

nlohmann::json detector_evaluation_json(const DetectorEvaluation& e) {
  const auto m = [](const ClassMetrics& c) {
    return nlohmann::json{{"count", c.count},
                          {"accuracy", c.accuracy},
                          {"macro_f1", c.macro_f1},
                          {"precision", c.precision},
                          {"recall", c.recall}};
  };
  return {{"binary", m(e.binary)},
          {"type", m(e.type)},
          {"type_gated", m(e.type_gated)},
          {"state_accuracy", e.state_accuracy}};
}

void save_detector(const std::filesystem::path& path, const TacticUnitDetector& model, const nlohmann::json& extra) {
  nn::save_checkpoint(path, model.params(), {{"detector", detector_config_json(model.config())}, {"extra", extra}});
}

TacticUnitDetector load_detector(const std::filesystem::path& path) {
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(read_container(path).header);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (!header.contains("config") || !header["config"].contains("detector")) {
    throw DataError(path.string() + ": not a detector checkpoint");
  }
  TacticUnitDetector model(detector_config_from_json(header["config"]["detector"]), 0);
  nn::load_checkpoint(path, model.params());
  return model;
}

}  // namespace s2t
