#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "s2t/detector.hpp"
#include "s2t/error.hpp"

using namespace s2t;
using doctest::Approx;

namespace {

SyntheticConfig corpus_config(int rallies, double noise) {
  SyntheticConfig c;
  c.num_rallies = rallies;
  c.feature_noise_std = noise;
  c.frames_per_shot = 4;
  c.grid_h = c.grid_w = 1;
  return c;
}

DetectorConfig small_detector(int dim = 32) {
  DetectorConfig d;
  d.shot_frames = 4;
  d.encoder_dim = dim;
  d.heads = 4;
  d.encoder_layers = 2;
  return d;
}

TrainConfig train_config(int epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.learning_rate = 1e-3;
  t.batch_size = 8;
  t.seed = 3;
  return t;
}

}  // namespace

TEST_CASE("untrained outputs are valid distributions") {
  const auto corpus = generate_corpus(corpus_config(30, 0.05), default_grammar());
  const auto samples = detector_samples(corpus);
  TacticUnitDetector model(small_detector(), 1);
  for (const auto& s : samples) {
    const auto out = model.classify(s.shots);
    CHECK(out.valid_prob > 0.0);
    CHECK(out.valid_prob < 1.0);
    REQUIRE(out.type_dist.has_value());
    CHECK(std::accumulate(out.type_dist->begin(), out.type_dist->end(), 0.0) == Approx(1.0).epsilon(1e-6));
    REQUIRE(out.state_dist.has_value());
    CHECK(out.state_dist->size() == s.shots.size());
    for (const auto& d : *out.state_dist) CHECK(std::accumulate(d.begin(), d.end(), 0.0) == Approx(1.0).epsilon(1e-6));
  }
  auto pooled_cfg = small_detector();
  pooled_cfg.state_mode = StateMode::Pooled;
  pooled_cfg.pooling = Pooling::Mean;
  TacticUnitDetector pooled(pooled_cfg, 1);
  CHECK(pooled.classify(samples[0].shots).state_dist->size() == 1);
}

TEST_CASE("stage two runs only above the threshold") {
  const auto corpus = generate_corpus(corpus_config(20, 0.05), default_grammar());
  const auto samples = detector_samples(corpus);
  for (const auto& s : samples) {
    TacticUnitDetector probe(small_detector(), 5);
    const double p = probe.classify(s.shots).valid_prob;
    auto above = small_detector();
    above.binary_threshold = std::min(1.0, p + 1e-3);
    auto below = small_detector();
    below.binary_threshold = std::max(0.0, p - 1e-3);
    TacticUnitDetector gated(above, 5), open(below, 5);
    const auto a = gated.detect(s.shots);
    CHECK(a.valid_prob == p);
    CHECK_FALSE(a.type_dist.has_value());
    CHECK_FALSE(a.state_dist.has_value());
    const auto b = open.detect(s.shots);
    CHECK(b.type_dist.has_value());
    CHECK(b.state_dist.has_value());
  }
}

TEST_CASE("shape errors") {
  TacticUnitDetector model(small_detector(), 1);
  std::vector<TokenGrid> shots(4, TokenGrid(4, 1, 16));
  CHECK_THROWS_AS(model.detect(shots), ShapeError);
  shots.assign(10, TokenGrid(4, 1, 16));
  CHECK_THROWS_AS(model.detect(shots), ShapeError);
  shots.assign(5, TokenGrid(3, 1, 16));
  CHECK_THROWS_AS(model.detect(shots), ShapeError);
  shots.assign(5, TokenGrid(4, 1, 12));
  CHECK_THROWS_AS(model.detect(shots), ShapeError);
}

TEST_CASE("metric examples") {
  // confusion [[8,2],[1,9]]: rows are true classes
  std::vector<int> labels, preds;
  for (int i = 0; i < 8; ++i) labels.push_back(0), preds.push_back(0);
  for (int i = 0; i < 2; ++i) labels.push_back(0), preds.push_back(1);
  for (int i = 0; i < 1; ++i) labels.push_back(1), preds.push_back(0);
  for (int i = 0; i < 9; ++i) labels.push_back(1), preds.push_back(1);
  auto m = report_detector_metrics(preds, labels);
  CHECK(m.count == 20);
  CHECK(m.accuracy == Approx(85.0));
  CHECK(m.precision == Approx(100.0 * 9 / 11));
  CHECK(m.recall == Approx(90.0));
  const double f0 = 2.0 * (8.0 / 9) * 0.8 / (8.0 / 9 + 0.8);
  const double f1 = 2.0 * (9.0 / 11) * 0.9 / (9.0 / 11 + 0.9);
  CHECK(m.macro_f1 == Approx(100.0 * (f0 + f1) / 2));

  const std::vector<int> half{0, 0, 1, 1}, none{0, 0, 0, 0};
  m = report_detector_metrics(none, half);
  CHECK(m.accuracy == Approx(50.0));
  CHECK(m.recall == 0.0);

  const std::vector<int> multi{0, 3, 8, 3, 5};
  m = report_detector_metrics(multi, multi, 9);
  CHECK(m.accuracy == 100.0);
  CHECK(m.macro_f1 == 100.0);
  CHECK(m.precision == 100.0);

  CHECK_THROWS_AS(report_detector_metrics(std::vector<int>{}, std::vector<int>{}), EmptyInput);
}

TEST_CASE("single-class corpora are rejected") {
  const auto corpus = generate_corpus(corpus_config(40, 0.05), default_grammar());
  auto samples = detector_samples(corpus);
  std::erase_if(samples, [](const DetectorSample& s) { return s.label == 0; });
  TacticUnitDetector model(small_detector(), 1);
  CHECK_THROWS_AS(train_detector(model, samples, train_config(1), {}, {}), DegenerateCorpus);
}

TEST_CASE("training loss falls over the first epochs on noise-free data") {
  const auto corpus = generate_corpus(corpus_config(120, 0.0), default_grammar());
  const auto samples = detector_samples(corpus);
  TacticUnitDetector model(small_detector(), 2);
  const auto r = train_detector(model, samples, train_config(5), {}, {});
  REQUIRE(r.history.size() == 5);
  CHECK(r.history[0].margin == Approx(0.1));
  for (const auto& e : r.history) CHECK(std::isfinite(e.loss));
  CHECK(r.history[4].loss < r.history[0].loss);
  // inverse-frequency weights average to one
  const auto& a = r.weights_used.alpha_type;
  CHECK(std::accumulate(a.begin(), a.end(), 0.0) / a.size() == Approx(1.0));
}

TEST_CASE("noise-free corpus is learned almost perfectly") {
  // separable by construction, but hard negatives sit one shot away from a
  // valid unit, so the corpus has to be larger than the 1,410-window one
  const auto corpus = generate_corpus(corpus_config(4000, 0.0), default_grammar());
  const auto all = detector_samples(corpus);
  const std::size_t cut = all.size() * 4 / 5;
  const std::vector<DetectorSample> train(all.begin(), all.begin() + static_cast<long>(cut));
  const std::vector<DetectorSample> test(all.begin() + static_cast<long>(cut), all.end());
  TacticUnitDetector model(small_detector(64), 4);
  auto tc = train_config(30);
  tc.batch_size = 4;
  train_detector(model, train, tc, {}, {});
  const auto e = evaluate_detector(model, test);
  MESSAGE("binary ", e.binary.accuracy, " type ", e.type.accuracy, " state ", e.state_accuracy);
  CHECK(e.binary.accuracy >= 99.0);
  CHECK(e.type.accuracy >= 95.0);
}

TEST_CASE("checkpoint round trip") {
  const auto corpus = generate_corpus(corpus_config(30, 0.05), default_grammar());
  const auto samples = detector_samples(corpus);
  TacticUnitDetector model(small_detector(), 9);
  train_detector(model, samples, train_config(1), {}, {});
  const auto path = std::filesystem::temp_directory_path() / "s2t_test_detector.ckpt";
  save_detector(path, model);
  const auto loaded = load_detector(path);
  CHECK(loaded.config().encoder_dim == model.config().encoder_dim);
  for (const auto& s : samples) {
    const auto a = model.classify(s.shots);
    const auto b = loaded.classify(s.shots);
    CHECK(a.valid_prob == b.valid_prob);
    CHECK(*a.type_dist == *b.type_dist);
  }
  std::filesystem::remove(path);
}
