// Acceptance checks, one PASS/FAIL line per criterion.
// Usage: acceptance [criterion ...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "s2t/captioner.hpp"
#include "s2t/config.hpp"
#include "s2t/detector.hpp"
#include "s2t/error.hpp"
#include "s2t/experiment.hpp"
#include "s2t/grammar.hpp"
#include "s2t/losses.hpp"
#include "s2t/metrics.hpp"
#include "s2t/nn/layers.hpp"
#include "s2t/synthetic.hpp"

using namespace s2t;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("s2t_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

nn::Mat<double> randn(nn::Index r, nn::Index c, Rng& rng, double s = 1.0) {
  nn::Mat<double> m(r, c);
  for (nn::Index i = 0; i < r; ++i)
    for (nn::Index j = 0; j < c; ++j) m(i, j) = rng.normal(0, s);
  return m;
}

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// ---------------------------------------------------------------------------
// 1. loss oracles

Outcome loss_oracles() {
  Rng rng(101);
  double worst_focal = 0;
  for (int i = 0; i < 10000; ++i) {
    const double p = 1e-6 + (1 - 2e-6) * rng.uniform();
    worst_focal = std::max(worst_focal, std::abs(focal_binary(p, 1.0, 0.0) + std::log(p)));
  }
  LossWeights w;
  w.alpha_type = {0.5, 1.5, 1, 2, 0.7, 1, 1.3, 0.6, 0.4};
  double worst_det = 0, worst_cls = 0;
  for (int trial = 0; trial < 200; ++trial) {
    BinaryBatch b;
    const int n = 1 + static_cast<int>(rng.index(16));
    for (int i = 0; i < n; ++i) {
      b.logits.push_back(rng.normal(0, 3));
      b.labels.push_back(static_cast<int>(rng.index(2)));
    }
    const double m = rng.uniform();
    double focal = 0, hinge = 0;
    int neg = 0;
    for (int i = 0; i < n; ++i) {
      const double p = sig(b.logits[i]);
      const double pt = b.labels[i] ? p : 1 - p;
      const double at = b.labels[i] ? w.alpha_binary : 1 - w.alpha_binary;
      focal += -at * (1 - pt) * (1 - pt) * std::log(std::max(pt, 1e-12));
      if (!b.labels[i]) {
        ++neg;
        hinge += std::max(0.0, p - m);
      }
    }
    const double want = focal / n + w.lambda_margin * (neg ? hinge / neg : 0.0);
    worst_det = std::max(worst_det, std::abs(detection_loss(b, w, m) - want));

    std::vector<ClassificationItem> items;
    double cls = 0;
    const int batch = 1 + static_cast<int>(rng.index(4));
    for (int k = 0; k < batch; ++k) {
      ClassificationItem it;
      double s = 0;
      for (auto& v : it.type_probs) s += (v = std::exp(rng.normal(0, 1.5)));
      for (auto& v : it.type_probs) v /= s;
      it.type_label = static_cast<int>(rng.index(9));
      const double pk = it.type_probs[static_cast<std::size_t>(it.type_label)];
      double term = -w.alpha_type[static_cast<std::size_t>(it.type_label)] * (1 - pk) * (1 - pk) * std::log(pk);
      const int shots = 5 + static_cast<int>(rng.index(5));
      double ce = 0;
      for (int j = 0; j < shots; ++j) {
        std::array<double, 5> q{};
        double qs = 0;
        for (auto& v : q) qs += (v = std::exp(rng.normal(0, 1.5)));
        for (auto& v : q) v /= qs;
        const int lab = static_cast<int>(rng.index(5));
        it.state_probs.push_back(q);
        it.state_labels.push_back(lab);
        ce += -std::log(q[static_cast<std::size_t>(lab)]);
      }
      cls += term + w.beta * ce / shots;
      items.push_back(std::move(it));
    }
    worst_cls = std::max(worst_cls, std::abs(classification_loss(items, w) - cls / batch));
  }
  return {worst_focal < 1e-12 && worst_det < 1e-9 && worst_cls < 1e-9,
          fmt("focal %.2e, detection %.2e, classification %.2e", worst_focal, worst_det, worst_cls)};
}

// ---------------------------------------------------------------------------
// 2. gradient suite

Outcome gradient_suite() {
  using T = nn::Tensor<double>;
  Rng rng(202);
  LossWeights w;
  w.alpha_type = {1, 2, 0.5, 1, 1, 3, 1, 1, 0.25};
  std::vector<std::pair<std::string, double>> errs;
  const auto project = [](const T& y, const nn::Mat<double>& m) { return nn::sum(nn::mul(y, T(m))); };
  const auto params = [](const nn::ParamStore<double>& s) {
    std::vector<T> out;
    for (const auto& [_, t] : s.params()) out.push_back(t);
    return out;
  };

  {
    // focal term alone, then with the margin hinge
    T z(randn(10, 1, rng, 1.5), true);
    const std::vector<int> y{1, 0, 0, 1, 0, 0, 1, 0, 1, 0};
    LossWeights focal_only = w;
    focal_only.lambda_margin = 0;
    errs.emplace_back("focal", nn::grad_check([&] { return autograd::detection_loss<double>(z, y, focal_only, 0.2); }, {z}));
    errs.emplace_back("detection", nn::grad_check([&] { return autograd::detection_loss<double>(z, y, w, 0.2); }, {z}));
  }
  {
    T t(randn(3, 9, rng), true);
    std::vector<T> st{T(randn(5, 5, rng), true), T(randn(7, 5, rng), true), T(randn(9, 5, rng), true)};
    const std::vector<int> tl{2, 5, 8};
    const std::vector<std::vector<int>> sl{{0, 1, 1, 1, 4}, {0, 1, 2, 3, 1, 1, 4}, {0, 1, 2, 3, 1, 2, 3, 1, 4}};
    std::vector<T> in{t};
    in.insert(in.end(), st.begin(), st.end());
    errs.emplace_back("classification",
                      nn::grad_check([&] { return autograd::classification_loss<double>(t, tl, st, sl, w); }, in));
  }
  {
    T a(randn(6, 12, rng), true), b(randn(8, 12, rng), true);
    const std::vector<int> ta{3, 4, 5, 0, 11, 2}, tb{1, 2, 3, 4, 5, 6, 7, 2};
    errs.emplace_back("caption_ce", nn::grad_check([&] { return autograd::caption_ce<double>(a, ta, 0); }, {a}));
    errs.emplace_back("total", nn::grad_check(
                                   [&] {
                                     return autograd::total_loss<double>(autograd::caption_ce<double>(a, ta, 0),
                                                                         autograd::caption_ce<double>(b, tb, 0), w);
                                   },
                                   {a, b}));
  }
  nn::EncoderConfig ec;
  ec.layers = 1;
  ec.heads = 2;
  ec.dim = 8;
  ec.ff_mult = 2;
  {
    nn::ParamStore<double> store;
    nn::EncoderBlock<double> block(store, "blk", ec, rng);
    T x(randn(6, 8, rng), true);
    const auto m = randn(6, 8, rng);
    auto in = params(store);
    in.push_back(x);
    errs.emplace_back("encoder block", nn::grad_check([&] { return project(block(x), m); }, in, 1e-5, 32));
  }
  {
    nn::ParamStore<double> store;
    nn::AttentionPool<double> pool(store, "pool", 8, rng);
    T x(randn(7, 8, rng), true);
    const auto m = randn(1, 8, rng);
    auto in = params(store);
    in.push_back(x);
    errs.emplace_back("attention pool", nn::grad_check([&] { return project(pool(x), m); }, in));
  }
  {
    nn::ParamStore<double> store;
    nn::PromptCrossAttention<double> layer(store, "prompt", ec, rng);
    layer.gate.mutable_value()(0, 0) = 0.6;
    T x(randn(5, 8, rng), true), p(randn(4, 8, rng), true);
    const auto m = randn(5, 8, rng);
    auto in = params(store);
    in.push_back(x);
    in.push_back(p);
    errs.emplace_back("prompt cross-attention", nn::grad_check([&] { return project(layer(x, p), m); }, in, 1e-5, 32));
  }
  double worst = 0;
  std::string detail;
  for (const auto& [name, e] : errs) {
    worst = std::max(worst, e);
    detail += name + " " + fmt("%.1e", e) + ", ";
  }
  detail.resize(detail.size() - 2);
  return {worst < 1e-4, detail};
}

// ---------------------------------------------------------------------------
// 3. margin schedule

Outcome margin_schedule() {
  MarginSchedule s;
  bool ok = margin_at_epoch(s, 0) == 0.1 && margin_at_epoch(s, 5) == 0.5 && margin_at_epoch(s, 30) == 0.5;
  double prev = 0;
  for (int e = 0; e <= 100; ++e) {
    ok = ok && margin_at_epoch(s, e) >= prev;
    prev = margin_at_epoch(s, e);
  }
  return {ok, fmt("m(0)=%.3f m(5)=%.3f m(30)=%.3f", margin_at_epoch(s, 0), margin_at_epoch(s, 5), margin_at_epoch(s, 30))};
}

// ---------------------------------------------------------------------------
// 4. grammar oracle

// Slot for a window position taken straight from the shipped list: opponent
// positions are free, own positions past the list reuse the last own slot.
bool ref_accepts(const TacticPattern& p, int pos, ShotType t) {
  if (pos % 2 == 1) return true;
  const int k = static_cast<int>(p.slots.size());
  const int idx = pos < k ? pos : (k % 2 == 1 ? k - 1 : k - 2);
  const auto& a = p.slots[static_cast<std::size_t>(idx)].allowed;
  return std::find(a.begin(), a.end(), t) != a.end();
}

// Tries every set of own positions as the interruption set.
MatchResult ref_match(const std::vector<ShotType>& shots, const std::vector<TacticPattern>& grammar) {
  const int n = static_cast<int>(shots.size());
  std::vector<int> own;
  for (int i = 0; i < n; i += 2) own.push_back(i);
  for (const auto& p : grammar) {
    for (unsigned mask = 0; mask < (1u << own.size()); ++mask) {
      std::vector<int> set;
      bool consistent = true;
      for (std::size_t b = 0; b < own.size(); ++b) {
        const bool in = mask >> b & 1u;
        const bool ok = ref_accepts(p, own[b], shots[static_cast<std::size_t>(own[b])]);
        if (in == ok) consistent = false;
        if (in) set.push_back(own[b]);
      }
      if (!consistent) continue;
      const int hits = static_cast<int>(own.size() - set.size());
      if (static_cast<int>(set.size()) <= p.max_interruptions && hits >= p.min_core_hits) {
        return {true, p.tactic_type, set};
      }
    }
  }
  return {};
}

std::vector<TacticState> ref_states(const std::vector<int>& interrupts, int n) {
  std::set<int> in(interrupts.begin(), interrupts.end());
  std::vector<TacticState> s;
  for (int j = 0; j < n; ++j) {
    if (j == 0) {
      s.push_back(TacticState::Start);
    } else if (j == n - 1) {
      s.push_back(TacticState::Finish);
    } else if (in.count(j)) {
      s.push_back(TacticState::Interrupt);
    } else if (j >= 2 && in.count(j - 1)) {
      s.push_back(TacticState::Resume);
    } else {
      s.push_back(TacticState::Continue);
    }
  }
  return s;
}

Outcome grammar_oracle() {
  const auto& g = default_grammar();
  std::size_t checked = 0, mismatches = 0, valid = 0;
  const auto check = [&](const std::vector<ShotType>& shots, int first, Parity parity) {
    CandidateWindow w{0, first, static_cast<int>(shots.size()), shots};
    const auto got = match_tactic(w, g, parity);
    const auto want = ref_match(shots, g);
    ++checked;
    if (!(got == want)) {
      ++mismatches;
      return;
    }
    if (got.valid) {
      ++valid;
      if (label_states(got, w.length) != ref_states(want.interrupt_positions, w.length)) ++mismatches;
    }
  };
  const std::array<ShotType, 4> alphabet{ShotType::Serve, ShotType::Smash, ShotType::Net, ShotType::Push};
  for (int code = 0; code < 1024; ++code) {
    std::vector<ShotType> shots;
    for (int i = 0, c = code; i < 5; ++i, c /= 4) shots.push_back(alphabet[static_cast<std::size_t>(c % 4)]);
    check(shots, 0, Parity::Even);
  }
  Rng rng(404);
  for (int i = 0; i < 10000; ++i) {
    const int n = 6 + static_cast<int>(rng.index(4));
    // bias own shots towards one type so valid windows are common
    const auto core = static_cast<ShotType>(rng.index(kShotTypeCount));
    std::vector<ShotType> shots;
    for (int j = 0; j < n; ++j) {
      shots.push_back(j % 2 == 0 && rng.uniform() < 0.7 ? core : static_cast<ShotType>(rng.index(kShotTypeCount)));
    }
    const bool odd = rng.index(2) == 1;
    check(shots, odd ? 3 : 2, odd ? Parity::Odd : Parity::Even);
  }
  bool counts_ok = true;
  for (int L = 0; L <= 200; ++L) {
    int want = 0;
    for (int w : {5, 7, 9}) want += std::max(0, L - w + 1);
    counts_ok = counts_ok && static_cast<int>(enumerate_candidates(L).size()) == want;
  }
  return {mismatches == 0 && counts_ok,
          fmt("%.0f windows, %.0f valid, %.0f mismatches, window counts ", static_cast<double>(checked),
              static_cast<double>(valid), static_cast<double>(mismatches)) +
              (counts_ok ? "ok" : "wrong")};
}

// ---------------------------------------------------------------------------
// 5. state counts

Outcome state_counts() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    SyntheticConfig c;
    c.seed = seed;
    c.frames_per_shot = 1;
    c.grid_h = c.grid_w = 1;
    const auto corpus = generate_corpus(c, default_grammar());
    std::array<std::size_t, kTacticStateCount> n{};
    std::size_t units = 0;
    for (const auto& s : corpus) {
      for (const auto& u : s.annotation.tactic_units) {
        ++units;
        for (auto st : u.states) ++n[index_of(st)];
      }
    }
    const auto S = n[index_of(TacticState::Start)], F = n[index_of(TacticState::Finish)];
    const auto I = n[index_of(TacticState::Interrupt)], R = n[index_of(TacticState::Resume)];
    ok = ok && S == units && F == units && R <= I;
    detail += "seed " + std::to_string(seed) + ": units " + std::to_string(units) + " S/F/I/R " + std::to_string(S) +
              "/" + std::to_string(F) + "/" + std::to_string(I) + "/" + std::to_string(R) + "; ";
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// 6. metric oracles

Tokens words(const std::string& s) {
  Tokens t;
  std::istringstream in(s);
  for (std::string w; in >> w;) t.push_back(w);
  return t;
}

Outcome metric_oracles() {
  const std::vector<EvalPair> clip{{words("the the the the the the the"), {words("the cat is on the mat")}}};
  const auto mp = modified_precision(clip, 1);
  const bool clip_ok = mp.clipped == 2 && mp.total == 7 && bleu(clip, 1) == 2.0 / 7.0;

  Rng rng(606);
  std::size_t lcs_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    Tokens a, b;
    const auto na = rng.index(13), nb = rng.index(13);
    for (std::size_t k = 0; k < na; ++k) a.push_back(std::string(1, static_cast<char>('a' + rng.index(4))));
    for (std::size_t k = 0; k < nb; ++k) b.push_back(std::string(1, static_cast<char>('a' + rng.index(4))));
    std::size_t best = 0;
    for (unsigned mask = 0; mask < (1u << na); ++mask) {
      std::size_t j = 0, len = 0;
      bool fits = true;
      for (std::size_t k = 0; k < na && fits; ++k) {
        if (!(mask >> k & 1u)) continue;
        while (j < nb && b[j] != a[k]) ++j;
        if (j == nb) fits = false;
        else ++j, ++len;
      }
      if (fits) best = std::max(best, len);
    }
    if (lcs_length(a, b) != best) ++lcs_bad;
    // ROUGE-L from the brute-force LCS
    if (na > 0 && nb > 0) {
      const double p = static_cast<double>(best) / na, r = static_cast<double>(best) / nb;
      const double f = best == 0 ? 0.0 : (1 + 1.44) * p * r / (r + 1.44 * p);
      const std::vector<EvalPair> one{{a, {b}}};
      if (rouge_l(one) != f) ++lcs_bad;
    }
  }
  const std::vector<EvalPair> same{{words("a b c d"), {words("a b c d")}}};
  const auto pr = unigram_pr(same);
  const bool maxima = bleu(same, 4) == 1.0 && rouge_l(same) == 1.0 && pr.precision == 1.0 && pr.recall == 1.0 &&
                      std::abs(meteor_lite(same) - 0.9921875) < 1e-12;
  return {clip_ok && lcs_bad == 0 && maxima,
          std::string("clipped 2/7 ") + (clip_ok ? "ok" : "wrong") + ", LCS/ROUGE mismatches " +
              std::to_string(lcs_bad) + ", maxima " + (maxima ? "ok" : "wrong") +
              fmt(", meteor %.7f", meteor_lite(same))};
}

// ---------------------------------------------------------------------------
// 7. overfit

Outcome overfit() {
  SyntheticConfig sc;
  sc.num_rallies = 80;
  sc.frames_per_shot = 4;
  sc.grid_h = sc.grid_w = 1;
  const auto corpus = generate_corpus(sc, default_grammar());

  // 8 shots of distinct types and 4 units of distinct types
  std::vector<SyntheticSample> shot_src, unit_src;
  std::set<ShotType> shot_types;
  std::set<TacticType> unit_types;
  for (const auto& s : corpus) {
    for (std::size_t i = 0; i < s.annotation.shots.size() && shot_src.size() < 8; ++i) {
      const auto t = s.annotation.shots[i].shot_type;
      if (!shot_types.insert(t).second) continue;
      SyntheticSample one;
      one.annotation.shots.push_back(s.annotation.shots[i]);
      one.features.push_back(s.features[i]);
      shot_src.push_back(std::move(one));
    }
    if (!s.annotation.tactic_units.empty() && unit_src.size() < 4 &&
        unit_types.insert(s.annotation.tactic_units[0].tactic_type).second) {
      SyntheticSample u = s;
      // the unit's shot captions are not part of the tactic set
      for (auto& sh : u.annotation.shots) sh.caption.clear();
      unit_src.push_back(std::move(u));
    }
  }
  std::vector<std::string> caps = corpus_captions(shot_src);
  const auto tcaps = corpus_captions(unit_src);
  caps.insert(caps.end(), tcaps.begin(), tcaps.end());
  const Vocabulary vocab = Vocabulary::build(caps, 1);
  const auto shots = shot_pairs(shot_src, vocab);
  const auto tactics = tactic_pairs(unit_src, vocab, PromptMode::ShotWise);

  CaptionerConfig cc;
  cc.embed_dim = 64;
  cc.decoder_layers = 2;
  cc.encoder_layers = 1;
  cc.heads = 4;
  cc.max_frames = 4;
  cc.max_cells = 1;
  Captioner model(cc, vocab, 11);
  TrainConfig tc;
  tc.epochs = 300;
  tc.learning_rate = 1e-3;
  tc.batch_size = 4;
  tc.seed = 11;
  const auto hist = train_captioners(model, shots, tactics, tc, LossWeights{});

  int shot_exact = 0, tactic_exact = 0;
  std::size_t longest = 0;
  for (const auto& p : shots) shot_exact += model.caption_shot(p.shot) == p.target;
  for (const auto& p : tactics) {
    tactic_exact += model.caption_tactic(p.shots, p.prompt) == p.target;
    longest = std::max(longest, p.target.size());
  }
  const bool ok = shots.size() == 8 && tactics.size() == 4 && shot_exact >= 7 && tactic_exact * 8 >= 7 * 4;
  return {ok, fmt("shot %.0f/8, tactic %.0f/4 exact (longest %.0f words), final token loss %.4f", shot_exact,
                  tactic_exact, static_cast<double>(longest), hist.back().tactic_token_loss)};
}

// ---------------------------------------------------------------------------
// 8. closed-loop detector

json base_config(const fs::path& root) {
  return {{"data.root", root.string()},
          {"synthetic.frames_per_shot", 4},
          {"synthetic.grid_h", 1},
          {"synthetic.grid_w", 1},
          {"train.lr", 1e-3},
          {"detector.shot_frames", 4},
          {"captioner.heads", 4},
          {"captioner.max_frames", 4},
          {"captioner.max_cells", 1}};
}

Outcome closed_loop_detector() {
  const auto dir = scratch("detector");
  auto flat = base_config(dir / "data");
  flat["synthetic.num_rallies"] = 1410;
  flat["synthetic.noise_std"] = 0.05;
  flat["detector.encoder_dim"] = 64;
  flat["detector.heads"] = 4;
  flat["detector_train.epochs"] = 40;
  const auto cfg = parse_config(flat);
  const auto gen = run_experiment("generate-synthetic", cfg, dir / "out");
  const auto m = run_experiment("train-detector", cfg, dir / "out");
  const double binary = m["metrics"]["test"]["binary"]["accuracy"];
  const double type = m["metrics"]["test"]["type"]["accuracy"];
  const double gated = m["metrics"]["test"]["type_gated"]["accuracy"];
  fs::remove_all(dir);
  return {binary >= 90.0 && type >= 80.0,
          fmt("%.0f valid / %.0f invalid; test binary %.2f%%, type %.2f%%", gen["outputs"]["tactic_units"].get<double>(),
              gen["outputs"]["rallies_without_units"].get<double>(), binary, type) +
              (binary > type ? " (binary > type)" : " (type >= binary)") +
              fmt("; type behind the gate %.2f%%", gated)};
}

// ---------------------------------------------------------------------------
// 9. prompt ablation

Outcome prompt_ablation_check() {
  SyntheticConfig sc;
  sc.num_rallies = 40;
  sc.frames_per_shot = 4;
  sc.grid_h = sc.grid_w = 1;
  const auto corpus = generate_corpus(sc, default_grammar());
  const Vocabulary vocab = Vocabulary::build(corpus_captions(corpus), 1);
  CaptionerConfig cc;
  cc.embed_dim = 16;
  cc.encoder_layers = 1;
  cc.decoder_layers = 1;
  cc.heads = 2;
  cc.max_frames = 4;
  cc.max_cells = 1;
  Captioner model(cc, vocab, 21);
  const auto pairs = tactic_pairs(corpus, vocab, PromptMode::ShotWise);
  model.params().find("tactic.decoder.prompt.gate").mutable_value().setZero();
  bool identical = true;
  for (const auto& p : pairs) {
    const auto a = model.tactic_logits(p.shots, p.prompt, p.target).value();
    const auto b = model.tactic_logits(p.shots, std::nullopt, p.target).value();
    identical = identical && (a.array() == b.array()).all();
    identical = identical && model.caption_tactic(p.shots, p.prompt) == model.caption_tactic(p.shots, std::nullopt);
  }

  const auto dir = scratch("ablation");
  auto flat = base_config(dir / "data");
  flat["synthetic.num_rallies"] = 600;
  flat["train.epochs"] = 15;
  flat["captioner.embed_dim"] = 32;
  flat["captioner.encoder_layers"] = 1;
  flat["captioner.decoder_layers"] = 1;
  flat["ablate.seeds"] = 5;
  const auto cfg = parse_config(flat);
  run_experiment("generate-synthetic", cfg, dir / "out");
  const auto m = run_experiment("ablate-prompt", cfg, dir / "out");
  std::map<std::uint64_t, std::map<std::string, double>> b4;
  for (const auto& row : m["rows"]) b4[row["seed"].get<std::uint64_t>()][row["prompt"].get<std::string>()] = row["bleu4"];
  int ordered = 0;
  std::string detail;
  for (auto& [seed, r] : b4) {
    const bool o = r["shot_wise"] >= r["flat"] && r["flat"] >= r["none"];
    ordered += o;
    detail += fmt("%.1f/%.1f/%.1f", 100 * r["shot_wise"], 100 * r["flat"], 100 * r["none"]) + (o ? "" : "*") + " ";
  }
  fs::remove_all(dir);
  return {identical && ordered >= 4 && b4.size() == 5,
          std::string("gate-0 identity ") + (identical ? "exact" : "broken") + "; BLEU-4 shot_wise/flat/none per seed: " +
              detail + "-> " + std::to_string(ordered) + "/5 ordered"};
}

// ---------------------------------------------------------------------------
// 10. determinism

Outcome determinism() {
  const auto dir = scratch("determinism");
  auto flat = base_config(dir / "data");
  flat["synthetic.num_rallies"] = 150;
  flat["train.epochs"] = 3;
  flat["detector.encoder_dim"] = 32;
  flat["detector.heads"] = 4;
  flat["captioner.embed_dim"] = 32;
  flat["captioner.encoder_layers"] = 1;
  flat["captioner.decoder_layers"] = 2;
  const auto cfg = parse_config(flat);
  json curves[2];
  std::string det[2], cap[2], sums[2];
  for (int run = 0; run < 2; ++run) {
    const auto out = dir / ("run" + std::to_string(run));
    run_experiment("generate-synthetic", cfg, out);
    sums[run] = data_checksum(dir / "data");
    const auto d = run_experiment("train-detector", cfg, out);
    const auto c = run_experiment("train-captioners", cfg, out);
    curves[run] = {d["epochs"], c["epochs"]};
    det[run] = slurp(out / "detector.ckpt");
    cap[run] = slurp(out / "captioner.ckpt");
  }
  fs::remove_all(dir);
  const bool ok = !det[0].empty() && !cap[0].empty() && det[0] == det[1] && cap[0] == cap[1] &&
                  curves[0] == curves[1] && sums[0] == sums[1];
  return {ok, std::string("detector ckpt ") + (det[0] == det[1] ? "identical" : "differs") + ", captioner ckpt " +
                  (cap[0] == cap[1] ? "identical" : "differs") + ", loss curves " +
                  (curves[0] == curves[1] ? "identical" : "differ") + ", data " + (sums[0] == sums[1] ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"loss oracles", loss_oracles},
      {"gradient suite", gradient_suite},
      {"margin schedule", margin_schedule},
      {"grammar oracle", grammar_oracle},
      {"state-count identities", state_counts},
      {"metric oracles", metric_oracles},
      {"overfit", overfit},
      {"closed-loop detector", closed_loop_detector},
      {"prompt ablation", prompt_ablation_check},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d %-24s %s  %s  [%.1fs]\n", id, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
