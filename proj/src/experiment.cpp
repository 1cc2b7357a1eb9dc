#include "s2t/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "s2t/error.hpp"
#include "s2t/grammar.hpp"

namespace s2t {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& experiment_commands() {
  static const std::vector<std::string> cmds{"generate-synthetic", "train-detector", "train-captioners", "detect",
                                             "caption",            "evaluate",       "stats",            "ablate-prompt"};
  return cmds;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<std::string> shot_references(const std::vector<SyntheticSample>& corpus) {
  std::vector<std::string> refs;
  for (const auto& s : corpus) {
    for (const auto& shot : s.annotation.shots) {
      if (!shot.caption.empty()) refs.push_back(shot.caption);
    }
  }
  return refs;
}

std::vector<std::string> tactic_references(const std::vector<SyntheticSample>& corpus) {
  std::vector<std::string> refs;
  for (const auto& s : corpus) {
    for (const auto& u : s.annotation.tactic_units) refs.push_back(u.caption);
  }
  return refs;
}

std::optional<PromptMode> prompt_choice(const std::string& s) {
  if (s == "none") return std::nullopt;
  return parse_prompt_mode(s);
}

const TokenGrid* first_grid(const std::vector<SyntheticSample>& corpus) {
  for (const auto& s : corpus) {
    if (!s.features.empty()) return &s.features.front();
  }
  return nullptr;
}

void check_detector_geometry(const DetectorConfig& c, const std::vector<SyntheticSample>& corpus) {
  const auto* g = first_grid(corpus);
  if (!g) return;
  if (static_cast<int>(g->frames) != c.shot_frames || static_cast<int>(g->dim) != c.feature_dim) {
    throw ConfigError("detector expects " + std::to_string(c.shot_frames) + " frames x " +
                      std::to_string(c.feature_dim) + " dims, data has " + std::to_string(g->frames) + " x " +
                      std::to_string(g->dim));
  }
}

void check_captioner_geometry(const CaptionerConfig& c, const std::vector<SyntheticSample>& corpus) {
  const auto* g = first_grid(corpus);
  if (!g) return;
  if (static_cast<int>(g->frames) > c.max_frames || static_cast<int>(g->cells) > c.max_cells ||
      static_cast<int>(g->dim) != c.feature_dim) {
    throw ConfigError("captioner geometry (max_frames, max_cells, feature_dim) does not fit the data");
  }
}

json detector_epochs_json(const std::vector<DetectorEpoch>& h) {
  json a = json::array();
  for (const auto& e : h) {
    a.push_back({{"epoch", e.epoch},
                 {"margin", e.margin},
                 {"loss", e.loss},
                 {"detection_loss", e.detection_loss},
                 {"classification_loss", e.classification_loss},
                 {"lr", e.last_lr}});
  }
  return a;
}

json caption_epochs_json(const std::vector<CaptionEpoch>& h) {
  json a = json::array();
  for (const auto& e : h) {
    a.push_back({{"epoch", e.epoch},
                 {"loss", e.loss},
                 {"shot_loss", e.shot_loss},
                 {"tactic_loss", e.tactic_loss},
                 {"shot_token_loss", e.shot_token_loss},
                 {"tactic_token_loss", e.tactic_token_loss},
                 {"lr", e.last_lr}});
  }
  return a;
}

std::vector<SyntheticSample> input_or_test(const ExperimentConfig& cfg) {
  if (!cfg.input.empty()) {
    return load_rallies({load_match(cfg.input, ParseOptions{cfg.strict})}, cfg.data_root);
  }
  return load_dataset(cfg).test;
}

json base_manifest(const std::string& command, const ExperimentConfig& cfg) {
  json m{{"command", command}, {"config", config_json(cfg)}};
  if (fs::exists(cfg.data_root)) m["data_checksum"] = data_checksum(cfg.data_root);
  return m;
}

// ---------------------------------------------------------------------------

json generate_synthetic(const ExperimentConfig& cfg, const fs::path&) {
  const auto grammar = cfg.grammar_path.empty() ? default_grammar() : load_grammar(cfg.grammar_path);
  const auto corpus = generate_corpus(cfg.synthetic, grammar);
  fs::remove_all(cfg.data_root / "annotations");
  fs::remove_all(cfg.data_root / "features");
  const auto matches = write_dataset(cfg.data_root, corpus, cfg.synthetic);
  std::size_t units = 0, negatives = 0;
  std::array<std::size_t, kTacticStateCount> states{};
  for (const auto& s : corpus) {
    units += s.annotation.tactic_units.size();
    if (s.annotation.tactic_units.empty()) ++negatives;
    for (const auto& u : s.annotation.tactic_units) {
      for (auto st : u.states) ++states[index_of(st)];
    }
  }
  json st;
  for (std::size_t i = 0; i < kTacticStateCount; ++i) st[std::string(to_string(static_cast<TacticState>(i)))] = states[i];
  json m = base_manifest("generate-synthetic", cfg);
  m["outputs"] = {{"matches", matches.size()},
                  {"rallies", corpus.size()},
                  {"tactic_units", units},
                  {"rallies_without_units", negatives},
                  {"state_counts", st}};
  return m;
}

json train_detector_cmd(const ExperimentConfig& cfg, const fs::path& out) {
  const Dataset ds = load_dataset(cfg);
  check_detector_geometry(cfg.detector, ds.train);
  const auto train = detector_samples(ds.train);
  TacticUnitDetector model(cfg.detector, cfg.detector_train.seed);
  const auto result = train_detector(model, train, cfg.detector_train, cfg.loss, cfg.margin,
                                     cfg.inverse_frequency_alpha, [](const DetectorEpoch& e) {
                                       std::fprintf(stderr, "detector epoch %d loss %.6f margin %.3f\n", e.epoch,
                                                    e.loss, e.margin);
                                     });
  json metrics;
  const auto val = detector_samples(ds.val);
  const auto test = detector_samples(ds.test);
  if (!val.empty()) metrics["val"] = detector_evaluation_json(evaluate_detector(model, val));
  if (!test.empty()) metrics["test"] = detector_evaluation_json(evaluate_detector(model, test));
  const fs::path ckpt = out / "detector.ckpt";
  save_detector(ckpt, model);
  json m = base_manifest("train-detector", cfg);
  m["samples"] = {{"train", train.size()}, {"val", val.size()}, {"test", test.size()}};
  m["alpha_type"] = result.weights_used.alpha_type;
  m["epochs"] = detector_epochs_json(result.history);
  m["metrics"] = metrics;
  m["checkpoints"] = {{"detector", ckpt.string()}};
  return m;
}

json train_captioners_cmd(const ExperimentConfig& cfg, const fs::path& out) {
  const Dataset ds = load_dataset(cfg);
  check_captioner_geometry(cfg.captioner, ds.train);
  const auto prompt = prompt_choice(cfg.prompt);
  Vocabulary vocab = Vocabulary::build(corpus_captions(ds.train), cfg.captioner.min_frequency);
  const auto shots = shot_pairs(ds.train, vocab);
  const auto tactics = tactic_pairs(ds.train, vocab, prompt);
  Captioner model(cfg.captioner, vocab, cfg.captioner_train.seed);
  const auto history = train_captioners(model, shots, tactics, cfg.captioner_train, cfg.loss, [](const CaptionEpoch& e) {
    std::fprintf(stderr, "captioner epoch %d loss %.6f (shot %.4f, tactic %.4f)\n", e.epoch, e.loss, e.shot_loss,
                 e.tactic_loss);
  });
  json metrics;
  if (!ds.test.empty()) {
    const auto ts = shot_pairs(ds.test, vocab);
    const auto tt = tactic_pairs(ds.test, vocab, prompt);
    if (!ts.empty()) metrics["shot"] = report_json(evaluate_shot_captions(model, ts, shot_references(ds.test)));
    if (!tt.empty()) metrics["tactic"] = report_json(evaluate_tactic_captions(model, tt, tactic_references(ds.test)));
  }
  const fs::path ckpt = out / "captioner.ckpt";
  save_captioner(ckpt, model, {{"prompt", cfg.prompt}});
  json m = base_manifest("train-captioners", cfg);
  m["vocabulary_size"] = vocab.size();
  m["pairs"] = {{"shot", shots.size()}, {"tactic", tactics.size()}};
  m["epochs"] = caption_epochs_json(history);
  m["metrics"] = metrics;
  m["checkpoints"] = {{"captioner", ckpt.string()}};
  return m;
}

json detect_cmd(const ExperimentConfig& cfg, const fs::path& out) {
  if (cfg.detector_checkpoint.empty()) throw ConfigError("detect needs detect.checkpoint");
  const auto model = load_detector(cfg.detector_checkpoint);
  const auto rallies = input_or_test(cfg);
  json items = json::array();
  std::size_t accepted = 0, windows = 0;
  for (std::size_t r = 0; r < rallies.size(); ++r) {
    const auto& s = rallies[r];
    for (const auto& w : enumerate_candidates(static_cast<int>(s.features.size()), static_cast<int>(r))) {
      if (w.length > model.config().max_shots) continue;
      const std::span<const TokenGrid> shots(s.features.data() + w.first_shot, static_cast<std::size_t>(w.length));
      const auto d = model.detect(shots);
      ++windows;
      json item{{"rally", r}, {"first_shot", w.first_shot}, {"length", w.length}, {"valid_prob", d.valid_prob}};
      if (d.type_dist) {
        ++accepted;
        const auto& t = *d.type_dist;
        item["tactic_type"] = to_string(static_cast<TacticType>(std::max_element(t.begin(), t.end()) - t.begin()));
        json states = json::array();
        for (const auto& sd : *d.state_dist) {
          states.push_back(to_string(static_cast<TacticState>(std::max_element(sd.begin(), sd.end()) - sd.begin())));
        }
        item["states"] = states;
      }
      items.push_back(item);
    }
  }
  const fs::path path = out / "detections.json";
  write_text(path, json{{"windows", items}}.dump(2) + "\n");
  json m = base_manifest("detect", cfg);
  m["outputs"] = {{"detections", path.string()}, {"windows", windows}, {"accepted", accepted}};
  return m;
}

json caption_cmd(const ExperimentConfig& cfg, const fs::path& out) {
  if (cfg.captioner_checkpoint.empty()) throw ConfigError("caption needs caption.checkpoint");
  const Captioner model = load_captioner(cfg.captioner_checkpoint);
  const auto prompt = prompt_choice(cfg.prompt);
  std::optional<TacticUnitDetector> detector;
  if (prompt && cfg.prompt_source == "detector") {
    if (cfg.detector_checkpoint.empty()) throw ConfigError("detector prompts need detect.checkpoint");
    detector.emplace(load_detector(cfg.detector_checkpoint));
    if (prompt == PromptMode::ShotWise && detector->config().state_mode != StateMode::PerShot) {
      throw ConfigError("shot-wise prompts from the detector need detector.state_mode per_shot");
    }
  }
  const auto rallies = input_or_test(cfg);
  check_captioner_geometry(model.config(), rallies);
  const auto& vocab = model.vocab();
  json shots = json::array(), tactics = json::array();
  for (std::size_t r = 0; r < rallies.size(); ++r) {
    const auto& s = rallies[r];
    for (std::size_t i = 0; i < s.features.size(); ++i) {
      shots.push_back({{"rally", r},
                       {"shot", i},
                       {"prediction", vocab.decode(model.caption_shot(s.features[i]))},
                       {"reference", s.annotation.shots[i].caption}});
    }
    for (const auto& u : s.annotation.tactic_units) {
      const std::span<const TokenGrid> unit(s.features.data() + u.first_shot, static_cast<std::size_t>(u.length()));
      std::optional<Prompt> p;
      if (prompt) {
        if (detector) {
          const auto d = detector->classify(unit);
          const auto& t = *d.type_dist;
          std::vector<TacticState> states;
          for (const auto& sd : *d.state_dist) {
            states.push_back(static_cast<TacticState>(std::max_element(sd.begin(), sd.end()) - sd.begin()));
          }
          if (*prompt == PromptMode::Flat && states.size() == 1) states = u.states;
          p = build_prompt(static_cast<TacticType>(std::max_element(t.begin(), t.end()) - t.begin()), states, *prompt);
        } else {
          p = build_prompt(u.tactic_type, u.states, *prompt);
        }
      }
      json item{{"rally", r},
                {"first_shot", u.first_shot},
                {"last_shot", u.last_shot},
                {"prediction", vocab.decode(model.caption_tactic(unit, p))},
                {"reference", u.caption}};
      if (p) item["prompt"] = prompt_text(*p);
      tactics.push_back(item);
    }
  }
  const fs::path path = out / "captions.json";
  write_text(path, json{{"shots", shots}, {"tactics", tactics}}.dump(2) + "\n");
  json m = base_manifest("caption", cfg);
  m["outputs"] = {{"captions", path.string()}, {"shots", shots.size()}, {"tactics", tactics.size()}};
  return m;
}

json evaluate_cmd(const ExperimentConfig& cfg, const fs::path& out) {
  if (cfg.input.empty()) throw ConfigError("evaluate needs io.input (a captions.json file)");
  json preds;
  try {
    preds = json::parse(read_file(cfg.input));
  } catch (const json::exception& e) {
    throw DataError(cfg.input.string() + ": " + e.what());
  }
  std::vector<MetricReport> reports;
  json metrics;
  for (const char* key : {"shots", "tactics"}) {
    if (!preds.contains(key) || preds[key].empty()) continue;
    std::vector<EvalPair> pairs;
    for (const auto& item : preds[key]) {
      if (!item.contains("prediction") || !item.contains("reference")) {
        throw DataError(std::string(key) + " entries need prediction and reference");
      }
      pairs.push_back({tokenize(item["prediction"].get<std::string>()), {tokenize(item["reference"].get<std::string>())}});
    }
    const std::string gran = std::string(key) == "shots" ? "shot" : "tactic";
    reports.push_back(evaluate_pairs(pairs, gran));
    metrics[gran] = report_json(reports.back());
  }
  if (reports.empty()) throw EmptyCorpus("no prediction pairs in " + cfg.input.string());
  const fs::path path = out / "metrics.json";
  write_text(path, metrics.dump(2) + "\n");
  json m = base_manifest("evaluate", cfg);
  m["metrics"] = metrics;
  m["table"] = report_table(reports);
  m["outputs"] = {{"metrics", path.string()}};
  return m;
}

json stats_cmd(const ExperimentConfig& cfg, const fs::path& out) {
  const auto matches = load_matches(cfg.data_root / "annotations", ParseOptions{cfg.strict});
  const std::string text = dataset_stats_json(dataset_stats(matches));
  const fs::path path = out / "stats.json";
  write_text(path, text + "\n");
  json m = base_manifest("stats", cfg);
  m["stats"] = json::parse(text);
  m["outputs"] = {{"stats", path.string()}};
  return m;
}

json ablate_cmd(const ExperimentConfig& cfg, const fs::path& out) {
  const Dataset ds = load_dataset(cfg);
  check_captioner_geometry(cfg.captioner, ds.train);
  json rows = json::array();
  int ordered = 0;
  std::vector<MetricReport> all;
  for (int i = 0; i < cfg.ablation_seeds; ++i) {
    const std::uint64_t seed = cfg.captioner_train.seed + static_cast<std::uint64_t>(i);
    const auto result = prompt_ablation(ds.train, ds.test, cfg, seed);
    std::map<std::string, double> b4;
    for (const auto& r : result) {
      b4[r.prompt] = r.report.bleu[3];
      json row = report_json(r.report);
      row["prompt"] = r.prompt;
      row["seed"] = r.seed;
      row["final_loss"] = r.final_loss;
      rows.push_back(row);
      auto rep = r.report;
      rep.granularity = r.prompt + "/" + std::to_string(r.seed);
      all.push_back(rep);
    }
    if (b4["shot_wise"] >= b4["flat"] && b4["flat"] >= b4["none"]) ++ordered;
  }
  const fs::path path = out / "ablation.json";
  const std::string table = report_table(all);
  write_text(path, json{{"rows", rows}, {"seeds_ordered", ordered}, {"seeds", cfg.ablation_seeds}}.dump(2) + "\n");
  json m = base_manifest("ablate-prompt", cfg);
  m["rows"] = rows;
  m["seeds_ordered"] = ordered;
  m["table"] = table;
  m["outputs"] = {{"ablation", path.string()}};
  return m;
}

}  // namespace

std::string data_checksum(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = fnv1a("");
  for (const auto& f : files) {
    h = fnv1a(fs::relative(f, root).generic_string(), h);
    h = fnv1a(std::string_view("\0", 1), h);
    h = fnv1a(read_file(f), h);
  }
  return hex64(h);
}

std::vector<SyntheticSample> load_rallies(const std::vector<MatchAnnotation>& matches, const fs::path& data_root) {
  std::vector<SyntheticSample> out;
  for (std::size_t m = 0; m < matches.size(); ++m) {
    for (const auto& rally : matches[m].rallies) {
      SyntheticSample s;
      s.match_index = static_cast<int>(m);
      s.annotation = rally;
      s.features = load_rally_features(rally, data_root);
      out.push_back(std::move(s));
    }
  }
  return out;
}

Dataset load_dataset(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.data_root / "annotations";
  if (!fs::is_directory(dir)) throw DataError(dir.string() + " does not exist; run generate-synthetic first");
  const auto matches = load_matches(dir, ParseOptions{cfg.strict});
  if (matches.size() < 3) throw DataError("need at least 3 matches for a train/val/test split");
  const auto split = split_by_match(matches, SplitRatios{}, cfg.split_seed);
  return {load_rallies(split.train, cfg.data_root), load_rallies(split.val, cfg.data_root),
          load_rallies(split.test, cfg.data_root)};
}

MetricReport evaluate_shot_captions(const Captioner& model, std::span<const ShotPair> pairs,
                                    const std::vector<std::string>& references) {
  if (pairs.size() != references.size()) throw ShapeError("one reference per shot pair");
  std::vector<EvalPair> eval;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    eval.push_back({model.vocab().decode_tokens(model.caption_shot(pairs[i].shot)), {tokenize(references[i])}});
  }
  return evaluate_pairs(eval, "shot");
}

MetricReport evaluate_tactic_captions(const Captioner& model, std::span<const TacticPair> pairs,
                                      const std::vector<std::string>& references) {
  if (pairs.size() != references.size()) throw ShapeError("one reference per tactic pair");
  std::vector<EvalPair> eval;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto ids = model.caption_tactic(pairs[i].shots, pairs[i].prompt);
    eval.push_back({model.vocab().decode_tokens(ids), {tokenize(references[i])}});
  }
  return evaluate_pairs(eval, "tactic");
}

std::vector<AblationRow> prompt_ablation(const std::vector<SyntheticSample>& train,
                                         const std::vector<SyntheticSample>& test, const ExperimentConfig& cfg,
                                         std::uint64_t seed) {
  // Ground-truth prompts; only the tactic branch is trained.
  const Vocabulary vocab = Vocabulary::build(corpus_captions(train), cfg.captioner.min_frequency);
  const auto refs = tactic_references(test);
  TrainConfig tc = cfg.captioner_train;
  tc.seed = seed;
  std::vector<AblationRow> rows;
  for (const std::string name : {"none", "flat", "shot_wise"}) {
    const auto mode = prompt_choice(name);
    const auto train_pairs = tactic_pairs(train, vocab, mode);
    const auto test_pairs = tactic_pairs(test, vocab, mode);
    Captioner model(cfg.captioner, vocab, seed);
    const auto history = train_captioners(model, {}, train_pairs, tc, cfg.loss);
    AblationRow row;
    row.prompt = name;
    row.seed = seed;
    row.final_loss = history.empty() ? 0.0 : history.back().tactic_loss;
    row.report = evaluate_tactic_captions(model, test_pairs, refs);
    rows.push_back(std::move(row));
  }
  return rows;
}

json run_experiment(const std::string& command, const ExperimentConfig& cfg, const fs::path& out_dir) {
  using Fn = json (*)(const ExperimentConfig&, const fs::path&);
  static const std::map<std::string, Fn> table{{"generate-synthetic", generate_synthetic},
                                               {"train-detector", train_detector_cmd},
                                               {"train-captioners", train_captioners_cmd},
                                               {"detect", detect_cmd},
                                               {"caption", caption_cmd},
                                               {"evaluate", evaluate_cmd},
                                               {"stats", stats_cmd},
                                               {"ablate-prompt", ablate_cmd}};
  const auto it = table.find(command);
  if (it == table.end()) throw UnknownCommand("unknown command '" + command + "'");
  fs::create_directories(out_dir);
  json m = it->second(cfg, out_dir);
  write_text(out_dir / (command + ".manifest.json"), m.dump(2) + "\n");
  return m;
}

}  // namespace s2t
