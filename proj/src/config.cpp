#include "s2t/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "s2t/error.hpp"

namespace s2t {

using nlohmann::json;

void validate_train_config(const TrainConfig& c) {
  if (c.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (!(c.learning_rate > 0)) throw ConfigError("train.lr must be positive");
  if (c.weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
  if (c.batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (!(c.warmup_fraction >= 0 && c.warmup_fraction < 1)) throw ConfigError("train.warmup_fraction must lie in [0, 1)");
}

void validate_detector_config(const DetectorConfig& c) {
  if (c.shot_frames <= 0 || c.feature_dim <= 0 || c.encoder_dim <= 0 || c.encoder_layers < 0 || c.heads <= 0 ||
      c.ff_mult <= 0 || c.max_shots <= 0) {
    throw ConfigError("detector sizes must be positive");
  }
  if (c.max_shots < kMinTacticShots) throw ConfigError("detector.max_shots must be at least 5");
  if (c.encoder_dim % c.heads != 0) throw ConfigError("detector.encoder_dim must be divisible by detector.heads");
  if (!(c.binary_threshold >= 0 && c.binary_threshold <= 1)) throw ConfigError("detector.binary_threshold must lie in [0, 1]");
}

void validate_captioner_config(const CaptionerConfig& c) {
  if (c.embed_dim <= 0 || c.encoder_layers < 0 || c.decoder_layers < 0 || c.heads <= 0 || c.ff_mult <= 0 ||
      c.feature_dim <= 0 || c.max_frames <= 0 || c.max_cells <= 0 || c.max_shots <= 0 ||
      c.max_shot_caption_len <= 0 || c.max_tactic_caption_len <= 0 || c.beam_size <= 0 || c.min_frequency < 1) {
    throw ConfigError("captioner sizes must be positive");
  }
  if (c.embed_dim % c.heads != 0) throw ConfigError("captioner.embed_dim must be divisible by captioner.heads");
}

namespace {

struct Binding {
  std::string key;
  std::function<void(const json&)> set;
  std::function<json()> get;
};

template <typename V>
Binding bind_value(std::string key, V& ref) {
  return {key,
          [&ref, key](const json& j) {
            try {
              ref = j.get<V>();
            } catch (const json::exception&) {
              throw ConfigError("config key '" + key + "' has the wrong type");
            }
          },
          [&ref] { return json(ref); }};
}

Binding bind_path(std::string key, std::filesystem::path& ref) {
  return {key,
          [&ref, key](const json& j) {
            if (!j.is_string()) throw ConfigError("config key '" + key + "' must be a string");
            ref = j.get<std::string>();
          },
          [&ref] { return json(ref.generic_string()); }};
}

Binding bind_seed(std::string key, std::uint64_t& ref) {
  return {key,
          [&ref, key](const json& j) {
            if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<long long>() < 0)) {
              throw ConfigError("config key '" + key + "' must be a non-negative integer");
            }
            ref = j.get<std::uint64_t>();
          },
          [&ref] { return json(ref); }};
}

template <typename E>
Binding bind_enum(std::string key, E& ref, std::vector<std::pair<std::string, E>> names) {
  return {key,
          [&ref, key, names](const json& j) {
            if (j.is_string()) {
              for (const auto& [n, v] : names) {
                if (n == j.get<std::string>()) {
                  ref = v;
                  return;
                }
              }
            }
            std::string allowed;
            for (const auto& [n, _] : names) allowed += (allowed.empty() ? "" : ", ") + n;
            throw ConfigError("config key '" + key + "' must be one of: " + allowed);
          },
          [&ref, names] {
            for (const auto& [n, v] : names) {
              if (v == ref) return json(n);
            }
            return json(nullptr);
          }};
}

void train_bindings(std::vector<Binding>& b, const std::string& ns, TrainConfig& t) {
  b.push_back(bind_value(ns + ".epochs", t.epochs));
  b.push_back(bind_value(ns + ".lr", t.learning_rate));
  b.push_back(bind_value(ns + ".weight_decay", t.weight_decay));
  b.push_back(bind_value(ns + ".batch_size", t.batch_size));
  b.push_back(bind_value(ns + ".warmup_fraction", t.warmup_fraction));
  b.push_back(bind_value(ns + ".constant_after_warmup", t.constant_after_warmup));
  b.push_back(bind_seed(ns + ".seed", t.seed));
}

void detector_bindings(std::vector<Binding>& b, const std::string& ns, DetectorConfig& d) {
  b.push_back(bind_value(ns + ".shot_frames", d.shot_frames));
  b.push_back(bind_value(ns + ".feature_dim", d.feature_dim));
  b.push_back(bind_value(ns + ".encoder_dim", d.encoder_dim));
  b.push_back(bind_value(ns + ".encoder_layers", d.encoder_layers));
  b.push_back(bind_value(ns + ".heads", d.heads));
  b.push_back(bind_value(ns + ".ff_mult", d.ff_mult));
  b.push_back(bind_value(ns + ".max_shots", d.max_shots));
  b.push_back(bind_enum(ns + ".pooling", d.pooling, {{"attention", Pooling::Attention}, {"mean", Pooling::Mean}}));
  b.push_back(bind_enum(ns + ".state_mode", d.state_mode,
                        {{"per_shot", StateMode::PerShot}, {"pooled", StateMode::Pooled}}));
  b.push_back(bind_value(ns + ".binary_threshold", d.binary_threshold));
}

void captioner_bindings(std::vector<Binding>& b, const std::string& ns, CaptionerConfig& c) {
  b.push_back(bind_value(ns + ".embed_dim", c.embed_dim));
  b.push_back(bind_value(ns + ".encoder_layers", c.encoder_layers));
  b.push_back(bind_value(ns + ".decoder_layers", c.decoder_layers));
  b.push_back(bind_value(ns + ".heads", c.heads));
  b.push_back(bind_value(ns + ".ff_mult", c.ff_mult));
  b.push_back(bind_value(ns + ".feature_dim", c.feature_dim));
  b.push_back(bind_value(ns + ".max_frames", c.max_frames));
  b.push_back(bind_value(ns + ".max_cells", c.max_cells));
  b.push_back(bind_value(ns + ".max_shots", c.max_shots));
  b.push_back(bind_value(ns + ".max_shot_caption_len", c.max_shot_caption_len));
  b.push_back(bind_value(ns + ".max_tactic_caption_len", c.max_tactic_caption_len));
  b.push_back(bind_enum(ns + ".decode", c.decode, {{"greedy", DecodeMode::Greedy}, {"beam", DecodeMode::Beam}}));
  b.push_back(bind_value(ns + ".beam_size", c.beam_size));
  b.push_back(bind_value(ns + ".min_frequency", c.min_frequency));
}

std::vector<Binding> bindings(ExperimentConfig& c) {
  std::vector<Binding> b;
  b.push_back(bind_path("data.root", c.data_root));
  b.push_back(bind_path("data.grammar", c.grammar_path));
  b.push_back(bind_seed("data.split_seed", c.split_seed));
  b.push_back(bind_value("data.strict", c.strict));

  auto& s = c.synthetic;
  b.push_back(bind_seed("synthetic.seed", s.seed));
  b.push_back(bind_value("synthetic.num_rallies", s.num_rallies));
  b.push_back(bind_value("synthetic.valid_fraction", s.valid_fraction));
  b.push_back(bind_value("synthetic.noise_std", s.feature_noise_std));
  b.push_back(bind_value("synthetic.frames_per_shot", s.frames_per_shot));
  b.push_back(bind_value("synthetic.grid_h", s.grid_h));
  b.push_back(bind_value("synthetic.grid_w", s.grid_w));
  b.push_back(bind_value("synthetic.embed_dim", s.embed_dim));
  b.push_back(bind_value("synthetic.num_matches", s.num_matches));
  b.push_back(bind_value("synthetic.hard_negative_fraction", s.hard_negative_fraction));
  b.push_back(bind_value("synthetic.interruption_probs", s.interruption_probs));

  train_bindings(b, "train", c.captioner_train);
  train_bindings(b, "detector_train", c.detector_train);

  auto& l = c.loss;
  b.push_back(bind_value("loss.lambda_margin", l.lambda_margin));
  b.push_back(bind_value("loss.beta", l.beta));
  b.push_back(bind_value("loss.lambda_sc", l.lambda_sc));
  b.push_back(bind_value("loss.lambda_tc", l.lambda_tc));
  b.push_back(bind_value("loss.gamma", l.gamma));
  b.push_back(bind_value("loss.gamma_binary", l.gamma_binary));
  b.push_back(bind_value("loss.alpha_binary", l.alpha_binary));
  b.push_back({"loss.alpha_type",
               [&c](const json& j) {
                 if (j.is_string() && j.get<std::string>() == "inverse_frequency") {
                   c.inverse_frequency_alpha = true;
                 } else if (j.is_string() && j.get<std::string>() == "uniform") {
                   c.inverse_frequency_alpha = false;
                   c.loss.alpha_type.assign(kTacticTypeCount, 1.0);
                 } else if (j.is_array()) {
                   c.inverse_frequency_alpha = false;
                   try {
                     c.loss.alpha_type = j.get<std::vector<double>>();
                   } catch (const json::exception&) {
                     throw ConfigError("loss.alpha_type must hold numbers");
                   }
                 } else {
                   throw ConfigError("loss.alpha_type must be \"inverse_frequency\", \"uniform\" or an array of 9 numbers");
                 }
               },
               [&c] { return c.inverse_frequency_alpha ? json("inverse_frequency") : json(c.loss.alpha_type); }});
  b.push_back(bind_value("loss.margin_start", c.margin.m_start));
  b.push_back(bind_value("loss.margin_end", c.margin.m_end));
  b.push_back(bind_value("loss.margin_warmup_epochs", c.margin.warmup_epochs));

  detector_bindings(b, "detector", c.detector);
  captioner_bindings(b, "captioner", c.captioner);

  b.push_back(bind_value("caption.prompt", c.prompt));
  b.push_back(bind_value("caption.prompt_source", c.prompt_source));
  b.push_back(bind_path("detect.checkpoint", c.detector_checkpoint));
  b.push_back(bind_path("caption.checkpoint", c.captioner_checkpoint));
  b.push_back(bind_path("io.input", c.input));
  b.push_back(bind_value("ablate.seeds", c.ablation_seeds));
  return b;
}

void validate(const ExperimentConfig& c) {
  validate_config(c.synthetic);
  validate_train_config(c.detector_train);
  validate_train_config(c.captioner_train);
  validate_loss_weights(c.loss);
  if (!(0 <= c.margin.m_start && c.margin.m_start <= c.margin.m_end && c.margin.m_end <= 1)) {
    throw ConfigError("margin schedule needs 0 <= margin_start <= margin_end <= 1");
  }
  if (c.margin.warmup_epochs < 0) throw ConfigError("loss.margin_warmup_epochs must be >= 0");
  validate_detector_config(c.detector);
  validate_captioner_config(c.captioner);
  if (c.prompt != "shot_wise" && c.prompt != "flat" && c.prompt != "none") {
    throw ConfigError("caption.prompt must be shot_wise, flat or none");
  }
  if (c.prompt_source != "ground_truth" && c.prompt_source != "detector") {
    throw ConfigError("caption.prompt_source must be ground_truth or detector");
  }
  if (c.ablation_seeds < 1) throw ConfigError("ablate.seeds must be >= 1");
}

}  // namespace

ExperimentConfig parse_config(const json& flat) {
  if (!flat.is_object()) throw ConfigError("config must be a flat JSON object");
  ExperimentConfig c;
  auto b = bindings(c);
  // train.* seeds both trainers; detector_train.* then overrides the detector.
  for (const auto& [key, value] : flat.items()) {
    if (key.rfind("train.", 0) == 0) {
      const auto sub = key.substr(6);
      bool found = false;
      for (auto& x : b) {
        if (x.key == key || x.key == "detector_train." + sub) {
          x.set(value);
          found = true;
        }
      }
      if (!found) throw ConfigError("unknown config key '" + key + "'");
    }
  }
  for (const auto& [key, value] : flat.items()) {
    if (key.rfind("train.", 0) == 0) continue;
    bool found = false;
    for (auto& x : b) {
      if (x.key == key) {
        x.set(value);
        found = true;
      }
    }
    if (!found) throw ConfigError("unknown config key '" + key + "'");
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json config_json(const ExperimentConfig& c) {
  ExperimentConfig copy = c;
  json out = json::object();
  for (const auto& x : bindings(copy)) out[x.key] = x.get();
  return out;
}

json detector_config_json(const DetectorConfig& c) {
  DetectorConfig copy = c;
  std::vector<Binding> b;
  detector_bindings(b, "detector", copy);
  json out = json::object();
  for (const auto& x : b) out[x.key.substr(9)] = x.get();
  return out;
}

DetectorConfig detector_config_from_json(const json& j) {
  DetectorConfig c;
  std::vector<Binding> b;
  detector_bindings(b, "detector", c);
  for (auto& x : b) {
    const auto key = x.key.substr(9);
    if (j.contains(key)) x.set(j[key]);
  }
  validate_detector_config(c);
  return c;
}

json captioner_config_json(const CaptionerConfig& c) {
  CaptionerConfig copy = c;
  std::vector<Binding> b;
  captioner_bindings(b, "captioner", copy);
  json out = json::object();
  for (const auto& x : b) out[x.key.substr(10)] = x.get();
  return out;
}

CaptionerConfig captioner_config_from_json(const json& j) {
  CaptionerConfig c;
  std::vector<Binding> b;
  captioner_bindings(b, "captioner", c);
  for (auto& x : b) {
    const auto key = x.key.substr(10);
    if (j.contains(key)) x.set(j[key]);
  }
  validate_captioner_config(c);
  return c;
}

}  // namespace s2t
