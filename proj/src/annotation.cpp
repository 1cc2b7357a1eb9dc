#include "s2t/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "s2t/error.hpp"
#include "s2t/rng.hpp"

namespace s2t {

namespace {

constexpr std::array<std::string_view, kShotTypeCount> kShotNames = {
    "Serve", "Smash", "Lift", "Push", "Drop", "Net", "Drive", "Clear", "Block", "Other"};

constexpr std::array<std::string_view, kTacticTypeCount> kTacticNames = {
    "ServeAndAttack",   "ContinuousSmashing",   "NetPressureAndKill",
    "PushAndTrap",      "FlickServeAttack",     "PushAndSmash",
    "DropAndNetDomination", "DriveAndIntercept", "TempoVariationControl"};

constexpr std::array<std::string_view, kTacticStateCount> kStateNames = {
    "Start", "Continue", "Interrupt", "Resume", "Finish"};

template <typename Enum, std::size_t N>
std::optional<Enum> parse_enum(const std::array<std::string_view, N>& names, std::string_view s) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<Enum>(i);
  }
  return std::nullopt;
}

using nlohmann::json;

std::string at_index(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

std::string at_key(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

void expect_fields(const json& j, const std::string& path, std::initializer_list<std::string_view> required,
                   std::initializer_list<std::string_view> optional = {}) {
  if (!j.is_object()) throw SchemaError(path, "expected an object");
  for (auto key : required) {
    if (!j.contains(key)) throw SchemaError(at_key(path, key), "missing field");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& key = it.key();
    const bool known = std::find(required.begin(), required.end(), key) != required.end() ||
                       std::find(optional.begin(), optional.end(), key) != optional.end();
    if (!known) throw SchemaError(at_key(path, key), "unexpected field");
  }
}

double get_seconds(const json& j, const std::string& path) {
  if (!j.is_number()) throw SchemaError(path, "expected a number of seconds");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw SchemaError(path, "time must be finite");
  return v;
}

int get_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw SchemaError(path, "expected an integer");
  const auto v = j.get<std::int64_t>();
  if (v < INT32_MIN || v > INT32_MAX) throw SchemaError(path, "integer out of range");
  return static_cast<int>(v);
}

std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw SchemaError(path, "expected a string");
  return j.get<std::string>();
}

const json& get_array(const json& j, const std::string& path) {
  if (!j.is_array()) throw SchemaError(path, "expected an array");
  return j;
}

ShotAnnotation parse_shot(const json& j, const std::string& path) {
  expect_fields(j, path, {"start", "end", "type", "caption"}, {"features"});
  ShotAnnotation shot;
  shot.start_s = get_seconds(j["start"], at_key(path, "start"));
  shot.end_s = get_seconds(j["end"], at_key(path, "end"));
  const auto type_name = get_string(j["type"], at_key(path, "type"));
  const auto type = parse_shot_type(type_name);
  if (!type) throw SchemaError(at_key(path, "type"), "unknown shot type '" + type_name + "'");
  shot.shot_type = *type;
  shot.caption = get_string(j["caption"], at_key(path, "caption"));
  if (j.contains("features")) shot.features = get_string(j["features"], at_key(path, "features"));
  return shot;
}

TacticUnitAnnotation parse_tactic(const json& j, const std::string& path) {
  expect_fields(j, path, {"first_shot", "last_shot", "type", "states", "caption"});
  TacticUnitAnnotation unit;
  unit.first_shot = get_int(j["first_shot"], at_key(path, "first_shot"));
  unit.last_shot = get_int(j["last_shot"], at_key(path, "last_shot"));
  const auto type_name = get_string(j["type"], at_key(path, "type"));
  const auto type = parse_tactic_type(type_name);
  if (!type) throw SchemaError(at_key(path, "type"), "unknown tactic type '" + type_name + "'");
  unit.tactic_type = *type;
  const auto states_path = at_key(path, "states");
  const auto& states = get_array(j["states"], states_path);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto name = get_string(states[i], at_index(states_path, i));
    const auto state = parse_tactic_state(name);
    if (!state) throw SchemaError(at_index(states_path, i), "unknown tactic state '" + name + "'");
    unit.states.push_back(*state);
  }
  unit.caption = get_string(j["caption"], at_key(path, "caption"));
  return unit;
}

RallyAnnotation parse_rally(const json& j, const std::string& path) {
  expect_fields(j, path, {"start", "end", "score", "shots", "tactics"});
  RallyAnnotation rally;
  rally.start_s = get_seconds(j["start"], at_key(path, "start"));
  rally.end_s = get_seconds(j["end"], at_key(path, "end"));
  const auto score_path = at_key(path, "score");
  const auto& score = get_array(j["score"], score_path);
  if (score.size() != 2) throw SchemaError(score_path, "score must have exactly two entries");
  for (std::size_t i = 0; i < 2; ++i) rally.score[i] = get_int(score[i], at_index(score_path, i));
  const auto shots_path = at_key(path, "shots");
  const auto& shots = get_array(j["shots"], shots_path);
  for (std::size_t i = 0; i < shots.size(); ++i) {
    rally.shots.push_back(parse_shot(shots[i], at_index(shots_path, i)));
  }
  const auto tactics_path = at_key(path, "tactics");
  const auto& tactics = get_array(j["tactics"], tactics_path);
  for (std::size_t i = 0; i < tactics.size(); ++i) {
    rally.tactic_units.push_back(parse_tactic(tactics[i], at_index(tactics_path, i)));
  }
  return rally;
}

void validate_unit(const TacticUnitAnnotation& unit, std::size_t shot_count, const std::string& path) {
  if (unit.first_shot < 0 || unit.last_shot < unit.first_shot ||
      unit.last_shot >= static_cast<int>(shot_count)) {
    throw InvariantError(path, "shot range [" + std::to_string(unit.first_shot) + ", " +
                                   std::to_string(unit.last_shot) + "] outside the rally's " +
                                   std::to_string(shot_count) + " shots");
  }
  const int len = unit.length();
  if (len < kMinTacticShots || len > kMaxTacticShots) {
    throw InvariantError(path, "tactic unit length " + std::to_string(len) + " outside [5, 9]");
  }
  const auto states_path = at_key(path, "states");
  if (static_cast<int>(unit.states.size()) != len) {
    throw InvariantError(states_path, "expected " + std::to_string(len) + " states, got " +
                                          std::to_string(unit.states.size()));
  }
  if (unit.states.front() != TacticState::Start) {
    throw InvariantError(states_path, "first state must be Start");
  }
  if (unit.states.back() != TacticState::Finish) {
    throw InvariantError(states_path, "last state must be Finish");
  }
  bool seen_interrupt = false;
  for (std::size_t i = 1; i + 1 < unit.states.size(); ++i) {
    const auto s = unit.states[i];
    const auto where = at_index(states_path, i);
    if (s == TacticState::Start) throw InvariantError(where, "Start may only appear first");
    if (s == TacticState::Finish) throw InvariantError(where, "Finish may only appear last");
    if (s == TacticState::Interrupt) seen_interrupt = true;
    if (s == TacticState::Resume && !seen_interrupt) {
      throw InvariantError(where, "Resume without a preceding Interrupt");
    }
  }
  if (unit.caption.empty()) throw InvariantError(at_key(path, "caption"), "caption must be non-empty");
}

void validate_rally(const RallyAnnotation& rally, const std::string& path, const ParseOptions& options) {
  if (!(rally.start_s < rally.end_s)) throw InvariantError(path, "rally start must precede end");
  for (std::size_t i = 0; i < 2; ++i) {
    if (rally.score[i] < 0) throw InvariantError(at_index(at_key(path, "score"), i), "score must be non-negative");
  }
  const auto shots_path = at_key(path, "shots");
  for (std::size_t i = 0; i < rally.shots.size(); ++i) {
    const auto& shot = rally.shots[i];
    const auto where = at_index(shots_path, i);
    if (!(shot.start_s < shot.end_s)) throw InvariantError(where, "shot start must precede end");
    if (shot.start_s < rally.start_s || shot.end_s > rally.end_s) {
      throw InvariantError(where, "shot lies outside the rally span");
    }
    if (i > 0 && shot.start_s < rally.shots[i - 1].end_s) {
      throw InvariantError(where, "shots must be sorted and non-overlapping");
    }
    if (shot.caption.empty()) throw InvariantError(at_key(where, "caption"), "caption must be non-empty");
    if (options.strict) {
      const int words = caption_word_count(shot.caption);
      if (words < kMinShotCaptionWords || words > kMaxShotCaptionWords) {
        throw InvariantError(at_key(where, "caption"),
                             "caption has " + std::to_string(words) + " words, expected 2..21");
      }
    }
  }
  const auto tactics_path = at_key(path, "tactics");
  for (std::size_t i = 0; i < rally.tactic_units.size(); ++i) {
    validate_unit(rally.tactic_units[i], rally.shots.size(), at_index(tactics_path, i));
  }
}

json to_json(const MatchAnnotation& match) {
  json rallies = json::array();
  for (const auto& rally : match.rallies) {
    json shots = json::array();
    for (const auto& shot : rally.shots) {
      json s = {{"start", shot.start_s},
                {"end", shot.end_s},
                {"type", std::string(to_string(shot.shot_type))},
                {"caption", shot.caption}};
      if (shot.features) s["features"] = *shot.features;
      shots.push_back(std::move(s));
    }
    json tactics = json::array();
    for (const auto& unit : rally.tactic_units) {
      json states = json::array();
      for (auto s : unit.states) states.push_back(std::string(to_string(s)));
      tactics.push_back({{"first_shot", unit.first_shot},
                         {"last_shot", unit.last_shot},
                         {"type", std::string(to_string(unit.tactic_type))},
                         {"states", std::move(states)},
                         {"caption", unit.caption}});
    }
    rallies.push_back({{"start", rally.start_s},
                       {"end", rally.end_s},
                       {"score", {rally.score[0], rally.score[1]}},
                       {"shots", std::move(shots)},
                       {"tactics", std::move(tactics)}});
  }
  return {{"video", match.video_id}, {"rallies", std::move(rallies)}};
}

}  // namespace

std::string_view to_string(ShotType t) { return kShotNames[index_of(t)]; }
std::string_view to_string(TacticType t) { return kTacticNames[index_of(t)]; }
std::string_view to_string(TacticState s) { return kStateNames[index_of(s)]; }

std::optional<ShotType> parse_shot_type(std::string_view s) { return parse_enum<ShotType>(kShotNames, s); }
std::optional<TacticType> parse_tactic_type(std::string_view s) {
  return parse_enum<TacticType>(kTacticNames, s);
}
std::optional<TacticState> parse_tactic_state(std::string_view s) {
  return parse_enum<TacticState>(kStateNames, s);
}

int caption_word_count(std::string_view caption) {
  std::istringstream in{std::string(caption)};
  int n = 0;
  std::string w;
  while (in >> w) ++n;
  return n;
}

void validate_match(const MatchAnnotation& match, const ParseOptions& options) {
  if (match.video_id.empty()) throw InvariantError("video", "video id must be non-empty");
  for (std::size_t i = 0; i < match.rallies.size(); ++i) {
    const auto path = at_index("rallies", i);
    validate_rally(match.rallies[i], path, options);
    if (i > 0 && match.rallies[i].start_s < match.rallies[i - 1].end_s) {
      throw InvariantError(path, "rallies must be sorted by start time and non-overlapping");
    }
  }
}

MatchAnnotation parse_match(std::string_view json_text, const ParseOptions& options) {
  json doc;
  try {
    doc = json::parse(json_text.begin(), json_text.end());
  } catch (const json::parse_error& e) {
    throw SyntaxError("", e.what());
  }
  expect_fields(doc, "", {"video", "rallies"});
  MatchAnnotation match;
  match.video_id = get_string(doc["video"], "video");
  const auto& rallies = get_array(doc["rallies"], "rallies");
  for (std::size_t i = 0; i < rallies.size(); ++i) {
    match.rallies.push_back(parse_rally(rallies[i], at_index("rallies", i)));
  }
  validate_match(match, options);
  return match;
}

std::string serialize_match(const MatchAnnotation& match) { return to_json(match).dump(2) + "\n"; }

MatchAnnotation load_match(const std::filesystem::path& path, const ParseOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open annotation file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_match(buf.str(), options);
  } catch (const AnnotationError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_match(const std::filesystem::path& path, const MatchAnnotation& match) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write annotation file " + path.string());
  out << serialize_match(match);
}

std::vector<MatchAnnotation> load_matches(const std::filesystem::path& dir, const ParseOptions& options) {
  if (!std::filesystem::is_directory(dir)) throw DataError("annotation directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<MatchAnnotation> matches;
  matches.reserve(files.size());
  for (const auto& f : files) matches.push_back(load_match(f, options));
  return matches;
}

SplitCounts split_counts(std::size_t n, const SplitRatios& ratios) {
  if (n < 3) throw TooFewMatches("need at least 3 matches to split, got " + std::to_string(n));
  const double sum = ratios.train + ratios.val + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9 || ratios.train < 0 || ratios.val < 0 || ratios.test < 0) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  // Slot order for remainders: train, test, val.
  std::array<double, 3> r{ratios.train, ratios.test, ratios.val};
  std::array<std::size_t, 3> c{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    // Guard against 0.7 * 10 = 6.9999999.
    c[i] = static_cast<std::size_t>(std::floor(r[i] * static_cast<double>(n) + 1e-9));
    assigned += c[i];
  }
  std::size_t remainder = n - assigned;
  for (std::size_t i = 0; i < 3 && remainder > 0; ++i) {
    if (c[i] == 0) {
      ++c[i];
      --remainder;
    }
  }
  for (std::size_t i = 0; remainder > 0; i = (i + 1) % 3) {
    ++c[i];
    --remainder;
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (c[i] == 0) {
      auto largest = std::max_element(c.begin(), c.end());
      --*largest;
      ++c[i];
    }
  }
  return {c[0], c[2], c[1]};
}

MatchSplit split_by_match(const std::vector<MatchAnnotation>& matches, const SplitRatios& ratios,
                          std::uint64_t seed) {
  const auto counts = split_counts(matches.size(), ratios);
  std::set<std::string> ids;
  for (const auto& m : matches) {
    if (!ids.insert(m.video_id).second) throw DataError("duplicate video id " + m.video_id);
  }
  // Sort by id first so the split does not depend on directory listing order.
  std::vector<std::size_t> order(matches.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return matches[a].video_id < matches[b].video_id; });
  Rng rng(seed);
  rng.shuffle(order);
  MatchSplit split;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& m = matches[order[i]];
    if (i < counts.train) {
      split.train.push_back(m);
    } else if (i < counts.train + counts.val) {
      split.val.push_back(m);
    } else {
      split.test.push_back(m);
    }
  }
  return split;
}

CaptionStats caption_stats(const std::vector<std::string>& captions) {
  CaptionStats stats;
  if (captions.empty()) return stats;
  std::map<std::string, std::size_t> freq;
  std::vector<int> lengths;
  lengths.reserve(captions.size());
  for (const auto& caption : captions) {
    std::istringstream in(caption);
    std::string w;
    int n = 0;
    while (in >> w) {
      ++n;
      if (w != "[PLAYER]") {
        std::transform(w.begin(), w.end(), w.begin(),
                       [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      }
      ++freq[w];
    }
    lengths.push_back(n);
  }
  stats.count = captions.size();
  stats.min_length = *std::min_element(lengths.begin(), lengths.end());
  stats.max_length = *std::max_element(lengths.begin(), lengths.end());
  stats.mean_length = std::accumulate(lengths.begin(), lengths.end(), 0.0) / static_cast<double>(lengths.size());
  stats.length_histogram.assign(static_cast<std::size_t>(stats.max_length - stats.min_length + 1), 0);
  for (int len : lengths) ++stats.length_histogram[static_cast<std::size_t>(len - stats.min_length)];
  stats.word_frequency.assign(freq.begin(), freq.end());
  std::stable_sort(stats.word_frequency.begin(), stats.word_frequency.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return stats;
}

DatasetStats dataset_stats(const std::vector<MatchAnnotation>& matches) {
  std::vector<std::string> shot_captions;
  std::vector<std::string> tactic_captions;
  for (const auto& m : matches) {
    for (const auto& r : m.rallies) {
      for (const auto& s : r.shots) shot_captions.push_back(s.caption);
      for (const auto& u : r.tactic_units) tactic_captions.push_back(u.caption);
    }
  }
  return {caption_stats(shot_captions), caption_stats(tactic_captions)};
}

std::string dataset_stats_json(const DatasetStats& stats, std::size_t top_words) {
  auto one = [&](const CaptionStats& s) {
    json hist = json::array();
    for (std::size_t i = 0; i < s.length_histogram.size(); ++i) {
      hist.push_back({{"length", s.min_length + static_cast<int>(i)}, {"count", s.length_histogram[i]}});
    }
    json words = json::array();
    for (std::size_t i = 0; i < s.word_frequency.size() && i < top_words; ++i) {
      words.push_back({{"word", s.word_frequency[i].first}, {"count", s.word_frequency[i].second}});
    }
    return json{{"count", s.count},
                {"min_length", s.min_length},
                {"max_length", s.max_length},
                {"mean_length", s.mean_length},
                {"length_histogram", std::move(hist)},
                {"word_frequency", std::move(words)}};
  };
  return json{{"shot", one(stats.shot)}, {"tactic", one(stats.tactic)}}.dump(2) + "\n";
}

}  // namespace s2t
