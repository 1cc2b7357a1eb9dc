#include "s2t/grammar.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "s2t/error.hpp"

namespace s2t {

namespace {

using nlohmann::json;

constexpr std::string_view kDefaultGrammar = R"({
  "patterns": [
    {"type": "ServeAndAttack", "slots": ["Serve", "?", ["Smash", "Drive"], "?", ["Smash", "Drive"]], "max_interruptions": 2, "min_core_hits": 3},
    {"type": "ContinuousSmashing", "slots": ["Smash", "?", "Smash", "?", "Smash"], "max_interruptions": 2, "min_core_hits": 3},
    {"type": "NetPressureAndKill", "slots": ["Net", "?", "Net", "?", ["Smash", "Push"]], "max_interruptions": 2, "min_core_hits": 3},
    {"type": "PushAndTrap", "slots": ["Push", "?", "Push", "?", "Net"], "max_interruptions": 2, "min_core_hits": 3},
    {"type": "FlickServeAttack", "slots": ["Serve", "?", "Clear", "?", "Smash"], "max_interruptions": 2, "min_core_hits": 3},
    {"type": "PushAndSmash", "slots": ["Push", "?", "Smash", "?", "Smash"], "max_interruptions": 2, "min_core_hits": 3},
    {"type": "DropAndNetDomination", "slots": ["Drop", "?", "Net", "?", "Net"], "max_interruptions": 2, "min_core_hits": 3},
    {"type": "DriveAndIntercept", "slots": ["Drive", "?", "Drive", "?", ["Drive", "Block"]], "max_interruptions": 2, "min_core_hits": 3},
    {"type": "TempoVariationControl", "slots": ["Clear", "?", "Drop", "?", ["Clear", "Drop"]], "max_interruptions": 2, "min_core_hits": 3}
  ]
})";

ShotType shot_from_json(const json& j, const std::string& where) {
  if (!j.is_string()) throw ConfigError(where + ": expected a shot type name");
  const auto name = j.get<std::string>();
  const auto t = parse_shot_type(name);
  if (!t) throw ConfigError(where + ": unknown shot type '" + name + "'");
  return *t;
}

SlotSpec slot_from_json(const json& j, const std::string& where) {
  SlotSpec slot;
  if (j.is_string() && j.get<std::string>() == "?") return slot;
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) {
      slot.allowed.push_back(shot_from_json(j[i], where + "[" + std::to_string(i) + "]"));
    }
    if (slot.allowed.empty()) throw ConfigError(where + ": empty shot set (use \"?\" for a wildcard)");
  } else {
    slot.allowed.push_back(shot_from_json(j, where));
  }
  std::sort(slot.allowed.begin(), slot.allowed.end());
  slot.allowed.erase(std::unique(slot.allowed.begin(), slot.allowed.end()), slot.allowed.end());
  return slot;
}

json slot_to_json(const SlotSpec& slot) {
  if (slot.wildcard()) return "?";
  if (slot.allowed.size() == 1) return std::string(to_string(slot.allowed.front()));
  json arr = json::array();
  for (auto t : slot.allowed) arr.push_back(std::string(to_string(t)));
  return arr;
}

bool owned(int window_position) { return window_position % 2 == 0; }

}  // namespace

bool SlotSpec::accepts(ShotType t) const {
  return wildcard() || std::find(allowed.begin(), allowed.end(), t) != allowed.end();
}

const SlotSpec& TacticPattern::slot_at(std::size_t position) const {
  const std::size_t k = slots.size();
  if (position < k) return slots[position];
  return slots[k - 2 + (position - k) % 2];
}

void validate_pattern(const TacticPattern& p) {
  const std::string name(to_string(p.tactic_type));
  const auto k = static_cast<int>(p.slots.size());
  if (k < kMinTacticShots || k > kMaxTacticShots) {
    throw ConfigError(name + ": pattern must have 5..9 slots, got " + std::to_string(k));
  }
  if (p.max_interruptions < 0) throw ConfigError(name + ": max_interruptions must be >= 0");
  if (p.min_core_hits < 1) throw ConfigError(name + ": min_core_hits must be >= 1");
  for (int i = 0; i < k; ++i) {
    const bool wild = p.slots[static_cast<std::size_t>(i)].wildcard();
    if (owned(i) && wild) {
      throw ConfigError(name + ": slot " + std::to_string(i) + " belongs to the executing team and must name shot types");
    }
    if (!owned(i) && !wild) {
      throw ConfigError(name + ": slot " + std::to_string(i) + " is an opponent shot and must be '?'");
    }
  }
}

std::vector<TacticPattern> parse_grammar(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text.begin(), json_text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("grammar file: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("patterns") || !doc["patterns"].is_array()) {
    throw ConfigError("grammar file: expected an object with a 'patterns' array");
  }
  std::vector<TacticPattern> patterns;
  const auto& arr = doc["patterns"];
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& p = arr[i];
    const std::string where = "patterns[" + std::to_string(i) + "]";
    if (!p.is_object() || !p.contains("type") || !p.contains("slots") || !p["slots"].is_array()) {
      throw ConfigError(where + ": expected {type, slots, max_interruptions, min_core_hits}");
    }
    for (auto it = p.begin(); it != p.end(); ++it) {
      if (it.key() != "type" && it.key() != "slots" && it.key() != "max_interruptions" &&
          it.key() != "min_core_hits") {
        throw ConfigError(where + ": unexpected field '" + it.key() + "'");
      }
    }
    TacticPattern pattern;
    const auto type = p["type"].is_string() ? parse_tactic_type(p["type"].get<std::string>()) : std::nullopt;
    if (!type) throw ConfigError(where + ".type: unknown tactic type");
    pattern.tactic_type = *type;
    for (std::size_t s = 0; s < p["slots"].size(); ++s) {
      pattern.slots.push_back(slot_from_json(p["slots"][s], where + ".slots[" + std::to_string(s) + "]"));
    }
    pattern.max_interruptions = p.value("max_interruptions", 2);
    pattern.min_core_hits = p.value("min_core_hits", 3);
    validate_pattern(pattern);
    patterns.push_back(std::move(pattern));
  }
  if (patterns.empty()) throw ConfigError("grammar file: no patterns");
  return patterns;
}

std::vector<TacticPattern> load_grammar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open grammar file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_grammar(buf.str());
}

std::string grammar_json(std::span<const TacticPattern> patterns) {
  json arr = json::array();
  for (const auto& p : patterns) {
    json slots = json::array();
    for (const auto& s : p.slots) slots.push_back(slot_to_json(s));
    arr.push_back({{"type", std::string(to_string(p.tactic_type))},
                   {"slots", std::move(slots)},
                   {"max_interruptions", p.max_interruptions},
                   {"min_core_hits", p.min_core_hits}});
  }
  return json{{"patterns", std::move(arr)}}.dump(2) + "\n";
}

const std::vector<TacticPattern>& default_grammar() {
  static const std::vector<TacticPattern> grammar = parse_grammar(kDefaultGrammar);
  return grammar;
}

std::vector<CandidateWindow> enumerate_candidates(int rally_shot_count, int rally_index) {
  std::vector<CandidateWindow> windows;
  for (int first = 0; first < rally_shot_count; ++first) {
    for (int len : kWindowLengths) {
      if (first + len <= rally_shot_count) windows.push_back({rally_index, first, len, {}});
    }
  }
  return windows;
}

std::vector<CandidateWindow> enumerate_candidates(std::span<const ShotType> rally_shots, int rally_index) {
  auto windows = enumerate_candidates(static_cast<int>(rally_shots.size()), rally_index);
  for (auto& w : windows) {
    const auto first = rally_shots.begin() + w.first_shot;
    w.shot_types.assign(first, first + w.length);
  }
  return windows;
}

MatchResult match_tactic(const CandidateWindow& window, std::span<const TacticPattern> patterns,
                         Parity own_side_parity) {
  if (window.length != static_cast<int>(window.shot_types.size())) {
    throw ParityError("window declares " + std::to_string(window.length) + " shots but carries " +
                      std::to_string(window.shot_types.size()));
  }
  const int parity = own_side_parity == Parity::Even ? 0 : 1;
  if (window.first_shot % 2 != parity) {
    throw ParityError("window starting at shot " + std::to_string(window.first_shot) +
                      " opens on an opponent shot for this parity");
  }
  for (const auto& pattern : patterns) {
    std::vector<int> interrupts;
    int hits = 0;
    bool over_budget = false;
    for (int i = 0; i < window.length; i += 2) {
      if (pattern.slot_at(static_cast<std::size_t>(i)).accepts(window.shot_types[static_cast<std::size_t>(i)])) {
        ++hits;
      } else {
        interrupts.push_back(i);
        if (static_cast<int>(interrupts.size()) > pattern.max_interruptions) {
          over_budget = true;
          break;
        }
      }
    }
    if (!over_budget && hits >= pattern.min_core_hits) {
      return {true, pattern.tactic_type, std::move(interrupts)};
    }
  }
  return {};
}

std::vector<TacticState> label_states(const MatchResult& result, int window_length) {
  if (!result.valid) throw InvalidUnit("cannot label states of an invalid window");
  if (window_length < 2) throw InvalidUnit("a tactic unit needs at least two shots");
  std::vector<bool> interrupted(static_cast<std::size_t>(window_length), false);
  for (int p : result.interrupt_positions) {
    if (p < 0 || p >= window_length) throw InvalidUnit("interrupt position outside the window");
    interrupted[static_cast<std::size_t>(p)] = true;
  }
  std::vector<TacticState> states(static_cast<std::size_t>(window_length), TacticState::Continue);
  states.front() = TacticState::Start;
  states.back() = TacticState::Finish;
  bool pending_resume = false;
  for (int i = 1; i + 1 < window_length; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    if (interrupted[idx]) {
      states[idx] = TacticState::Interrupt;
      pending_resume = true;
    } else if (pending_resume) {
      states[idx] = TacticState::Resume;
      pending_resume = false;
    }
  }
  return states;
}

std::vector<ValidWindow> deduplicate_windows(std::vector<ValidWindow> windows) {
  std::stable_sort(windows.begin(), windows.end(), [](const ValidWindow& a, const ValidWindow& b) {
    if (a.window.rally_index != b.window.rally_index) return a.window.rally_index < b.window.rally_index;
    if (a.window.length != b.window.length) return a.window.length > b.window.length;
    return a.window.first_shot < b.window.first_shot;
  });
  std::vector<ValidWindow> kept;
  for (auto& w : windows) {
    const int lo = w.window.first_shot;
    const int hi = lo + w.window.length;
    const bool overlaps = std::any_of(kept.begin(), kept.end(), [&](const ValidWindow& k) {
      return k.window.rally_index == w.window.rally_index && lo < k.window.first_shot + k.window.length &&
             k.window.first_shot < hi;
    });
    if (!overlaps) kept.push_back(std::move(w));
  }
  std::sort(kept.begin(), kept.end(), [](const ValidWindow& a, const ValidWindow& b) {
    if (a.window.rally_index != b.window.rally_index) return a.window.rally_index < b.window.rally_index;
    return a.window.first_shot < b.window.first_shot;
  });
  return kept;
}

}  // namespace s2t
