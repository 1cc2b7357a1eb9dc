#include "s2t/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "s2t/error.hpp"
#include "s2t/feature_io.hpp"

namespace s2t {

namespace {

constexpr std::array<std::string_view, kShotTypeCount> kShotCaptions = {
    "[PLAYER] serves short to the front court",
    "[PLAYER] smashes straight to the midcourt",
    "[PLAYER] lifts crosscourt to the back court",
    "[PLAYER] pushes straight to the midcourt",
    "[PLAYER] drops crosscourt to the net",
    "[PLAYER] plays a tight net shot",
    "[PLAYER] drives flat to the side",
    "[PLAYER] clears high to the back court",
    "[PLAYER] blocks the smash to the net",
    "[PLAYER] returns the shuttle",
};

constexpr std::array<std::string_view, kShotTypeCount> kShotNouns = {
    "serve", "smash", "lift", "push", "drop", "net shot", "drive", "clear", "block", "return"};

constexpr std::array<std::string_view, kTacticTypeCount> kTacticPhrases = {
    "serve and attack",  "continuous smashing", "net pressure and kill",
    "push and trap",     "flick serve attack",  "push and smash",
    "drop and net domination", "drive and intercept", "tempo variation control"};

std::string noun(ShotType t) { return std::string(kShotNouns[index_of(t)]); }

bool owned(std::size_t position) { return position % 2 == 0; }

std::string phrase(std::size_t i, std::size_t length, TacticType type, ShotType shot, TacticState state,
                   bool finish_interrupted) {
  const std::string n = noun(shot);
  if (i == 0) {
    return "[PLAYER] starts the " + std::string(kTacticPhrases[index_of(type)]) + " tactic with a " + n;
  }
  if (i + 1 == length) {
    return finish_interrupted ? "the sequence finishes as [PLAYER] is forced into a " + n
                              : "the sequence finishes as [PLAYER] executes a " + n + " successfully";
  }
  switch (state) {
    case TacticState::Interrupt:
      return "[PLAYER] is forced into a " + n + " and the tactic is interrupted";
    case TacticState::Resume:
      return owned(i) ? "[PLAYER] resumes the tactic with a " + n
                      : "the opponent responds with a " + n + " and [PLAYER] resumes the tactic";
    default:
      return owned(i) ? "[PLAYER] continues with a " + n : "the opponent responds with a " + n;
  }
}

std::size_t sample_index(Rng& rng, std::span<const double> probs) {
  double u = rng.uniform();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (u < probs[i]) return i;
    u -= probs[i];
  }
  return probs.size() - 1;
}

ShotType random_shot(Rng& rng) { return static_cast<ShotType>(rng.index(kShotTypeCount)); }

ShotType shot_in(const SlotSpec& slot, Rng& rng) {
  if (slot.wildcard()) return random_shot(rng);
  return slot.allowed[rng.index(slot.allowed.size())];
}

ShotType shot_not_in(const SlotSpec& slot, Rng& rng) {
  std::vector<ShotType> rejected;
  for (std::size_t k = 0; k < kShotTypeCount; ++k) {
    const auto t = static_cast<ShotType>(k);
    if (!slot.accepts(t)) rejected.push_back(t);
  }
  return rejected[rng.index(rejected.size())];
}

// Every candidate window in the segment is invalid for whichever team opens it.
bool tactic_free(const std::vector<ShotType>& shots, std::span<const TacticPattern> grammar) {
  for (const auto& w : enumerate_candidates(shots)) {
    const auto parity = w.first_shot % 2 == 0 ? Parity::Even : Parity::Odd;
    if (match_tactic(w, grammar, parity).valid) return false;
  }
  return true;
}

struct Segment {
  std::vector<ShotType> shots;
  std::optional<TacticUnitAnnotation> unit;
};

Segment make_unit(const SyntheticConfig& config, std::span<const TacticPattern> grammar, Rng& rng) {
  const auto& pattern = grammar[rng.index(grammar.size())];
  int interruptions = static_cast<int>(sample_index(rng, config.interruption_probs));
  interruptions = std::min(interruptions, pattern.max_interruptions);
  const int length = kMinTacticShots + 2 * interruptions;
  const int owned_count = (length + 1) / 2;
  interruptions = std::min(interruptions, owned_count - pattern.min_core_hits);
  std::vector<std::size_t> candidates;  // owned positions after the opener
  for (int p = 2; p < length; p += 2) candidates.push_back(static_cast<std::size_t>(p));
  rng.shuffle(candidates);
  std::vector<bool> interrupted(static_cast<std::size_t>(length), false);
  for (int k = 0; k < std::max(interruptions, 0); ++k) interrupted[candidates[static_cast<std::size_t>(k)]] = true;

  Segment seg;
  seg.shots.resize(static_cast<std::size_t>(length));
  for (std::size_t i = 0; i < seg.shots.size(); ++i) {
    const auto& slot = pattern.slot_at(i);
    if (!owned(i)) {
      seg.shots[i] = random_shot(rng);
    } else {
      seg.shots[i] = interrupted[i] ? shot_not_in(slot, rng) : shot_in(slot, rng);
    }
  }
  CandidateWindow window{0, 0, length, seg.shots};
  const auto result = match_tactic(window, grammar, Parity::Even);
  if (!result.valid) throw Error("generated unit rejected by the grammar oracle");
  TacticUnitAnnotation unit;
  unit.first_shot = 0;
  unit.last_shot = length - 1;
  unit.tactic_type = *result.tactic_type;
  unit.states = label_states(result, length);
  const bool finish_interrupted =
      !result.interrupt_positions.empty() && result.interrupt_positions.back() == length - 1;
  unit.caption = tactic_caption(unit.tactic_type, seg.shots, unit.states, finish_interrupted);
  seg.unit = std::move(unit);
  return seg;
}

Segment make_negative(const SyntheticConfig& config, std::span<const TacticPattern> grammar, Rng& rng) {
  Segment seg;
  const bool hard = rng.bernoulli(config.hard_negative_fraction);
  const int length = kWindowLengths[rng.index(kWindowLengths.size())];
  for (int attempt = 0;; ++attempt) {
    if (attempt > 10000) throw Error("could not sample a tactic-free segment; grammar too permissive");
    seg.shots.assign(static_cast<std::size_t>(length), ShotType::Other);
    if (hard) {
      const auto& pattern = grammar[rng.index(grammar.size())];
      const int owned_count = (length + 1) / 2;
      const int corrupt = std::min(owned_count - pattern.min_core_hits + 1, pattern.max_interruptions + 1);
      std::vector<std::size_t> owned_positions;
      for (int p = 0; p < length; p += 2) owned_positions.push_back(static_cast<std::size_t>(p));
      rng.shuffle(owned_positions);
      std::vector<bool> broken(static_cast<std::size_t>(length), false);
      for (int k = 0; k < std::max(corrupt, 0); ++k) broken[owned_positions[static_cast<std::size_t>(k)]] = true;
      for (std::size_t i = 0; i < seg.shots.size(); ++i) {
        const auto& slot = pattern.slot_at(i);
        if (!owned(i)) {
          seg.shots[i] = random_shot(rng);
        } else {
          seg.shots[i] = broken[i] ? shot_not_in(slot, rng) : shot_in(slot, rng);
        }
      }
    } else {
      for (auto& s : seg.shots) s = random_shot(rng);
    }
    if (tactic_free(seg.shots, grammar)) return seg;
  }
}

constexpr double kShotSeconds = 0.7;
constexpr double kShotGap = 0.05;
constexpr double kRallyGap = 12.0;

double round_ms(double s) { return std::round(s * 1000.0) / 1000.0; }

}  // namespace

void validate_config(const SyntheticConfig& c) {
  if (c.num_rallies < 0) throw ConfigError("synthetic.num_rallies must be >= 0");
  if (!(c.valid_fraction >= 0.0 && c.valid_fraction <= 1.0)) throw ConfigError("synthetic.valid_fraction must be in [0, 1]");
  if (!(c.feature_noise_std >= 0.0)) throw ConfigError("synthetic.feature_noise_std must be >= 0");
  if (c.frames_per_shot < 1) throw ConfigError("synthetic.frames_per_shot must be >= 1");
  if (c.grid_h < 1 || c.grid_w < 1) throw ConfigError("synthetic grid must be at least 1x1");
  if (c.embed_dim < static_cast<int>(kShotTypeCount)) {
    throw ConfigError("synthetic.embed_dim must be >= " + std::to_string(kShotTypeCount) + " for orthogonal shot bases");
  }
  if (c.num_matches < 1) throw ConfigError("synthetic.num_matches must be >= 1");
  if (!(c.hard_negative_fraction >= 0.0 && c.hard_negative_fraction <= 1.0)) {
    throw ConfigError("synthetic.hard_negative_fraction must be in [0, 1]");
  }
  double total = 0.0;
  for (double p : c.interruption_probs) {
    if (p < 0.0) throw ConfigError("synthetic.interruption_probs must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("synthetic.interruption_probs must sum to 1");
}

std::vector<float> basis_vector(ShotType type, std::size_t dim) {
  if (index_of(type) >= dim) {
    throw UnknownShotType("shot type " + std::string(to_string(type)) + " has no basis direction in dim " +
                          std::to_string(dim));
  }
  std::vector<float> v(dim, 0.0f);
  v[index_of(type)] = 1.0f;
  return v;
}

TokenGrid render_features(ShotType type, const SyntheticConfig& config, Rng& rng) {
  if (index_of(type) >= kShotTypeCount) throw UnknownShotType("shot type outside the vocabulary");
  const auto dim = static_cast<std::size_t>(config.embed_dim);
  const auto basis = basis_vector(type, dim);
  TokenGrid grid(static_cast<std::size_t>(config.frames_per_shot), config.cells(), dim);
  const double sigma = config.feature_noise_std;
  for (std::size_t tok = 0; tok < grid.token_count(); ++tok) {
    for (std::size_t d = 0; d < dim; ++d) {
      float v = basis[d];
      if (sigma > 0.0) v += static_cast<float>(rng.normal(0.0, sigma));
      grid.data[tok * dim + d] = v;
    }
  }
  return grid;
}

std::vector<SyntheticSample> generate_corpus(const SyntheticConfig& config, std::span<const TacticPattern> grammar) {
  validate_config(config);
  if (grammar.empty()) throw ConfigError("generate_corpus needs a non-empty grammar");
  const auto n = static_cast<std::size_t>(config.num_rallies);
  const auto n_valid = static_cast<std::size_t>(std::llround(config.valid_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng master(config.seed);
  master.shuffle(order);
  std::vector<bool> is_valid(n, false);
  for (std::size_t k = 0; k < n_valid; ++k) is_valid[order[k]] = true;

  const auto matches = static_cast<std::size_t>(config.num_matches);
  std::vector<SyntheticSample> corpus(n);
  for (std::size_t r = 0; r < n; ++r) {
    Rng rng(derive_seed(config.seed, r));
    auto seg = is_valid[r] ? make_unit(config, grammar, rng) : make_negative(config, grammar, rng);
    auto& sample = corpus[r];
    // Contiguous blocks of rallies per match.
    sample.match_index = static_cast<int>(r * matches / std::max<std::size_t>(n, 1));
    const std::size_t block_start = (static_cast<std::size_t>(sample.match_index) * n + matches - 1) / matches;
    const double rally_start = round_ms(static_cast<double>(r - block_start) *
                                        (kMaxTacticShots * kShotSeconds + kRallyGap));
    auto& rally = sample.annotation;
    rally.start_s = rally_start;
    rally.end_s = round_ms(rally_start + static_cast<double>(seg.shots.size()) * kShotSeconds + kShotGap);
    rally.score = {static_cast<int>((r - block_start) / 2), static_cast<int>((r - block_start + 1) / 2)};
    for (std::size_t i = 0; i < seg.shots.size(); ++i) {
      ShotAnnotation shot;
      shot.start_s = round_ms(rally_start + kShotGap + static_cast<double>(i) * kShotSeconds);
      shot.end_s = round_ms(shot.start_s + kShotSeconds - kShotGap);
      shot.shot_type = seg.shots[i];
      shot.caption = shot_caption(seg.shots[i]);
      rally.shots.push_back(std::move(shot));
      sample.features.push_back(render_features(seg.shots[i], config, rng));
    }
    if (seg.unit) rally.tactic_units.push_back(std::move(*seg.unit));
  }
  return corpus;
}

std::vector<MatchAnnotation> assemble_matches(const std::vector<SyntheticSample>& corpus,
                                              const SyntheticConfig& config) {
  std::vector<MatchAnnotation> matches(static_cast<std::size_t>(config.num_matches));
  for (std::size_t m = 0; m < matches.size(); ++m) {
    char name[64];
    std::snprintf(name, sizeof(name), "synthetic_match_%02zu", m);
    matches[m].video_id = name;
  }
  for (const auto& s : corpus) matches[static_cast<std::size_t>(s.match_index)].rallies.push_back(s.annotation);
  std::erase_if(matches, [](const MatchAnnotation& m) { return m.rallies.empty(); });
  return matches;
}

std::vector<MatchAnnotation> write_dataset(const std::filesystem::path& root,
                                           const std::vector<SyntheticSample>& corpus,
                                           const SyntheticConfig& config) {
  auto matches = assemble_matches(corpus, config);
  std::size_t cursor = 0;
  for (auto& match : matches) {
    for (std::size_t r = 0; r < match.rallies.size(); ++r, ++cursor) {
      const auto& sample = corpus[cursor];
      auto& rally = match.rallies[r];
      for (std::size_t s = 0; s < rally.shots.size(); ++s) {
        char name[64];
        std::snprintf(name, sizeof(name), "r%03zu_s%02zu.f32", r, s);
        const auto rel = std::filesystem::path("features") / match.video_id / name;
        write_feature_file(root / rel, sample.features[s]);
        rally.shots[s].features = rel.generic_string();
      }
    }
    save_match(root / "annotations" / (match.video_id + ".json"), match);
  }
  return matches;
}

std::string shot_caption(ShotType type) { return std::string(kShotCaptions[index_of(type)]); }

std::string tactic_caption(TacticType type, std::span<const ShotType> shots, std::span<const TacticState> states,
                           bool finish_interrupted) {
  if (shots.size() != states.size() || shots.size() < 2) throw InvalidUnit("tactic caption needs one state per shot");
  std::string out;
  for (std::size_t i = 0; i < shots.size(); ++i) {
    if (i) out += ' ';
    out += phrase(i, shots.size(), type, shots[i], states[i], finish_interrupted);
  }
  return out;
}

std::pair<int, int> tactic_caption_length_bounds(int shots) {
  int start_lo = INT32_MAX, start_hi = 0, finish_lo = INT32_MAX, finish_hi = 0, mid_lo = INT32_MAX, mid_hi = 0;
  const std::size_t len = 4;  // positions 1 and 2 cover both owners
  for (std::size_t t = 0; t < kTacticTypeCount; ++t) {
    for (std::size_t k = 0; k < kShotTypeCount; ++k) {
      const auto type = static_cast<TacticType>(t);
      const auto shot = static_cast<ShotType>(k);
      const int s = caption_word_count(phrase(0, len, type, shot, TacticState::Start, false));
      start_lo = std::min(start_lo, s);
      start_hi = std::max(start_hi, s);
      for (bool interrupted : {false, true}) {
        const int f = caption_word_count(phrase(len - 1, len, type, shot, TacticState::Finish, interrupted));
        finish_lo = std::min(finish_lo, f);
        finish_hi = std::max(finish_hi, f);
      }
      for (std::size_t pos : {std::size_t{1}, std::size_t{2}}) {
        for (auto st : {TacticState::Continue, TacticState::Interrupt, TacticState::Resume}) {
          const int m = caption_word_count(phrase(pos, len, type, shot, st, false));
          mid_lo = std::min(mid_lo, m);
          mid_hi = std::max(mid_hi, m);
        }
      }
    }
  }
  return {start_lo + finish_lo + (shots - 2) * mid_lo, start_hi + finish_hi + (shots - 2) * mid_hi};
}

std::vector<std::string> template_vocabulary() {
  std::set<std::string> words;
  auto add = [&](const std::string& text) {
    std::istringstream in(text);
    std::string w;
    while (in >> w) words.insert(w);
  };
  for (auto c : kShotCaptions) add(std::string(c));
  for (std::size_t t = 0; t < kTacticTypeCount; ++t) {
    for (std::size_t k = 0; k < kShotTypeCount; ++k) {
      for (std::size_t pos : {std::size_t{0}, std::size_t{1}, std::size_t{2}, std::size_t{3}}) {
        for (auto st : {TacticState::Continue, TacticState::Interrupt, TacticState::Resume}) {
          for (bool fi : {false, true}) {
            add(phrase(pos, 4, static_cast<TacticType>(t), static_cast<ShotType>(k), st, fi));
          }
        }
      }
    }
  }
  return {words.begin(), words.end()};
}

}  // namespace s2t
