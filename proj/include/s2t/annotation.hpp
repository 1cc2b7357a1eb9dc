#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace s2t {

enum class ShotType : std::uint8_t { Serve, Smash, Lift, Push, Drop, Net, Drive, Clear, Block, Other };
inline constexpr std::size_t kShotTypeCount = 10;

enum class TacticType : std::uint8_t {
  ServeAndAttack,
  ContinuousSmashing,
  NetPressureAndKill,
  PushAndTrap,
  FlickServeAttack,
  PushAndSmash,
  DropAndNetDomination,
  DriveAndIntercept,
  TempoVariationControl,
};
inline constexpr std::size_t kTacticTypeCount = 9;

enum class TacticState : std::uint8_t { Start, Continue, Interrupt, Resume, Finish };
inline constexpr std::size_t kTacticStateCount = 5;

std::string_view to_string(ShotType t);
std::string_view to_string(TacticType t);
std::string_view to_string(TacticState s);
std::optional<ShotType> parse_shot_type(std::string_view s);
std::optional<TacticType> parse_tactic_type(std::string_view s);
std::optional<TacticState> parse_tactic_state(std::string_view s);

inline constexpr std::size_t index_of(ShotType t) { return static_cast<std::size_t>(t); }
inline constexpr std::size_t index_of(TacticType t) { return static_cast<std::size_t>(t); }
inline constexpr std::size_t index_of(TacticState s) { return static_cast<std::size_t>(s); }

struct ShotAnnotation {
  double start_s = 0.0;
  double end_s = 0.0;
  ShotType shot_type = ShotType::Other;
  std::string caption;
  // Relative path of the per-shot feature file, if any.
  std::optional<std::string> features;

  bool operator==(const ShotAnnotation&) const = default;
};

struct TacticUnitAnnotation {
  int first_shot = 0;
  int last_shot = 0;  // inclusive
  TacticType tactic_type = TacticType::ServeAndAttack;
  std::vector<TacticState> states;  // one per shot in [first_shot, last_shot]
  std::string caption;

  int length() const { return last_shot - first_shot + 1; }
  bool operator==(const TacticUnitAnnotation&) const = default;
};

struct RallyAnnotation {
  double start_s = 0.0;
  double end_s = 0.0;
  std::array<int, 2> score{0, 0};
  std::vector<ShotAnnotation> shots;
  std::vector<TacticUnitAnnotation> tactic_units;

  bool operator==(const RallyAnnotation&) const = default;
};

struct MatchAnnotation {
  std::string video_id;
  std::vector<RallyAnnotation> rallies;

  bool operator==(const MatchAnnotation&) const = default;
};

struct ParseOptions {
  // Enforces the 2..21 word range on shot captions.
  bool strict = false;
};

inline constexpr int kMinTacticShots = 5;
inline constexpr int kMaxTacticShots = 9;
inline constexpr int kMinShotCaptionWords = 2;
inline constexpr int kMaxShotCaptionWords = 21;

// Throws SyntaxError, SchemaError or InvariantError; the message carries the
// path of the first offending element.
MatchAnnotation parse_match(std::string_view json_text, const ParseOptions& options = {});
std::string serialize_match(const MatchAnnotation& match);

// Runs the invariant checks of parse_match on an in-memory value.
void validate_match(const MatchAnnotation& match, const ParseOptions& options = {});

MatchAnnotation load_match(const std::filesystem::path& path, const ParseOptions& options = {});
void save_match(const std::filesystem::path& path, const MatchAnnotation& match);

// Loads every *.json under `dir`, sorted by file name.
std::vector<MatchAnnotation> load_matches(const std::filesystem::path& dir,
                                          const ParseOptions& options = {});

// Whitespace word count; "[PLAYER]" is one word.
int caption_word_count(std::string_view caption);

// ---------------------------------------------------------------------------
// Match-disjoint splits

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

struct MatchSplit {
  std::vector<MatchAnnotation> train;
  std::vector<MatchAnnotation> val;
  std::vector<MatchAnnotation> test;
};

// Floor counts; the remainder goes to empty splits first, then to train, test,
// val in that order. If a split is still empty one match is taken from the
// largest split. Requires n >= 3.
SplitCounts split_counts(std::size_t n, const SplitRatios& ratios);

MatchSplit split_by_match(const std::vector<MatchAnnotation>& matches, const SplitRatios& ratios,
                          std::uint64_t seed);

// ---------------------------------------------------------------------------
// Caption statistics

struct CaptionStats {
  std::size_t count = 0;
  int min_length = 0;
  int max_length = 0;
  double mean_length = 0.0;
  // histogram[i] counts captions of length min_length + i.
  std::vector<std::size_t> length_histogram;
  // Sorted by descending count, then token.
  std::vector<std::pair<std::string, std::size_t>> word_frequency;
};

struct DatasetStats {
  CaptionStats shot;
  CaptionStats tactic;
};

CaptionStats caption_stats(const std::vector<std::string>& captions);
DatasetStats dataset_stats(const std::vector<MatchAnnotation>& matches);
std::string dataset_stats_json(const DatasetStats& stats, std::size_t top_words = 50);

}  // namespace s2t
