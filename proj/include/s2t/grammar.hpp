#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "s2t/annotation.hpp"

namespace s2t {

// One pattern position. An empty `allowed` list is the wildcard `?`.
struct SlotSpec {
  std::vector<ShotType> allowed;

  bool wildcard() const { return allowed.empty(); }
  bool accepts(ShotType t) const;
  bool operator==(const SlotSpec&) const = default;
};

// Shot-type template for one tactic. Slot 0 is the executing team's opening
// shot; odd slots are opponent shots and must be wildcards. Windows longer
// than the slot list repeat the last (opponent, own) slot pair.
struct TacticPattern {
  TacticType tactic_type = TacticType::ServeAndAttack;
  std::vector<SlotSpec> slots;
  int max_interruptions = 2;
  int min_core_hits = 3;

  const SlotSpec& slot_at(std::size_t position) const;
  bool operator==(const TacticPattern&) const = default;
};

struct CandidateWindow {
  int rally_index = 0;
  int first_shot = 0;
  int length = 0;
  std::vector<ShotType> shot_types;  // empty when only geometry is enumerated
};

struct MatchResult {
  bool valid = false;
  std::optional<TacticType> tactic_type;
  std::vector<int> interrupt_positions;  // window-local, ascending

  bool operator==(const MatchResult&) const = default;
};

// Which rally shot indices the executing team plays.
enum class Parity { Even, Odd };

inline constexpr std::array<int, 3> kWindowLengths = {5, 7, 9};

// Validates slot count, wildcard placement and budgets. Throws ConfigError.
void validate_pattern(const TacticPattern& pattern);

std::vector<TacticPattern> parse_grammar(std::string_view json_text);
std::vector<TacticPattern> load_grammar(const std::filesystem::path& path);
std::string grammar_json(std::span<const TacticPattern> patterns);

// The nine shipped patterns (same content as data/grammar.json).
const std::vector<TacticPattern>& default_grammar();

// All windows of 5, 7 and 9 shots, ordered by (first_shot, length).
std::vector<CandidateWindow> enumerate_candidates(int rally_shot_count, int rally_index = 0);
std::vector<CandidateWindow> enumerate_candidates(std::span<const ShotType> rally_shots, int rally_index = 0);

// Single left-to-right pass per pattern; the first valid pattern in list order
// wins. Throws ParityError when the window opens on an opponent shot or its
// declared length disagrees with its shot list.
MatchResult match_tactic(const CandidateWindow& window, std::span<const TacticPattern> patterns,
                         Parity own_side_parity);

// Start and Finish take precedence at the ends; an Interrupt is followed by a
// Resume at the next position that is not itself an interruption.
std::vector<TacticState> label_states(const MatchResult& result, int window_length);

struct ValidWindow {
  CandidateWindow window;
  MatchResult result;
};

// Drops windows overlapping an already kept one, preferring longer windows and
// then earlier ones. Output is ordered by first_shot.
std::vector<ValidWindow> deduplicate_windows(std::vector<ValidWindow> windows);

}  // namespace s2t
