#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "s2t/annotation.hpp"
#include "s2t/grammar.hpp"
#include "s2t/rng.hpp"
#include "s2t/tokens.hpp"

namespace s2t {

struct SyntheticConfig {
  std::uint64_t seed = 7;
  int num_rallies = 1410;
  double valid_fraction = 544.0 / 1410.0;
  double feature_noise_std = 0.05;
  int frames_per_shot = 16;
  int grid_h = 2;
  int grid_w = 2;
  int embed_dim = 16;
  int num_matches = 10;
  // Share of negatives built by corrupting a pattern instance just past the
  // interruption budget instead of sampling shots uniformly.
  double hard_negative_fraction = 0.3;
  // P(0, 1, 2 interruptions) for generated units; a unit with k interruptions
  // spans 5 + 2k shots.
  std::array<double, 3> interruption_probs{0.4, 0.4, 0.2};

  std::size_t cells() const { return static_cast<std::size_t>(grid_h * grid_w); }
};

// Throws ConfigError on out-of-range fields.
void validate_config(const SyntheticConfig& config);

struct SyntheticSample {
  int match_index = 0;
  RallyAnnotation annotation;
  std::vector<TokenGrid> features;  // one per shot
};

// One-hot direction for the shot type; requires dim > index_of(type).
std::vector<float> basis_vector(ShotType type, std::size_t dim);

// frames_per_shot x cells x embed_dim copies of the type's basis vector plus
// N(0, feature_noise_std) per element. `rng` is only drawn from when the noise
// is non-zero.
TokenGrid render_features(ShotType type, const SyntheticConfig& config, Rng& rng);

std::vector<SyntheticSample> generate_corpus(const SyntheticConfig& config,
                                             std::span<const TacticPattern> grammar);

// Groups samples into matches named synthetic_match_NN.
std::vector<MatchAnnotation> assemble_matches(const std::vector<SyntheticSample>& corpus,
                                              const SyntheticConfig& config);

// Writes annotations/<video>.json and features/<video>/rRRR_sSS.f32 under
// `root`; shot annotations reference their feature file relative to `root`.
std::vector<MatchAnnotation> write_dataset(const std::filesystem::path& root,
                                           const std::vector<SyntheticSample>& corpus,
                                           const SyntheticConfig& config);

// Caption templates.
std::string shot_caption(ShotType type);
std::string tactic_caption(TacticType type, std::span<const ShotType> shots,
                           std::span<const TacticState> states, bool finish_interrupted);
// Inclusive word-count range the tactic template can produce for `shots` shots.
std::pair<int, int> tactic_caption_length_bounds(int shots);
// Every word any template can emit.
std::vector<std::string> template_vocabulary();

}  // namespace s2t
