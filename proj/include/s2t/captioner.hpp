#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "s2t/annotation.hpp"
#include "s2t/config.hpp"
#include "s2t/losses.hpp"
#include "s2t/nn/layers.hpp"
#include "s2t/synthetic.hpp"
#include "s2t/text.hpp"

namespace s2t {

// Shot-wise: one (type, state_i) entry per shot. Flat: one composite entry.
struct Prompt {
  PromptMode mode = PromptMode::ShotWise;
  TacticType tactic_type = TacticType::ServeAndAttack;
  std::vector<TacticState> states;

  std::size_t size() const { return mode == PromptMode::ShotWise ? states.size() : 1; }
  bool operator==(const Prompt&) const = default;
};

// EmptyStates when `states` is empty.
Prompt build_prompt(TacticType type, std::span<const TacticState> states, PromptMode mode);
// "Prompt i: <Type> -- <State_i>" lines, or one "<Type> -- <S1> -- ... -- <Sn>" line.
std::vector<std::string> prompt_text(const Prompt& prompt);

PromptMode parse_prompt_mode(std::string_view s);  // ConfigError
std::string_view to_string(PromptMode m);

struct ShotPair {
  TokenGrid shot;
  std::vector<int> target;  // ids without bos/eos
};

struct TacticPair {
  std::vector<TokenGrid> shots;
  std::optional<Prompt> prompt;
  std::vector<int> target;
};

// Every shot with a caption, in corpus order.
std::vector<ShotPair> shot_pairs(const std::vector<SyntheticSample>& corpus, const Vocabulary& vocab);
// Every tactic unit; `prompt` empty means no prompt.
std::vector<TacticPair> tactic_pairs(const std::vector<SyntheticSample>& corpus, const Vocabulary& vocab,
                                     std::optional<PromptMode> prompt);
// Shot and tactic captions of the corpus, for Vocabulary::build.
std::vector<std::string> corpus_captions(const std::vector<SyntheticSample>& corpus);

class Captioner {
 public:
  using Tensor = nn::Tensor<float>;

  Captioner(const CaptionerConfig& cfg, Vocabulary vocab, std::uint64_t seed);
  Captioner(const Captioner&) = delete;
  Captioner& operator=(const Captioner&) = delete;
  Captioner(Captioner&&) = default;

  // (T*N) x D memory of one shot, per branch. ShapeError on bad geometry.
  Tensor encode_shot(const TokenGrid& shot) const;
  Tensor encode_tactic(std::span<const TokenGrid> shots) const;
  // Prompt tokens: size() x D. PromptLengthMismatch is checked by callers
  // that know the shot count.
  Tensor embed_prompt(const Prompt& prompt) const;

  // Teacher forcing: rows are positions of [bos, target...], columns the
  // vocabulary. Targets longer than the cap are truncated.
  Tensor shot_logits(const TokenGrid& shot, std::span<const int> target) const;
  Tensor tactic_logits(std::span<const TokenGrid> shots, const std::optional<Prompt>& prompt,
                       std::span<const int> target) const;

  // Decoded ids without bos/eos, at most the branch's length cap.
  std::vector<int> caption_shot(const TokenGrid& shot) const;
  std::vector<int> caption_tactic(std::span<const TokenGrid> shots, const std::optional<Prompt>& prompt) const;

  const CaptionerConfig& config() const { return cfg_; }
  CaptionerConfig& mutable_config() { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  nn::ParamStore<float>& params() { return store_; }
  const nn::ParamStore<float>& params() const { return store_; }
  // Every parameter of one branch ("shot." or "tactic." prefix).
  std::vector<Tensor> branch_params(std::string_view branch) const;

 private:
  struct Branch {
    std::optional<nn::LinearPatchEmbedder<float>> extractor;
    nn::PositionalTables<float> positions;
    nn::Encoder<float> encoder;
    Tensor token_embed;  // V x D
    Tensor target_pos;   // (max_len + 1) x D
    nn::Decoder<float> decoder;
    nn::Linear<float> out;
    int max_len = 0;
  };

  void build_branch(Branch& b, const std::string& name, int max_len, bool with_prompt, Rng& rng);
  Tensor encode(const Branch& b, const TokenGrid& shot) const;
  Tensor embed_targets(const Branch& b, std::span<const int> ids) const;
  Tensor logits(const Branch& b, const Tensor& memory, const Tensor& prompt, std::span<const int> target) const;
  std::vector<int> decode(const Branch& b, const Tensor& memory, const Tensor& prompt) const;
  Tensor tactic_prompt(std::span<const TokenGrid> shots, const std::optional<Prompt>& prompt) const;

  CaptionerConfig cfg_;
  Vocabulary vocab_;
  nn::ParamStore<float> store_;
  Branch shot_, tactic_;
  Tensor type_table_;   // 9 x D
  Tensor state_table_;  // 5 x D
  Tensor prompt_pos_;   // 9 x D shot-index positions
  Tensor flat_vec_;     // 1 x D
};

// Branch terms sum the CE over each caption (eos included) and average over
// the batch; the per-token values are for reporting.
struct JointLoss {
  nn::Tensor<float> total, shot, tactic;
  double shot_per_token = 0.0;
  double tactic_per_token = 0.0;
};

// lambda_sc * L_sc + lambda_tc * L_tc over the given batches. An empty batch
// contributes a zero term.
JointLoss joint_loss(const Captioner& model, std::span<const ShotPair* const> shots,
                     std::span<const TacticPair* const> tactics, const LossWeights& w);

struct CaptionEpoch {
  int epoch = 0;
  double loss = 0.0;  // means per step
  double shot_loss = 0.0;
  double tactic_loss = 0.0;
  double shot_token_loss = 0.0;
  double tactic_token_loss = 0.0;
  double last_lr = 0.0;
};

// Both branches step together; the shorter list is cycled. EmptyCorpus when
// both lists are empty.
std::vector<CaptionEpoch> train_captioners(Captioner& model, std::span<const ShotPair> shots,
                                           std::span<const TacticPair> tactics, const TrainConfig& train_cfg,
                                           const LossWeights& w,
                                           const std::function<void(const CaptionEpoch&)>& on_epoch = {});

// Vocabulary and config travel with the weights.
void save_captioner(const std::filesystem::path& path, const Captioner& model,
                    const nlohmann::json& extra = nlohmann::json::object());
Captioner load_captioner(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

}  // namespace s2t
