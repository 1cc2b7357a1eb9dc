#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace s2t {

inline constexpr std::string_view kPlayerToken = "[PLAYER]";

// Lowercase, split on whitespace, strip punctuation except hyphens. The
// literal [PLAYER] (any case) survives as one token.
std::vector<std::string> tokenize(std::string_view text);
std::string detokenize(std::span<const std::string> tokens);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kPlayer = 4;

  Vocabulary();  // specials only

  // Words seen at least `min_frequency` times, by descending count then
  // alphabetically.
  static Vocabulary build(std::span<const std::string> captions, int min_frequency = 2);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(std::string_view token) const;  // kUnk when absent
  const std::string& token(int id) const;
  bool is_special(int id) const { return id >= 0 && id < kPlayer; }

  // Token ids without bos/eos.
  std::vector<int> encode(std::string_view caption) const;
  // Stops at eos, skips bos/pad; unk renders as "<unk>".
  std::string decode(std::span<const int> ids) const;
  std::vector<std::string> decode_tokens(std::span<const int> ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void push(std::string token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace s2t
