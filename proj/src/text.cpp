#include "s2t/text.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "s2t/error.hpp"

namespace s2t {

namespace {

const std::string kUnkText = "<unk>";

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i) break;
    const std::string word = lower(text.substr(i, j - i));
    i = j;
    // [player] may carry trailing punctuation, e.g. "[PLAYER]'s" or "[PLAYER],".
    if (word.rfind("[player]", 0) == 0) {
      out.emplace_back(kPlayerToken);
      std::string rest;
      for (char c : word.substr(8)) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '-') rest.push_back(c);
      }
      if (!rest.empty()) out.push_back(std::move(rest));
      continue;
    }
    std::string clean;
    for (char c : word) {
      if (!std::ispunct(static_cast<unsigned char>(c)) || c == '-') clean.push_back(c);
    }
    if (!clean.empty()) out.push_back(std::move(clean));
  }
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) push(s);
  push(std::string(kPlayerToken));
}

void Vocabulary::push(std::string token) {
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(std::span<const std::string> captions, int min_frequency) {
  std::map<std::string, std::size_t> counts;
  for (const auto& c : captions) {
    for (auto& t : tokenize(c)) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (auto& [word, n] : sorted) {
    if (static_cast<int>(n) >= min_frequency && !v.ids_.count(word)) v.push(word);
  }
  return v;
}

int Vocabulary::id(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view caption) const {
  std::vector<int> ids;
  for (const auto& t : tokenize(caption)) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode_tokens(std::span<const int> ids) const {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kBos || id == kPad) continue;
    out.push_back(id == kUnk ? kUnkText : token(id));
  }
  return out;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  const auto toks = decode_tokens(ids);
  return detokenize(toks);
}

nlohmann::json Vocabulary::to_json() const { return nlohmann::json{{"tokens", tokens_}}; }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("tokens") || !j["tokens"].is_array()) {
    throw DataError("vocabulary: expected {\"tokens\": [...]}");
  }
  const auto toks = j["tokens"].get<std::vector<std::string>>();
  Vocabulary v;
  if (toks.size() < v.tokens_.size() || !std::equal(v.tokens_.begin(), v.tokens_.end(), toks.begin())) {
    throw DataError("vocabulary: special tokens missing or reordered");
  }
  for (std::size_t i = v.tokens_.size(); i < toks.size(); ++i) {
    if (v.ids_.count(toks[i])) throw DataError("vocabulary: duplicate token " + toks[i]);
    v.push(toks[i]);
  }
  return v;
}

}  // namespace s2t
