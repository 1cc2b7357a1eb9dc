#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace s2t {

using Tokens = std::vector<std::string>;

struct EvalPair {
  Tokens candidate;
  std::vector<Tokens> references;  // non-empty
};

// Clipped n-gram matches and candidate n-gram total over the corpus.
struct NgramCounts {
  std::size_t clipped = 0;
  std::size_t total = 0;
};
NgramCounts modified_precision(std::span<const EvalPair> pairs, int n);

// Corpus BLEU-n, no smoothing. EmptyCorpus on no pairs, DomainError unless
// 1 <= n <= 4.
double bleu(std::span<const EvalPair> pairs, int n);
// Per-sentence diagnostic with add-one smoothing on orders >= 2.
double sentence_bleu(const EvalPair& pair, int n);

std::size_t lcs_length(const Tokens& a, const Tokens& b);
// Corpus mean of the per-pair LCS F-measure (best reference).
double rouge_l(std::span<const EvalPair> pairs, double beta = 1.2);

// Mean over n = 1..4 of TF-IDF cosine similarity; idf = log(|corpus| / df)
// with df counted over reference sets and floored at 1. CorpusTooSmall
// below two pairs. `per_pair` receives each pair's score when given.
double cider(std::span<const EvalPair> pairs, std::vector<double>* per_pair = nullptr);

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  bool exhaustive = true;  // false when the search budget ran out
};
// Exact-match alignment with the most matches, then the fewest chunks.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference, std::size_t node_budget = 200000);
double meteor_lite_pair(const Tokens& candidate, const Tokens& reference);
// Corpus mean; 0 for an empty corpus.
double meteor_lite(std::span<const EvalPair> pairs);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};
// Micro-averaged clipped unigram precision and recall.
PrecisionRecall unigram_pr(std::span<const EvalPair> pairs);

struct MetricReport {
  std::string granularity;  // shot | tactic
  std::size_t pairs = 0;
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;
  double cider = 0.0;
  double meteor_lite = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

MetricReport evaluate_pairs(std::span<const EvalPair> pairs, const std::string& granularity);
nlohmann::json report_json(const MetricReport& r);
// Fixed-width table, one row per report, scores x100 except CIDEr.
std::string report_table(std::span<const MetricReport> reports);

}  // namespace s2t
