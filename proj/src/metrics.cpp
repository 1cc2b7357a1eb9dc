#include "s2t/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <unordered_map>

#include "s2t/error.hpp"

namespace s2t {

namespace {

using Ngram = std::vector<std::string>;
using NgramMap = std::map<Ngram, std::size_t>;

NgramMap ngrams(const Tokens& t, int n) {
  NgramMap m;
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + un <= t.size(); ++i) ++m[Ngram(t.begin() + static_cast<std::ptrdiff_t>(i),
                                                            t.begin() + static_cast<std::ptrdiff_t>(i + un))];
  return m;
}

void require_pairs(std::span<const EvalPair> pairs) {
  if (pairs.empty()) throw EmptyCorpus("metric over an empty corpus");
  for (const auto& p : pairs) {
    if (p.references.empty()) throw DataError("evaluation pair without references");
  }
}

// Reference length closest to c, ties to the shorter one.
std::size_t closest_ref_length(const EvalPair& p) {
  std::size_t best = p.references.front().size();
  const std::size_t c = p.candidate.size();
  for (const auto& r : p.references) {
    const auto d = [c](std::size_t x) { return x > c ? x - c : c - x; };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  return best;
}

NgramCounts pair_counts(const EvalPair& p, int n) {
  const NgramMap cand = ngrams(p.candidate, n);
  NgramMap max_ref;
  for (const auto& r : p.references) {
    for (const auto& [g, c] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
  }
  NgramCounts out;
  for (const auto& [g, c] : cand) {
    out.total += c;
    const auto it = max_ref.find(g);
    if (it != max_ref.end()) out.clipped += std::min(c, it->second);
  }
  return out;
}

}  // namespace

NgramCounts modified_precision(std::span<const EvalPair> pairs, int n) {
  NgramCounts total;
  for (const auto& p : pairs) {
    const auto c = pair_counts(p, n);
    total.clipped += c.clipped;
    total.total += c.total;
  }
  return total;
}

double bleu(std::span<const EvalPair> pairs, int n) {
  if (n < 1 || n > 4) throw DomainError("BLEU order must be 1..4");
  require_pairs(pairs);
  double log_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    const auto c = modified_precision(pairs, k);
    if (c.clipped == 0 || c.total == 0) return 0.0;
    log_sum += std::log(static_cast<double>(c.clipped) / static_cast<double>(c.total));
  }
  std::size_t cand_len = 0, ref_len = 0;
  for (const auto& p : pairs) {
    cand_len += p.candidate.size();
    ref_len += closest_ref_length(p);
  }
  const double bp = cand_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len)) : 1.0;
  return bp * std::exp(log_sum / n);
}

double sentence_bleu(const EvalPair& pair, int n) {
  if (n < 1 || n > 4) throw DomainError("BLEU order must be 1..4");
  if (pair.references.empty()) throw DataError("evaluation pair without references");
  if (pair.candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    const auto c = pair_counts(pair, k);
    double num = static_cast<double>(c.clipped), den = static_cast<double>(c.total);
    if (k >= 2) {
      num += 1.0;
      den += 1.0;
    }
    if (num == 0.0) return 0.0;
    log_sum += std::log(num / den);
  }
  const double c = static_cast<double>(pair.candidate.size());
  const double r = static_cast<double>(closest_ref_length(pair));
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / n);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const EvalPair> pairs, double beta) {
  require_pairs(pairs);
  const double b2 = beta * beta;
  double total = 0.0;
  for (const auto& p : pairs) {
    double best = 0.0;
    for (const auto& r : p.references) {
      const auto l = static_cast<double>(lcs_length(p.candidate, r));
      if (l == 0.0) continue;
      const double prec = l / static_cast<double>(p.candidate.size());
      const double rec = l / static_cast<double>(r.size());
      best = std::max(best, (1.0 + b2) * prec * rec / (rec + b2 * prec));
    }
    total += best;
  }
  return total / static_cast<double>(pairs.size());
}

double cider(std::span<const EvalPair> pairs, std::vector<double>* per_pair) {
  require_pairs(pairs);
  if (pairs.size() < 2) throw CorpusTooSmall("CIDEr needs at least two pairs for document frequencies");
  const double n_docs = static_cast<double>(pairs.size());
  std::vector<double> scores(pairs.size(), 0.0);
  for (int n = 1; n <= 4; ++n) {
    std::map<Ngram, std::size_t> df;
    for (const auto& p : pairs) {
      std::set<Ngram> seen;
      for (const auto& r : p.references) {
        for (const auto& [g, _] : ngrams(r, n)) seen.insert(g);
      }
      for (const auto& g : seen) ++df[g];
    }
    const auto vec = [&](const Tokens& t) {
      std::map<Ngram, double> v;
      for (const auto& [g, c] : ngrams(t, n)) {
        const auto it = df.find(g);
        const double d = it == df.end() ? 1.0 : std::max<double>(1.0, static_cast<double>(it->second));
        v[g] = static_cast<double>(c) * std::log(n_docs / d);
      }
      return v;
    };
    const auto norm = [](const std::map<Ngram, double>& v) {
      double s = 0.0;
      for (const auto& [_, x] : v) s += x * x;
      return std::sqrt(s);
    };
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto cv = vec(pairs[i].candidate);
      const double cn = norm(cv);
      double sim = 0.0;
      for (const auto& r : pairs[i].references) {
        const auto rv = vec(r);
        const double rn = norm(rv);
        if (cn == 0.0 || rn == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, x] : cv) {
          const auto it = rv.find(g);
          if (it != rv.end()) dot += x * it->second;
        }
        sim += dot / (cn * rn);
      }
      scores[i] += sim / static_cast<double>(pairs[i].references.size()) / 4.0;
    }
  }
  double total = 0.0;
  for (double s : scores) total += s;
  if (per_pair) *per_pair = scores;
  return total / n_docs;
}

namespace {

struct AlignSearch {
  const Tokens& cand;
  const Tokens& ref;
  std::vector<std::vector<std::size_t>> options;  // ref positions per candidate token
  std::unordered_map<std::string, std::size_t> skips_left;  // unmatched candidate occurrences allowed per word
  std::vector<bool> used;
  std::size_t budget;
  std::size_t nodes = 0;
  std::size_t best_chunks = SIZE_MAX;
  bool exhausted = false;

  void run(std::size_t i, long prev_ref, std::size_t chunks) {
    if (++nodes > budget) {
      exhausted = true;
      return;
    }
    if (chunks >= best_chunks) return;
    if (i == cand.size()) {
      best_chunks = chunks;
      return;
    }
    const auto& opts = options[i];
    // Continuing the current chunk first finds good bounds early.
    if (prev_ref >= 0) {
      const auto next = static_cast<std::size_t>(prev_ref + 1);
      if (next < ref.size() && !used[next] && ref[next] == cand[i]) {
        used[next] = true;
        run(i + 1, static_cast<long>(next), chunks);
        used[next] = false;
        if (exhausted) return;
      }
    }
    for (std::size_t j : opts) {
      if (used[j] || (prev_ref >= 0 && j == static_cast<std::size_t>(prev_ref + 1))) continue;
      used[j] = true;
      run(i + 1, static_cast<long>(j), chunks + 1);
      used[j] = false;
      if (exhausted) return;
    }
    auto it = skips_left.find(cand[i]);
    if (it == skips_left.end() || it->second == 0) {
      if (!opts.empty()) return;
      run(i + 1, -1, chunks);
      return;
    }
    --it->second;
    run(i + 1, -1, chunks);
    ++it->second;
  }
};

}  // namespace

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference, std::size_t node_budget) {
  std::unordered_map<std::string, std::size_t> cc, rc;
  for (const auto& t : candidate) ++cc[t];
  for (const auto& t : reference) ++rc[t];
  MeteorAlignment out;
  for (const auto& [w, c] : cc) {
    const auto it = rc.find(w);
    if (it != rc.end()) out.matches += std::min(c, it->second);
  }
  if (out.matches == 0) return out;

  // Greedy left-to-right alignment preferring chunk continuation: an upper
  // bound on chunks when the exhaustive search runs out of budget.
  std::size_t greedy_chunks = 0;
  {
    std::vector<bool> used(reference.size(), false);
    std::unordered_map<std::string, std::size_t> left = rc;
    long prev = -1;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      auto& l = left[candidate[i]];
      if (l == 0) {
        prev = -1;
        continue;
      }
      long pick = -1;
      if (prev >= 0 && static_cast<std::size_t>(prev + 1) < reference.size() && !used[prev + 1] &&
          reference[prev + 1] == candidate[i]) {
        pick = prev + 1;
      } else {
        for (std::size_t j = 0; j < reference.size(); ++j) {
          if (!used[j] && reference[j] == candidate[i]) {
            pick = static_cast<long>(j);
            break;
          }
        }
        ++greedy_chunks;
      }
      used[static_cast<std::size_t>(pick)] = true;
      --l;
      prev = pick;
    }
  }

  AlignSearch s{candidate, reference, {}, {}, std::vector<bool>(reference.size(), false), node_budget};
  s.options.resize(candidate.size());
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    for (std::size_t j = 0; j < reference.size(); ++j) {
      if (reference[j] == candidate[i]) s.options[i].push_back(j);
    }
  }
  for (const auto& [w, c] : cc) {
    const auto it = rc.find(w);
    const std::size_t r = it == rc.end() ? 0 : it->second;
    if (r > 0 && c > r) s.skips_left[w] = c - r;
  }
  s.best_chunks = greedy_chunks + 1;
  s.run(0, -1, 0);
  out.chunks = std::min(s.best_chunks, greedy_chunks);
  out.exhaustive = !s.exhausted;
  return out;
}

double meteor_lite_pair(const Tokens& candidate, const Tokens& reference) {
  const auto a = meteor_align(candidate, reference);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(a.chunks) / m;
  return fmean * (1.0 - 0.5 * frag * frag * frag);
}

double meteor_lite(std::span<const EvalPair> pairs) {
  if (pairs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& p : pairs) {
    double best = 0.0;
    for (const auto& r : p.references) best = std::max(best, meteor_lite_pair(p.candidate, r));
    total += best;
  }
  return total / static_cast<double>(pairs.size());
}

PrecisionRecall unigram_pr(std::span<const EvalPair> pairs) {
  require_pairs(pairs);
  std::size_t matched = 0, cand_total = 0, ref_total = 0;
  for (const auto& p : pairs) {
    const auto cand = ngrams(p.candidate, 1);
    std::size_t best_m = 0, best_len = p.references.front().size();
    bool first = true;
    for (const auto& r : p.references) {
      const auto rm = ngrams(r, 1);
      std::size_t m = 0;
      for (const auto& [g, c] : cand) {
        const auto it = rm.find(g);
        if (it != rm.end()) m += std::min(c, it->second);
      }
      if (first || m > best_m || (m == best_m && r.size() < best_len)) {
        best_m = m;
        best_len = r.size();
        first = false;
      }
    }
    matched += best_m;
    cand_total += p.candidate.size();
    ref_total += best_len;
  }
  PrecisionRecall out;
  out.precision = cand_total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(cand_total);
  out.recall = ref_total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(ref_total);
  return out;
}

MetricReport evaluate_pairs(std::span<const EvalPair> pairs, const std::string& granularity) {
  MetricReport r;
  r.granularity = granularity;
  r.pairs = pairs.size();
  for (int n = 1; n <= 4; ++n) r.bleu[static_cast<std::size_t>(n - 1)] = bleu(pairs, n);
  r.rouge_l = rouge_l(pairs);
  r.cider = pairs.size() >= 2 ? cider(pairs) : 0.0;
  r.meteor_lite = meteor_lite(pairs);
  const auto pr = unigram_pr(pairs);
  r.precision = pr.precision;
  r.recall = pr.recall;
  return r;
}

nlohmann::json report_json(const MetricReport& r) {
  return {{"granularity", r.granularity}, {"pairs", r.pairs},       {"bleu1", r.bleu[0]},
          {"bleu2", r.bleu[1]},           {"bleu3", r.bleu[2]},     {"bleu4", r.bleu[3]},
          {"rouge_l", r.rouge_l},         {"cider", r.cider},       {"meteor_lite", r.meteor_lite},
          {"precision", r.precision},     {"recall", r.recall},
          {"note", "meteor_lite uses exact unigram matches only; not comparable to standard METEOR"}};
}

std::string report_table(std::span<const MetricReport> reports) {
  std::string out = "granularity   B1     B2     B3     B4     ROUGE-L  CIDEr   METEOR-lite  P      R\n";
  char line[256];
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-12s %6.2f %6.2f %6.2f %6.2f %7.2f  %6.3f  %8.2f    %6.2f %6.2f\n",
                  r.granularity.c_str(), 100 * r.bleu[0], 100 * r.bleu[1], 100 * r.bleu[2], 100 * r.bleu[3],
                  100 * r.rouge_l, r.cider, 100 * r.meteor_lite, 100 * r.precision, 100 * r.recall);
    out += line;
  }
  return out;
}

}  // namespace s2t
