#include <cmath>
#include <functional>
#include <sstream>

#include "doctest.h"
#include "s2t/error.hpp"
#include "s2t/metrics.hpp"
#include "s2t/rng.hpp"

using namespace s2t;
using doctest::Approx;

namespace {

Tokens T(const std::string& s) {
  Tokens out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::vector<EvalPair> one(const std::string& c, const std::string& r) { return {EvalPair{T(c), {T(r)}}}; }

// LCS by trying every subsequence of a
std::size_t brute_lcs(const Tokens& a, const Tokens& b) {
  std::size_t best = 0;
  for (unsigned mask = 0; mask < (1u << a.size()); ++mask) {
    Tokens sub;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (mask >> i & 1u) sub.push_back(a[i]);
    std::size_t j = 0;
    for (const auto& w : b)
      if (j < sub.size() && sub[j] == w) ++j;
    if (j == sub.size()) best = std::max(best, sub.size());
  }
  return best;
}

// Every injective exact-match alignment; most matches, then fewest chunks.
std::pair<std::size_t, std::size_t> brute_align(const Tokens& c, const Tokens& r) {
  std::pair<std::size_t, std::size_t> best{0, 0};
  std::vector<int> map(c.size(), -1);
  std::vector<bool> used(r.size(), false);
  std::function<void(std::size_t)> go = [&](std::size_t i) {
    if (i == c.size()) {
      std::size_t m = 0, ch = 0;
      int prev_c = -2, prev_r = -2;
      for (std::size_t k = 0; k < c.size(); ++k) {
        if (map[k] < 0) continue;
        ++m;
        if (!(static_cast<int>(k) == prev_c + 1 && map[k] == prev_r + 1)) ++ch;
        prev_c = static_cast<int>(k);
        prev_r = map[k];
      }
      if (m > best.first || (m == best.first && m > 0 && ch < best.second)) best = {m, ch};
      return;
    }
    go(i + 1);
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (!used[j] && r[j] == c[i]) {
        used[j] = true;
        map[i] = static_cast<int>(j);
        go(i + 1);
        map[i] = -1;
        used[j] = false;
      }
    }
  };
  go(0);
  return best;
}

Tokens random_tokens(Rng& rng, std::size_t max_len, std::size_t alphabet) {
  Tokens t;
  const std::size_t n = rng.index(max_len + 1);
  for (std::size_t i = 0; i < n; ++i) t.push_back(std::string(1, static_cast<char>('a' + rng.index(alphabet))));
  return t;
}

}  // namespace

TEST_CASE("bleu examples") {
  const auto same = one("the cat sat on the mat", "the cat sat on the mat");
  for (int n = 1; n <= 4; ++n) CHECK(bleu(same, n) == Approx(1.0));
  CHECK(bleu(one("x y z w", "the cat sat on"), 1) == 0.0);
  const auto clip = one("the the the the the the the", "the cat is on the mat");
  const auto mp = modified_precision(clip, 1);
  CHECK(mp.clipped == 2);
  CHECK(mp.total == 7);
  CHECK(bleu(clip, 1) == Approx(2.0 / 7.0));
  // brevity penalty: 4 tokens against a 5-token reference
  CHECK(bleu(one("a b c d", "a b c d e"), 4) == Approx(std::exp(1.0 - 5.0 / 4.0)));
  CHECK_THROWS_AS(bleu(std::vector<EvalPair>{}, 1), EmptyCorpus);
  CHECK_THROWS_AS(bleu(same, 5), DomainError);
  // repeating a matched unigram never adds clipped matches
  auto a = modified_precision(one("the cat", "the cat"), 1);
  auto b = modified_precision(one("the cat the", "the cat"), 1);
  CHECK(b.clipped <= a.clipped);
}

TEST_CASE("rouge-l examples and brute-force agreement") {
  CHECK(rouge_l(one("a b c", "a b c")) == Approx(1.0));
  CHECK(rouge_l(one("x y", "a b c")) == 0.0);
  const double p = 1.0, r = 0.75, b2 = 1.44;
  CHECK(lcs_length(T("a c d"), T("a b c d")) == 3);
  CHECK(rouge_l(one("a c d", "a b c d")) == Approx((1 + b2) * p * r / (r + b2 * p)));
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const auto x = random_tokens(rng, 12, 4);
    const auto y = random_tokens(rng, 12, 4);
    REQUIRE(lcs_length(x, y) == brute_lcs(x, y));
  }
}

TEST_CASE("cider on a three-document corpus") {
  std::vector<EvalPair> pairs{{T("a b"), {T("a b")}}, {T("a c"), {T("a d")}}, {T("b"), {T("c")}}};
  // unigram df: a 2, b 1, c 1, d 1 over N = 3; bigram df: "a b" 1, "a d" 1
  const double la = std::log(3.0 / 2.0), l3 = std::log(3.0);
  const double p1 = (1.0 + 1.0) / 4.0;
  const double p2 = (la * la / (la * la + l3 * l3)) / 4.0;
  const double p3 = 0.0;
  std::vector<double> per;
  CHECK(std::abs(cider(pairs, &per) - (p1 + p2 + p3) / 3.0) < 1e-9);
  REQUIRE(per.size() == 3);
  CHECK(std::abs(per[0] - p1) < 1e-9);
  CHECK(std::abs(per[1] - p2) < 1e-9);
  CHECK(per[2] == 0.0);
  CHECK_THROWS_AS(cider(one("a", "a")), CorpusTooSmall);
}

TEST_CASE("meteor-lite examples and brute-force alignment") {
  CHECK(meteor_lite(one("a b c d", "a b c d")) == Approx(0.9921875));
  CHECK(meteor_lite(one("a b", "c d")) == 0.0);
  CHECK(meteor_lite(one("a", "a")) == Approx(0.5));
  // two chunks, four matches
  CHECK(meteor_lite(one("a b c d", "c d a b")) == Approx(1.0 - 0.5 * std::pow(0.5, 3)));
  // P = 1/2, R = 1/3, one chunk of one match
  CHECK(meteor_lite_pair(T("a x"), T("a y z")) ==
        Approx(10 * 0.5 / 3 / (1.0 / 3 + 9 * 0.5) * (1 - 0.5)));
  CHECK(meteor_lite(std::vector<EvalPair>{}) == 0.0);
  Rng rng(9);
  for (int i = 0; i < 400; ++i) {
    const auto c = random_tokens(rng, 6, 3);
    const auto r = random_tokens(rng, 6, 3);
    const auto got = meteor_align(c, r);
    const auto want = brute_align(c, r);
    CHECK(got.exhaustive);
    REQUIRE(got.matches == want.first);
    REQUIRE(got.chunks == want.second);
  }
}

TEST_CASE("unigram precision and recall") {
  auto pr = unigram_pr(one("a b c", "a b c"));
  CHECK(pr.precision == 1.0);
  CHECK(pr.recall == 1.0);
  pr = unigram_pr(one("a b", "a b c d"));
  CHECK(pr.precision == 1.0);
  CHECK(pr.recall == 0.5);
  // clipped: a min(2,1) + b min(1,2) = 2 of 4 and 5; then c min(1,2) = 1 of 1 and 2
  std::vector<EvalPair> pairs{{T("a a b x"), {T("a b b c d")}}, {T("c"), {T("c c")}}};
  pr = unigram_pr(pairs);
  CHECK(pr.precision == Approx(3.0 / 5.0));
  CHECK(pr.recall == Approx(3.0 / 7.0));
  CHECK_THROWS_AS(unigram_pr(std::vector<EvalPair>{}), EmptyCorpus);
}

TEST_CASE("full report") {
  std::vector<EvalPair> pairs{{T("[PLAYER] smashes hard"), {T("[PLAYER] smashes hard")}},
                              {T("[PLAYER] lifts deep"), {T("[PLAYER] lifts high")}}};
  const auto r = evaluate_pairs(pairs, "shot");
  CHECK(r.pairs == 2);
  CHECK(r.bleu[0] == Approx(5.0 / 6.0));
  CHECK(r.rouge_l <= 1.0);
  CHECK(r.cider >= 0.0);
  const auto j = report_json(r);
  CHECK(j["granularity"] == "shot");
  std::vector<MetricReport> rows{r};
  CHECK(report_table(rows).find("shot") != std::string::npos);
}
