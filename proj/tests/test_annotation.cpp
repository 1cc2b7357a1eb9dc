#include <set>
#include <string>

#include "doctest.h"
#include "s2t/annotation.hpp"
#include "s2t/error.hpp"
#include "s2t/grammar.hpp"
#include "s2t/synthetic.hpp"
#include "json.hpp"

using namespace s2t;
using nlohmann::json;

namespace {

json minimal_doc() {
  json shots = json::array();
  const char* types[] = {"Smash", "Lift", "Smash", "Clear", "Smash"};
  for (int i = 0; i < 5; ++i) {
    shots.push_back({{"start", 1.0 + i}, {"end", 1.5 + i}, {"type", types[i]}, {"caption", "[PLAYER] hits hard"}});
  }
  json unit{{"first_shot", 0},
            {"last_shot", 4},
            {"type", "ContinuousSmashing"},
            {"states", {"Start", "Continue", "Continue", "Continue", "Finish"}},
            {"caption", "[PLAYER] keeps smashing"}};
  json rally{{"start", 0.5}, {"end", 7.0}, {"score", {3, 2}}, {"shots", shots}, {"tactics", {unit}}};
  return {{"video", "m1"}, {"rallies", {rally}}};
}

std::vector<MatchAnnotation> synthetic_matches(int rallies = 200, int matches = 10) {
  SyntheticConfig c;
  c.num_rallies = rallies;
  c.num_matches = matches;
  c.frames_per_shot = 1;
  c.grid_h = c.grid_w = 1;
  return assemble_matches(generate_corpus(c, default_grammar()), c);
}

}  // namespace

TEST_CASE("minimal document parses") {
  const auto m = parse_match(minimal_doc().dump());
  CHECK(m.video_id == "m1");
  REQUIRE(m.rallies.size() == 1);
  CHECK(m.rallies[0].shots.size() == 5);
  REQUIRE(m.rallies[0].tactic_units.size() == 1);
  CHECK(m.rallies[0].tactic_units[0].tactic_type == TacticType::ContinuousSmashing);
  CHECK(m.rallies[0].score == std::array<int, 2>{3, 2});
}

TEST_CASE("parse errors name the rule and path") {
  CHECK_THROWS_AS(parse_match("{\"video\": "), SyntaxError);

  auto d = minimal_doc();
  d["rallies"][0]["tactics"][0]["states"] = {"Start", "Continue", "Continue", "Continue", "Continue"};
  try {
    parse_match(d.dump());
    FAIL("expected InvariantError");
  } catch (const InvariantError& e) {
    CHECK(std::string(e.what()).find("last state must be Finish") != std::string::npos);
    CHECK(std::string(e.what()).find("rallies[0].tactics[0].states") != std::string::npos);
  }

  d = minimal_doc();
  d["rallies"][0]["bogus"] = 1;
  CHECK_THROWS_AS(parse_match(d.dump()), SchemaError);
  d = minimal_doc();
  d["rallies"][0].erase("score");
  CHECK_THROWS_AS(parse_match(d.dump()), SchemaError);
  d = minimal_doc();
  d["rallies"][0]["shots"][1]["type"] = "Kick";
  CHECK_THROWS_AS(parse_match(d.dump()), SchemaError);

  d = minimal_doc();
  d["rallies"][0]["tactics"][0]["states"] = {"Start", "Continue", "Resume", "Continue", "Finish"};
  CHECK_THROWS_AS(parse_match(d.dump()), InvariantError);
  d = minimal_doc();
  d["rallies"][0]["tactics"][0]["states"] = {"Start", "Continue", "Start", "Continue", "Finish"};
  CHECK_THROWS_AS(parse_match(d.dump()), InvariantError);
  d = minimal_doc();
  d["rallies"][0]["shots"][2]["start"] = 1.2;
  CHECK_THROWS_AS(parse_match(d.dump()), InvariantError);
  d = minimal_doc();
  d["rallies"][0]["tactics"][0]["last_shot"] = 3;
  CHECK_THROWS_AS(parse_match(d.dump()), InvariantError);
  d = minimal_doc();
  d["video"] = "";
  CHECK_THROWS_AS(parse_match(d.dump()), InvariantError);
  d = minimal_doc();
  d["rallies"][0]["end"] = 3.0;
  CHECK_THROWS_AS(parse_match(d.dump()), InvariantError);
}

TEST_CASE("strict mode checks shot caption length") {
  auto d = minimal_doc();
  d["rallies"][0]["shots"][0]["caption"] = "smash";
  CHECK_NOTHROW(parse_match(d.dump()));
  CHECK_THROWS_AS(parse_match(d.dump(), ParseOptions{true}), InvariantError);
  CHECK(caption_word_count("[PLAYER] smashes  cross-court") == 3);
}

TEST_CASE("round trip over a generated corpus") {
  SyntheticConfig c;
  c.frames_per_shot = 1;
  c.grid_h = c.grid_w = 1;
  const auto matches = assemble_matches(generate_corpus(c, default_grammar()), c);
  std::size_t units = 0;
  for (const auto& m : matches) {
    const auto again = parse_match(serialize_match(m), ParseOptions{true});
    CHECK(again == m);
    for (const auto& r : m.rallies) units += r.tactic_units.size();
  }
  CHECK(units > 500);
}

TEST_CASE("split counts and match-disjoint splits") {
  auto c10 = split_counts(10, {});
  CHECK(c10.train == 7);
  CHECK(c10.val == 1);
  CHECK(c10.test == 2);
  auto c3 = split_counts(3, {});
  CHECK(c3.train == 1);
  CHECK(c3.val == 1);
  CHECK(c3.test == 1);
  CHECK_THROWS_AS(split_counts(2, {}), TooFewMatches);
  CHECK_THROWS_AS(split_counts(5, SplitRatios{0.5, 0.5, 0.5}), ConfigError);

  const auto matches = synthetic_matches();
  const auto a = split_by_match(matches, {}, 42);
  const auto b = split_by_match(matches, {}, 42);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  std::set<std::string> seen;
  std::size_t total = 0;
  for (const auto* part : {&a.train, &a.val, &a.test}) {
    for (const auto& m : *part) {
      CHECK(seen.insert(m.video_id).second);
      ++total;
    }
  }
  CHECK(total == matches.size());
  CHECK(a.train.size() == 7);
}

TEST_CASE("dataset statistics") {
  MatchAnnotation m;
  m.video_id = "x";
  RallyAnnotation r;
  r.start_s = 0;
  r.end_s = 10;
  r.shots.push_back({0, 1, ShotType::Smash, "a b", {}});
  r.shots.push_back({1, 2, ShotType::Lift, "a b c", {}});
  m.rallies.push_back(r);
  const auto s = dataset_stats({m});
  CHECK(s.shot.count == 2);
  CHECK(s.shot.mean_length == doctest::Approx(2.5));
  CHECK(s.shot.word_frequency.front() == std::pair<std::string, std::size_t>{"a", 2});
  CHECK(s.shot.length_histogram == std::vector<std::size_t>{1, 1});
  const auto empty = dataset_stats({});
  CHECK(empty.shot.length_histogram.empty());
  CHECK(empty.tactic.count == 0);

  // tactic lengths stay within the template bounds
  const auto matches = synthetic_matches(300, 5);
  for (const auto& mm : matches) {
    for (const auto& rr : mm.rallies) {
      for (const auto& u : rr.tactic_units) {
        const auto [lo, hi] = tactic_caption_length_bounds(u.length());
        const int n = caption_word_count(u.caption);
        CHECK(n >= lo);
        CHECK(n <= hi);
      }
    }
  }
  const auto j = json::parse(dataset_stats_json(dataset_stats(matches)));
  CHECK(j.contains("shot"));
  CHECK(j.contains("tactic"));
}
