#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "boardrl/env.hpp"
#include "boardrl/reward.hpp"
#include "boardrl/rng.hpp"
#include "doctest.h"

using namespace boardrl;

TEST_CASE("effective error rates stack response and evidence penalties") {
  reward::NoisyEstimatorModel m;
  CHECK(m.effective_fp() == doctest::Approx(0.3));
  CHECK(m.effective_fn() == doctest::Approx(0.25));

  m.uses_response = true;
  CHECK(m.effective_fp() == doctest::Approx(0.45));
  CHECK(m.effective_fn() == doctest::Approx(0.25));

  m.evidence_mode = reward::EvidenceMode::FinalStateOnly;
  CHECK(m.effective_fp() == doctest::Approx(0.55));
  CHECK(m.effective_fn() == doctest::Approx(0.35));

  m.fp_rate = 0.95;
  CHECK(m.effective_fp() == 1.0);  // clamped
}

TEST_CASE("noisy votes flip labels at the configured rates") {
  reward::NoisyEstimatorModel m;
  m.fp_rate = 0.3;
  m.fn_rate = 0.25;
  Rng rng(555);
  const int n = 200000;
  int flipped_pos = 0, flipped_neg = 0;
  for (int i = 0; i < n; ++i) {
    if (reward::noisy_vote(m, 1, rng) == 0) ++flipped_pos;
    if (reward::noisy_vote(m, 0, rng) == 1) ++flipped_neg;
  }
  CHECK(std::abs(flipped_pos / double(n) - 0.25) < 0.004);
  CHECK(std::abs(flipped_neg / double(n) - 0.30) < 0.004);

  CHECK_THROWS_AS(reward::noisy_vote(m, 2, rng), std::invalid_argument);
}

TEST_CASE("vote aggregation truth table") {
  using reward::aggregate_votes;
  using reward::VoteScheme;

  CHECK(aggregate_votes({1}, VoteScheme::Single) == 1);
  CHECK(aggregate_votes({0}, VoteScheme::Single) == 0);
  CHECK_THROWS_AS(aggregate_votes({1, 0}, VoteScheme::Single), std::invalid_argument);
  CHECK_THROWS_AS(aggregate_votes({}, VoteScheme::Majority), std::invalid_argument);

  CHECK(aggregate_votes({1, 1, 0}, VoteScheme::Majority) == 1);
  CHECK(aggregate_votes({1, 0, 0}, VoteScheme::Majority) == 0);
  CHECK(aggregate_votes({1, 1, 0, 0}, VoteScheme::Majority) == 0);  // tie fails
  CHECK(aggregate_votes({1, 1, 1, 0}, VoteScheme::Majority) == 1);

  CHECK(aggregate_votes({1, 1, 1, 1}, VoteScheme::Unanimous) == 1);
  CHECK(aggregate_votes({1, 1, 1, 0}, VoteScheme::Unanimous) == 0);
  CHECK(aggregate_votes({1}, VoteScheme::Unanimous) == 1);
}

TEST_CASE("voted_reward records every ballot and is deterministic") {
  reward::NoisyEstimatorModel m;
  Rng a(77), b(77);
  auto r1 = reward::voted_reward(m, 1, 4, reward::VoteScheme::Unanimous, a);
  auto r2 = reward::voted_reward(m, 1, 4, reward::VoteScheme::Unanimous, b);
  REQUIRE(r1.votes.size() == 4);
  CHECK(r1.votes == r2.votes);
  CHECK(r1.result == reward::aggregate_votes(r1.votes, reward::VoteScheme::Unanimous));
  CHECK(r1.scheme == reward::VoteScheme::Unanimous);

  Rng c(1);
  CHECK_THROWS_AS(reward::voted_reward(m, 1, 0, reward::VoteScheme::Single, c),
                  std::invalid_argument);
}

TEST_CASE("unanimous voting suppresses false positives at the fp^n rate") {
  reward::NoisyEstimatorModel m;
  m.fp_rate = 0.3;
  m.fn_rate = 0.0;
  Rng rng(888);
  const int n = 200000;
  int false_pos = 0;
  for (int i = 0; i < n; ++i) {
    false_pos += reward::voted_reward(m, 0, 4, reward::VoteScheme::Unanimous, rng).result;
  }
  // P(all four votes wrong) = 0.3^4 = 0.0081
  CHECK(std::abs(false_pos / double(n) - 0.0081) < 0.0012);

  m.fn_rate = 0.25;
  int kept_pos = 0;
  for (int i = 0; i < n; ++i) {
    kept_pos += reward::voted_reward(m, 1, 4, reward::VoteScheme::Unanimous, rng).result;
  }
  // P(all four votes right) = 0.75^4 = 0.31640625
  CHECK(std::abs(kept_pos / double(n) - 0.31640625) < 0.004);
}

TEST_CASE("precision_recall counts and optional edge cases") {
  auto pr = reward::precision_recall({1, 1, 0, 0}, {1, 0, 1, 0});
  REQUIRE(pr.precision.has_value());
  REQUIRE(pr.recall.has_value());
  CHECK(*pr.precision == doctest::Approx(0.5));
  CHECK(*pr.recall == doctest::Approx(0.5));

  pr = reward::precision_recall({0, 0}, {1, 0});
  CHECK_FALSE(pr.precision.has_value());
  REQUIRE(pr.recall.has_value());
  CHECK(*pr.recall == 0.0);

  pr = reward::precision_recall({1, 0}, {0, 0});
  REQUIRE(pr.precision.has_value());
  CHECK(*pr.precision == 0.0);
  CHECK_FALSE(pr.recall.has_value());

  CHECK_THROWS_AS(reward::precision_recall({1}, {1, 0}), std::invalid_argument);
}

TEST_CASE("measured precision rises sharply under unanimous voting") {
  reward::NoisyEstimatorModel m;
  m.fp_rate = 0.3;
  m.fn_rate = 0.25;

  auto single = reward::measure_precision_recall(m, 1, reward::VoteScheme::Single, 100000, 0.5, 9);
  REQUIRE(single.precision.has_value());
  REQUIRE(single.recall.has_value());
  // precision = 0.75 / (0.75 + 0.30) = 0.714..., recall = 0.75
  CHECK(std::abs(*single.precision - 0.75 / 1.05) < 0.01);
  CHECK(std::abs(*single.recall - 0.75) < 0.01);

  auto unan = reward::measure_precision_recall(m, 4, reward::VoteScheme::Unanimous, 100000, 0.5, 9);
  REQUIRE(unan.precision.has_value());
  REQUIRE(unan.recall.has_value());
  CHECK(*unan.precision > 0.96);
  CHECK(*unan.precision > *single.precision + 0.2);
  CHECK(std::abs(*unan.recall - 0.31640625) < 0.01);

  reward::NoisyEstimatorModel clean;
  clean.fp_rate = 0.0;
  clean.fn_rate = 0.0;
  auto perfect = reward::measure_precision_recall(clean, 1, reward::VoteScheme::Single, 5000, 0.5, 9);
  CHECK(*perfect.precision == 1.0);
  CHECK(*perfect.recall == 1.0);

  reward::NoisyEstimatorModel mute;
  mute.fp_rate = 0.0;
  mute.fn_rate = 1.0;
  auto nothing = reward::measure_precision_recall(mute, 1, reward::VoteScheme::Single, 5000, 0.5, 9);
  CHECK_FALSE(nothing.precision.has_value());
  CHECK(*nothing.recall == 0.0);
}

TEST_CASE("oracle reward mirrors simulator verification") {
  env::EnvConfig cfg;
  env::Task t;
  t.id = "x";
  t.goal = {{0, 1}};
  t.feasible = true;
  t.board_widgets = cfg.num_widgets;
  t.board_values = cfg.num_values;

  env::Trajectory tr;
  tr.termination = env::Termination::Terminated;
  tr.final_board.widgets = {1, 0, 0, 0};
  CHECK(reward::oracle_reward(t, tr) == 1);
  CHECK(reward::oracle_reward(t, tr) == env::verify(t, tr));
  tr.final_board.widgets = {2, 0, 0, 0};
  CHECK(reward::oracle_reward(t, tr) == 0);
}

TEST_CASE("score replies parse only when the last line is a verdict") {
  using reward::parse_score_response;
  CHECK(parse_score_response("Some reasoning here.\nSCORE: 1\n") == 1);
  CHECK(parse_score_response("SCORE: 0") == 0);
  CHECK(parse_score_response("chatty\n\n  SCORE: 1  \n\n") == 1);
  CHECK_FALSE(parse_score_response("SCORE: 1\nbut wait, more text").has_value());
  CHECK_FALSE(parse_score_response("SCORE: 2").has_value());
  CHECK_FALSE(parse_score_response("score: 1").has_value());
  CHECK_FALSE(parse_score_response("SCORE: 1 maybe").has_value());
  CHECK_FALSE(parse_score_response("").has_value());
  CHECK_FALSE(parse_score_response("no verdict at all").has_value());
}

TEST_CASE("judge adapter retries malformed replies then gives up") {
  reward::NoisyEstimatorModel clean;
  clean.fp_rate = 0.0;
  clean.fn_rate = 0.0;

  reward::EvaluatorAdapter good{reward::make_stub_judge(clean, 1, 42)};
  CHECK(good.judge("set widget 0 to value 1", R"({"widgets":[1,0]})") == 1);
  reward::EvaluatorAdapter good0{reward::make_stub_judge(clean, 0, 42)};
  CHECK(good0.judge("set widget 0 to value 1", R"({"widgets":[0,0]})") == 0);

  int calls = 0;
  reward::JudgeTransport flaky = [&](const std::string&) {
    return ++calls == 1 ? std::string("hmm, thinking...") : std::string("SCORE: 1");
  };
  reward::EvaluatorAdapter retrying{flaky};
  CHECK(retrying.judge("i", "{}") == 1);
  CHECK(calls == 2);

  reward::JudgeTransport broken = [](const std::string&) { return "no verdict"; };
  reward::EvaluatorAdapter failing{broken, 1};
  CHECK_THROWS_AS(failing.judge("i", "{}"), reward::RewardParseError);
}
