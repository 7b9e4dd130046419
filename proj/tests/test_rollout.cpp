#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "boardrl/env.hpp"
#include "boardrl/policy.hpp"
#include "boardrl/reward.hpp"
#include "boardrl/rng.hpp"
#include "boardrl/rollout.hpp"
#include "doctest.h"

using namespace boardrl;

namespace {

env::Task feasible_task(const env::EnvConfig& cfg, const std::string& id = "roll-0") {
  env::Task t;
  t.id = id;
  t.goal = {{0, 1}, {2, 2}};
  t.feasible = true;
  t.board_widgets = cfg.num_widgets;
  t.board_values = cfg.num_values;
  return t;
}

rollout::RolloutContext make_ctx(const env::EnvConfig& cfg) {
  rollout::RolloutContext ctx(cfg);
  ctx.sampling.top_p = 1.0;
  ctx.sampling.temperature = 1.0;
  return ctx;
}

bool traj_equal(const env::Trajectory& a, const env::Trajectory& b) {
  if (a.task_id != b.task_id || a.termination != b.termination ||
      !(a.final_board == b.final_board) || a.steps.size() != b.steps.size() ||
      a.snapshot_id != b.snapshot_id) {
    return false;
  }
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    if (a.steps[i].tokens != b.steps[i].tokens) return false;
    if (a.steps[i].logprobs != b.steps[i].logprobs) return false;
    if (!(a.steps[i].action == b.steps[i].action)) return false;
    if (!(a.steps[i].obs.board == b.steps[i].obs.board)) return false;
  }
  return true;
}

// Deterministic, trajectory-dependent reward that does not consult the rng:
// step-count parity mixes rewards within almost every group.
rollout::RewardFn parity_reward() {
  return [](const env::Task&, const env::Trajectory& traj, Rng&) {
    return rollout::RewardOutcome{static_cast<int>(traj.steps.size() % 2), std::nullopt};
  };
}

rollout::RewardFn constant_reward(int value) {
  return [value](const env::Task&, const env::Trajectory&, Rng&) {
    return rollout::RewardOutcome{value, std::nullopt};
  };
}

}  // namespace

TEST_CASE("task cycler deals every task once per pass in seeded order") {
  env::EnvConfig cfg;
  std::vector<env::Task> tasks;
  for (int i = 0; i < 5; ++i) tasks.push_back(feasible_task(cfg, "t" + std::to_string(i)));

  rollout::TaskCycler a(tasks, 13), b(tasks, 13);
  std::vector<std::string> order_a, order_b;
  for (int i = 0; i < 15; ++i) {
    order_a.push_back(a.next().id);
    order_b.push_back(b.next().id);
  }
  CHECK(order_a == order_b);
  CHECK(a.consumed() == 15);

  for (int pass = 0; pass < 3; ++pass) {
    std::set<std::string> seen(order_a.begin() + 5 * pass, order_a.begin() + 5 * (pass + 1));
    CHECK(seen.size() == 5);
  }

  rollout::TaskCycler c(tasks, 14);
  std::vector<std::string> order_c;
  for (int i = 0; i < 15; ++i) order_c.push_back(c.next().id);
  CHECK(order_a != order_c);

  CHECK_THROWS_AS(rollout::TaskCycler({}, 1), std::invalid_argument);
}

TEST_CASE("episodes are deterministic and structurally sound") {
  env::EnvConfig cfg;
  auto ctx = make_ctx(cfg);
  auto task = feasible_task(cfg);
  auto triplet = policy::make_triplet(policy::zero_params(ctx.feat.vocab, ctx.feat.dim()));

  auto t1 = rollout::run_episode(triplet, ctx, task, 42);
  auto t2 = rollout::run_episode(triplet, ctx, task, 42);
  CHECK(traj_equal(t1, t2));
  CHECK_FALSE(traj_equal(t1, rollout::run_episode(triplet, ctx, task, 43)));

  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto tr = rollout::run_episode(triplet, ctx, task, seed);
    CHECK(tr.task_id == task.id);
    CHECK(tr.snapshot_id == triplet.snapshot_id);
    REQUIRE_FALSE(tr.steps.empty());
    CHECK(tr.steps.size() <= static_cast<std::size_t>(cfg.max_steps));

    for (std::size_t i = 0; i < tr.steps.size(); ++i) {
      const auto& s = tr.steps[i];
      CHECK(s.obs.step_index == static_cast<int>(i));
      REQUIRE(s.logprobs.size() == s.tokens.size());
      auto parsed = ctx.grammar.parse(s.tokens);
      REQUIRE(parsed.has_value());  // masked sampling always yields legal actions
      CHECK(*parsed == s.action);
    }

    switch (tr.termination) {
      case env::Termination::Terminated:
        CHECK(tr.steps.back().action.verb == env::Verb::Terminate);
        break;
      case env::Termination::FailedDeclared:
        CHECK(tr.steps.back().action.verb == env::Verb::Fail);
        break;
      case env::Termination::StepLimit:
        CHECK(tr.steps.size() == static_cast<std::size_t>(cfg.max_steps));
        break;
    }
    CHECK(env::replay(tr, cfg) == tr.final_board);
  }
}

TEST_CASE("unmasked sampling substitutes NOOP for malformed runs") {
  env::EnvConfig cfg;
  auto ctx = make_ctx(cfg);
  ctx.mask_sampling = false;
  auto task = feasible_task(cfg);
  auto triplet = policy::make_triplet(policy::zero_params(ctx.feat.vocab, ctx.feat.dim()));

  int malformed = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto tr = rollout::run_episode(triplet, ctx, task, seed);
    for (const auto& s : tr.steps) {
      if (!ctx.grammar.parse(s.tokens).has_value()) {
        ++malformed;
        CHECK(s.action == env::ActionToken{env::Verb::Noop, -1});
      }
    }
    CHECK(env::replay(tr, cfg) == tr.final_board);
  }
  CHECK(malformed > 0);  // a uniform policy produces plenty of garbage
}

TEST_CASE("a policy biased toward a terminal verb ends episodes immediately") {
  env::EnvConfig cfg;
  auto ctx = make_ctx(cfg);
  auto task = feasible_task(cfg);

  auto params = policy::zero_params(ctx.feat.vocab, ctx.feat.dim());
  params.weights.row(policy::Vocab::kTerminate).setConstant(3.0);
  auto triplet = policy::make_triplet(params);

  int terminated = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto tr = rollout::run_episode(triplet, ctx, task, seed);
    if (tr.termination == env::Termination::Terminated && tr.steps.size() == 1) ++terminated;
  }
  CHECK(terminated > 15);
}

TEST_CASE("groups are deterministic and invariant to the worker count") {
  env::EnvConfig cfg;
  auto ctx = make_ctx(cfg);
  auto task = feasible_task(cfg);
  auto triplet = policy::make_triplet(policy::zero_params(ctx.feat.vocab, ctx.feat.dim()));

  auto g1 = rollout::sample_group(task, triplet, ctx, parity_reward(), 8, 99, 1);
  for (int workers : {2, 4, 8, 16}) {
    auto gw = rollout::sample_group(task, triplet, ctx, parity_reward(), 8, 99, workers);
    CHECK(gw.rewards == g1.rewards);
    CHECK(gw.advantages == g1.advantages);
    REQUIRE(gw.trajectories.size() == g1.trajectories.size());
    for (std::size_t i = 0; i < g1.trajectories.size(); ++i) {
      CHECK(traj_equal(gw.trajectories[i], g1.trajectories[i]));
    }
  }

  auto g2 = rollout::sample_group(task, triplet, ctx, parity_reward(), 8, 100, 1);
  bool same = true;
  for (std::size_t i = 0; i < g1.trajectories.size(); ++i) {
    same = same && traj_equal(g1.trajectories[i], g2.trajectories[i]);
  }
  CHECK_FALSE(same);

  CHECK_THROWS_AS(rollout::sample_group(task, triplet, ctx, parity_reward(), 1, 1, 1),
                  std::invalid_argument);
}

TEST_CASE("advantages follow rewards and degenerate groups are flagged") {
  env::EnvConfig cfg;
  auto ctx = make_ctx(cfg);
  auto task = feasible_task(cfg);
  auto triplet = policy::make_triplet(policy::zero_params(ctx.feat.vocab, ctx.feat.dim()));

  auto mixed = rollout::sample_group(task, triplet, ctx, parity_reward(), 16, 7, 1);
  REQUIRE_FALSE(mixed.degenerate);
  double sum = 0.0;
  for (double a : mixed.advantages) sum += a;
  CHECK(sum == doctest::Approx(0.0).epsilon(1e-9));
  for (std::size_t i = 0; i < mixed.rewards.size(); ++i) {
    if (mixed.rewards[i] == 1) CHECK(mixed.advantages[i] > 0.0);
    else CHECK(mixed.advantages[i] < 0.0);
  }
  CHECK(mixed.snapshot_id == triplet.snapshot_id);
  CHECK(mixed.votes.empty());

  auto flat = rollout::sample_group(task, triplet, ctx, constant_reward(1), 8, 7, 1);
  CHECK(flat.degenerate);
  for (double a : flat.advantages) CHECK(a == 0.0);
}

TEST_CASE("reward noise is isolated from rollout randomness") {
  env::EnvConfig cfg;
  auto ctx = make_ctx(cfg);
  auto task = feasible_task(cfg);
  auto triplet = policy::make_triplet(policy::zero_params(ctx.feat.vocab, ctx.feat.dim()));

  rollout::RewardFn oracle_fn = [](const env::Task& t, const env::Trajectory& tr, Rng&) {
    return rollout::RewardOutcome{reward::oracle_reward(t, tr), std::nullopt};
  };

  reward::NoisyEstimatorModel clean;
  clean.fp_rate = 0.0;
  clean.fn_rate = 0.0;
  rollout::RewardFn clean_votes = [clean](const env::Task& t, const env::Trajectory& tr, Rng& rng) {
    auto rec = reward::voted_reward(clean, reward::oracle_reward(t, tr), 4,
                                    reward::VoteScheme::Unanimous, rng);
    return rollout::RewardOutcome{rec.result, rec};
  };

  reward::NoisyEstimatorModel noisy;
  noisy.fp_rate = 0.45;
  noisy.fn_rate = 0.45;
  rollout::RewardFn noisy_votes = [noisy](const env::Task& t, const env::Trajectory& tr, Rng& rng) {
    auto rec = reward::voted_reward(noisy, reward::oracle_reward(t, tr), 4,
                                    reward::VoteScheme::Majority, rng);
    return rollout::RewardOutcome{rec.result, rec};
  };

  const auto base = rollout::sample_group(task, triplet, ctx, oracle_fn, 16, 2024, 1);
  const auto with_clean = rollout::sample_group(task, triplet, ctx, clean_votes, 16, 2024, 1);
  const auto with_noise = rollout::sample_group(task, triplet, ctx, noisy_votes, 16, 2024, 1);

  // A noiseless estimator reproduces the oracle run bit for bit, plus ballots.
  CHECK(with_clean.rewards == base.rewards);
  CHECK(with_clean.advantages == base.advantages);
  REQUIRE(with_clean.votes.size() == 16);
  for (const auto& rec : with_clean.votes) {
    CHECK(rec.votes == std::vector<int>(4, rec.result));
  }

  // A noisy estimator may disagree on rewards but must not disturb rollouts.
  bool rewards_differ = with_noise.rewards != base.rewards;
  CHECK(rewards_differ);
  for (std::size_t i = 0; i < base.trajectories.size(); ++i) {
    CHECK(traj_equal(with_noise.trajectories[i], base.trajectories[i]));
    CHECK(traj_equal(with_clean.trajectories[i], base.trajectories[i]));
  }
}

TEST_CASE("collect_batch fills to the threshold and discards flat groups") {
  env::EnvConfig cfg;
  auto ctx = make_ctx(cfg);
  auto triplet = policy::make_triplet(policy::zero_params(ctx.feat.vocab, ctx.feat.dim()));

  std::vector<env::Task> tasks;
  for (int i = 0; i < 4; ++i) tasks.push_back(feasible_task(cfg, "t" + std::to_string(i)));

  SUBCASE("sequence threshold, minimal overshoot") {
    rollout::TaskCycler cycler(tasks, 3);
    rollout::CollectConfig ccfg;
    ccfg.group_size = 8;
    ccfg.batch_threshold = 50;
    auto batch = rollout::collect_batch(cycler, triplet, ctx, parity_reward(), ccfg, 11);
    CHECK(batch.total_sequences >= 50);
    CHECK(batch.snapshot_id == triplet.snapshot_id);
    long last = 0;
    for (const auto& t : batch.groups.back().trajectories) last += t.steps.size();
    CHECK(batch.total_sequences - last < 50);
    long seqs = 0, toks = 0;
    for (const auto& g : batch.groups) {
      CHECK_FALSE(g.degenerate);
      for (const auto& t : g.trajectories) {
        seqs += t.steps.size();
        for (const auto& s : t.steps) toks += s.tokens.size();
      }
    }
    CHECK(seqs == batch.total_sequences);
    CHECK(toks == batch.total_tokens);
  }

  SUBCASE("token threshold mode") {
    rollout::TaskCycler cycler(tasks, 3);
    rollout::CollectConfig ccfg;
    ccfg.group_size = 8;
    ccfg.batch_threshold = 400;
    ccfg.threshold_mode = rollout::ThresholdMode::Tokens;
    auto batch = rollout::collect_batch(cycler, triplet, ctx, parity_reward(), ccfg, 11);
    CHECK(batch.total_tokens >= 400);
    long last = 0;
    for (const auto& t : batch.groups.back().trajectories) {
      for (const auto& s : t.steps) last += s.tokens.size();
    }
    CHECK(batch.total_tokens - last < 400);
  }

  SUBCASE("degenerate tasks are dropped but counted") {
    // Half the tasks get a constant reward and can never survive the filter.
    rollout::RewardFn mixed_fn = [](const env::Task& t, const env::Trajectory& tr, Rng&) {
      if (t.id == "t0" || t.id == "t2") return rollout::RewardOutcome{1, std::nullopt};
      return rollout::RewardOutcome{static_cast<int>(tr.steps.size() % 2), std::nullopt};
    };
    rollout::TaskCycler cycler(tasks, 3);
    rollout::CollectConfig ccfg;
    ccfg.group_size = 8;
    ccfg.batch_threshold = 60;
    auto batch = rollout::collect_batch(cycler, triplet, ctx, mixed_fn, ccfg, 11);
    CHECK(batch.discarded_groups > 0);
    for (const auto& g : batch.groups) {
      CHECK(g.task.id != "t0");
      CHECK(g.task.id != "t2");
    }
  }

  SUBCASE("starvation raises after the configured number of flat groups") {
    rollout::TaskCycler cycler(tasks, 3);
    rollout::CollectConfig ccfg;
    ccfg.group_size = 4;
    ccfg.batch_threshold = 100;
    ccfg.starvation_limit = 7;
    try {
      rollout::collect_batch(cycler, triplet, ctx, constant_reward(0), ccfg, 11);
      FAIL("expected StarvationError");
    } catch (const rollout::StarvationError& e) {
      CHECK(e.consecutive_discards == 7);
    }
  }

  SUBCASE("bad threshold throws") {
    rollout::TaskCycler cycler(tasks, 3);
    rollout::CollectConfig ccfg;
    ccfg.batch_threshold = 0;
    CHECK_THROWS_AS(rollout::collect_batch(cycler, triplet, ctx, parity_reward(), ccfg, 1),
                    std::invalid_argument);
  }
}
