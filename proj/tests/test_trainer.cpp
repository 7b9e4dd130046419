#include <sstream>

#include "boardrl/serialize.hpp"
#include "boardrl/trainer.hpp"
#include "doctest.h"

using namespace boardrl;

namespace {

env::Task exemplar(std::map<int, int> goal, const std::string& id) {
  env::Task t;
  t.id = id;
  t.instruction_text = "exemplar";
  t.goal = std::move(goal);
  t.feasible = true;
  t.board_widgets = 3;
  t.board_values = 3;
  t.min_steps = 2;
  return t;
}

// Small 3x3 board, fast stages: a batch is ~2 groups of 4 episodes.
trainer::RunConfig small_config() {
  trainer::RunConfig cfg;
  cfg.env = {3, 3, 8};
  cfg.gen.exemplars = {exemplar({{0, 1}}, "ex-1"), exemplar({{0, 1}, {1, 2}}, "ex-2")};
  cfg.gen.candidates_per_call = 6;
  cfg.gen.min_task_steps = 2;
  cfg.total_tasks = 9;
  cfg.seed = 21;
  cfg.reward.num_votes = 3;
  cfg.reward.scheme = reward::VoteScheme::Majority;
  cfg.objective.beta_kl = 0.04;
  cfg.sampling.top_p = 1.0;
  cfg.collect.group_size = 4;
  cfg.collect.batch_threshold = 8;
  cfg.collect.starvation_limit = 6;
  cfg.eval.trials = 4;
  cfg.eval.k = 2;
  cfg.learning_rate = 0.05;
  cfg.init_terminal_bias = 1.0;
  return cfg;
}

taskgen::TaskPool pool_for(const trainer::RunConfig& cfg) {
  return taskgen::build_training_pool(cfg.gen, cfg.env, cfg.total_tasks, cfg.seed,
                                      cfg.test_fraction);
}

bool same_eval(const trainer::SplitEval& a, const trainer::SplitEval& b) {
  auto same = [](const metrics::Aggregate& x, const metrics::Aggregate& y) {
    return x.success_rate == y.success_rate && x.pass_k == y.pass_k &&
           x.all_pass_k == y.all_pass_k && x.tasks == y.tasks;
  };
  return same(a.full, b.full) && same(a.feasible, b.feasible) && same(a.infeasible, b.infeasible);
}

}  // namespace

TEST_CASE("mode and reward source names round-trip") {
  using trainer::training_mode_from_string;
  using trainer::training_mode_to_string;
  for (auto m : {trainer::TrainingMode::OnlineRl, trainer::TrainingMode::OnlineRft,
                 trainer::TrainingMode::OfflineRft}) {
    CHECK(training_mode_from_string(training_mode_to_string(m)) == m);
  }
  CHECK_THROWS_AS(training_mode_from_string("sgd"), std::invalid_argument);
  for (auto s : {trainer::RewardSource::Oracle, trainer::RewardSource::Estimator}) {
    CHECK(trainer::reward_source_from_string(trainer::reward_source_to_string(s)) == s);
  }
  CHECK_THROWS_AS(trainer::reward_source_from_string("human"), std::invalid_argument);
}

TEST_CASE("init_policy is zero weights plus the terminal bias offset") {
  auto cfg = small_config();
  cfg.init_terminal_bias = 2.5;
  const auto triplet = trainer::init_policy(cfg);
  const policy::Featurizer feat(cfg.env);
  const int bias_col = feat.blocks().bias;
  CHECK(triplet.theta.weights.rows() == static_cast<int>(feat.vocab.size()));
  CHECK(triplet.theta.weights.cols() == feat.dim());
  CHECK(triplet.theta.weights(policy::Vocab::kTerminate, bias_col) == -2.5);
  CHECK(triplet.theta.weights(policy::Vocab::kFail, bias_col) == -2.5);
  CHECK(triplet.theta.weights.cwiseAbs().sum() == 5.0);
  CHECK((triplet.theta_old.weights - triplet.theta.weights).norm() == 0.0);
  CHECK((triplet.theta_ref.weights - triplet.theta.weights).norm() == 0.0);
  CHECK(triplet.snapshot_id == 1);

  cfg.init_terminal_bias = 0.0;
  CHECK(trainer::init_policy(cfg).theta.weights.cwiseAbs().sum() == 0.0);
}

TEST_CASE("evaluate is seed-deterministic and splits by feasibility") {
  auto cfg = small_config();
  cfg.gen.infeasible_fraction = 0.4;
  const auto pool = pool_for(cfg);
  const auto triplet = trainer::init_policy(cfg);

  const auto a = trainer::evaluate(triplet.theta, pool.train, cfg, 99);
  const auto b = trainer::evaluate(triplet.theta, pool.train, cfg, 99);
  CHECK(same_eval(a, b));

  CHECK(a.full.tasks == static_cast<int>(pool.train.size()));
  CHECK(a.feasible.tasks + a.infeasible.tasks == a.full.tasks);
  CHECK(a.infeasible.tasks > 0);
  CHECK(a.full.success_rate >= 0.0);
  CHECK(a.full.success_rate <= 1.0);
}

TEST_CASE("training counts oracle reads only on the oracle path") {
  const auto cfg = small_config();
  const auto pool = pool_for(cfg);

  auto t1 = trainer::init_policy(cfg);
  const auto rep_oracle = trainer::train_stage("s", cfg, cfg.stage1,
                                               trainer::RewardSource::Oracle, pool.train, t1);
  CHECK(rep_oracle.oracle_reads_during_training > 0);
  CHECK_FALSE(rep_oracle.updates.empty());

  auto t2 = trainer::init_policy(cfg);
  const auto rep_est = trainer::train_stage("s", cfg, cfg.stage1,
                                            trainer::RewardSource::Estimator, pool.train, t2);
  CHECK(rep_est.oracle_reads_during_training == 0);
}

TEST_CASE("a noiseless estimator reproduces the oracle run exactly") {
  auto cfg = small_config();
  const auto pool = pool_for(cfg);

  auto t_oracle = trainer::init_policy(cfg);
  const auto rep_oracle = trainer::train_stage("s", cfg, cfg.stage1,
                                               trainer::RewardSource::Oracle, pool.train, t_oracle);

  cfg.reward.model.fp_rate = 0.0;
  cfg.reward.model.fn_rate = 0.0;
  auto t_clean = trainer::init_policy(cfg);
  const auto rep_clean = trainer::train_stage("s", cfg, cfg.stage1,
                                              trainer::RewardSource::Estimator, pool.train, t_clean);

  CHECK((t_oracle.theta.weights - t_clean.theta.weights).norm() == 0.0);
  REQUIRE(rep_clean.updates.size() == rep_oracle.updates.size());
  for (std::size_t i = 0; i < rep_oracle.updates.size(); ++i) {
    CHECK(rep_clean.updates[i].objective == rep_oracle.updates[i].objective);
    CHECK(rep_clean.updates[i].mean_reward == rep_oracle.updates[i].mean_reward);
    CHECK(rep_clean.updates[i].grad_norm == rep_oracle.updates[i].grad_norm);
  }
  CHECK(same_eval(rep_clean.after, rep_oracle.after));
  CHECK(rep_clean.oracle_reads_during_training == 0);
}

TEST_CASE("run validates stage selection and the stage-2 reward source") {
  auto cfg = small_config();
  cfg.stage1.max_updates = 1;
  cfg.stage2.max_updates = 1;
  const auto pool = pool_for(cfg);

  auto triplet = trainer::init_policy(cfg);
  CHECK_THROWS_AS(trainer::run(cfg, pool, triplet, 0), std::invalid_argument);
  CHECK_THROWS_AS(trainer::run(cfg, pool, triplet, 4), std::invalid_argument);

  auto bad = cfg;
  bad.stage2.reward_source = trainer::RewardSource::Oracle;
  CHECK_THROWS_AS(trainer::run(bad, pool, triplet, 1), std::invalid_argument);

  auto only1 = trainer::init_policy(cfg);
  const auto r1 = trainer::run(cfg, pool, only1, 1);
  CHECK(r1.stage1.has_value());
  CHECK_FALSE(r1.stage2.has_value());
  CHECK(r1.stage1->stage == "stage1");
  CHECK(r1.stage1->updates.size() == 1);

  auto only2 = trainer::init_policy(cfg);
  const auto r2 = trainer::run(cfg, pool, only2, 2);
  CHECK_FALSE(r2.stage1.has_value());
  REQUIRE(r2.stage2.has_value());
  CHECK(r2.stage2->stage == "stage2");

  auto both = trainer::init_policy(cfg);
  const auto r3 = trainer::run(cfg, pool, both, 3);
  REQUIRE(r3.stage1.has_value());
  REQUIRE(r3.stage2.has_value());
  CHECK(r3.stage2->oracle_reads_during_training == 0);
  CHECK(both.snapshot_id > 1);
}

TEST_CASE("an uninformative estimator starves collection and aborts the stage") {
  // fp 1, fn 0: every ballot says yes, so every group is uniform and discarded.
  auto cfg = small_config();
  cfg.reward.model.fp_rate = 1.0;
  cfg.reward.model.fn_rate = 0.0;
  cfg.reward.num_votes = 1;
  cfg.reward.scheme = reward::VoteScheme::Single;
  cfg.collect.starvation_limit = 5;
  const auto pool = pool_for(cfg);

  auto triplet = trainer::init_policy(cfg);
  const auto rep = trainer::train_stage("s", cfg, cfg.stage1, trainer::RewardSource::Estimator,
                                        pool.train, triplet);
  CHECK(rep.aborted);
  CHECK(rep.abort_reason == "collect_batch: 5 consecutive groups had uniform rewards");
  CHECK(rep.updates.empty());
  CHECK(rep.after.full.tasks == static_cast<int>(pool.train.size()));
}

TEST_CASE("online fine-tuning skips rounds without positive trajectories") {
  // fp 0, fn 1: every reward collapses to 0, so there is nothing to imitate.
  auto cfg = small_config();
  cfg.mode = trainer::TrainingMode::OnlineRft;
  cfg.reward.model.fp_rate = 0.0;
  cfg.reward.model.fn_rate = 1.0;
  cfg.reward.num_votes = 1;
  cfg.reward.scheme = reward::VoteScheme::Single;
  const auto pool = pool_for(cfg);

  auto triplet = trainer::init_policy(cfg);
  const auto before = triplet.theta.weights;
  const auto rep = trainer::train_stage("s", cfg, cfg.stage1, trainer::RewardSource::Estimator,
                                        pool.train, triplet);
  CHECK_FALSE(rep.aborted);
  REQUIRE_FALSE(rep.updates.empty());
  for (const auto& u : rep.updates) {
    CHECK(u.skipped);
    CHECK(u.grad_norm == 0.0);
  }
  CHECK((triplet.theta.weights - before).norm() == 0.0);
}

TEST_CASE("offline fine-tuning aborts when the corpus has no successes") {
  auto cfg = small_config();
  cfg.mode = trainer::TrainingMode::OfflineRft;
  cfg.reward.model.fp_rate = 0.0;
  cfg.reward.model.fn_rate = 1.0;
  cfg.reward.num_votes = 1;
  cfg.reward.scheme = reward::VoteScheme::Single;
  const auto pool = pool_for(cfg);

  auto triplet = trainer::init_policy(cfg);
  const auto rep = trainer::train_stage("s", cfg, cfg.stage1, trainer::RewardSource::Estimator,
                                        pool.train, triplet);
  CHECK(rep.aborted);
  CHECK(rep.abort_reason == "offline corpus has no successful trajectories");
  CHECK(rep.updates.empty());
}

TEST_CASE("fine-tuning baselines learn from positive rollouts") {
  auto cfg = small_config();
  cfg.init_terminal_bias = 0.0;  // a uniform policy ends early often enough to succeed
  const auto pool = pool_for(cfg);

  SUBCASE("online") {
    cfg.mode = trainer::TrainingMode::OnlineRft;
    auto triplet = trainer::init_policy(cfg);
    const auto before = triplet.theta.weights;
    const auto rep = trainer::train_stage("s", cfg, cfg.stage1, trainer::RewardSource::Oracle,
                                          pool.train, triplet);
    CHECK_FALSE(rep.aborted);
    bool any_step = false;
    for (const auto& u : rep.updates) any_step |= !u.skipped && u.grad_norm > 0.0;
    CHECK(any_step);
    CHECK((triplet.theta.weights - before).norm() > 0.0);
  }

  SUBCASE("offline") {
    cfg.mode = trainer::TrainingMode::OfflineRft;
    auto stage = cfg.stage1;
    stage.max_updates = 2;
    auto triplet = trainer::init_policy(cfg);
    const auto rep = trainer::train_stage("s", cfg, stage, trainer::RewardSource::Oracle,
                                          pool.train, triplet);
    CHECK_FALSE(rep.aborted);
    REQUIRE(rep.updates.size() == 2);
    for (const auto& u : rep.updates) CHECK(u.grad_norm > 0.0);
  }
}

TEST_CASE("stage writers receive kl stats and trajectory lines") {
  auto cfg = small_config();
  cfg.stage1.epochs = 5;  // ample task budget; max_updates is the binding cap
  cfg.stage1.max_updates = 2;
  cfg.collect.starvation_limit = 40;
  const auto pool = pool_for(cfg);

  std::ostringstream kl, traj;
  trainer::RunWriter writer{&kl, &traj};
  auto triplet = trainer::init_policy(cfg);
  const auto rep = trainer::train_stage("s", cfg, cfg.stage1, trainer::RewardSource::Oracle,
                                        pool.train, triplet, &writer);
  REQUIRE(rep.updates.size() == 2);

  std::istringstream kl_in(kl.str());
  std::string line;
  int n = 0;
  while (std::getline(kl_in, line)) {
    const auto j = io::json::parse(line);
    CHECK(j.at("update") == n++);
    CHECK(j.contains("mean_kl"));
  }
  CHECK(n == 2);

  std::istringstream traj_in(traj.str());
  int lines = 0;
  while (std::getline(traj_in, line)) {
    const auto j = io::json::parse(line);
    CHECK(j.contains("reward"));
    CHECK(j.contains("task_id"));
    ++lines;
  }
  CHECK(lines > 0);
}

TEST_CASE("train_stage rejects an empty task list") {
  const auto cfg = small_config();
  auto triplet = trainer::init_policy(cfg);
  CHECK_THROWS_AS(
      trainer::train_stage("s", cfg, cfg.stage1, trainer::RewardSource::Oracle, {}, triplet),
      std::invalid_argument);
}
