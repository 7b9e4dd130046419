#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "boardrl/env.hpp"
#include "boardrl/grpo.hpp"
#include "boardrl/metrics.hpp"
#include "boardrl/policy.hpp"
#include "boardrl/reward.hpp"
#include "boardrl/rollout.hpp"
#include "boardrl/taskgen.hpp"

namespace boardrl::trainer {

enum class RewardSource { Oracle, Estimator };
enum class TrainingMode { OnlineRl, OnlineRft, OfflineRft };

std::string reward_source_to_string(RewardSource s);
RewardSource reward_source_from_string(const std::string& s);
std::string training_mode_to_string(TrainingMode m);
TrainingMode training_mode_from_string(const std::string& s);

struct RewardSettings {
  reward::NoisyEstimatorModel model;
  int num_votes = 4;
  reward::VoteScheme scheme = reward::VoteScheme::Unanimous;
};

struct EvalSettings {
  int trials = 8;  // rollouts per task
  int k = 4;       // for pass@k / all-pass@k
};

struct StageSettings {
  int epochs = 1;
  int max_updates = 0;  // 0 = uncapped
  RewardSource reward_source = RewardSource::Estimator;
};

struct RunConfig {
  env::EnvConfig env;
  taskgen::GenSpec gen;
  int total_tasks = 60;
  double test_fraction = 1.0 / 3.0;
  std::uint64_t seed = 1;

  RewardSettings reward;
  grpo::GrpoConfig objective;
  policy::SamplingConfig sampling;
  rollout::CollectConfig collect;
  bool mask_sampling = true;

  TrainingMode mode = TrainingMode::OnlineRl;
  StageSettings stage1;
  StageSettings stage2;
  EvalSettings eval;

  double learning_rate = 2e-6;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  double weight_decay = 0.0;

  /// Subtracted from the Terminate/Fail bias weights at init so a fresh
  /// policy explores instead of ending episodes immediately.
  double init_terminal_bias = 0.0;

  bool log_trajectories = false;
};

struct UpdateLog {
  int update = 0;
  double objective = 0.0;
  double mean_kl = 0.0;
  double max_delta = 0.0;
  double min_delta = 0.0;
  bool kl_overflow = false;
  double mean_reward = 0.0;
  double grad_norm = 0.0;
  int kept_groups = 0;
  int discarded_groups = 0;
  long sequences = 0;
  long tokens = 0;
  bool skipped = false;  // online RFT round whose collection had no positives
};

struct SplitEval {
  metrics::Aggregate full;
  metrics::Aggregate feasible;
  metrics::Aggregate infeasible;
};

struct StageReport {
  std::string stage;
  std::vector<UpdateLog> updates;
  SplitEval before;
  SplitEval after;
  long oracle_reads_during_training = 0;
  bool aborted = false;
  std::string abort_reason;
};

/// Optional sinks for per-update logs. Any stream may be null.
struct RunWriter {
  std::ostream* kl_stats = nullptr;      // JSON lines
  std::ostream* trajectories = nullptr;  // JSON lines
};

/// Zero weights plus the configured terminal bias.
policy::PolicyTriplet init_policy(const RunConfig& cfg);

SplitEval evaluate(const policy::PolicyParams& params, const std::vector<env::Task>& tasks,
                   const RunConfig& cfg, std::uint64_t eval_seed);

/// One training stage over `tasks`. Freezes theta_ref at entry, refreshes the
/// rollout snapshot, runs collect/estimate/update rounds until the epoch
/// budget or max_updates, and evaluates before and after. Starvation and
/// non-finite gradients abort with a partial report instead of throwing.
StageReport train_stage(const std::string& stage_name, const RunConfig& cfg,
                        const StageSettings& stage, RewardSource reward_source,
                        const std::vector<env::Task>& tasks, policy::PolicyTriplet& triplet,
                        RunWriter* writer = nullptr);

struct RunResult {
  std::optional<StageReport> stage1;
  std::optional<StageReport> stage2;
};

/// Full pipeline: stage 1 on the training pool, then stage 2 test-time
/// training on the test tasks. Stage 2 always scores with the estimator; a
/// config asking for oracle rewards there is rejected.
RunResult run(const RunConfig& cfg, const taskgen::TaskPool& pool,
              policy::PolicyTriplet& triplet, int stages /* 1, 2, or 3 for both */,
              RunWriter* writer = nullptr);

}  // namespace boardrl::trainer
