#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "boardrl/env.hpp"
#include "boardrl/policy.hpp"
#include "boardrl/reward.hpp"
#include "boardrl/rng.hpp"

namespace boardrl::rollout {

/// Everything an episode needs besides the policy and the task.
struct RolloutContext {
  env::EnvConfig env;
  policy::Featurizer feat;
  policy::ActionGrammar grammar;
  bool mask_sampling = true;  // when false, sampling is unconstrained and
                              // malformed token runs parse to NOOP
  policy::SamplingConfig sampling;

  explicit RolloutContext(const env::EnvConfig& e) : env(e), feat(e), grammar{{e.num_widgets, e.num_values}} {}
};

struct TrajectoryGroup {
  env::Task task;
  std::vector<env::Trajectory> trajectories;
  std::vector<int> rewards;
  std::vector<reward::VoteRecord> votes;  // empty when rewards bypass voting
  std::vector<double> advantages;
  bool degenerate = false;  // all rewards equal; advantages forced to zero
  std::uint64_t snapshot_id = 0;
};

struct TrainBatch {
  std::vector<TrajectoryGroup> groups;
  long total_sequences = 0;
  long total_tokens = 0;
  int discarded_groups = 0;
  std::uint64_t snapshot_id = 0;
};

enum class ThresholdMode { Sequences, Tokens };

struct CollectConfig {
  int group_size = 64;
  long batch_threshold = 16384;  // reference-scale; desk configs set this far lower
  ThresholdMode threshold_mode = ThresholdMode::Sequences;
  int starvation_limit = 100;  // consecutive discarded groups before giving up
  int workers = 1;
};

struct StarvationError : std::runtime_error {
  int consecutive_discards;
  explicit StarvationError(int n)
      : std::runtime_error("collect_batch: " + std::to_string(n) +
                           " consecutive groups had uniform rewards"),
        consecutive_discards(n) {}
};

/// Hands out tasks in seeded shuffled order, reshuffling after each pass.
class TaskCycler {
 public:
  TaskCycler(std::vector<env::Task> tasks, std::uint64_t seed);

  const env::Task& next();
  long consumed() const { return consumed_; }
  std::size_t pool_size() const { return tasks_.size(); }

 private:
  void reshuffle();

  std::vector<env::Task> tasks_;
  std::vector<int> order_;
  Rng rng_;
  std::size_t pos_ = 0;
  long consumed_ = 0;
};

struct RewardOutcome {
  int reward = 0;
  std::optional<reward::VoteRecord> votes;
};

/// Scores one finished trajectory. The Rng is a fresh per-trajectory stream,
/// so reward noise never perturbs rollout randomness.
using RewardFn = std::function<RewardOutcome(const env::Task&, const env::Trajectory&, Rng&)>;

/// Roll one episode from reset to termination or the step cap. Sampling draws
/// from theta_old; recorded log-probs are raw theta_old values.
env::Trajectory run_episode(const policy::PolicyTriplet& triplet, const RolloutContext& ctx,
                            const env::Task& task, std::uint64_t seed);

/// G episodes on one task plus rewards and normalized advantages.
TrajectoryGroup sample_group(const env::Task& task, const policy::PolicyTriplet& triplet,
                             const RolloutContext& ctx, const RewardFn& reward_fn,
                             int group_size, std::uint64_t group_seed, int workers = 1);

/// Accumulate non-degenerate groups until the size threshold is met,
/// discarding uniform-reward groups outright. Throws StarvationError after
/// starvation_limit consecutive discards.
TrainBatch collect_batch(TaskCycler& tasks, const policy::PolicyTriplet& triplet,
                         const RolloutContext& ctx, const RewardFn& reward_fn,
                         const CollectConfig& cfg, std::uint64_t batch_seed);

}  // namespace boardrl::rollout
