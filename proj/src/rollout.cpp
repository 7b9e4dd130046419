#include "boardrl/rollout.hpp"

#include <algorithm>
#include <numeric>
#include <thread>

#include "boardrl/grpo.hpp"

namespace boardrl::rollout {

TaskCycler::TaskCycler(std::vector<env::Task> tasks, std::uint64_t seed)
    : tasks_(std::move(tasks)), rng_(mix_seed(seed, fnv1a("task-cycler"))) {
  if (tasks_.empty()) throw std::invalid_argument("TaskCycler: empty task list");
  order_.resize(tasks_.size());
  reshuffle();
}

void TaskCycler::reshuffle() {
  std::iota(order_.begin(), order_.end(), 0);
  for (int i = static_cast<int>(order_.size()) - 1; i > 0; --i) {
    std::swap(order_[i], order_[rng_.uniform_int(i + 1)]);
  }
  pos_ = 0;
}

const env::Task& TaskCycler::next() {
  if (pos_ >= order_.size()) reshuffle();
  ++consumed_;
  return tasks_[order_[pos_++]];
}

env::Trajectory run_episode(const policy::PolicyTriplet& triplet, const RolloutContext& ctx,
                            const env::Task& task, std::uint64_t seed) {
  env::WidgetBoard board = env::reset(task, ctx.env, seed);
  Rng rng(mix_seed(seed, fnv1a("episode-tokens")));

  env::Trajectory traj;
  traj.task_id = task.id;
  traj.snapshot_id = triplet.snapshot_id;
  for (int t = 0; t < ctx.env.max_steps; ++t) {
    env::Observation obs{board, t};
    const auto act = policy::sample_action(triplet, ctx.feat, task, obs, ctx.sampling, rng,
                                           ctx.mask_sampling ? &ctx.grammar : nullptr);
    const env::ActionToken action = ctx.grammar.parse(act.tokens).value_or(env::ActionToken{});
    traj.steps.push_back({obs, action, act.tokens, act.logprobs, act.truncated});
    if (env::is_terminal(action)) {
      traj.termination = action.verb == env::Verb::Terminate ? env::Termination::Terminated
                                                             : env::Termination::FailedDeclared;
      traj.final_board = board;
      return traj;
    }
    board = env::step(board, action, ctx.env);
  }
  traj.termination = env::Termination::StepLimit;
  traj.final_board = board;
  return traj;
}

TrajectoryGroup sample_group(const env::Task& task, const policy::PolicyTriplet& triplet,
                             const RolloutContext& ctx, const RewardFn& reward_fn,
                             int group_size, std::uint64_t group_seed, int workers) {
  if (group_size < 2) throw std::invalid_argument("sample_group: group size must be at least 2");
  TrajectoryGroup group;
  group.task = task;
  group.snapshot_id = triplet.snapshot_id;
  group.trajectories.resize(group_size);
  group.rewards.resize(group_size);
  std::vector<std::optional<reward::VoteRecord>> votes(group_size);

  const std::uint64_t rollout_base = mix_seed(group_seed, fnv1a("rollout"));
  const std::uint64_t reward_base = mix_seed(group_seed, fnv1a("reward"));
  auto roll_one = [&](int i) {
    group.trajectories[i] = run_episode(triplet, ctx, task, mix_seed(rollout_base, i));
    Rng reward_rng(mix_seed(reward_base, i));
    const RewardOutcome out = reward_fn(task, group.trajectories[i], reward_rng);
    group.rewards[i] = out.reward;
    votes[i] = out.votes;
  };

  const int threads = std::max(1, std::min(workers, group_size));
  if (threads == 1) {
    for (int i = 0; i < group_size; ++i) roll_one(i);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (int i = w; i < group_size; i += threads) roll_one(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  for (auto& v : votes) {
    if (v) group.votes.push_back(std::move(*v));
  }
  auto adv = grpo::advantages(group.rewards);
  group.advantages = std::move(adv.advantages);
  group.degenerate = adv.degenerate;
  return group;
}

namespace {

long count_sequences(const TrajectoryGroup& g) {
  long n = 0;
  for (const auto& t : g.trajectories) n += static_cast<long>(t.steps.size());
  return n;
}

long count_tokens(const TrajectoryGroup& g) {
  long n = 0;
  for (const auto& t : g.trajectories) {
    for (const auto& s : t.steps) n += static_cast<long>(s.tokens.size());
  }
  return n;
}

}  // namespace

TrainBatch collect_batch(TaskCycler& tasks, const policy::PolicyTriplet& triplet,
                         const RolloutContext& ctx, const RewardFn& reward_fn,
                         const CollectConfig& cfg, std::uint64_t batch_seed) {
  if (cfg.batch_threshold <= 0) throw std::invalid_argument("collect_batch: threshold must be positive");
  TrainBatch batch;
  batch.snapshot_id = triplet.snapshot_id;
  int consecutive = 0;
  std::uint64_t group_index = 0;
  auto filled = [&] {
    return cfg.threshold_mode == ThresholdMode::Sequences
               ? batch.total_sequences >= cfg.batch_threshold
               : batch.total_tokens >= cfg.batch_threshold;
  };
  while (!filled()) {
    const env::Task& task = tasks.next();
    TrajectoryGroup group = sample_group(task, triplet, ctx, reward_fn, cfg.group_size,
                                         mix_seed(batch_seed, group_index++), cfg.workers);
    if (group.degenerate) {
      ++batch.discarded_groups;
      if (++consecutive >= cfg.starvation_limit) throw StarvationError(consecutive);
      continue;
    }
    consecutive = 0;
    batch.total_sequences += count_sequences(group);
    batch.total_tokens += count_tokens(group);
    batch.groups.push_back(std::move(group));
  }
  return batch;
}

}  // namespace boardrl::rollout
