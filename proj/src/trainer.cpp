#include "boardrl/trainer.hpp"

#include <atomic>
#include <cmath>
#include <ostream>

#include "boardrl/serialize.hpp"

namespace boardrl::trainer {

std::string reward_source_to_string(RewardSource s) {
  return s == RewardSource::Oracle ? "oracle" : "estimator";
}

RewardSource reward_source_from_string(const std::string& s) {
  if (s == "oracle") return RewardSource::Oracle;
  if (s == "estimator") return RewardSource::Estimator;
  throw std::invalid_argument("reward_source_from_string: '" + s + "'");
}

std::string training_mode_to_string(TrainingMode m) {
  switch (m) {
    case TrainingMode::OnlineRl: return "online_rl";
    case TrainingMode::OnlineRft: return "online_rft";
    case TrainingMode::OfflineRft: return "offline_rft";
  }
  throw std::logic_error("training_mode_to_string: bad value");
}

TrainingMode training_mode_from_string(const std::string& s) {
  if (s == "online_rl") return TrainingMode::OnlineRl;
  if (s == "online_rft") return TrainingMode::OnlineRft;
  if (s == "offline_rft") return TrainingMode::OfflineRft;
  throw std::invalid_argument("training_mode_from_string: '" + s + "'");
}

policy::PolicyTriplet init_policy(const RunConfig& cfg) {
  const policy::Featurizer feat(cfg.env);
  policy::PolicyParams params = policy::zero_params(feat.vocab, feat.dim());
  if (cfg.init_terminal_bias != 0.0) {
    const int bias_col = feat.blocks().bias;
    params.weights(policy::Vocab::kTerminate, bias_col) -= cfg.init_terminal_bias;
    params.weights(policy::Vocab::kFail, bias_col) -= cfg.init_terminal_bias;
  }
  return policy::make_triplet(params);
}

namespace {

rollout::RolloutContext make_context(const RunConfig& cfg) {
  rollout::RolloutContext ctx(cfg.env);
  ctx.sampling = cfg.sampling;
  ctx.mask_sampling = cfg.mask_sampling;
  return ctx;
}

/// Trainer-visible reward assignment. Oracle reads are counted so the stage-2
/// firewall (no direct ground-truth rewards at test time) is checkable.
rollout::RewardFn make_reward_fn(const RunConfig& cfg, RewardSource source,
                                 std::atomic<long>& oracle_reads) {
  if (source == RewardSource::Oracle) {
    return [&oracle_reads](const env::Task& task, const env::Trajectory& traj,
                           Rng&) -> rollout::RewardOutcome {
      oracle_reads.fetch_add(1, std::memory_order_relaxed);
      return {reward::oracle_reward(task, traj), std::nullopt};
    };
  }
  const RewardSettings settings = cfg.reward;
  return [settings](const env::Task& task, const env::Trajectory& traj,
                    Rng& rng) -> rollout::RewardOutcome {
    const int label = reward::oracle_reward(task, traj);  // hidden inside the noise model
    auto rec = reward::voted_reward(settings.model, label, settings.num_votes, settings.scheme, rng);
    return {rec.result, std::move(rec)};
  };
}

double batch_mean_reward(const rollout::TrainBatch& batch) {
  long n = 0;
  double sum = 0.0;
  for (const auto& g : batch.groups) {
    for (int r : g.rewards) {
      sum += r;
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

void log_update(StageReport& report, RunWriter* writer, UpdateLog log) {
  if (writer && writer->kl_stats) {
    grpo::KlStats stats{log.mean_kl, log.max_delta, log.min_delta, log.kl_overflow, log.tokens};
    *writer->kl_stats << io::kl_stats_line(log.update, stats).dump() << "\n";
  }
  report.updates.push_back(std::move(log));
}

void log_batch_trajectories(RunWriter* writer, const rollout::TrainBatch& batch) {
  if (!writer || !writer->trajectories) return;
  for (const auto& g : batch.groups) io::append_trajectory_lines(*writer->trajectories, g);
}

/// Positive-only token tables for the fine-tuning baselines.
std::vector<grpo::TrajEval> positive_evals(const rollout::TrainBatch& batch,
                                           const policy::Featurizer& feat) {
  rollout::TrainBatch kept;
  kept.snapshot_id = batch.snapshot_id;
  for (const auto& g : batch.groups) {
    rollout::TrajectoryGroup pg;
    pg.task = g.task;
    pg.snapshot_id = g.snapshot_id;
    for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
      if (g.rewards[i] == 1) {
        pg.trajectories.push_back(g.trajectories[i]);
        pg.rewards.push_back(1);
        pg.advantages.push_back(1.0);
      }
    }
    if (!pg.trajectories.empty()) kept.groups.push_back(std::move(pg));
  }
  return grpo::batch_evals(kept, feat);
}

/// Collection for the fine-tuning baselines: fixed group count per round, no
/// uniform-group filter (they have no use for reward spread).
rollout::TrainBatch collect_unfiltered(rollout::TaskCycler& tasks,
                                       const policy::PolicyTriplet& triplet,
                                       const rollout::RolloutContext& ctx,
                                       const rollout::RewardFn& reward_fn,
                                       const rollout::CollectConfig& cfg,
                                       std::uint64_t batch_seed) {
  rollout::TrainBatch batch;
  batch.snapshot_id = triplet.snapshot_id;
  std::uint64_t gi = 0;
  auto filled = [&] {
    return cfg.threshold_mode == rollout::ThresholdMode::Sequences
               ? batch.total_sequences >= cfg.batch_threshold
               : batch.total_tokens >= cfg.batch_threshold;
  };
  while (!filled()) {
    auto group = rollout::sample_group(tasks.next(), triplet, ctx, reward_fn, cfg.group_size,
                                       mix_seed(batch_seed, gi++), cfg.workers);
    for (const auto& t : group.trajectories) {
      batch.total_sequences += static_cast<long>(t.steps.size());
      for (const auto& s : t.steps) batch.total_tokens += static_cast<long>(s.tokens.size());
    }
    batch.groups.push_back(std::move(group));
  }
  return batch;
}

}  // namespace

SplitEval evaluate(const policy::PolicyParams& params, const std::vector<env::Task>& tasks,
                   const RunConfig& cfg, std::uint64_t eval_seed) {
  const auto ctx = make_context(cfg);
  const auto triplet = policy::make_triplet(params);
  std::vector<metrics::TaskTally> full, feasible, infeasible;
  for (const auto& task : tasks) {
    metrics::TaskTally tally{task.id, cfg.eval.trials, 0};
    const std::uint64_t task_seed = mix_seed(eval_seed, fnv1a(task.id));
    for (int trial = 0; trial < cfg.eval.trials; ++trial) {
      const auto traj = rollout::run_episode(triplet, ctx, task, mix_seed(task_seed, trial));
      tally.c += env::verify(task, traj);
    }
    full.push_back(tally);
    (task.feasible ? feasible : infeasible).push_back(tally);
  }
  SplitEval out;
  out.full = metrics::aggregate(full, cfg.eval.k);
  out.feasible = metrics::aggregate(feasible, cfg.eval.k);
  out.infeasible = metrics::aggregate(infeasible, cfg.eval.k);
  return out;
}

StageReport train_stage(const std::string& stage_name, const RunConfig& cfg,
                        const StageSettings& stage, RewardSource reward_source,
                        const std::vector<env::Task>& tasks, policy::PolicyTriplet& triplet,
                        RunWriter* writer) {
  if (tasks.empty()) throw std::invalid_argument("train_stage: no tasks");
  StageReport report;
  report.stage = stage_name;

  const auto ctx = make_context(cfg);
  std::atomic<long> oracle_reads{0};
  const auto reward_fn = make_reward_fn(cfg, reward_source, oracle_reads);
  const std::uint64_t stage_seed = mix_seed(cfg.seed, fnv1a(stage_name));

  triplet.freeze_reference();
  triplet.refresh_snapshot();
  report.before = evaluate(triplet.theta, tasks, cfg, mix_seed(stage_seed, fnv1a("eval-before")));

  rollout::TaskCycler cycler(tasks, mix_seed(stage_seed, fnv1a("cycler")));
  auto opt = grpo::make_optimizer(triplet.theta.weights, cfg.learning_rate);
  opt.beta1 = cfg.adam_beta1;
  opt.beta2 = cfg.adam_beta2;
  opt.weight_decay = cfg.weight_decay;

  const long task_budget = static_cast<long>(stage.epochs) * static_cast<long>(tasks.size());
  const policy::Featurizer& feat = ctx.feat;

  // Fine-tuning baselines imitate successful trajectories only. The offline
  // variant collects one corpus with the entry policy and replays it; the
  // online variant recollects with the current policy before every update.
  std::vector<grpo::TrajEval> offline_corpus;
  if (cfg.mode == TrainingMode::OfflineRft) {
    rollout::TaskCycler warm(tasks, mix_seed(stage_seed, fnv1a("offline-corpus")));
    while (warm.consumed() < task_budget) {
      auto batch = collect_unfiltered(warm, triplet, ctx, reward_fn, cfg.collect,
                                      mix_seed(stage_seed, fnv1a("offline") + warm.consumed()));
      log_batch_trajectories(writer, batch);
      auto evals = positive_evals(batch, feat);
      for (auto& e : evals) offline_corpus.push_back(std::move(e));
    }
    if (offline_corpus.empty()) {
      report.aborted = true;
      report.abort_reason = "offline corpus has no successful trajectories";
      report.after = evaluate(triplet.theta, tasks, cfg, mix_seed(stage_seed, fnv1a("eval-after")));
      report.oracle_reads_during_training = oracle_reads.load();
      return report;
    }
  }
  Rng replay_order(mix_seed(stage_seed, fnv1a("offline-order")));
  auto corpus_minibatch = [&] {
    std::vector<grpo::TrajEval> mini;
    long seqs = 0;
    while (seqs < cfg.collect.batch_threshold) {
      const auto& pick =
          offline_corpus[replay_order.uniform_int(static_cast<int>(offline_corpus.size()))];
      seqs += static_cast<long>(pick.seqs.size());
      mini.push_back(pick);
    }
    return mini;
  };

  int update_index = 0;
  auto more_updates = [&] {
    if (stage.max_updates != 0 && update_index >= stage.max_updates) return false;
    if (cfg.mode == TrainingMode::OfflineRft) {
      // no collection during updates; cap by max_updates or one update per task-visit
      return stage.max_updates != 0 || update_index < task_budget;
    }
    return cycler.consumed() < task_budget;
  };
  while (more_updates()) {
    const std::uint64_t update_seed = mix_seed(stage_seed, 0x75706400ull + update_index);
    UpdateLog log;
    log.update = update_index;

    try {
      if (cfg.mode == TrainingMode::OnlineRl) {
        auto batch = rollout::collect_batch(cycler, triplet, ctx, reward_fn, cfg.collect, update_seed);
        log_batch_trajectories(writer, batch);
        const auto obj = grpo::objective(batch, triplet, feat, cfg.objective);
        const auto grad = grpo::gradient(batch, triplet, feat, cfg.objective);
        grpo::update(opt, triplet, -grad.grad);
        log.objective = obj.value;
        log.mean_kl = obj.kl.mean_kl;
        log.max_delta = obj.kl.max_delta;
        log.min_delta = obj.kl.min_delta;
        log.kl_overflow = obj.kl.overflow;
        log.tokens = batch.total_tokens;
        log.sequences = batch.total_sequences;
        log.mean_reward = batch_mean_reward(batch);
        log.grad_norm = grad.norm;
        log.kept_groups = static_cast<int>(batch.groups.size());
        log.discarded_groups = batch.discarded_groups;
      } else if (cfg.mode == TrainingMode::OnlineRft) {
        auto batch = collect_unfiltered(cycler, triplet, ctx, reward_fn, cfg.collect, update_seed);
        log_batch_trajectories(writer, batch);
        log.tokens = batch.total_tokens;
        log.sequences = batch.total_sequences;
        log.mean_reward = batch_mean_reward(batch);
        log.kept_groups = static_cast<int>(batch.groups.size());
        const auto evals = positive_evals(batch, feat);
        if (evals.empty()) {
          log.skipped = true;
        } else {
          const auto grad = grpo::likelihood_gradient(evals, triplet.theta.weights);
          grpo::update(opt, triplet, -grad.grad);
          log.grad_norm = grad.norm;
        }
      } else {  // OfflineRft: seeded minibatch of the frozen corpus
        const auto mini = corpus_minibatch();
        const auto grad = grpo::likelihood_gradient(mini, triplet.theta.weights);
        grpo::update(opt, triplet, -grad.grad);
        log.grad_norm = grad.norm;
        for (const auto& e : mini) log.sequences += static_cast<long>(e.seqs.size());
      }
    } catch (const rollout::StarvationError& e) {
      report.aborted = true;
      report.abort_reason = e.what();
      break;
    } catch (const grpo::GradientError& e) {
      report.aborted = true;
      report.abort_reason = e.what();
      break;
    }
    log_update(report, writer, std::move(log));
    ++update_index;
  }

  report.after = evaluate(triplet.theta, tasks, cfg, mix_seed(stage_seed, fnv1a("eval-after")));
  report.oracle_reads_during_training = oracle_reads.load();
  return report;
}

RunResult run(const RunConfig& cfg, const taskgen::TaskPool& pool, policy::PolicyTriplet& triplet,
              int stages, RunWriter* writer) {
  if (stages < 1 || stages > 3) throw std::invalid_argument("run: stages must be 1, 2, or 3");
  if (cfg.stage2.reward_source == RewardSource::Oracle) {
    throw std::invalid_argument("run: stage 2 trains on estimated rewards only");
  }
  RunResult result;
  if (stages & 1) {
    result.stage1 =
        train_stage("stage1", cfg, cfg.stage1, cfg.stage1.reward_source, pool.train, triplet, writer);
  }
  if (stages & 2) {
    result.stage2 = train_stage("stage2", cfg, cfg.stage2, RewardSource::Estimator, pool.test,
                                triplet, writer);
  }
  return result;
}

}  // namespace boardrl::trainer
