#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "boardrl/env.hpp"
#include "boardrl/grpo.hpp"
#include "boardrl/rollout.hpp"
#include "boardrl/trainer.hpp"

namespace boardrl::io {

using json = nlohmann::ordered_json;

// ---- tasks ------------------------------------------------------------------

json task_to_json(const env::Task& t);
env::Task task_from_json(const json& j);

void write_task_set(const std::filesystem::path& path, const std::vector<env::Task>& tasks);
std::vector<env::Task> read_task_set(const std::filesystem::path& path);

// ---- trajectories -----------------------------------------------------------

json trajectory_to_json(const env::Trajectory& traj);
env::Trajectory trajectory_from_json(const json& j);

/// One JSON line per trajectory, with reward and votes when present.
void append_trajectory_lines(std::ostream& out, const rollout::TrajectoryGroup& group);
std::vector<json> read_json_lines(const std::filesystem::path& path);

// ---- checkpoints -------------------------------------------------------------

struct Checkpoint {
  policy::PolicyTriplet triplet;
  grpo::OptimizerState optimizer;
  bool has_optimizer = false;
  std::uint64_t seed = 0;
  std::string stage_tag;
  int num_widgets = 0;
  int num_values = 0;
};

/// Flat row-major weight arrays under a header with dims, the vocabulary
/// listing, the run seed, and a stage tag.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- run config ---------------------------------------------------------------

json run_config_to_json(const trainer::RunConfig& cfg);
/// Absent keys keep their defaults; unknown keys are rejected at the top level.
trainer::RunConfig run_config_from_json(const json& j);
trainer::RunConfig read_run_config(const std::filesystem::path& path);

// ---- reports and logs ----------------------------------------------------------

json aggregate_to_json(const metrics::Aggregate& a);
json split_eval_to_json(const trainer::SplitEval& e);
json update_log_to_json(const trainer::UpdateLog& u);
json stage_report_to_json(const trainer::StageReport& r);

json kl_stats_line(int update, const grpo::KlStats& stats);

/// kl_stats.jsonl -> kl_summary.csv (update, mean_kl, max_delta, min_delta).
void write_kl_summary_csv(const std::filesystem::path& jsonl, std::ostream& out);

/// Machine-readable failure record written next to normal outputs.
json error_record(const std::string& type, const std::string& message);

void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

}  // namespace boardrl::io
