#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace boardrl::env {

struct EnvConfig {
  int num_widgets = 4;
  int num_values = 3;
  int max_steps = 15;  // hard cap on actions per episode
};

/// Full simulator state: one value per widget plus an optional selection.
struct WidgetBoard {
  std::vector<int> widgets;
  std::optional<int> selected;

  bool operator==(const WidgetBoard&) const = default;
};

struct Observation {
  WidgetBoard board;
  int step_index = 0;
};

enum class Verb { Select, Set, Toggle, Noop, Terminate, Fail };

/// One parsed action. `arg` is meaningful for Select/Set/Toggle only.
struct ActionToken {
  Verb verb = Verb::Noop;
  int arg = -1;

  bool operator==(const ActionToken&) const = default;
};

inline bool is_terminal(const ActionToken& a) {
  return a.verb == Verb::Terminate || a.verb == Verb::Fail;
}

bool verb_takes_arg(Verb v);
std::string action_to_string(const ActionToken& a);
ActionToken action_from_string(const std::string& s);

/// A task instance. `goal` maps widget index -> target value; entries out of
/// range for the board mark the task unsatisfiable. `witness` is a known
/// action sequence (terminator included) reaching the goal from `gen_board`,
/// the board the generator measured min_steps against; both are empty for
/// infeasible tasks.
struct Task {
  std::string id;
  std::string instruction_text;
  std::map<int, int> goal;
  bool feasible = true;
  std::string domain_tag;
  int min_steps = 0;
  int board_widgets = 0;
  int board_values = 0;
  std::vector<ActionToken> witness;
  std::vector<int> gen_board;
};

enum class Termination { Terminated, FailedDeclared, StepLimit };

std::string termination_to_string(Termination t);
Termination termination_from_string(const std::string& s);

/// One environment step as the agent saw it: observation, the parsed action,
/// and the raw tokens that encoded it with their log-probs under the rollout
/// snapshot. `truncated` marks an action cut off by the per-action token cap.
struct Step {
  Observation obs;
  ActionToken action;
  std::vector<int> tokens;
  std::vector<double> logprobs;
  bool truncated = false;
};

struct Trajectory {
  std::string task_id;
  std::vector<Step> steps;
  Termination termination = Termination::StepLimit;
  WidgetBoard final_board;
  std::uint64_t snapshot_id = 0;
};

bool goal_in_range(const std::map<int, int>& goal, const EnvConfig& cfg);
bool goal_satisfied(const std::map<int, int>& goal, const WidgetBoard& board);

/// Initial board for (task, seed). Deterministic: same pair, same board.
/// Throws if task dims do not match cfg, or a task marked feasible has an
/// out-of-range goal.
WidgetBoard reset(const Task& task, const EnvConfig& cfg, std::uint64_t seed);

/// Pure transition. Throws on terminal actions and out-of-range args.
WidgetBoard step(const WidgetBoard& board, const ActionToken& a, const EnvConfig& cfg);

/// Ground-truth success: feasible tasks must end with Terminate on a board
/// satisfying the goal; infeasible tasks must end with Fail. Judged on the
/// final state only.
int verify(const Task& task, const Trajectory& traj);

/// Recompute the final board from the first observation and the action list.
WidgetBoard replay(const Trajectory& traj, const EnvConfig& cfg);

}  // namespace boardrl::env
