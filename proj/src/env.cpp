#include "boardrl/env.hpp"

#include <sstream>
#include <stdexcept>

#include "boardrl/rng.hpp"

namespace boardrl::env {

namespace {
constexpr std::uint64_t kResetTag = 0x7265736574ull;  // "reset"
}

bool verb_takes_arg(Verb v) {
  return v == Verb::Select || v == Verb::Set || v == Verb::Toggle;
}

std::string action_to_string(const ActionToken& a) {
  const char* name = nullptr;
  switch (a.verb) {
    case Verb::Select: name = "SELECT"; break;
    case Verb::Set: name = "SET"; break;
    case Verb::Toggle: name = "TOGGLE"; break;
    case Verb::Noop: name = "NOOP"; break;
    case Verb::Terminate: name = "TERMINATE"; break;
    case Verb::Fail: name = "FAIL"; break;
  }
  if (verb_takes_arg(a.verb)) return std::string(name) + " " + std::to_string(a.arg);
  return name;
}

ActionToken action_from_string(const std::string& s) {
  std::istringstream in(s);
  std::string name;
  in >> name;
  ActionToken a;
  if (name == "SELECT") a.verb = Verb::Select;
  else if (name == "SET") a.verb = Verb::Set;
  else if (name == "TOGGLE") a.verb = Verb::Toggle;
  else if (name == "NOOP") a.verb = Verb::Noop;
  else if (name == "TERMINATE") a.verb = Verb::Terminate;
  else if (name == "FAIL") a.verb = Verb::Fail;
  else throw std::invalid_argument("action_from_string: unknown verb '" + name + "'");
  if (verb_takes_arg(a.verb)) {
    if (!(in >> a.arg)) throw std::invalid_argument("action_from_string: missing arg in '" + s + "'");
  }
  return a;
}

std::string termination_to_string(Termination t) {
  switch (t) {
    case Termination::Terminated: return "terminated";
    case Termination::FailedDeclared: return "failed_declared";
    case Termination::StepLimit: return "step_limit";
  }
  throw std::logic_error("termination_to_string: bad value");
}

Termination termination_from_string(const std::string& s) {
  if (s == "terminated") return Termination::Terminated;
  if (s == "failed_declared") return Termination::FailedDeclared;
  if (s == "step_limit") return Termination::StepLimit;
  throw std::invalid_argument("termination_from_string: '" + s + "'");
}

bool goal_in_range(const std::map<int, int>& goal, const EnvConfig& cfg) {
  for (const auto& [w, v] : goal) {
    if (w < 0 || w >= cfg.num_widgets) return false;
    if (v < 0 || v >= cfg.num_values) return false;
  }
  return true;
}

bool goal_satisfied(const std::map<int, int>& goal, const WidgetBoard& board) {
  for (const auto& [w, v] : goal) {
    if (w < 0 || w >= static_cast<int>(board.widgets.size())) return false;
    if (board.widgets[w] != v) return false;
  }
  return true;
}

WidgetBoard reset(const Task& task, const EnvConfig& cfg, std::uint64_t seed) {
  if (task.board_widgets != cfg.num_widgets || task.board_values != cfg.num_values) {
    throw std::invalid_argument("reset: task '" + task.id + "' was generated for a " +
                                std::to_string(task.board_widgets) + "x" +
                                std::to_string(task.board_values) + " board");
  }
  if (task.feasible && !goal_in_range(task.goal, cfg)) {
    throw std::invalid_argument("reset: feasible task '" + task.id +
                                "' references an out-of-range widget or value");
  }
  Rng rng(mix_seed(mix_seed(seed, fnv1a(task.id)), kResetTag));
  WidgetBoard board;
  board.widgets.resize(cfg.num_widgets);
  for (auto& w : board.widgets) w = rng.uniform_int(cfg.num_values);
  board.selected = std::nullopt;
  return board;
}

WidgetBoard step(const WidgetBoard& board, const ActionToken& a, const EnvConfig& cfg) {
  if (is_terminal(a)) throw std::invalid_argument("step: terminal action has no transition");
  const int W = static_cast<int>(board.widgets.size());
  WidgetBoard out = board;
  switch (a.verb) {
    case Verb::Select:
      if (a.arg < 0 || a.arg >= W) throw std::invalid_argument("step: SELECT arg out of range");
      out.selected = a.arg;
      break;
    case Verb::Set:
      if (a.arg < 0 || a.arg >= cfg.num_values) throw std::invalid_argument("step: SET arg out of range");
      if (out.selected) out.widgets[*out.selected] = a.arg;  // no selection: no-op
      break;
    case Verb::Toggle:
      if (a.arg < 0 || a.arg >= W) throw std::invalid_argument("step: TOGGLE arg out of range");
      out.widgets[a.arg] = (out.widgets[a.arg] + 1) % cfg.num_values;
      break;
    case Verb::Noop:
      break;
    default:
      throw std::logic_error("step: unreachable");
  }
  return out;
}

int verify(const Task& task, const Trajectory& traj) {
  if (task.feasible) {
    return traj.termination == Termination::Terminated &&
                   goal_satisfied(task.goal, traj.final_board)
               ? 1
               : 0;
  }
  return traj.termination == Termination::FailedDeclared ? 1 : 0;
}

WidgetBoard replay(const Trajectory& traj, const EnvConfig& cfg) {
  if (traj.steps.empty()) throw std::invalid_argument("replay: empty trajectory");
  WidgetBoard board = traj.steps.front().obs.board;
  for (const auto& s : traj.steps) {
    if (is_terminal(s.action)) break;
    board = step(board, s.action, cfg);
  }
  return board;
}

}  // namespace boardrl::env
