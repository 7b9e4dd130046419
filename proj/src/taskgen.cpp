#include "boardrl/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <regex>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace boardrl::taskgen {

namespace {

using json = nlohmann::json;

std::uint64_t encode_state(const env::WidgetBoard& b, int num_values) {
  std::uint64_t code = 0;
  for (int w : b.widgets) code = code * num_values + static_cast<std::uint64_t>(w);
  code = code * (b.widgets.size() + 1) + (b.selected ? static_cast<std::uint64_t>(*b.selected)
                                                     : b.widgets.size());
  return code;
}

std::vector<env::ActionToken> candidate_moves(const env::EnvConfig& cfg) {
  std::vector<env::ActionToken> moves;
  for (int i = 0; i < cfg.num_widgets; ++i) moves.push_back({env::Verb::Select, i});
  for (int v = 0; v < cfg.num_values; ++v) moves.push_back({env::Verb::Set, v});
  for (int i = 0; i < cfg.num_widgets; ++i) moves.push_back({env::Verb::Toggle, i});
  return moves;
}

}  // namespace

std::optional<std::vector<env::ActionToken>> shortest_solution(const env::WidgetBoard& board,
                                                               const std::map<int, int>& goal,
                                                               const env::EnvConfig& cfg) {
  if (!env::goal_in_range(goal, cfg)) return std::nullopt;
  if (env::goal_satisfied(goal, board)) return std::vector<env::ActionToken>{};

  const auto moves = candidate_moves(cfg);
  struct Visit {
    std::uint64_t parent;
    env::ActionToken action;
  };
  std::unordered_map<std::uint64_t, Visit> visited;
  std::unordered_map<std::uint64_t, env::WidgetBoard> boards;
  std::deque<std::uint64_t> frontier;

  const std::uint64_t start = encode_state(board, cfg.num_values);
  visited[start] = {start, {}};
  boards[start] = board;
  frontier.push_back(start);

  while (!frontier.empty()) {
    const std::uint64_t cur = frontier.front();
    frontier.pop_front();
    const env::WidgetBoard cur_board = boards[cur];
    for (const auto& mv : moves) {
      env::WidgetBoard nb = env::step(cur_board, mv, cfg);
      const std::uint64_t code = encode_state(nb, cfg.num_values);
      if (visited.count(code)) continue;
      visited[code] = {cur, mv};
      if (env::goal_satisfied(goal, nb)) {
        std::vector<env::ActionToken> path;
        std::uint64_t at = code;
        while (at != start) {
          path.push_back(visited[at].action);
          at = visited[at].parent;
        }
        std::reverse(path.begin(), path.end());
        return path;
      }
      boards[code] = std::move(nb);
      frontier.push_back(code);
    }
  }
  return std::nullopt;
}

std::string render_instruction(const std::map<int, int>& goal, int variant) {
  std::vector<std::string> clauses;
  for (const auto& [w, v] : goal) {
    std::ostringstream c;
    switch (variant % 3) {
      case 0: c << "set widget " << w << " to value " << v; break;
      case 1: c << "make widget " << w << " show value " << v; break;
      default: c << "widget " << w << " reads value " << v; break;
    }
    clauses.push_back(c.str());
  }
  std::ostringstream out;
  switch (variant % 3) {
    case 0: out << "Please "; break;
    case 1: out << "On the board, "; break;
    default: out << "Adjust the board so that "; break;
  }
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    if (i > 0) out << (variant % 3 == 1 ? ", then " : " and ");
    out << clauses[i];
  }
  out << ".";
  return out.str();
}

std::map<int, int> parse_instruction(const std::string& text) {
  static const std::regex pat(R"(widget\s+(\d+)[^0-9]*value\s+(\d+))",
                              std::regex::icase);
  std::map<int, int> goal;
  auto begin = std::sregex_iterator(text.begin(), text.end(), pat);
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    goal[std::stoi((*it)[1])] = std::stoi((*it)[2]);
  }
  return goal;
}

std::string family_key(const env::Task& task) {
  std::vector<int> widgets;
  std::vector<int> values;
  for (const auto& [w, v] : task.goal) {
    widgets.push_back(w);
    values.push_back(v);
  }
  std::sort(values.begin(), values.end());
  std::ostringstream out;
  if (!task.feasible) out << "oob:";
  out << "w{";
  for (std::size_t i = 0; i < widgets.size(); ++i) out << (i ? "," : "") << widgets[i];
  out << "}|v{";
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << values[i];
  out << "}";
  return out.str();
}

namespace {

std::string semantic_signature(const std::map<int, int>& goal, bool feasible) {
  std::ostringstream out;
  out << (feasible ? "f:" : "i:");
  for (const auto& [w, v] : goal) out << w << "=" << v << ";";
  return out.str();
}

std::vector<int> exemplar_goal_sizes(const std::vector<env::Task>& exemplars) {
  std::vector<int> sizes;
  for (const auto& t : exemplars) {
    if (!t.goal.empty()) sizes.push_back(static_cast<int>(t.goal.size()));
  }
  if (sizes.empty()) sizes.push_back(2);
  return sizes;
}

}  // namespace

TaskGenerator::TaskGenerator(GenSpec spec, env::EnvConfig cfg, std::uint64_t seed)
    : spec_(std::move(spec)), cfg_(cfg), rng_(mix_seed(seed, fnv1a("taskgen"))) {
  if (spec_.exemplars.empty()) throw TaskGenError("taskgen: exemplar list is empty");
  if (spec_.min_task_steps > cfg_.max_steps) {
    throw TaskGenError("taskgen: min_task_steps exceeds the episode step cap");
  }
  if (spec_.candidates_per_call <= 0) throw TaskGenError("taskgen: candidates_per_call must be positive");
  for (const auto& t : spec_.exemplars) seen_[semantic_signature(t.goal, t.feasible)]++;
}

std::optional<env::Task> TaskGenerator::propose(const env::WidgetBoard& board_init,
                                                bool make_infeasible) {
  const auto sizes = exemplar_goal_sizes(spec_.exemplars);
  const int g = std::min(sizes[rng_.uniform_int(static_cast<int>(sizes.size()))], cfg_.num_widgets);

  std::vector<int> widgets(cfg_.num_widgets);
  std::iota(widgets.begin(), widgets.end(), 0);
  for (int i = 0; i < g; ++i) {  // partial Fisher-Yates
    std::swap(widgets[i], widgets[i + rng_.uniform_int(cfg_.num_widgets - i)]);
  }
  std::map<int, int> goal;
  for (int i = 0; i < g; ++i) goal[widgets[i]] = rng_.uniform_int(cfg_.num_values);

  if (make_infeasible) {
    auto it = goal.begin();
    std::advance(it, rng_.uniform_int(static_cast<int>(goal.size())));
    const auto [w, v] = *it;
    goal.erase(it);
    if (rng_.uniform() < 0.5) goal[cfg_.num_widgets + rng_.uniform_int(2)] = v;
    else goal[w] = cfg_.num_values + rng_.uniform_int(2);
  }

  env::Task task;
  task.goal = goal;
  task.feasible = !make_infeasible;
  task.board_widgets = cfg_.num_widgets;
  task.board_values = cfg_.num_values;

  if (task.feasible) {
    task.gen_board = board_init.widgets;
    auto sol = shortest_solution(board_init, goal, cfg_);
    if (!sol) return std::nullopt;
    const int steps = static_cast<int>(sol->size()) + 1;  // trailing Terminate
    if (steps < spec_.min_task_steps || steps > cfg_.max_steps) return std::nullopt;
    task.min_steps = steps;
    task.witness = std::move(*sol);
    task.witness.push_back({env::Verb::Terminate, -1});
  }

  const std::string sig = semantic_signature(task.goal, task.feasible);
  if (seen_.count(sig)) return std::nullopt;

  task.domain_tag = family_key(task);
  const int fam = family_counts_[task.domain_tag];
  if (issued_ >= 8 &&
      fam + 1 > spec_.max_family_share * (issued_ + 1)) {
    return std::nullopt;
  }

  task.id = "gen-" + std::to_string(issued_);
  task.instruction_text = render_instruction(task.goal, rng_.uniform_int(3));

  seen_[sig]++;
  family_counts_[task.domain_tag]++;
  ++issued_;
  return task;
}

std::vector<env::Task> TaskGenerator::generate_batch(const env::WidgetBoard& board_init) {
  if (static_cast<int>(board_init.widgets.size()) != cfg_.num_widgets) {
    throw TaskGenError("generate_batch: board size does not match the environment");
  }
  std::vector<env::Task> out;
  for (int c = 0; c < spec_.candidates_per_call; ++c) {
    // Decide the slot's type up front so rejection sampling (dedup, step
    // window) cannot skew the realized infeasible share.
    const bool make_infeasible = rng_.uniform() < spec_.infeasible_fraction;
    for (int attempt = 0; attempt < spec_.dedup_retries; ++attempt) {
      if (auto t = propose(board_init, make_infeasible)) {
        out.push_back(std::move(*t));
        break;
      }
    }
  }
  if (out.empty()) {
    throw TaskGenError("generate_batch: no admissible candidate after " +
                       std::to_string(spec_.dedup_retries) + " attempts per slot");
  }
  return out;
}

TaskPool build_training_pool(const GenSpec& spec, const env::EnvConfig& cfg, int total_tasks,
                             std::uint64_t seed, double test_fraction) {
  if (total_tasks <= 0) throw TaskGenError("build_training_pool: total_tasks must be positive");
  TaskGenerator gen(spec, cfg, seed);
  Rng boards(mix_seed(seed, fnv1a("pool-boards")));

  std::vector<env::Task> all;
  int dry_boards = 0;
  while (static_cast<int>(all.size()) < total_tasks) {
    env::WidgetBoard b;
    b.widgets.resize(cfg.num_widgets);
    for (auto& w : b.widgets) w = boards.uniform_int(cfg.num_values);
    try {
      auto batch = gen.generate_batch(b);
      for (auto& t : batch) {
        if (static_cast<int>(all.size()) < total_tasks) all.push_back(std::move(t));
      }
      dry_boards = 0;
    } catch (const TaskGenError&) {
      if (++dry_boards > 50) throw;
    }
  }

  Rng shuffle(mix_seed(seed, fnv1a("pool-split")));
  for (int i = static_cast<int>(all.size()) - 1; i > 0; --i) {
    std::swap(all[i], all[shuffle.uniform_int(i + 1)]);
  }
  const int test_count = static_cast<int>(std::lround(total_tasks * test_fraction));
  TaskPool pool;
  pool.test.assign(all.end() - test_count, all.end());
  pool.train.assign(all.begin(), all.end() - test_count);
  return pool;
}

std::string adapter_request_json(const AdapterRequest& req) {
  json j;
  j["exemplars"] = req.exemplar_texts;
  json obs;
  try {
    obs = json::parse(req.observation_json);
  } catch (const json::parse_error&) {
    obs = req.observation_json;
  }
  j["observation"] = obs;
  j["count"] = req.count;
  return j.dump();
}

std::vector<std::string> external_generator_adapter(const AdapterRequest& req,
                                                    const TextTransport& transport,
                                                    int max_retries) {
  if (req.count <= 0) throw TaskGenError("adapter: count must be positive");
  const std::string payload = adapter_request_json(req);
  std::string issue;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    const std::string resp = transport(payload);
    std::vector<std::string> lines;
    std::istringstream in(resp);
    std::string line;
    while (std::getline(in, line)) {
      const auto a = line.find_first_not_of(" \t\r");
      if (a == std::string::npos) continue;
      const auto b = line.find_last_not_of(" \t\r");
      lines.push_back(line.substr(a, b - a + 1));
    }
    if (static_cast<int>(lines.size()) == req.count) return lines;
    issue = "expected " + std::to_string(req.count) + " lines, got " +
            std::to_string(lines.size());
  }
  throw TaskGenError("adapter: malformed response after retries (" + issue + ")");
}

TextTransport make_stub_transport(const GenSpec& spec, const env::EnvConfig& cfg,
                                  std::uint64_t seed) {
  std::vector<int> sizes;
  for (const auto& t : spec.exemplars) {
    if (!t.goal.empty()) sizes.push_back(static_cast<int>(t.goal.size()));
  }
  if (sizes.empty()) sizes.push_back(2);
  return [sizes, cfg, seed](const std::string& request_json) -> std::string {
    const json req = json::parse(request_json);
    const int count = req.at("count").get<int>();
    Rng rng(mix_seed(seed, fnv1a(request_json)));
    std::ostringstream out;
    for (int i = 0; i < count; ++i) {
      const int g = std::min(sizes[rng.uniform_int(static_cast<int>(sizes.size()))],
                             cfg.num_widgets);
      std::vector<int> widgets(cfg.num_widgets);
      std::iota(widgets.begin(), widgets.end(), 0);
      for (int k = 0; k < g; ++k) {
        std::swap(widgets[k], widgets[k + rng.uniform_int(cfg.num_widgets - k)]);
      }
      std::map<int, int> goal;
      for (int k = 0; k < g; ++k) goal[widgets[k]] = rng.uniform_int(cfg.num_values);
      out << render_instruction(goal, rng.uniform_int(3)) << "\n";
    }
    return out.str();
  };
}

std::vector<env::Task> tasks_from_instructions(const std::vector<std::string>& lines,
                                               const env::WidgetBoard& board_init,
                                               const env::EnvConfig& cfg, const GenSpec& spec,
                                               std::string id_prefix) {
  std::vector<env::Task> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto goal = parse_instruction(lines[i]);
    if (goal.empty()) continue;
    env::Task t;
    t.goal = goal;
    t.feasible = env::goal_in_range(goal, cfg);
    t.board_widgets = cfg.num_widgets;
    t.board_values = cfg.num_values;
    t.instruction_text = lines[i];
    t.id = id_prefix + std::to_string(i);
    t.domain_tag = family_key(t);
    if (t.feasible) {
      t.gen_board = board_init.widgets;
      auto sol = shortest_solution(board_init, goal, cfg);
      if (!sol) continue;
      const int steps = static_cast<int>(sol->size()) + 1;
      if (steps < spec.min_task_steps || steps > cfg.max_steps) continue;
      t.min_steps = steps;
      t.witness = std::move(*sol);
      t.witness.push_back({env::Verb::Terminate, -1});
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace boardrl::taskgen
