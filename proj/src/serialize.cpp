#include "boardrl/serialize.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace boardrl::io {

namespace {

json goal_to_json(const std::map<int, int>& goal) {
  json g = json::object();
  for (const auto& [w, v] : goal) g[std::to_string(w)] = v;
  return g;
}

std::map<int, int> goal_from_json(const json& g) {
  std::map<int, int> goal;
  for (auto it = g.begin(); it != g.end(); ++it) goal[std::stoi(it.key())] = it.value().get<int>();
  return goal;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  return in;
}

}  // namespace

json task_to_json(const env::Task& t) {
  json j;
  j["id"] = t.id;
  j["instruction_text"] = t.instruction_text;
  j["goal"] = goal_to_json(t.goal);
  j["feasible"] = t.feasible;
  j["domain_tag"] = t.domain_tag;
  j["min_steps"] = t.min_steps;
  j["board_widgets"] = t.board_widgets;
  j["board_values"] = t.board_values;
  if (!t.witness.empty()) {
    json w = json::array();
    for (const auto& a : t.witness) w.push_back(env::action_to_string(a));
    j["witness"] = w;
  }
  if (!t.gen_board.empty()) j["gen_board"] = t.gen_board;
  return j;
}

env::Task task_from_json(const json& j) {
  env::Task t;
  t.id = j.at("id").get<std::string>();
  t.instruction_text = j.at("instruction_text").get<std::string>();
  t.goal = goal_from_json(j.at("goal"));
  t.feasible = j.at("feasible").get<bool>();
  t.domain_tag = j.at("domain_tag").get<std::string>();
  t.min_steps = j.at("min_steps").get<int>();
  t.board_widgets = j.value("board_widgets", 0);
  t.board_values = j.value("board_values", 0);
  if (j.contains("witness")) {
    for (const auto& s : j.at("witness")) t.witness.push_back(env::action_from_string(s.get<std::string>()));
  }
  if (j.contains("gen_board")) t.gen_board = j.at("gen_board").get<std::vector<int>>();
  return t;
}

void write_task_set(const std::filesystem::path& path, const std::vector<env::Task>& tasks) {
  json arr = json::array();
  for (const auto& t : tasks) arr.push_back(task_to_json(t));
  auto out = open_out(path);
  out << arr.dump(2) << "\n";
}

std::vector<env::Task> read_task_set(const std::filesystem::path& path) {
  auto in = open_in(path);
  json arr = json::parse(in);
  if (!arr.is_array()) throw std::runtime_error("task set must be a JSON array: " + path.string());
  std::vector<env::Task> tasks;
  for (const auto& j : arr) tasks.push_back(task_from_json(j));
  return tasks;
}

namespace {

json board_to_json(const env::WidgetBoard& b) {
  json j;
  j["widgets"] = b.widgets;
  if (b.selected) j["selected"] = *b.selected;
  else j["selected"] = nullptr;
  return j;
}

env::WidgetBoard board_from_json(const json& j) {
  env::WidgetBoard b;
  b.widgets = j.at("widgets").get<std::vector<int>>();
  if (!j.at("selected").is_null()) b.selected = j.at("selected").get<int>();
  return b;
}

}  // namespace

json trajectory_to_json(const env::Trajectory& traj) {
  json j;
  j["task_id"] = traj.task_id;
  j["termination"] = env::termination_to_string(traj.termination);
  j["final_board"] = board_to_json(traj.final_board);
  j["snapshot_id"] = traj.snapshot_id;
  json steps = json::array();
  for (const auto& s : traj.steps) {
    json o;
    o["board"] = board_to_json(s.obs.board);
    o["step_index"] = s.obs.step_index;
    o["action"] = env::action_to_string(s.action);
    o["tokens"] = s.tokens;
    o["logprobs"] = s.logprobs;
    if (s.truncated) o["truncated"] = true;
    steps.push_back(std::move(o));
  }
  j["steps"] = std::move(steps);
  return j;
}

env::Trajectory trajectory_from_json(const json& j) {
  env::Trajectory traj;
  traj.task_id = j.at("task_id").get<std::string>();
  traj.termination = env::termination_from_string(j.at("termination").get<std::string>());
  traj.final_board = board_from_json(j.at("final_board"));
  traj.snapshot_id = j.value("snapshot_id", 0ull);
  for (const auto& o : j.at("steps")) {
    env::Step s;
    s.obs.board = board_from_json(o.at("board"));
    s.obs.step_index = o.at("step_index").get<int>();
    s.action = env::action_from_string(o.at("action").get<std::string>());
    s.tokens = o.at("tokens").get<std::vector<int>>();
    s.logprobs = o.at("logprobs").get<std::vector<double>>();
    s.truncated = o.value("truncated", false);
    traj.steps.push_back(std::move(s));
  }
  return traj;
}

void append_trajectory_lines(std::ostream& out, const rollout::TrajectoryGroup& group) {
  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    json line = trajectory_to_json(group.trajectories[i]);
    line["reward"] = group.rewards[i];
    if (i < group.advantages.size()) line["advantage"] = group.advantages[i];
    if (i < group.votes.size()) {
      line["votes"] = group.votes[i].votes;
      line["vote_scheme"] = reward::vote_scheme_to_string(group.votes[i].scheme);
    }
    out << line.dump() << "\n";
  }
}

std::vector<json> read_json_lines(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<json> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    lines.push_back(json::parse(line));
  }
  return lines;
}

namespace {

json matrix_to_flat(const policy::Matrix& m) {
  json arr = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) arr.push_back(m(r, c));
  }
  return arr;
}

policy::Matrix matrix_from_flat(const json& arr, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(arr.size()) != rows * cols) {
    throw std::runtime_error("checkpoint: weight array size does not match header dims");
  }
  policy::Matrix m(rows, cols);
  Eigen::Index i = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = arr[i++].get<double>();
  }
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const policy::Vocab vocab{ck.num_widgets, ck.num_values};
  json j;
  json header;
  header["rows"] = ck.triplet.theta.weights.rows();
  header["cols"] = ck.triplet.theta.weights.cols();
  header["num_widgets"] = ck.num_widgets;
  header["num_values"] = ck.num_values;
  header["vocab"] = vocab.token_names();
  header["seed"] = ck.seed;
  header["stage_tag"] = ck.stage_tag;
  header["snapshot_id"] = ck.triplet.snapshot_id;
  j["header"] = std::move(header);
  j["theta"] = matrix_to_flat(ck.triplet.theta.weights);
  j["theta_old"] = matrix_to_flat(ck.triplet.theta_old.weights);
  j["theta_ref"] = matrix_to_flat(ck.triplet.theta_ref.weights);
  if (ck.has_optimizer) {
    json opt;
    opt["m"] = matrix_to_flat(ck.optimizer.m);
    opt["v"] = matrix_to_flat(ck.optimizer.v);
    opt["step"] = ck.optimizer.step;
    opt["learning_rate"] = ck.optimizer.learning_rate;
    opt["beta1"] = ck.optimizer.beta1;
    opt["beta2"] = ck.optimizer.beta2;
    opt["weight_decay"] = ck.optimizer.weight_decay;
    opt["eps"] = ck.optimizer.eps;
    j["optimizer"] = std::move(opt);
  }
  auto out = open_out(path);
  out << j.dump() << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto in = open_in(path);
  const json j = json::parse(in);
  const json& header = j.at("header");
  Checkpoint ck;
  const auto rows = header.at("rows").get<Eigen::Index>();
  const auto cols = header.at("cols").get<Eigen::Index>();
  ck.num_widgets = header.at("num_widgets").get<int>();
  ck.num_values = header.at("num_values").get<int>();
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.stage_tag = header.at("stage_tag").get<std::string>();
  const policy::Vocab vocab{ck.num_widgets, ck.num_values};
  if (header.at("vocab").get<std::vector<std::string>>() != vocab.token_names()) {
    throw std::runtime_error("checkpoint: vocabulary listing does not match dims");
  }
  ck.triplet.theta.weights = matrix_from_flat(j.at("theta"), rows, cols);
  ck.triplet.theta_old.weights = matrix_from_flat(j.at("theta_old"), rows, cols);
  ck.triplet.theta_ref.weights = matrix_from_flat(j.at("theta_ref"), rows, cols);
  ck.triplet.snapshot_id = header.value("snapshot_id", 1ull);
  if (j.contains("optimizer")) {
    const json& opt = j.at("optimizer");
    ck.optimizer.m = matrix_from_flat(opt.at("m"), rows, cols);
    ck.optimizer.v = matrix_from_flat(opt.at("v"), rows, cols);
    ck.optimizer.step = opt.at("step").get<long>();
    ck.optimizer.learning_rate = opt.at("learning_rate").get<double>();
    ck.optimizer.beta1 = opt.at("beta1").get<double>();
    ck.optimizer.beta2 = opt.at("beta2").get<double>();
    ck.optimizer.weight_decay = opt.at("weight_decay").get<double>();
    ck.optimizer.eps = opt.at("eps").get<double>();
    ck.has_optimizer = true;
  }
  return ck;
}

namespace {

json sampling_to_json(const policy::SamplingConfig& s) {
  return {{"temperature", s.temperature},
          {"top_p", s.top_p},
          {"freq_penalty", s.freq_penalty},
          {"max_tokens_per_action", s.max_tokens_per_action}};
}

void sampling_from_json(const json& j, policy::SamplingConfig& s) {
  s.temperature = j.value("temperature", s.temperature);
  s.top_p = j.value("top_p", s.top_p);
  s.freq_penalty = j.value("freq_penalty", s.freq_penalty);
  s.max_tokens_per_action = j.value("max_tokens_per_action", s.max_tokens_per_action);
}

json stage_to_json(const trainer::StageSettings& s) {
  return {{"epochs", s.epochs},
          {"max_updates", s.max_updates},
          {"reward_source", trainer::reward_source_to_string(s.reward_source)}};
}

void stage_from_json(const json& j, trainer::StageSettings& s) {
  s.epochs = j.value("epochs", s.epochs);
  s.max_updates = j.value("max_updates", s.max_updates);
  if (j.contains("reward_source")) {
    s.reward_source = trainer::reward_source_from_string(j.at("reward_source").get<std::string>());
  }
}

}  // namespace

json run_config_to_json(const trainer::RunConfig& cfg) {
  json j;
  j["env"] = {{"num_widgets", cfg.env.num_widgets},
              {"num_values", cfg.env.num_values},
              {"max_steps", cfg.env.max_steps}};

  json gen;
  json exemplars = json::array();
  for (const auto& t : cfg.gen.exemplars) exemplars.push_back(task_to_json(t));
  gen["exemplars"] = std::move(exemplars);
  gen["candidates_per_call"] = cfg.gen.candidates_per_call;
  gen["infeasible_fraction"] = cfg.gen.infeasible_fraction;
  gen["min_task_steps"] = cfg.gen.min_task_steps;
  gen["max_family_share"] = cfg.gen.max_family_share;
  j["gen"] = std::move(gen);
  j["total_tasks"] = cfg.total_tasks;
  j["test_fraction"] = cfg.test_fraction;
  j["seed"] = cfg.seed;

  j["reward"] = {{"fp_rate", cfg.reward.model.fp_rate},
                 {"fn_rate", cfg.reward.model.fn_rate},
                 {"uses_response", cfg.reward.model.uses_response},
                 {"response_fp_bonus", cfg.reward.model.response_fp_bonus},
                 {"evidence_mode", reward::evidence_mode_to_string(cfg.reward.model.evidence_mode)},
                 {"final_state_fp_penalty", cfg.reward.model.final_state_fp_penalty},
                 {"final_state_fn_penalty", cfg.reward.model.final_state_fn_penalty},
                 {"num_votes", cfg.reward.num_votes},
                 {"vote_scheme", reward::vote_scheme_to_string(cfg.reward.scheme)}};

  j["objective"] = {{"epsilon_clip", cfg.objective.epsilon_clip},
                    {"beta_kl", cfg.objective.beta_kl},
                    {"kl_estimator", grpo::kl_estimator_to_string(cfg.objective.kl_estimator)}};

  j["sampling"] = sampling_to_json(cfg.sampling);

  j["collect"] = {{"group_size", cfg.collect.group_size},
                  {"batch_threshold", cfg.collect.batch_threshold},
                  {"threshold_mode",
                   cfg.collect.threshold_mode == rollout::ThresholdMode::Sequences ? "sequences"
                                                                                   : "tokens"},
                  {"starvation_limit", cfg.collect.starvation_limit},
                  {"workers", cfg.collect.workers}};
  j["mask_sampling"] = cfg.mask_sampling;

  j["mode"] = trainer::training_mode_to_string(cfg.mode);
  j["stage1"] = stage_to_json(cfg.stage1);
  j["stage2"] = stage_to_json(cfg.stage2);
  j["eval"] = {{"trials", cfg.eval.trials}, {"k", cfg.eval.k}};

  j["learning_rate"] = cfg.learning_rate;
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["weight_decay"] = cfg.weight_decay;
  j["init_terminal_bias"] = cfg.init_terminal_bias;
  j["log_trajectories"] = cfg.log_trajectories;
  return j;
}

trainer::RunConfig run_config_from_json(const json& j) {
  static const std::vector<std::string> known = {
      "env",      "gen",        "total_tasks", "test_fraction", "seed",
      "reward",   "objective",  "sampling",    "collect",       "mask_sampling",
      "mode",     "stage1",     "stage2",      "eval",          "learning_rate",
      "adam_beta1", "adam_beta2", "weight_decay", "init_terminal_bias", "log_trajectories"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw std::runtime_error("config: unknown key '" + it.key() + "'");
    }
  }

  trainer::RunConfig cfg;
  if (j.contains("env")) {
    const json& e = j.at("env");
    cfg.env.num_widgets = e.value("num_widgets", cfg.env.num_widgets);
    cfg.env.num_values = e.value("num_values", cfg.env.num_values);
    cfg.env.max_steps = e.value("max_steps", cfg.env.max_steps);
  }
  if (j.contains("gen")) {
    const json& g = j.at("gen");
    if (g.contains("exemplars")) {
      for (const auto& t : g.at("exemplars")) cfg.gen.exemplars.push_back(task_from_json(t));
    }
    cfg.gen.candidates_per_call = g.value("candidates_per_call", cfg.gen.candidates_per_call);
    cfg.gen.infeasible_fraction = g.value("infeasible_fraction", cfg.gen.infeasible_fraction);
    cfg.gen.min_task_steps = g.value("min_task_steps", cfg.gen.min_task_steps);
    cfg.gen.max_family_share = g.value("max_family_share", cfg.gen.max_family_share);
  }
  cfg.total_tasks = j.value("total_tasks", cfg.total_tasks);
  cfg.test_fraction = j.value("test_fraction", cfg.test_fraction);
  cfg.seed = j.value("seed", cfg.seed);

  if (j.contains("reward")) {
    const json& r = j.at("reward");
    cfg.reward.model.fp_rate = r.value("fp_rate", cfg.reward.model.fp_rate);
    cfg.reward.model.fn_rate = r.value("fn_rate", cfg.reward.model.fn_rate);
    cfg.reward.model.uses_response = r.value("uses_response", cfg.reward.model.uses_response);
    cfg.reward.model.response_fp_bonus =
        r.value("response_fp_bonus", cfg.reward.model.response_fp_bonus);
    if (r.contains("evidence_mode")) {
      cfg.reward.model.evidence_mode =
          reward::evidence_mode_from_string(r.at("evidence_mode").get<std::string>());
    }
    cfg.reward.model.final_state_fp_penalty =
        r.value("final_state_fp_penalty", cfg.reward.model.final_state_fp_penalty);
    cfg.reward.model.final_state_fn_penalty =
        r.value("final_state_fn_penalty", cfg.reward.model.final_state_fn_penalty);
    cfg.reward.num_votes = r.value("num_votes", cfg.reward.num_votes);
    if (r.contains("vote_scheme")) {
      cfg.reward.scheme = reward::vote_scheme_from_string(r.at("vote_scheme").get<std::string>());
    }
  }
  if (j.contains("objective")) {
    const json& o = j.at("objective");
    cfg.objective.epsilon_clip = o.value("epsilon_clip", cfg.objective.epsilon_clip);
    cfg.objective.beta_kl = o.value("beta_kl", cfg.objective.beta_kl);
    if (o.contains("kl_estimator")) {
      cfg.objective.kl_estimator =
          grpo::kl_estimator_from_string(o.at("kl_estimator").get<std::string>());
    }
  }
  if (j.contains("sampling")) sampling_from_json(j.at("sampling"), cfg.sampling);
  if (j.contains("collect")) {
    const json& c = j.at("collect");
    cfg.collect.group_size = c.value("group_size", cfg.collect.group_size);
    cfg.collect.batch_threshold = c.value("batch_threshold", cfg.collect.batch_threshold);
    if (c.contains("threshold_mode")) {
      const auto mode = c.at("threshold_mode").get<std::string>();
      if (mode == "sequences") cfg.collect.threshold_mode = rollout::ThresholdMode::Sequences;
      else if (mode == "tokens") cfg.collect.threshold_mode = rollout::ThresholdMode::Tokens;
      else throw std::runtime_error("config: threshold_mode must be 'sequences' or 'tokens'");
    }
    cfg.collect.starvation_limit = c.value("starvation_limit", cfg.collect.starvation_limit);
    cfg.collect.workers = c.value("workers", cfg.collect.workers);
  }
  cfg.mask_sampling = j.value("mask_sampling", cfg.mask_sampling);
  if (j.contains("mode")) cfg.mode = trainer::training_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("stage1")) stage_from_json(j.at("stage1"), cfg.stage1);
  if (j.contains("stage2")) stage_from_json(j.at("stage2"), cfg.stage2);
  if (j.contains("eval")) {
    cfg.eval.trials = j.at("eval").value("trials", cfg.eval.trials);
    cfg.eval.k = j.at("eval").value("k", cfg.eval.k);
  }
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.adam_beta1 = j.value("adam_beta1", cfg.adam_beta1);
  cfg.adam_beta2 = j.value("adam_beta2", cfg.adam_beta2);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.init_terminal_bias = j.value("init_terminal_bias", cfg.init_terminal_bias);
  cfg.log_trajectories = j.value("log_trajectories", cfg.log_trajectories);
  return cfg;
}

trainer::RunConfig read_run_config(const std::filesystem::path& path) {
  auto in = open_in(path);
  return run_config_from_json(json::parse(in));
}

json aggregate_to_json(const metrics::Aggregate& a) {
  return {{"success_rate", a.success_rate},
          {"pass_k", a.pass_k},
          {"all_pass_k", a.all_pass_k},
          {"tasks", a.tasks}};
}

json split_eval_to_json(const trainer::SplitEval& e) {
  return {{"full", aggregate_to_json(e.full)},
          {"feasible", aggregate_to_json(e.feasible)},
          {"infeasible", aggregate_to_json(e.infeasible)}};
}

json update_log_to_json(const trainer::UpdateLog& u) {
  return {{"update", u.update},
          {"objective", u.objective},
          {"mean_kl", u.mean_kl},
          {"max_delta", u.max_delta},
          {"min_delta", u.min_delta},
          {"kl_overflow", u.kl_overflow},
          {"mean_reward", u.mean_reward},
          {"grad_norm", u.grad_norm},
          {"kept_groups", u.kept_groups},
          {"discarded_groups", u.discarded_groups},
          {"sequences", u.sequences},
          {"tokens", u.tokens},
          {"skipped", u.skipped}};
}

json stage_report_to_json(const trainer::StageReport& r) {
  json j;
  j["stage"] = r.stage;
  j["before"] = split_eval_to_json(r.before);
  j["after"] = split_eval_to_json(r.after);
  j["oracle_reads_during_training"] = r.oracle_reads_during_training;
  j["aborted"] = r.aborted;
  if (r.aborted) j["abort_reason"] = r.abort_reason;
  json updates = json::array();
  for (const auto& u : r.updates) updates.push_back(update_log_to_json(u));
  j["updates"] = std::move(updates);
  return j;
}

json kl_stats_line(int update, const grpo::KlStats& stats) {
  return {{"update", update},
          {"mean_kl", stats.mean_kl},
          {"max_delta", stats.max_delta},
          {"min_delta", stats.min_delta},
          {"overflow", stats.overflow},
          {"tokens", stats.tokens}};
}

void write_kl_summary_csv(const std::filesystem::path& jsonl, std::ostream& out) {
  const auto lines = read_json_lines(jsonl);
  out << "update,mean_kl,max_delta,min_delta\n";
  for (const auto& l : lines) {
    out << l.at("update").get<int>() << "," << l.at("mean_kl").get<double>() << ","
        << l.at("max_delta").get<double>() << "," << l.at("min_delta").get<double>() << "\n";
  }
}

json error_record(const std::string& type, const std::string& message) {
  return {{"error", {{"type", type}, {"message", message}}}};
}

void write_json(const std::filesystem::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

json read_json(const std::filesystem::path& path) {
  auto in = open_in(path);
  return json::parse(in);
}

}  // namespace boardrl::io
