#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "boardrl/serialize.hpp"
#include "boardrl/trainer.hpp"

namespace fs = std::filesystem;
using namespace boardrl;

namespace {

io::json g_error;  // last structured error, mirrored to run_dir/error.json when possible
std::optional<fs::path> g_run_dir;

void note_output(io::json& manifest, const std::string& name) {
  manifest["outputs"].push_back(name);
}

io::json make_manifest(const std::string& command, const trainer::RunConfig* cfg) {
  io::json m;
  m["command"] = command;
  if (cfg) m["seed"] = cfg->seed;
  m["outputs"] = io::json::array();
  return m;
}

void finish_manifest(const fs::path& run_dir, io::json& manifest) {
  manifest["status"] = "ok";
  io::write_json(run_dir / "manifest.json", manifest);
}

fs::path prepare_run_dir(const std::string& dir, const trainer::RunConfig* cfg) {
  fs::path p(dir);
  fs::create_directories(p);
  g_run_dir = p;
  if (cfg) io::write_json(p / "config.json", io::run_config_to_json(*cfg));
  return p;
}

trainer::RunConfig load_config(const std::string& path) {
  return io::read_run_config(path);
}

int cmd_gen_tasks(const std::string& config_path, const std::string& run_dir) {
  auto cfg = load_config(config_path);
  auto dir = prepare_run_dir(run_dir, &cfg);
  auto manifest = make_manifest("gen-tasks", &cfg);
  auto pool = taskgen::build_training_pool(cfg.gen, cfg.env, cfg.total_tasks, cfg.seed,
                                           cfg.test_fraction);
  io::write_task_set(dir / "tasks_train.json", pool.train);
  io::write_task_set(dir / "tasks_test.json", pool.test);
  note_output(manifest, "tasks_train.json");
  note_output(manifest, "tasks_test.json");
  finish_manifest(dir, manifest);
  std::cout << "generated " << pool.train.size() << " train / " << pool.test.size()
            << " test tasks under " << dir.string() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& run_dir,
              const std::string& stage_sel, const std::string& train_tasks_path,
              const std::string& test_tasks_path, const std::string& checkpoint_in) {
  auto cfg = load_config(config_path);
  auto dir = prepare_run_dir(run_dir, &cfg);
  auto manifest = make_manifest("train", &cfg);
  manifest["stage"] = stage_sel;

  int stages = 3;
  if (stage_sel == "1") stages = 1;
  else if (stage_sel == "2") stages = 2;
  else if (stage_sel != "both") throw std::invalid_argument("--stage must be 1, 2, or both");

  taskgen::TaskPool pool;
  if (!train_tasks_path.empty()) pool.train = io::read_task_set(train_tasks_path);
  if (!test_tasks_path.empty()) pool.test = io::read_task_set(test_tasks_path);
  if ((stages & 1 && pool.train.empty()) || (stages & 2 && pool.test.empty())) {
    auto generated = taskgen::build_training_pool(cfg.gen, cfg.env, cfg.total_tasks, cfg.seed,
                                                  cfg.test_fraction);
    if (pool.train.empty()) pool.train = std::move(generated.train);
    if (pool.test.empty()) pool.test = std::move(generated.test);
    io::write_task_set(dir / "tasks_train.json", pool.train);
    io::write_task_set(dir / "tasks_test.json", pool.test);
    note_output(manifest, "tasks_train.json");
    note_output(manifest, "tasks_test.json");
  }

  policy::PolicyTriplet triplet;
  if (!checkpoint_in.empty()) {
    auto ck = io::load_checkpoint(checkpoint_in);
    if (ck.num_widgets != cfg.env.num_widgets || ck.num_values != cfg.env.num_values) {
      throw std::runtime_error("checkpoint dims do not match the configured environment");
    }
    triplet = std::move(ck.triplet);
  } else {
    triplet = trainer::init_policy(cfg);
  }

  std::ofstream kl_stream(dir / "kl_stats.jsonl");
  std::ofstream traj_stream;
  trainer::RunWriter writer;
  writer.kl_stats = &kl_stream;
  if (cfg.log_trajectories) {
    traj_stream.open(dir / "trajectories.jsonl");
    writer.trajectories = &traj_stream;
  }
  note_output(manifest, "kl_stats.jsonl");
  if (cfg.log_trajectories) note_output(manifest, "trajectories.jsonl");

  auto result = trainer::run(cfg, pool, triplet, stages, &writer);
  if (result.stage1) {
    io::write_json(dir / "report_stage1.json", io::stage_report_to_json(*result.stage1));
    note_output(manifest, "report_stage1.json");
  }
  if (result.stage2) {
    io::write_json(dir / "report_stage2.json", io::stage_report_to_json(*result.stage2));
    note_output(manifest, "report_stage2.json");
  }

  io::Checkpoint ck;
  ck.triplet = triplet;
  ck.seed = cfg.seed;
  ck.stage_tag = stages == 3 ? "both" : (stages == 1 ? "stage1" : "stage2");
  ck.num_widgets = cfg.env.num_widgets;
  ck.num_values = cfg.env.num_values;
  io::save_checkpoint(dir / "checkpoint.json", ck);
  note_output(manifest, "checkpoint.json");
  finish_manifest(dir, manifest);

  auto brief = [](const char* name, const trainer::StageReport& r) {
    std::cout << name << ": SR " << r.before.full.success_rate << " -> "
              << r.after.full.success_rate << " over " << r.updates.size() << " updates"
              << (r.aborted ? " (aborted: " + r.abort_reason + ")" : "") << "\n";
  };
  if (result.stage1) brief("stage1", *result.stage1);
  if (result.stage2) brief("stage2", *result.stage2);
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
             const std::string& tasks_path, const std::string& out_path) {
  auto cfg = load_config(config_path);
  auto ck = io::load_checkpoint(checkpoint_path);
  if (ck.num_widgets != cfg.env.num_widgets || ck.num_values != cfg.env.num_values) {
    throw std::runtime_error("checkpoint dims do not match the configured environment");
  }
  auto tasks = io::read_task_set(tasks_path);
  auto eval = trainer::evaluate(ck.triplet.theta, tasks, cfg, mix_seed(cfg.seed, fnv1a("cli-eval")));
  auto j = io::split_eval_to_json(eval);
  if (out_path.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    io::write_json(out_path, j);
  }
  return 0;
}

int cmd_gc_curve(const std::string& out_path) {
  if (out_path.empty()) {
    grpo::write_gc_curve(std::cout);
  } else {
    fs::path p(out_path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot open for writing: " + out_path);
    grpo::write_gc_curve(out);
  }
  return 0;
}

int cmd_emit_figures(const std::string& run_dir) {
  fs::path dir(run_dir);
  if (!fs::is_directory(dir)) throw std::runtime_error("emit-figures: no such run dir: " + run_dir);
  g_run_dir = dir;
  auto manifest = make_manifest("emit-figures", nullptr);

  {
    std::ofstream out(dir / "gc_curve.csv");
    grpo::write_gc_curve(out);
    note_output(manifest, "gc_curve.csv");
  }
  const fs::path kl = dir / "kl_stats.jsonl";
  if (!fs::exists(kl)) {
    throw std::runtime_error("emit-figures: missing log " + kl.string() +
                             " (run `train` in this directory first)");
  }
  {
    std::ofstream out(dir / "kl_summary.csv");
    io::write_kl_summary_csv(kl, out);
    note_output(manifest, "kl_summary.csv");
  }
  // Reassemble the beta sweep table when sweep subruns are present.
  std::vector<std::pair<double, double>> rows;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind("beta_", 0) != 0) continue;
    const fs::path report = entry.path() / "report_stage1.json";
    if (!fs::exists(report)) continue;
    const auto j = io::read_json(report);
    rows.emplace_back(std::stod(name.substr(5)),
                      j.at("after").at("feasible").at("success_rate").get<double>());
  }
  if (!rows.empty()) {
    std::sort(rows.begin(), rows.end());
    std::ofstream out(dir / "beta_sweep.csv");
    out << "beta,success_rate\n";
    for (const auto& [b, sr] : rows) out << b << "," << sr << "\n";
    note_output(manifest, "beta_sweep.csv");
  }
  finish_manifest(dir, manifest);
  std::cout << "wrote";
  for (const auto& name : manifest.at("outputs")) std::cout << " " << name.get<std::string>();
  std::cout << " under " << run_dir << "\n";
  return 0;
}

trainer::StageReport quick_stage1(const trainer::RunConfig& cfg, trainer::RunWriter* writer) {
  auto pool = taskgen::build_training_pool(cfg.gen, cfg.env, cfg.total_tasks, cfg.seed,
                                           cfg.test_fraction);
  auto triplet = trainer::init_policy(cfg);
  return trainer::train_stage("stage1", cfg, cfg.stage1, cfg.stage1.reward_source, pool.train,
                              triplet, writer);
}

int cmd_ablate(const std::string& config_path, const std::string& run_dir,
               const std::string& axis) {
  auto cfg = load_config(config_path);
  auto dir = prepare_run_dir(run_dir, &cfg);
  auto manifest = make_manifest("ablate", &cfg);
  manifest["axis"] = axis;
  const long pr_samples = 20000;
  const double base_rate = 0.3;

  auto pr_row = [&](std::ostream& out, const std::string& label,
                    const reward::NoisyEstimatorModel& model, int votes,
                    reward::VoteScheme scheme) {
    auto pr = reward::measure_precision_recall(model, votes, scheme, pr_samples, base_rate,
                                               cfg.seed);
    out << label << "," << votes << "," << pr.precision.value_or(-1) << ","
        << pr.recall.value_or(-1) << "\n";
  };

  if (axis == "voting") {
    std::ofstream out(dir / "voting_ablation.csv");
    out << "scheme,votes,precision,recall\n";
    pr_row(out, "single", cfg.reward.model, 1, reward::VoteScheme::Single);
    pr_row(out, "majority", cfg.reward.model, cfg.reward.num_votes, reward::VoteScheme::Majority);
    pr_row(out, "unanimous", cfg.reward.model, cfg.reward.num_votes, reward::VoteScheme::Unanimous);
    note_output(manifest, "voting_ablation.csv");
  } else if (axis == "response") {
    std::ofstream out(dir / "response_ablation.csv");
    out << "uses_response,votes,precision,recall\n";
    auto off = cfg.reward.model, on = cfg.reward.model;
    off.uses_response = false;
    on.uses_response = true;
    pr_row(out, "false", off, 1, reward::VoteScheme::Single);
    pr_row(out, "true", on, 1, reward::VoteScheme::Single);
    note_output(manifest, "response_ablation.csv");
  } else if (axis == "evidence") {
    std::ofstream out(dir / "evidence_ablation.csv");
    out << "evidence_mode,votes,precision,recall\n";
    auto full = cfg.reward.model, fin = cfg.reward.model;
    full.evidence_mode = reward::EvidenceMode::FullTrajectory;
    fin.evidence_mode = reward::EvidenceMode::FinalStateOnly;
    pr_row(out, "full_trajectory", full, 1, reward::VoteScheme::Single);
    pr_row(out, "final_state_only", fin, 1, reward::VoteScheme::Single);
    note_output(manifest, "evidence_ablation.csv");
  } else if (axis == "kl") {
    std::ofstream out(dir / "kl_ablation.csv");
    out << "estimator,update,grad_norm,mean_kl,min_delta,max_delta\n";
    for (auto est : {grpo::KlEstimator::K2, grpo::KlEstimator::K3}) {
      auto c = cfg;
      c.objective.kl_estimator = est;
      auto report = quick_stage1(c, nullptr);
      for (const auto& u : report.updates) {
        out << grpo::kl_estimator_to_string(est) << "," << u.update << "," << u.grad_norm << ","
            << u.mean_kl << "," << u.min_delta << "," << u.max_delta << "\n";
      }
    }
    note_output(manifest, "kl_ablation.csv");
  } else if (axis == "infeasible") {
    std::ofstream out(dir / "infeasible_ablation.csv");
    out << "infeasible_fraction,feasible_sr,infeasible_sr\n";
    const double on_frac = cfg.gen.infeasible_fraction > 0 ? cfg.gen.infeasible_fraction : 0.15;
    for (double frac : {0.0, on_frac}) {
      auto c = cfg;
      c.gen.infeasible_fraction = frac;
      auto report = quick_stage1(c, nullptr);
      out << frac << "," << report.after.feasible.success_rate << ","
          << report.after.infeasible.success_rate << "\n";
    }
    note_output(manifest, "infeasible_ablation.csv");
  } else if (axis == "mode") {
    std::ofstream out(dir / "mode_ablation.csv");
    out << "mode,before_sr,after_sr\n";
    for (auto mode :
         {trainer::TrainingMode::OnlineRl, trainer::TrainingMode::OnlineRft,
          trainer::TrainingMode::OfflineRft}) {
      auto c = cfg;
      c.mode = mode;
      auto report = quick_stage1(c, nullptr);
      out << trainer::training_mode_to_string(mode) << "," << report.before.feasible.success_rate
          << "," << report.after.feasible.success_rate << "\n";
    }
    note_output(manifest, "mode_ablation.csv");
  } else if (axis == "beta") {
    std::ofstream out(dir / "beta_sweep.csv");
    out << "beta,success_rate\n";
    for (double beta : {0.0, 0.01, 0.1, 1.0}) {
      auto c = cfg;
      c.objective.beta_kl = beta;
      auto report = quick_stage1(c, nullptr);
      std::ostringstream name;
      name << "beta_" << beta;
      fs::create_directories(dir / name.str());
      io::write_json(dir / name.str() / "report_stage1.json", io::stage_report_to_json(report));
      out << beta << "," << report.after.feasible.success_rate << "\n";
    }
    note_output(manifest, "beta_sweep.csv");
  } else {
    throw std::invalid_argument(
        "--axis must be one of voting, response, evidence, kl, infeasible, mode, beta");
  }
  finish_manifest(dir, manifest);
  return 0;
}

std::string classify_error(const std::exception& e) {
  if (dynamic_cast<const taskgen::TaskGenError*>(&e)) return "taskgen";
  if (dynamic_cast<const rollout::StarvationError*>(&e)) return "starvation";
  if (dynamic_cast<const reward::RewardParseError*>(&e)) return "reward_parse";
  if (dynamic_cast<const grpo::GradientError*>(&e)) return "gradient";
  if (dynamic_cast<const io::json::exception*>(&e)) return "json";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid_argument";
  return "runtime";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"widget-board RL: task generation, noisy-reward training, evaluation"};
  app.require_subcommand(1);

  std::string config_path, run_dir, stage_sel = "both";
  std::string train_tasks, test_tasks, checkpoint_in, tasks_path, out_path, axis;

  auto* gen = app.add_subcommand("gen-tasks", "generate a task pool and write train/test sets");
  gen->add_option("--config", config_path, "run config JSON")->required();
  gen->add_option("--run-dir", run_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "run the training pipeline");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--run-dir", run_dir, "output directory")->required();
  train->add_option("--stage", stage_sel, "1, 2, or both (default both)");
  train->add_option("--train-tasks", train_tasks, "existing train task set JSON");
  train->add_option("--test-tasks", test_tasks, "existing test task set JSON");
  train->add_option("--checkpoint", checkpoint_in, "resume from checkpoint");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a task set");
  eval->add_option("--config", config_path, "run config JSON")->required();
  eval->add_option("--checkpoint", checkpoint_in, "checkpoint JSON")->required();
  eval->add_option("--tasks", tasks_path, "task set JSON")->required();
  eval->add_option("--out", out_path, "report path (stdout when omitted)");

  auto* ablate = app.add_subcommand("ablate", "paired runs / measurements along one axis");
  ablate->add_option("--config", config_path, "run config JSON")->required();
  ablate->add_option("--run-dir", run_dir, "output directory")->required();
  ablate->add_option("--axis", axis, "voting|response|evidence|kl|infeasible|mode|beta")->required();

  auto* figures = app.add_subcommand("emit-figures", "regenerate CSV tables from run logs");
  figures->add_option("--run-dir", run_dir, "run directory with logs")->required();

  auto* gc = app.add_subcommand("gc-curve", "write the KL gradient-coefficient curve CSV");
  gc->add_option("--out", out_path, "output path (stdout when omitted)");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_tasks(config_path, run_dir);
    if (train->parsed())
      return cmd_train(config_path, run_dir, stage_sel, train_tasks, test_tasks, checkpoint_in);
    if (eval->parsed()) return cmd_eval(config_path, checkpoint_in, tasks_path, out_path);
    if (ablate->parsed()) return cmd_ablate(config_path, run_dir, axis);
    if (figures->parsed()) return cmd_emit_figures(run_dir);
    if (gc->parsed()) return cmd_gc_curve(out_path);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    g_error = io::error_record(classify_error(e), e.what());
    std::cerr << g_error.dump() << "\n";
    if (g_run_dir) {
      try {
        io::write_json(*g_run_dir / "error.json", g_error);
      } catch (...) {
      }
    }
    return 1;
  }
}
