#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "boardrl/env.hpp"
#include "boardrl/rng.hpp"

namespace boardrl::taskgen {

struct GenSpec {
  std::vector<env::Task> exemplars;  // seeds the goal-size distribution; must be non-empty
  int candidates_per_call = 10;
  double infeasible_fraction = 0.0;
  int min_task_steps = 3;        // counts the trailing Terminate
  double max_family_share = 0.4; // cap on any one (widget set, value multiset) family
  int dedup_retries = 200;
};

struct TaskGenError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shortest action sequence (excluding the trailing Terminate) turning
/// `board` into one satisfying `goal`; nullopt when unreachable. BFS over
/// the full (widget values, selection) state graph.
std::optional<std::vector<env::ActionToken>> shortest_solution(
    const env::WidgetBoard& board, const std::map<int, int>& goal, const env::EnvConfig& cfg);

std::string render_instruction(const std::map<int, int>& goal, int variant);

/// Inverse of render_instruction: pull the goal map back out of the text.
std::map<int, int> parse_instruction(const std::string& text);

/// Family key: which widgets a task touches and with what multiset of target
/// values. Used for share balancing and duplicate detection.
std::string family_key(const env::Task& task);

/// Stateful generator: owns the RNG, duplicate ledger, and family counts so
/// successive batches stay balanced across a whole pool.
class TaskGenerator {
 public:
  TaskGenerator(GenSpec spec, env::EnvConfig cfg, std::uint64_t seed);

  /// Up to spec.candidates_per_call fresh tasks whose min_steps are measured
  /// against `board_init`. Throws TaskGenError if nothing admissible can be
  /// produced for this board.
  std::vector<env::Task> generate_batch(const env::WidgetBoard& board_init);

  int issued() const { return issued_; }

 private:
  std::optional<env::Task> propose(const env::WidgetBoard& board_init, bool make_infeasible);

  GenSpec spec_;
  env::EnvConfig cfg_;
  Rng rng_;
  int issued_ = 0;
  std::map<std::string, int> family_counts_;
  std::map<std::string, int> seen_;  // semantic signature -> count
};

struct TaskPool {
  std::vector<env::Task> train;
  std::vector<env::Task> test;
};

/// Generate `total_tasks` and split train:test deterministically.
TaskPool build_training_pool(const GenSpec& spec, const env::EnvConfig& cfg, int total_tasks,
                             std::uint64_t seed, double test_fraction = 1.0 / 3.0);

// ---- adapter to an external instruction generator --------------------------
//
// Request/response are plain text so any line-oriented model endpoint can sit
// behind the transport. The response must contain exactly `count` non-empty
// lines, one instruction each.

struct AdapterRequest {
  std::vector<std::string> exemplar_texts;
  std::string observation_json;
  int count = 0;
};

using TextTransport = std::function<std::string(const std::string& request_json)>;

std::string adapter_request_json(const AdapterRequest& req);

/// Calls the transport, validates the line contract, retries up to
/// max_retries on malformed output, then throws TaskGenError.
std::vector<std::string> external_generator_adapter(const AdapterRequest& req,
                                                    const TextTransport& transport,
                                                    int max_retries = 2);

/// In-process stand-in for a real endpoint: renders instructions from the
/// parametric sampler. Deterministic in (seed, request).
TextTransport make_stub_transport(const GenSpec& spec, const env::EnvConfig& cfg,
                                  std::uint64_t seed);

/// Turn adapter output back into full task records (goal parse + min-steps
/// measurement against the given board). Skips lines that parse to nothing.
std::vector<env::Task> tasks_from_instructions(const std::vector<std::string>& lines,
                                               const env::WidgetBoard& board_init,
                                               const env::EnvConfig& cfg, const GenSpec& spec,
                                               std::string id_prefix);

}  // namespace boardrl::taskgen
