#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "boardrl/env.hpp"
#include "boardrl/rng.hpp"

namespace boardrl::reward {

enum class EvidenceMode { FullTrajectory, FinalStateOnly };
enum class VoteScheme { Single, Majority, Unanimous };

std::string vote_scheme_to_string(VoteScheme s);
VoteScheme vote_scheme_from_string(const std::string& s);
std::string evidence_mode_to_string(EvidenceMode m);
EvidenceMode evidence_mode_from_string(const std::string& s);

/// Parametric stand-in for a learned verifier: flips the true label with
/// label-conditional rates. Seeing the agent's own response raises the
/// false-positive rate; judging from the final state alone degrades both.
struct NoisyEstimatorModel {
  double fp_rate = 0.3;
  double fn_rate = 0.25;
  bool uses_response = false;
  double response_fp_bonus = 0.15;
  EvidenceMode evidence_mode = EvidenceMode::FullTrajectory;
  double final_state_fp_penalty = 0.1;
  double final_state_fn_penalty = 0.1;

  double effective_fp() const;
  double effective_fn() const;
};

/// Ground truth from the simulator.
int oracle_reward(const env::Task& task, const env::Trajectory& traj);

/// One noisy vote on a trajectory with known oracle label.
int noisy_vote(const NoisyEstimatorModel& model, int oracle_label, Rng& rng);

struct VoteRecord {
  std::vector<int> votes;
  VoteScheme scheme = VoteScheme::Unanimous;
  int result = 0;
};

/// Single: the one vote. Majority: strictly more than half (ties fail).
/// Unanimous: every vote must be 1.
int aggregate_votes(const std::vector<int>& votes, VoteScheme scheme);

VoteRecord voted_reward(const NoisyEstimatorModel& model, int oracle_label, int num_votes,
                        VoteScheme scheme, Rng& rng);

struct PrecisionRecall {
  std::optional<double> precision;  // absent when nothing was marked positive
  std::optional<double> recall;     // absent when nothing is truly positive
};

PrecisionRecall precision_recall(const std::vector<int>& estimated,
                                 const std::vector<int>& oracle);

/// Monte-Carlo precision/recall of a voting configuration against synthetic
/// oracle labels drawn at `base_rate`.
PrecisionRecall measure_precision_recall(const NoisyEstimatorModel& model, int num_votes,
                                         VoteScheme scheme, long samples, double base_rate,
                                         std::uint64_t seed);

// ---- adapter to an external judge -------------------------------------------
//
// The judge replies with free text whose last non-empty line must be exactly
// "SCORE: 0" or "SCORE: 1".

struct RewardParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Extract the verdict; nullopt if the reply violates the contract.
std::optional<int> parse_score_response(const std::string& text);

using JudgeTransport = std::function<std::string(const std::string& request_json)>;

struct EvaluatorAdapter {
  JudgeTransport transport;
  int max_retries = 2;

  /// One judged vote. Retries malformed replies, then throws RewardParseError.
  int judge(const std::string& instruction, const std::string& evidence_json) const;
};

/// In-process judge faking a model endpoint: wraps the parametric noise model
/// and renders a chatty reply ending in a SCORE line.
JudgeTransport make_stub_judge(const NoisyEstimatorModel& model, int oracle_label,
                               std::uint64_t seed);

}  // namespace boardrl::reward
