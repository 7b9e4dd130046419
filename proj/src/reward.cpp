#include "boardrl/reward.hpp"

#include <algorithm>
#include <memory>
#include <sstream>

namespace boardrl::reward {

std::string vote_scheme_to_string(VoteScheme s) {
  switch (s) {
    case VoteScheme::Single: return "single";
    case VoteScheme::Majority: return "majority";
    case VoteScheme::Unanimous: return "unanimous";
  }
  throw std::logic_error("vote_scheme_to_string: bad value");
}

VoteScheme vote_scheme_from_string(const std::string& s) {
  if (s == "single") return VoteScheme::Single;
  if (s == "majority") return VoteScheme::Majority;
  if (s == "unanimous") return VoteScheme::Unanimous;
  throw std::invalid_argument("vote_scheme_from_string: '" + s + "'");
}

std::string evidence_mode_to_string(EvidenceMode m) {
  return m == EvidenceMode::FullTrajectory ? "full_trajectory" : "final_state_only";
}

EvidenceMode evidence_mode_from_string(const std::string& s) {
  if (s == "full_trajectory") return EvidenceMode::FullTrajectory;
  if (s == "final_state_only") return EvidenceMode::FinalStateOnly;
  throw std::invalid_argument("evidence_mode_from_string: '" + s + "'");
}

double NoisyEstimatorModel::effective_fp() const {
  double fp = fp_rate;
  if (uses_response) fp += response_fp_bonus;
  if (evidence_mode == EvidenceMode::FinalStateOnly) fp += final_state_fp_penalty;
  return std::clamp(fp, 0.0, 1.0);
}

double NoisyEstimatorModel::effective_fn() const {
  double fn = fn_rate;
  if (evidence_mode == EvidenceMode::FinalStateOnly) fn += final_state_fn_penalty;
  return std::clamp(fn, 0.0, 1.0);
}

int oracle_reward(const env::Task& task, const env::Trajectory& traj) {
  return env::verify(task, traj);
}

int noisy_vote(const NoisyEstimatorModel& model, int oracle_label, Rng& rng) {
  if (oracle_label != 0 && oracle_label != 1)
    throw std::invalid_argument("noisy_vote: label must be 0 or 1");
  const double u = rng.uniform();
  if (oracle_label == 1) return u < model.effective_fn() ? 0 : 1;
  return u < model.effective_fp() ? 1 : 0;
}

int aggregate_votes(const std::vector<int>& votes, VoteScheme scheme) {
  if (votes.empty()) throw std::invalid_argument("aggregate_votes: no votes");
  const int ones = static_cast<int>(std::count(votes.begin(), votes.end(), 1));
  switch (scheme) {
    case VoteScheme::Single:
      if (votes.size() != 1) throw std::invalid_argument("aggregate_votes: single scheme expects one vote");
      return votes[0];
    case VoteScheme::Majority:
      return 2 * ones > static_cast<int>(votes.size()) ? 1 : 0;
    case VoteScheme::Unanimous:
      return ones == static_cast<int>(votes.size()) ? 1 : 0;
  }
  throw std::logic_error("aggregate_votes: bad scheme");
}

VoteRecord voted_reward(const NoisyEstimatorModel& model, int oracle_label, int num_votes,
                        VoteScheme scheme, Rng& rng) {
  if (num_votes <= 0) throw std::invalid_argument("voted_reward: num_votes must be positive");
  VoteRecord rec;
  rec.scheme = scheme;
  rec.votes.reserve(num_votes);
  for (int i = 0; i < num_votes; ++i) rec.votes.push_back(noisy_vote(model, oracle_label, rng));
  rec.result = aggregate_votes(rec.votes, scheme);
  return rec;
}

PrecisionRecall precision_recall(const std::vector<int>& estimated,
                                 const std::vector<int>& oracle) {
  if (estimated.size() != oracle.size())
    throw std::invalid_argument("precision_recall: length mismatch");
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    if (estimated[i] == 1 && oracle[i] == 1) ++tp;
    else if (estimated[i] == 1) ++fp;
    else if (oracle[i] == 1) ++fn;
  }
  PrecisionRecall pr;
  if (tp + fp > 0) pr.precision = static_cast<double>(tp) / (tp + fp);
  if (tp + fn > 0) pr.recall = static_cast<double>(tp) / (tp + fn);
  return pr;
}

PrecisionRecall measure_precision_recall(const NoisyEstimatorModel& model, int num_votes,
                                         VoteScheme scheme, long samples, double base_rate,
                                         std::uint64_t seed) {
  Rng rng(mix_seed(seed, fnv1a("pr-measure")));
  std::vector<int> est, truth;
  est.reserve(samples);
  truth.reserve(samples);
  for (long i = 0; i < samples; ++i) {
    const int label = rng.uniform() < base_rate ? 1 : 0;
    truth.push_back(label);
    est.push_back(voted_reward(model, label, num_votes, scheme, rng).result);
  }
  return precision_recall(est, truth);
}

std::optional<int> parse_score_response(const std::string& text) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line)) {
    const auto a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    const auto b = line.find_last_not_of(" \t\r");
    last = line.substr(a, b - a + 1);
  }
  if (last == "SCORE: 0") return 0;
  if (last == "SCORE: 1") return 1;
  return std::nullopt;
}

int EvaluatorAdapter::judge(const std::string& instruction, const std::string& evidence_json) const {
  std::ostringstream req;
  req << "{\"instruction\":\"" << instruction << "\",\"evidence\":" << evidence_json << "}";
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    const std::string reply = transport(req.str());
    if (auto score = parse_score_response(reply)) return *score;
  }
  throw RewardParseError("judge: reply missing a terminal SCORE line after retries");
}

JudgeTransport make_stub_judge(const NoisyEstimatorModel& model, int oracle_label,
                               std::uint64_t seed) {
  auto counter = std::make_shared<std::uint64_t>(0);
  return [model, oracle_label, seed, counter](const std::string& request) -> std::string {
    Rng rng(mix_seed(mix_seed(seed, fnv1a(request)), (*counter)++));
    const int vote = noisy_vote(model, oracle_label, rng);
    std::ostringstream out;
    out << "The recorded interaction was reviewed against the instruction.\n";
    out << (vote ? "The final state matches the request.\n" : "The goal does not appear met.\n");
    out << "SCORE: " << vote << "\n";
    return out.str();
  };
}

}  // namespace boardrl::reward
