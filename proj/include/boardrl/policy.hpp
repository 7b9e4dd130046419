#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "boardrl/env.hpp"
#include "boardrl/rng.hpp"

namespace boardrl::policy {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Token alphabet for a board of given dims: the six verbs, then
/// max(num_widgets, num_values) shared argument tokens, then END.
/// BOS is never emitted; it only exists as a feature slot.
struct Vocab {
  int num_widgets = 0;
  int num_values = 0;

  static constexpr int kSelect = 0;
  static constexpr int kSet = 1;
  static constexpr int kToggle = 2;
  static constexpr int kNoop = 3;
  static constexpr int kTerminate = 4;
  static constexpr int kFail = 5;
  static constexpr int kNumVerbs = 6;

  int arg_count() const { return std::max(num_widgets, num_values); }
  int size() const { return kNumVerbs + arg_count() + 1; }
  int arg_token(int k) const { return kNumVerbs + k; }
  int end_token() const { return kNumVerbs + arg_count(); }
  /// Feature-only slot index, one past the real vocabulary.
  int bos_slot() const { return size(); }

  bool is_verb(int t) const { return t >= 0 && t < kNumVerbs; }
  bool is_arg(int t) const { return t >= kNumVerbs && t < end_token(); }
  int arg_of(int t) const { return t - kNumVerbs; }
  static int verb_token(env::Verb v) { return static_cast<int>(v); }
  static env::Verb token_verb(int t) { return static_cast<env::Verb>(t); }

  std::string token_name(int t) const;
  std::vector<std::string> token_names() const;
};

/// Which tokens may legally extend an action prefix, and how complete
/// prefixes parse. Malformed or truncated prefixes parse to nothing; callers
/// substitute NOOP.
struct ActionGrammar {
  Vocab vocab;

  std::vector<char> allowed(std::span<const int> prefix) const;
  std::optional<env::ActionToken> parse(std::span<const int> tokens) const;
};

/// Fixed feature map over (task, observation, action prefix). Blocks, in
/// order: goal target one-hots, goal-out-of-range bit, board value one-hots,
/// selection one-hot (incl. "none"), per-widget goal-mismatch bits, target
/// value of the selected widget when unmet, all-goals-met bit, last-token
/// one-hot (BOS slot when the prefix is empty), constant bias.
struct Featurizer {
  env::EnvConfig cfg;
  Vocab vocab;

  struct Blocks {
    int goal, goal_invalid, board, selected, mismatch, selected_unmet, satisfied, last_token, bias, end;
  };

  explicit Featurizer(const env::EnvConfig& c) : cfg(c), vocab{c.num_widgets, c.num_values} {}

  Blocks blocks() const;
  int dim() const { return blocks().end; }

  Vector featurize(const env::Task& task, const env::Observation& obs,
                   std::span<const int> prefix) const;
};

struct PolicyParams {
  Matrix weights;  // vocab_size x feature_dim
};

inline PolicyParams zero_params(const Vocab& vocab, int feature_dim) {
  return {Matrix::Zero(vocab.size(), feature_dim)};
}

/// The three weight matrices the training loop juggles: theta is live,
/// theta_old is the rollout snapshot, theta_ref anchors the KL penalty.
struct PolicyTriplet {
  PolicyParams theta;
  PolicyParams theta_old;
  PolicyParams theta_ref;
  std::uint64_t snapshot_id = 0;

  void refresh_snapshot() {
    theta_old = theta;
    ++snapshot_id;
  }
  void freeze_reference() { theta_ref = theta; }
};

PolicyTriplet make_triplet(const PolicyParams& params);

/// Log-softmax over the whole vocabulary. Throws on non-finite logits.
Vector token_logprobs(const PolicyParams& params, const Vector& features);

/// d log pi(token | features) / d weights, exact: (onehot - probs) * features^T.
Matrix grad_logprob(const PolicyParams& params, const Vector& features, int token);

struct SamplingConfig {
  double temperature = 0.5;
  double top_p = 0.9;
  double freq_penalty = 1.0;
  int max_tokens_per_action = 4;
};

/// Probability vector actually sampled from, applying in order: grammar mask
/// (optional), additive frequency penalty against tokens already emitted in
/// this action, temperature, then nucleus truncation with stable ordering.
Vector sampling_distribution(const Vector& logprobs, const SamplingConfig& cfg,
                             std::span<const int> emitted,
                             const std::vector<char>* allowed);

struct SampledAction {
  std::vector<int> tokens;
  std::vector<double> logprobs;  // always the raw theta_old log-probs
  bool truncated = false;
};

/// Token-by-token draw from theta_old. Recorded log-probs are the unmodified
/// full-softmax values; the sampling transforms shape selection only.
SampledAction sample_action(const PolicyTriplet& triplet, const Featurizer& feat,
                            const env::Task& task, const env::Observation& obs,
                            const SamplingConfig& cfg, Rng& rng,
                            const ActionGrammar* grammar);

}  // namespace boardrl::policy
