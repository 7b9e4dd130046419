#pragma once

#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "boardrl/policy.hpp"
#include "boardrl/rollout.hpp"

namespace boardrl::grpo {

using policy::Matrix;
using policy::Vector;

struct AdvantageResult {
  std::vector<double> advantages;
  bool degenerate = false;  // zero reward spread; advantages all zero
  double mean = 0.0;
  double stddev = 0.0;  // population
};

/// Group-relative advantages: (r - mean) / population std.
AdvantageResult advantages(const std::vector<int>& rewards);

enum class KlEstimator { K2, K3 };

std::string kl_estimator_to_string(KlEstimator e);
KlEstimator kl_estimator_from_string(const std::string& s);

/// Per-token KL penalty value. With d = logp_ref - logp_theta:
///   k2: d^2 / 2
///   k3: exp(d) - d - 1   (computed as expm1(d) - d)
double kl_value(KlEstimator e, double logp_theta, double logp_ref);

/// Coefficient gc such that the penalty's exact contribution to the policy
/// gradient is beta * gc * grad logp_theta:
///   k2: logp_ref - logp_theta
///   k3: expm1(logp_ref - logp_theta)
double kl_grad_coeff(KlEstimator e, double logp_theta, double logp_ref);

struct GrpoConfig {
  double epsilon_clip = 0.2;
  double beta_kl = 0.1;
  KlEstimator kl_estimator = KlEstimator::K2;
};

struct KlStats {
  double mean_kl = 0.0;
  double max_delta = 0.0;  // max over tokens of logp_theta - logp_ref
  double min_delta = 0.0;
  bool overflow = false;
  long tokens = 0;
};

// Featurized token tables. The low-level evaluators work on these directly so
// they run on synthetic data of any shape, independent of the simulator.
struct TokenEval {
  Vector features;
  int token = 0;
  double logp_old = 0.0;
};
struct SeqEval {
  std::vector<TokenEval> tokens;
};
struct TrajEval {
  std::vector<SeqEval> seqs;
  double advantage = 0.0;
  std::string tag;
};

struct ObjectiveResult {
  double value = 0.0;
  KlStats kl;
};

struct GradientResult {
  Matrix grad;
  KlStats kl;
  double norm = 0.0;
};

struct GradientError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Clipped surrogate minus the KL penalty, token-mean within each sequence,
/// sequence-mean across the whole batch.
ObjectiveResult objective_eval(std::span<const TrajEval> trajs, const Matrix& theta,
                               const Matrix& theta_ref, const GrpoConfig& cfg);

/// Exact gradient of objective_eval under the single-update regime: requires
/// theta to still match the snapshot that produced logp_old (ratios all 1, so
/// the clip is inert and each token contributes (A + beta*gc) grad logp).
/// Throws GradientError if theta has drifted or the gradient goes non-finite.
GradientResult gradient_eval(std::span<const TrajEval> trajs, const Matrix& theta,
                             const Matrix& theta_ref, const GrpoConfig& cfg);

/// Plain log-likelihood ascent gradient (advantage-weighted, no ratio, no KL
/// penalty, no snapshot requirement). This is the fine-tuning baseline's
/// gradient; pass advantage 1 for kept trajectories.
GradientResult likelihood_gradient(std::span<const TrajEval> trajs, const Matrix& theta);

/// Expand a collected batch into token tables (features recomputed from the
/// recorded observations and prefixes).
std::vector<TrajEval> batch_evals(const rollout::TrainBatch& batch,
                                  const policy::Featurizer& feat);

ObjectiveResult objective(const rollout::TrainBatch& batch, const policy::PolicyTriplet& triplet,
                          const policy::Featurizer& feat, const GrpoConfig& cfg);
GradientResult gradient(const rollout::TrainBatch& batch, const policy::PolicyTriplet& triplet,
                        const policy::Featurizer& feat, const GrpoConfig& cfg);

/// AdamW with bias correction and decoupled weight decay. Minimizes: callers
/// training by ascent pass the negated objective gradient.
struct OptimizerState {
  Matrix m;
  Matrix v;
  long step = 0;
  double learning_rate = 2e-6;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.0;
  double eps = 1e-8;
};

OptimizerState make_optimizer(const Matrix& like, double learning_rate);

/// One step on theta, then refresh the rollout snapshot (theta_old = theta).
/// theta_ref is untouched. Throws on non-finite inputs or results.
void update(OptimizerState& opt, policy::PolicyTriplet& triplet, const Matrix& loss_grad);

/// CSV of both estimators' gradient coefficients over a grid of
/// delta = logp_theta - logp_ref.
void write_gc_curve(std::ostream& out, double lo = -6.0, double hi = 6.0, double step = 0.05);

}  // namespace boardrl::grpo
