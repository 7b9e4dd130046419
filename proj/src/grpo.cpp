#include "boardrl/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace boardrl::grpo {

AdvantageResult advantages(const std::vector<int>& rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("advantages: need at least two rewards");
  AdvantageResult out;
  const double n = static_cast<double>(rewards.size());
  double sum = 0.0;
  for (int r : rewards) sum += r;
  out.mean = sum / n;
  double ss = 0.0;
  for (int r : rewards) ss += (r - out.mean) * (r - out.mean);
  out.stddev = std::sqrt(ss / n);
  out.advantages.resize(rewards.size(), 0.0);
  if (out.stddev == 0.0) {
    out.degenerate = true;
    return out;
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out.advantages[i] = (rewards[i] - out.mean) / out.stddev;
  }
  return out;
}

std::string kl_estimator_to_string(KlEstimator e) {
  return e == KlEstimator::K2 ? "k2" : "k3";
}

KlEstimator kl_estimator_from_string(const std::string& s) {
  if (s == "k2") return KlEstimator::K2;
  if (s == "k3") return KlEstimator::K3;
  throw std::invalid_argument("kl_estimator_from_string: '" + s + "'");
}

double kl_value(KlEstimator e, double logp_theta, double logp_ref) {
  const double d = logp_ref - logp_theta;
  if (e == KlEstimator::K2) return 0.5 * d * d;
  return std::expm1(d) - d;
}

double kl_grad_coeff(KlEstimator e, double logp_theta, double logp_ref) {
  const double d = logp_ref - logp_theta;
  if (e == KlEstimator::K2) return d;
  return std::expm1(d);
}

namespace {

void fold_token(KlStats& stats, double delta, double kl) {
  if (stats.tokens == 0) {
    stats.max_delta = delta;
    stats.min_delta = delta;
  } else {
    stats.max_delta = std::max(stats.max_delta, delta);
    stats.min_delta = std::min(stats.min_delta, delta);
  }
  stats.mean_kl += kl;  // running sum; divided once at the end
  if (!std::isfinite(kl)) stats.overflow = true;
  ++stats.tokens;
}

void finish_stats(KlStats& stats) {
  if (stats.tokens > 0) stats.mean_kl /= static_cast<double>(stats.tokens);
}

long total_sequences(std::span<const TrajEval> trajs) {
  long n = 0;
  for (const auto& t : trajs) n += static_cast<long>(t.seqs.size());
  return n;
}

}  // namespace

ObjectiveResult objective_eval(std::span<const TrajEval> trajs, const Matrix& theta,
                               const Matrix& theta_ref, const GrpoConfig& cfg) {
  const long seq_total = total_sequences(trajs);
  if (seq_total == 0) throw std::invalid_argument("objective_eval: empty batch");
  const policy::PolicyParams p_theta{theta};
  const policy::PolicyParams p_ref{theta_ref};

  ObjectiveResult res;
  double total = 0.0;
  for (const auto& traj : trajs) {
    for (const auto& seq : traj.seqs) {
      if (seq.tokens.empty()) throw std::invalid_argument("objective_eval: empty sequence");
      double acc = 0.0;
      for (const auto& tok : seq.tokens) {
        const double lt = policy::token_logprobs(p_theta, tok.features)[tok.token];
        const double lr = policy::token_logprobs(p_ref, tok.features)[tok.token];
        const double ratio = std::exp(lt - tok.logp_old);
        const double clipped =
            std::clamp(ratio, 1.0 - cfg.epsilon_clip, 1.0 + cfg.epsilon_clip);
        const double surr =
            std::min(ratio * traj.advantage, clipped * traj.advantage);
        const double kl = kl_value(cfg.kl_estimator, lt, lr);
        acc += surr - (cfg.beta_kl == 0.0 ? 0.0 : cfg.beta_kl * kl);
        fold_token(res.kl, lt - lr, kl);
      }
      total += acc / static_cast<double>(seq.tokens.size());
    }
  }
  finish_stats(res.kl);
  res.value = total / static_cast<double>(seq_total);
  return res;
}

GradientResult gradient_eval(std::span<const TrajEval> trajs, const Matrix& theta,
                             const Matrix& theta_ref, const GrpoConfig& cfg) {
  const long seq_total = total_sequences(trajs);
  if (seq_total == 0) throw std::invalid_argument("gradient_eval: empty batch");
  const policy::PolicyParams p_theta{theta};
  const policy::PolicyParams p_ref{theta_ref};

  GradientResult res;
  res.grad = Matrix::Zero(theta.rows(), theta.cols());
  const double outer = 1.0 / static_cast<double>(seq_total);
  for (const auto& traj : trajs) {
    for (const auto& seq : traj.seqs) {
      if (seq.tokens.empty()) throw std::invalid_argument("gradient_eval: empty sequence");
      const double inner = outer / static_cast<double>(seq.tokens.size());
      for (const auto& tok : seq.tokens) {
        const Vector lp = policy::token_logprobs(p_theta, tok.features);
        const double lt = lp[tok.token];
        if (std::abs(lt - tok.logp_old) > 1e-9) {
          throw GradientError(
              "gradient_eval: theta no longer matches the rollout snapshot (traj '" +
              traj.tag + "')");
        }
        const double lr = policy::token_logprobs(p_ref, tok.features)[tok.token];
        // beta = 0 removes the penalty term entirely; never multiply into a
        // possibly overflowed coefficient.
        const double penalty =
            cfg.beta_kl == 0.0 ? 0.0 : cfg.beta_kl * kl_grad_coeff(cfg.kl_estimator, lt, lr);
        const double coeff = (traj.advantage + penalty) * inner;
        fold_token(res.kl, lt - lr, kl_value(cfg.kl_estimator, lt, lr));
        if (!std::isfinite(coeff)) {
          std::ostringstream msg;
          msg << "gradient_eval: non-finite token coefficient (traj '" << traj.tag
              << "', token " << tok.token << ", logp_theta " << lt << ", logp_ref " << lr
              << ")";
          throw GradientError(msg.str());
        }
        // (onehot - probs) * phi^T, scaled
        Vector delta = (-lp.array().exp()).matrix();
        delta[tok.token] += 1.0;
        res.grad.noalias() += (coeff * delta) * tok.features.transpose();
      }
    }
  }
  finish_stats(res.kl);
  if (!res.grad.allFinite()) throw GradientError("gradient_eval: non-finite gradient");
  res.norm = res.grad.norm();
  return res;
}

GradientResult likelihood_gradient(std::span<const TrajEval> trajs, const Matrix& theta) {
  const long seq_total = total_sequences(trajs);
  if (seq_total == 0) throw std::invalid_argument("likelihood_gradient: empty batch");
  const policy::PolicyParams p_theta{theta};
  GradientResult res;
  res.grad = Matrix::Zero(theta.rows(), theta.cols());
  const double outer = 1.0 / static_cast<double>(seq_total);
  for (const auto& traj : trajs) {
    for (const auto& seq : traj.seqs) {
      if (seq.tokens.empty()) throw std::invalid_argument("likelihood_gradient: empty sequence");
      const double coeff = traj.advantage * outer / static_cast<double>(seq.tokens.size());
      for (const auto& tok : seq.tokens) {
        const Vector lp = policy::token_logprobs(p_theta, tok.features);
        Vector delta = (-lp.array().exp()).matrix();
        delta[tok.token] += 1.0;
        res.grad.noalias() += (coeff * delta) * tok.features.transpose();
      }
    }
  }
  if (!res.grad.allFinite()) throw GradientError("likelihood_gradient: non-finite gradient");
  res.norm = res.grad.norm();
  return res;
}

std::vector<TrajEval> batch_evals(const rollout::TrainBatch& batch,
                                  const policy::Featurizer& feat) {
  std::vector<TrajEval> out;
  for (const auto& group : batch.groups) {
    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
      const auto& traj = group.trajectories[i];
      TrajEval te;
      te.advantage = group.advantages[i];
      te.tag = traj.task_id;
      for (const auto& step : traj.steps) {
        SeqEval se;
        for (std::size_t k = 0; k < step.tokens.size(); ++k) {
          std::span<const int> prefix(step.tokens.data(), k);
          se.tokens.push_back(
              {feat.featurize(group.task, step.obs, prefix), step.tokens[k], step.logprobs[k]});
        }
        te.seqs.push_back(std::move(se));
      }
      out.push_back(std::move(te));
    }
  }
  return out;
}

namespace {

void check_snapshot(const rollout::TrainBatch& batch, const policy::PolicyTriplet& triplet,
                    const char* who) {
  if (batch.snapshot_id != triplet.snapshot_id) {
    throw std::invalid_argument(std::string(who) +
                                ": batch was collected under a different policy snapshot");
  }
}

}  // namespace

ObjectiveResult objective(const rollout::TrainBatch& batch, const policy::PolicyTriplet& triplet,
                          const policy::Featurizer& feat, const GrpoConfig& cfg) {
  check_snapshot(batch, triplet, "objective");
  const auto evals = batch_evals(batch, feat);
  return objective_eval(evals, triplet.theta.weights, triplet.theta_ref.weights, cfg);
}

GradientResult gradient(const rollout::TrainBatch& batch, const policy::PolicyTriplet& triplet,
                        const policy::Featurizer& feat, const GrpoConfig& cfg) {
  check_snapshot(batch, triplet, "gradient");
  const auto evals = batch_evals(batch, feat);
  return gradient_eval(evals, triplet.theta.weights, triplet.theta_ref.weights, cfg);
}

OptimizerState make_optimizer(const Matrix& like, double learning_rate) {
  OptimizerState opt;
  opt.m = Matrix::Zero(like.rows(), like.cols());
  opt.v = Matrix::Zero(like.rows(), like.cols());
  opt.learning_rate = learning_rate;
  return opt;
}

void update(OptimizerState& opt, policy::PolicyTriplet& triplet, const Matrix& loss_grad) {
  if (loss_grad.rows() != opt.m.rows() || loss_grad.cols() != opt.m.cols()) {
    throw std::invalid_argument("update: gradient shape mismatch");
  }
  if (!loss_grad.allFinite()) throw std::invalid_argument("update: non-finite gradient");
  ++opt.step;
  opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * loss_grad;
  opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * loss_grad.cwiseProduct(loss_grad);
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  Matrix& theta = triplet.theta.weights;
  if (opt.weight_decay != 0.0) theta *= 1.0 - opt.learning_rate * opt.weight_decay;
  theta.array() -=
      opt.learning_rate * (opt.m.array() / bc1) / ((opt.v.array() / bc2).sqrt() + opt.eps);
  if (!theta.allFinite()) throw std::runtime_error("update: parameters went non-finite");
  triplet.refresh_snapshot();
}

void write_gc_curve(std::ostream& out, double lo, double hi, double step) {
  out << "delta,gc_k2,gc_k3\n";
  const int n = static_cast<int>(std::lround((hi - lo) / step));
  for (int i = 0; i <= n; ++i) {
    // grid points land exactly on hundredths so round-trip parsing is exact
    const long cents = std::lround(lo * 100.0) + std::lround(step * 100.0) * i;
    const double delta = cents / 100.0;
    const long mag = std::labs(cents);
    out << (cents < 0 ? "-" : "") << mag / 100 << '.' << mag / 10 % 10 << mag % 10 << ","
        << std::setprecision(17) << kl_grad_coeff(KlEstimator::K2, delta, 0.0) << ","
        << kl_grad_coeff(KlEstimator::K3, delta, 0.0) << "\n";
  }
}

}  // namespace boardrl::grpo
