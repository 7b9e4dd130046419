#include "boardrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace boardrl::policy {

std::string Vocab::token_name(int t) const {
  switch (t) {
    case kSelect: return "SELECT";
    case kSet: return "SET";
    case kToggle: return "TOGGLE";
    case kNoop: return "NOOP";
    case kTerminate: return "TERMINATE";
    case kFail: return "FAIL";
  }
  if (is_arg(t)) return "ARG_" + std::to_string(arg_of(t));
  if (t == end_token()) return "END";
  throw std::invalid_argument("token_name: bad token id " + std::to_string(t));
}

std::vector<std::string> Vocab::token_names() const {
  std::vector<std::string> out;
  out.reserve(size());
  for (int t = 0; t < size(); ++t) out.push_back(token_name(t));
  return out;
}

std::vector<char> ActionGrammar::allowed(std::span<const int> prefix) const {
  std::vector<char> mask(vocab.size(), 0);
  auto allow = [&](int t) { mask[t] = 1; };
  if (prefix.empty()) {
    for (int v = 0; v < Vocab::kNumVerbs; ++v) allow(v);
    return mask;
  }
  const int first = prefix.front();
  if (prefix.size() == 1 && vocab.is_verb(first)) {
    switch (first) {
      case Vocab::kSelect:
      case Vocab::kToggle:
        for (int k = 0; k < vocab.num_widgets; ++k) allow(vocab.arg_token(k));
        return mask;
      case Vocab::kSet:
        for (int k = 0; k < vocab.num_values; ++k) allow(vocab.arg_token(k));
        return mask;
      default:
        allow(vocab.end_token());
        return mask;
    }
  }
  allow(vocab.end_token());
  return mask;
}

std::optional<env::ActionToken> ActionGrammar::parse(std::span<const int> tokens) const {
  if (tokens.empty() || tokens.back() != vocab.end_token()) return std::nullopt;
  if (!vocab.is_verb(tokens.front())) return std::nullopt;
  const auto verb = Vocab::token_verb(tokens.front());
  if (env::verb_takes_arg(verb)) {
    if (tokens.size() != 3 || !vocab.is_arg(tokens[1])) return std::nullopt;
    const int arg = vocab.arg_of(tokens[1]);
    const int limit = verb == env::Verb::Set ? vocab.num_values : vocab.num_widgets;
    if (arg >= limit) return std::nullopt;
    return env::ActionToken{verb, arg};
  }
  if (tokens.size() != 2) return std::nullopt;
  return env::ActionToken{verb, -1};
}

Featurizer::Blocks Featurizer::blocks() const {
  const int W = cfg.num_widgets, V = cfg.num_values;
  Blocks b{};
  b.goal = 0;
  b.goal_invalid = b.goal + W * V;
  b.board = b.goal_invalid + 1;
  b.selected = b.board + W * V;
  b.mismatch = b.selected + W + 1;
  b.selected_unmet = b.mismatch + W;
  b.satisfied = b.selected_unmet + V;
  b.last_token = b.satisfied + 1;
  b.bias = b.last_token + vocab.size() + 1;
  b.end = b.bias + 1;
  return b;
}

Vector Featurizer::featurize(const env::Task& task, const env::Observation& obs,
                             std::span<const int> prefix) const {
  const int W = cfg.num_widgets, V = cfg.num_values;
  if (static_cast<int>(obs.board.widgets.size()) != W)
    throw std::invalid_argument("featurize: board size mismatch");
  const Blocks b = blocks();
  Vector phi = Vector::Zero(b.end);

  bool in_range = true;
  for (const auto& [w, v] : task.goal) {
    if (w < 0 || w >= W || v < 0 || v >= V) {
      in_range = false;
      continue;
    }
    phi[b.goal + w * V + v] = 1.0;
  }
  if (!in_range) phi[b.goal_invalid] = 1.0;

  for (int w = 0; w < W; ++w) phi[b.board + w * V + obs.board.widgets[w]] = 1.0;
  phi[b.selected + (obs.board.selected ? *obs.board.selected : W)] = 1.0;

  bool all_met = in_range;
  for (const auto& [w, v] : task.goal) {
    if (w < 0 || w >= W || v < 0 || v >= V) continue;
    if (obs.board.widgets[w] != v) {
      phi[b.mismatch + w] = 1.0;
      all_met = false;
      if (obs.board.selected && *obs.board.selected == w) phi[b.selected_unmet + v] = 1.0;
    }
  }
  if (all_met && !task.goal.empty()) phi[b.satisfied] = 1.0;

  if (prefix.empty()) {
    phi[b.last_token + vocab.size()] = 1.0;  // BOS slot
  } else {
    const int last = prefix.back();
    if (last < 0 || last >= vocab.size())
      throw std::invalid_argument("featurize: prefix token out of range");
    phi[b.last_token + last] = 1.0;
  }
  phi[b.bias] = 1.0;
  return phi;
}

PolicyTriplet make_triplet(const PolicyParams& params) {
  PolicyTriplet t;
  t.theta = params;
  t.theta_old = params;
  t.theta_ref = params;
  t.snapshot_id = 1;
  return t;
}

Vector token_logprobs(const PolicyParams& params, const Vector& features) {
  if (params.weights.cols() != features.size())
    throw std::invalid_argument("token_logprobs: feature dim mismatch");
  Vector logits = params.weights * features;
  if (!logits.allFinite()) throw std::runtime_error("token_logprobs: non-finite logits");
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

Matrix grad_logprob(const PolicyParams& params, const Vector& features, int token) {
  if (token < 0 || token >= params.weights.rows())
    throw std::invalid_argument("grad_logprob: token out of range");
  Vector probs = token_logprobs(params, features).array().exp();
  Vector delta = -probs;
  delta[token] += 1.0;
  return delta * features.transpose();
}

Vector sampling_distribution(const Vector& logprobs, const SamplingConfig& cfg,
                             std::span<const int> emitted,
                             const std::vector<char>* allowed) {
  const int n = static_cast<int>(logprobs.size());
  if (allowed && static_cast<int>(allowed->size()) != n)
    throw std::invalid_argument("sampling_distribution: mask size mismatch");
  if (!(cfg.temperature > 0.0)) throw std::invalid_argument("sampling_distribution: temperature must be > 0");
  if (!(cfg.top_p > 0.0 && cfg.top_p <= 1.0)) throw std::invalid_argument("sampling_distribution: top_p must be in (0, 1]");

  constexpr double kMasked = -std::numeric_limits<double>::infinity();
  Vector logits = logprobs;
  if (allowed) {
    bool any = false;
    for (int i = 0; i < n; ++i) {
      if ((*allowed)[i]) any = true;
      else logits[i] = kMasked;
    }
    if (!any) throw std::invalid_argument("sampling_distribution: mask rules out every token");
  }
  for (int t : emitted) {
    if (t < 0 || t >= n) throw std::invalid_argument("sampling_distribution: emitted token out of range");
    if (std::isfinite(logits[t])) logits[t] -= cfg.freq_penalty;
  }
  double mx = kMasked;
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(logits[i])) mx = std::max(mx, logits[i]);
  }
  Vector probs = Vector::Zero(n);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(logits[i])) continue;
    probs[i] = std::exp((logits[i] - mx) / cfg.temperature);
    z += probs[i];
  }
  probs /= z;

  if (cfg.top_p < 1.0) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return probs[a] > probs[b]; });
    double cum = 0.0;
    std::vector<char> keep(n, 0);
    for (int idx : order) {
      if (probs[idx] <= 0.0) break;
      keep[idx] = 1;
      cum += probs[idx];
      if (cum >= cfg.top_p) break;
    }
    double kept = 0.0;
    for (int i = 0; i < n; ++i) {
      if (!keep[i]) probs[i] = 0.0;
      kept += probs[i];
    }
    probs /= kept;
  }
  return probs;
}

SampledAction sample_action(const PolicyTriplet& triplet, const Featurizer& feat,
                            const env::Task& task, const env::Observation& obs,
                            const SamplingConfig& cfg, Rng& rng,
                            const ActionGrammar* grammar) {
  SampledAction out;
  const int end = feat.vocab.end_token();
  for (int k = 0; k < cfg.max_tokens_per_action; ++k) {
    const Vector phi = feat.featurize(task, obs, out.tokens);
    const Vector raw = token_logprobs(triplet.theta_old, phi);
    std::vector<char> mask;
    if (grammar) mask = grammar->allowed(out.tokens);
    const Vector dist =
        sampling_distribution(raw, cfg, out.tokens, grammar ? &mask : nullptr);
    const int tok = rng.categorical(std::span<const double>(dist.data(), dist.size()));
    out.tokens.push_back(tok);
    out.logprobs.push_back(raw[tok]);
    if (tok == end) return out;
  }
  out.truncated = true;
  return out;
}

}  // namespace boardrl::policy
