#include "boardrl/metrics.hpp"

#include <stdexcept>

namespace boardrl::metrics {

namespace {

void check_args(int n, int c, int k) {
  if (n <= 0) throw std::invalid_argument("pass@k: n must be positive");
  if (c < 0 || c > n) throw std::invalid_argument("pass@k: need 0 <= c <= n");
  if (k < 1 || k > n) throw std::invalid_argument("pass@k: need 1 <= k <= n");
}

// C(a, k) / C(n, k) as an iterative product of ratios; stays in [0, 1]
// throughout, so no intermediate overflow for any sane n.
double choose_ratio(int a, int n, int k) {
  if (a < k) return 0.0;
  double r = 1.0;
  for (int i = 0; i < k; ++i) {
    r *= static_cast<double>(a - i) / static_cast<double>(n - i);
  }
  return r;
}

}  // namespace

double pass_at_k(int n, int c, int k) {
  check_args(n, c, k);
  return 1.0 - choose_ratio(n - c, n, k);
}

double all_pass_at_k(int n, int c, int k) {
  check_args(n, c, k);
  return choose_ratio(c, n, k);
}

Aggregate aggregate(const std::vector<TaskTally>& tallies, int k) {
  if (tallies.empty()) return {};
  Aggregate out;
  out.tasks = static_cast<int>(tallies.size());
  for (const auto& t : tallies) {
    out.success_rate += static_cast<double>(t.c) / t.n;
    out.pass_k += pass_at_k(t.n, t.c, k);
    out.all_pass_k += all_pass_at_k(t.n, t.c, k);
  }
  out.success_rate /= out.tasks;
  out.pass_k /= out.tasks;
  out.all_pass_k /= out.tasks;
  return out;
}

}  // namespace boardrl::metrics
