#pragma once

#include <string>
#include <vector>

namespace boardrl::metrics {

/// Per-task trial tally: n attempts, c successes.
struct TaskTally {
  std::string task_id;
  int n = 0;
  int c = 0;
};

/// Probability that at least one of k drawn attempts (without replacement)
/// succeeded: 1 - C(n-c, k) / C(n, k).
double pass_at_k(int n, int c, int k);

/// Probability that all k drawn attempts succeeded: C(c, k) / C(n, k).
double all_pass_at_k(int n, int c, int k);

struct Aggregate {
  double success_rate = 0.0;  // mean of c/n over tasks
  double pass_k = 0.0;
  double all_pass_k = 0.0;
  int tasks = 0;
};

Aggregate aggregate(const std::vector<TaskTally>& tallies, int k);

}  // namespace boardrl::metrics
