#pragma once

// Accuracy and fidelity of a replica against its target: reward gap,
// per-state Jensen-Shannon divergence of action distributions, CDF tables.

#include <iosfwd>
#include <map>
#include <vector>

#include "polex/env.hpp"
#include "polex/oracle.hpp"

namespace polex {

/// JS divergence without the 1/2 factors, natural log:
///   KL(p || m) + KL(q || m), m = (p + q) / 2, range [0, 2 ln 2].
/// Halve the value to compare with the textbook convention.
double js_divergence(const Vector& p, const Vector& q);

/// Same divergence between two histograms over arbitrary keys; counts are
/// normalized internally.
template <typename Key>
double js_divergence(const std::map<Key, double>& p, const std::map<Key, double>& q);

/// |mean reward(target) - mean reward(replica)| over the same seeds.
double reward_gap(const PolicyOracle& target, const PolicyOracle& replica, const Env& env, int episodes,
                  std::uint64_t seed_base);

/// Greedy rollouts of the target over `episodes` seeds; `count` states are
/// picked from the visited set by a seeded shuffle.
std::vector<State> harvest_probe_states(const PolicyOracle& target, const Env& env, int count, int episodes,
                                        std::uint64_t seed);

struct CdfPoint {
  double threshold;
  double fraction;
};

struct FidelitySummary {
  std::vector<double> js;          // one value per probe state
  double threshold = 0.05;
  double fraction_below = 0.0;     // fraction of js < threshold
  std::vector<CdfPoint> cdf;
};

/// Fixed grid of `points` thresholds over [0, 2 ln 2]; fraction of values
/// at or below each threshold.
std::vector<CdfPoint> cdf_report(const std::vector<double>& values, int points = 101);

/// Per probe state: n_samples sample-mode actions from each oracle, empirical
/// distributions, JS divergence.
FidelitySummary behavior_divergence(const PolicyOracle& target, const PolicyOracle& replica,
                                    const std::vector<State>& probe_states, int action_count, int n_samples,
                                    std::uint64_t seed, double threshold = 0.05);

void write_cdf_csv(const std::vector<CdfPoint>& cdf, std::ostream& os);
/// {"threshold", "fraction_below", "count", "median", "max"} plus the js list.
std::string fidelity_json(const FidelitySummary& s);

// ---------------------------------------------------------------------------

template <typename Key>
double js_divergence(const std::map<Key, double>& p, const std::map<Key, double>& q) {
  double sp = 0.0, sq = 0.0;
  for (const auto& [_, v] : p) sp += v;
  for (const auto& [_, v] : q) sq += v;
  if (!(sp > 0.0) || !(sq > 0.0)) throw DomainError("js_divergence: empty histogram");
  std::map<Key, std::pair<double, double>> joint;
  for (const auto& [k, v] : p) joint[k].first = v / sp;
  for (const auto& [k, v] : q) joint[k].second = v / sq;
  double d = 0.0;
  for (const auto& [_, pq] : joint) {
    const double m = 0.5 * (pq.first + pq.second);
    if (pq.first > 0.0) d += pq.first * std::log(pq.first / m);
    if (pq.second > 0.0) d += pq.second * std::log(pq.second / m);
  }
  return std::max(0.0, d);
}

}  // namespace polex
