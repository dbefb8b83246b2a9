#include "polex/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "json.hpp"
#include "polex/report.hpp"
#include "polex/trainers.hpp"

namespace polex {

namespace {

void check_distribution(const Vector& p) {
  if (!p.allFinite() || (p.array() < 0.0).any() || std::abs(p.sum() - 1.0) > 1e-6)
    throw DomainError("js_divergence: not a probability vector");
}

}  // namespace

double js_divergence(const Vector& p, const Vector& q) {
  if (p.size() != q.size() || p.size() == 0) throw DomainError("js_divergence: length mismatch");
  check_distribution(p);
  check_distribution(q);
  double d = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) d += p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) d += q[i] * std::log(q[i] / m);
  }
  return std::max(0.0, d);
}

double reward_gap(const PolicyOracle& target, const PolicyOracle& replica, const Env& env, int episodes,
                  std::uint64_t seed_base) {
  return std::abs(evaluate(target, env, episodes, seed_base) - evaluate(replica, env, episodes, seed_base));
}

std::vector<State> harvest_probe_states(const PolicyOracle& target, const Env& env, int count, int episodes,
                                        std::uint64_t seed) {
  if (count < 1 || episodes < 1) throw DomainError("harvest_probe_states: count and episodes must be >= 1");
  std::vector<State> visited;
  for (int e = 0; e < episodes; ++e)
    for (const auto& t : rollout(env, target, env.step_cap(), derive_seed(seed, e), ActMode::Greedy).transitions)
      visited.push_back(t.state);
  Rng rng(derive_seed(seed, 0x9f0b));
  for (std::size_t i = visited.size(); i > 1; --i)
    std::swap(visited[i - 1], visited[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i))]);
  if (static_cast<int>(visited.size()) > count) visited.resize(static_cast<std::size_t>(count));
  return visited;
}

std::vector<CdfPoint> cdf_report(const std::vector<double>& values, int points) {
  if (values.empty()) throw DomainError("cdf_report: no values");
  if (points < 2) throw DomainError("cdf_report: need at least two grid points");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const double hi = 2.0 * std::log(2.0);
  std::vector<CdfPoint> out;
  for (int k = 0; k < points; ++k) {
    const double t = hi * k / (points - 1);
    const auto n = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    out.push_back({t, static_cast<double>(n) / static_cast<double>(sorted.size())});
  }
  // Values beyond the grid still count at the last point.
  out.back().fraction = 1.0;
  return out;
}

FidelitySummary behavior_divergence(const PolicyOracle& target, const PolicyOracle& replica,
                                    const std::vector<State>& probe_states, int action_count, int n_samples,
                                    std::uint64_t seed, double threshold) {
  if (n_samples < 1) throw DomainError("behavior_divergence: n_samples must be >= 1");
  if (probe_states.empty()) throw DomainError("behavior_divergence: no probe states");
  FidelitySummary s;
  s.threshold = threshold;
  Rng rt(derive_seed(seed, 1)), rr(derive_seed(seed, 2));
  std::size_t below = 0;
  for (const State& st : probe_states) {
    Vector p = Vector::Zero(action_count), q = Vector::Zero(action_count);
    for (int k = 0; k < n_samples; ++k) {
      p[target.act(st, ActMode::Sample, rt)] += 1.0;
      q[replica.act(st, ActMode::Sample, rr)] += 1.0;
    }
    const double js = js_divergence(Vector(p / n_samples), Vector(q / n_samples));
    s.js.push_back(js);
    if (js < threshold) ++below;
  }
  s.fraction_below = static_cast<double>(below) / static_cast<double>(probe_states.size());
  s.cdf = cdf_report(s.js);
  return s;
}

void write_cdf_csv(const std::vector<CdfPoint>& cdf, std::ostream& os) {
  os << "threshold,fraction\n";
  for (const auto& c : cdf) os << fmt6(c.threshold) << ',' << fmt6(c.fraction) << '\n';
}

std::string fidelity_json(const FidelitySummary& s) {
  std::vector<double> sorted = s.js;
  std::sort(sorted.begin(), sorted.end());
  nlohmann::ordered_json j;
  j["threshold"] = sig6(s.threshold);
  j["fraction_below"] = sig6(s.fraction_below);
  j["count"] = s.js.size();
  j["median"] = sorted.empty() ? 0.0 : sig6(sorted[sorted.size() / 2]);
  j["max"] = sorted.empty() ? 0.0 : sig6(sorted.back());
  auto arr = nlohmann::ordered_json::array();
  for (double v : s.js) arr.push_back(sig6(v));
  j["js"] = std::move(arr);
  return j.dump(2);
}

}  // namespace polex
