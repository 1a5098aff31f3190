#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>
#include <vector>

#include "pshield/error.hpp"
#include "pshield/mdp.hpp"

namespace pshield {

using ValueVector = std::vector<double>;

// Sound bracket on the minimal probability of reaching an unsafe state.
struct SafetyCertificate {
  ValueVector beta;   // inductive upper bound
  ValueVector lower;  // lower iterate
  double epsilon = 0.0;
  std::vector<StateId> zero_states;
  std::size_t iterations = 0;
  bool inductive = false;
};

struct IntervalOptions {
  double epsilon = 1e-6;
  std::size_t max_iterations = 1'000'000;
  // Every `acceleration_period` sweeps, evaluate the greedy policy of the
  // upper iterate exactly and adopt shifted copies of its value when they
  // pass the fixpoint checks. 0 disables.
  std::size_t acceleration_period = 100;
};

namespace detail {

inline constexpr double kUnitRoundoff = std::numeric_limits<double>::epsilon() / 2;

// Upper bound on the exact value of a dot product of `terms` non-negative
// products whose floating-point evaluation returned `computed`.
inline double round_up_sum(double computed, std::size_t terms) {
  if (computed == 0.0) return 0.0;
  const double slack = 2.0 * static_cast<double>(terms + 1) * kUnitRoundoff;
  const double bound = computed + computed * slack + static_cast<double>(terms) *
                                                         std::numeric_limits<double>::denorm_min();
  return std::nextafter(bound, std::numeric_limits<double>::infinity());
}

inline double round_down_sum(double computed, std::size_t terms) {
  if (computed <= 0.0) return 0.0;
  const double slack = 2.0 * static_cast<double>(terms + 1) * kUnitRoundoff;
  const double bound = computed - computed * slack;
  return std::max(0.0, std::nextafter(bound, 0.0));
}

inline double row_value(const SparseDistribution& dist, const ValueVector& x) {
  double acc = 0.0;
  for (const auto& [t, p] : dist) acc += p * x[t];
  return acc;
}

enum class Rounding { Nearest, Up, Down };

inline double min_action_value(const Mdp& m, StateId s, const ValueVector& x, Rounding mode) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& act : m.actions[s]) {
    double v = row_value(act.dist, x);
    if (mode == Rounding::Up) v = round_up_sum(v, act.dist.size());
    if (mode == Rounding::Down) v = round_down_sum(v, act.dist.size());
    best = std::min(best, v);
  }
  return std::clamp(best, 0.0, 1.0);
}

inline double max_gap(const ValueVector& upper, const ValueVector& lower) {
  double gap = 0.0;
  for (std::size_t i = 0; i < upper.size(); ++i) gap = std::max(gap, upper[i] - lower[i]);
  return gap;
}

}  // namespace detail

// Greatest fixpoint: safe states that can stay inside the set forever.
inline std::vector<char> zero_state_mask(const Mdp& m) {
  const std::size_t n = m.state_count();
  std::vector<char> in(n);
  for (StateId s = 0; s < n; ++s) in[s] = !m.unsafe(s);
  bool changed = true;
  while (changed) {
    changed = false;
    for (StateId s = 0; s < n; ++s) {
      if (!in[s]) continue;
      const bool keeps = std::any_of(m.actions[s].begin(), m.actions[s].end(), [&](const Action& a) {
        return std::all_of(a.dist.begin(), a.dist.end(),
                           [&](const Transition& t) { return t.prob == 0.0 || in[t.target]; });
      });
      if (!keeps) {
        in[s] = 0;
        changed = true;
      }
    }
  }
  return in;
}

inline std::vector<StateId> compute_zero_states(const Mdp& m) {
  const auto mask = zero_state_mask(m);
  std::vector<StateId> out;
  for (StateId s = 0; s < mask.size(); ++s)
    if (mask[s]) out.push_back(s);
  return out;
}

// One application of the min-Bellman operator with unsafe states pinned to 1.
inline ValueVector bellman_min_apply(const Mdp& m, const ValueVector& beta) {
  ValueVector out(m.state_count());
  for (StateId s = 0; s < m.state_count(); ++s)
    out[s] = m.unsafe(s) ? 1.0 : detail::min_action_value(m, s, beta, detail::Rounding::Nearest);
  return out;
}

// True iff beta pins unsafe states to 1 and is a pre-fixpoint of the
// min-Bellman operator evaluated with upward rounding.
inline bool certify_inductive(const Mdp& m, const ValueVector& beta) {
  if (beta.size() != m.state_count()) return false;
  for (StateId s = 0; s < m.state_count(); ++s) {
    if (!(beta[s] >= 0.0 && beta[s] <= 1.0)) return false;
    if (m.unsafe(s)) {
      if (beta[s] != 1.0) return false;
      continue;
    }
    if (detail::min_action_value(m, s, beta, detail::Rounding::Up) > beta[s]) return false;
  }
  return true;
}

// Deterministic policy picking the first action that attains the minimum.
inline MemorylessPolicy greedy_min_policy(const Mdp& m, const ValueVector& beta) {
  MemorylessPolicy pi(m.state_count());
  for (StateId s = 0; s < m.state_count(); ++s) {
    pi[s].assign(m.action_count(s), 0.0);
    std::size_t best = 0;
    double best_v = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < m.action_count(s); ++a) {
      const double v = detail::row_value(m.actions[s][a].dist, beta);
      if (v < best_v) {
        best_v = v;
        best = a;
      }
    }
    pi[s][best] = 1.0;
  }
  return pi;
}

// States from which some target is reachable in the chain's graph.
inline std::vector<char> can_reach(const MarkovChain& chain, const std::vector<char>& target) {
  const std::size_t n = chain.state_count();
  std::vector<std::vector<StateId>> preds(n);
  for (StateId s = 0; s < n; ++s)
    for (const auto& [t, p] : chain.rows[s])
      if (p > 0.0) preds[t].push_back(s);
  std::vector<char> seen(n, 0);
  std::deque<StateId> queue;
  for (StateId s = 0; s < n; ++s)
    if (target[s]) {
      seen[s] = 1;
      queue.push_back(s);
    }
  while (!queue.empty()) {
    const StateId t = queue.front();
    queue.pop_front();
    for (StateId s : preds[t])
      if (!seen[s]) {
        seen[s] = 1;
        queue.push_back(s);
      }
  }
  return seen;
}

// Probability of eventually reaching a target state, by a direct sparse
// solve of x = A x + b over states that can reach the targets.
inline ValueVector exact_reach(const MarkovChain& chain, const std::vector<char>& target) {
  const std::size_t n = chain.state_count();
  ValueVector x(n, 0.0);
  const auto reach = can_reach(chain, target);

  std::vector<std::ptrdiff_t> index(n, -1);
  std::vector<StateId> maybe;
  for (StateId s = 0; s < n; ++s) {
    if (target[s]) x[s] = 1.0;
    else if (reach[s]) {
      index[s] = static_cast<std::ptrdiff_t>(maybe.size());
      maybe.push_back(s);
    }
  }
  if (maybe.empty()) return x;

  const auto k = static_cast<Eigen::Index>(maybe.size());
  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k);
  for (Eigen::Index row = 0; row < k; ++row) {
    triplets.emplace_back(row, row, 1.0);
    for (const auto& [t, p] : chain.rows[maybe[row]]) {
      if (target[t]) rhs[row] += p;
      else if (index[t] >= 0) triplets.emplace_back(row, index[t], -p);
    }
  }
  Eigen::SparseMatrix<double> system(k, k);
  system.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(system);
  if (lu.info() != Eigen::Success) fail(ErrorCode::Internal, "singular reachability system");
  const Eigen::VectorXd sol = lu.solve(rhs);
  if (lu.info() != Eigen::Success) fail(ErrorCode::Internal, "reachability solve failed");
  for (Eigen::Index row = 0; row < k; ++row) x[maybe[row]] = std::clamp(sol[row], 0.0, 1.0);
  return x;
}

inline ValueVector exact_reach(const MarkovChain& chain, const std::vector<StateId>& targets) {
  std::vector<char> mask(chain.state_count(), 0);
  for (StateId t : targets) {
    require(t < mask.size(), ErrorCode::Validation, "target state out of range");
    mask[t] = 1;
  }
  return exact_reach(chain, mask);
}

inline std::vector<char> unsafe_mask(const MarkovChain& chain) {
  std::vector<char> mask(chain.state_count());
  for (StateId s = 0; s < mask.size(); ++s) mask[s] = chain.labels[s] == Label::Unsafe;
  return mask;
}

// True iff `lower` pins zero states to 0, stays below 1 on unsafe states
// and is a post-fixpoint of the min-Bellman operator evaluated with
// downward rounding. Such a vector lies below the least fixpoint.
inline bool certify_lower(const Mdp& m, const ValueVector& lower, const std::vector<char>& zero) {
  for (StateId s = 0; s < m.state_count(); ++s) {
    if (!(lower[s] >= 0.0 && lower[s] <= 1.0)) return false;
    if (m.unsafe(s)) continue;
    if (zero[s]) {
      if (lower[s] != 0.0) return false;
      continue;
    }
    if (lower[s] > detail::min_action_value(m, s, lower, detail::Rounding::Down)) return false;
  }
  return true;
}

namespace detail {

// Expected number of steps before a chain started in s enters `stop`;
// requires every other state to reach `stop`.
inline ValueVector expected_steps(const MarkovChain& chain, const std::vector<char>& stop) {
  const auto n = static_cast<Eigen::Index>(chain.state_count());
  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    triplets.emplace_back(s, s, 1.0);
    if (stop[static_cast<std::size_t>(s)]) continue;
    rhs[s] = 1.0;
    for (const auto& [t, p] : chain.rows[static_cast<std::size_t>(s)])
      if (!stop[t]) triplets.emplace_back(s, static_cast<Eigen::Index>(t), -p);
  }
  Eigen::SparseMatrix<double> system(n, n);
  system.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(system);
  if (lu.info() != Eigen::Success) fail(ErrorCode::Internal, "expected-steps system is singular");
  const Eigen::VectorXd sol = lu.solve(rhs);
  return ValueVector(sol.data(), sol.data() + n);
}

// Policy-evaluation step. v is the exact reach probability of the greedy
// policy of the upper iterate and h its expected time to absorption.
// Candidates v + delta*h (upper) and v - delta*h (lower) are tried for
// growing delta and merged only after passing their fixpoint checks, so
// the bracket stays sound whether or not the policy is optimal.
inline void accelerate(const Mdp& m, const std::vector<char>& zero, ValueVector& upper,
                       ValueVector& lower) {
  const std::size_t n = m.state_count();
  const MarkovChain chain = induce_chain(m, greedy_min_policy(m, upper));
  std::vector<char> stop(n);
  for (StateId s = 0; s < n; ++s) stop[s] = m.unsafe(s) || zero[s];
  const auto proper = can_reach(chain, stop);
  if (!std::all_of(proper.begin(), proper.end(), [](char c) { return c != 0; })) return;
  ValueVector v, h;
  try {
    v = exact_reach(chain, unsafe_mask(chain));
    h = expected_steps(chain, stop);
  } catch (const Error&) {
    return;
  }

  ValueVector cand(n);
  auto shifted = [&](double delta) {
    for (StateId s = 0; s < n; ++s) {
      if (m.unsafe(s)) cand[s] = 1.0;
      else if (zero[s]) cand[s] = 0.0;
      else cand[s] = std::clamp(v[s] + delta * h[s], 0.0, 1.0);
    }
  };
  for (double delta = 1e-18; delta <= 1e-6; delta *= 10) {
    shifted(delta);
    for (StateId s = 0; s < n; ++s) cand[s] = std::min(cand[s], upper[s]);
    if (certify_inductive(m, cand)) {
      upper = cand;
      break;
    }
  }
  for (double delta = 1e-18; delta <= 1e-6; delta *= 10) {
    shifted(-delta);
    for (StateId s = 0; s < n; ++s) cand[s] = std::max(cand[s], lower[s]);
    if (certify_lower(m, cand, zero)) {
      lower = cand;
      break;
    }
  }
}

}  // namespace detail

// Interval iteration. The upper sequence starts from the pre-fixpoint
// (1 outside the zero states) and every iterate stays inductive under
// upward rounding; the lower sequence starts from the indicator of the
// unsafe states and is rounded downward.
inline SafetyCertificate interval_iteration(const Mdp& m, const IntervalOptions& opts = {}) {
  require(opts.epsilon > 0.0, ErrorCode::Validation, "epsilon must be positive");
  const std::size_t n = m.state_count();
  const auto zero = zero_state_mask(m);

  ValueVector upper(n), lower(n);
  for (StateId s = 0; s < n; ++s) {
    upper[s] = m.unsafe(s) ? 1.0 : (zero[s] ? 0.0 : 1.0);
    lower[s] = m.unsafe(s) ? 1.0 : 0.0;
  }

  std::size_t iter = 0;
  ValueVector next_upper(n), next_lower(n);
  while (detail::max_gap(upper, lower) > opts.epsilon) {
    if (opts.acceleration_period > 0 && iter > 0 && iter % opts.acceleration_period == 0) {
      detail::accelerate(m, zero, upper, lower);
      if (detail::max_gap(upper, lower) <= opts.epsilon) break;
    }
    if (iter >= opts.max_iterations)
      fail(ErrorCode::Certification, "interval iteration did not converge; gap " +
                                         std::to_string(detail::max_gap(upper, lower)));
    for (StateId s = 0; s < n; ++s) {
      if (m.unsafe(s) || zero[s]) {
        next_upper[s] = upper[s];
        next_lower[s] = lower[s];
        continue;
      }
      next_upper[s] = detail::min_action_value(m, s, upper, detail::Rounding::Up);
      next_lower[s] = detail::min_action_value(m, s, lower, detail::Rounding::Down);
    }
    upper.swap(next_upper);
    lower.swap(next_lower);
    ++iter;
  }

  SafetyCertificate cert;
  cert.inductive = certify_inductive(m, upper);
  if (!cert.inductive) fail(ErrorCode::Certification, "upper iterate failed the inductiveness check");
  cert.beta = std::move(upper);
  cert.lower = std::move(lower);
  cert.epsilon = opts.epsilon;
  cert.iterations = iter;
  for (StateId s = 0; s < n; ++s)
    if (zero[s]) cert.zero_states.push_back(s);
  return cert;
}

inline SafetyCertificate interval_iteration(const Mdp& m, double epsilon) {
  return interval_iteration(m, IntervalOptions{.epsilon = epsilon});
}

// Expected discounted sum of state rewards, sum_t gamma^t R(s_t), from every state.
inline ValueVector discounted_value(const MarkovChain& chain, const std::vector<double>& rewards,
                                    double gamma) {
  require(gamma > 0.0 && gamma < 1.0, ErrorCode::Validation, "discount must lie in (0,1)");
  const auto n = static_cast<Eigen::Index>(chain.state_count());
  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd rhs(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    rhs[s] = rewards[static_cast<std::size_t>(s)];
    triplets.emplace_back(s, s, 1.0);
    for (const auto& [t, p] : chain.rows[static_cast<std::size_t>(s)])
      triplets.emplace_back(s, static_cast<Eigen::Index>(t), -gamma * p);
  }
  Eigen::SparseMatrix<double> system(n, n);
  system.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(system);
  if (lu.info() != Eigen::Success) fail(ErrorCode::Internal, "discounted system factorization failed");
  const Eigen::VectorXd sol = lu.solve(rhs);
  return ValueVector(sol.data(), sol.data() + n);
}

}  // namespace pshield
