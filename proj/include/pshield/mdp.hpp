#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pshield/error.hpp"

namespace pshield {

using StateId = std::size_t;

inline constexpr double kRowTolerance = 1e-9;

enum class Label { Safe, Unsafe };

struct Transition {
  StateId target;
  double prob;

  friend bool operator==(const Transition&, const Transition&) = default;
};

// Sparse probability row; entries unique by target.
using SparseDistribution = std::vector<Transition>;

struct Action {
  std::string name;
  SparseDistribution dist;

  friend bool operator==(const Action&, const Action&) = default;
};

// Explicit-state MDP with state labels and state rewards.
struct Mdp {
  StateId initial = 0;
  std::vector<Label> labels;
  std::vector<double> rewards;
  std::vector<std::vector<Action>> actions;

  std::size_t state_count() const { return labels.size(); }
  bool unsafe(StateId s) const { return labels[s] == Label::Unsafe; }
  std::size_t action_count(StateId s) const { return actions[s].size(); }

  std::size_t max_degree() const {
    std::size_t d = 0;
    for (const auto& a : actions) d = std::max(d, a.size());
    return d;
  }

  // Set when every state has the same number of actions.
  std::optional<std::size_t> uniform_degree() const {
    if (actions.empty()) return std::nullopt;
    const std::size_t d = actions.front().size();
    for (const auto& a : actions)
      if (a.size() != d) return std::nullopt;
    return d;
  }

  friend bool operator==(const Mdp&, const Mdp&) = default;
};

// Per-state distribution over that state's action indices.
using MemorylessPolicy = std::vector<std::vector<double>>;

struct MarkovChain {
  StateId initial = 0;
  std::vector<SparseDistribution> rows;
  std::vector<Label> labels;

  std::size_t state_count() const { return rows.size(); }
};

inline void validate_distribution(const SparseDistribution& dist, std::size_t state_count,
                                  const std::string& where) {
  require(!dist.empty(), ErrorCode::Validation, where + ": empty distribution");
  double sum = 0.0;
  std::vector<StateId> seen;
  seen.reserve(dist.size());
  for (const auto& [target, prob] : dist) {
    require(target < state_count, ErrorCode::Validation,
            where + ": dangling state reference " + std::to_string(target));
    require(std::isfinite(prob) && prob >= 0.0 && prob <= 1.0 + kRowTolerance,
            ErrorCode::Validation, where + ": probability out of range");
    seen.push_back(target);
    sum += prob;
  }
  std::sort(seen.begin(), seen.end());
  require(std::adjacent_find(seen.begin(), seen.end()) == seen.end(), ErrorCode::Validation,
          where + ": duplicate successor");
  require(std::abs(sum - 1.0) <= kRowTolerance, ErrorCode::Validation,
          where + ": probabilities sum to " + std::to_string(sum));
}

inline void validate(const Mdp& m) {
  const std::size_t n = m.state_count();
  require(n > 0, ErrorCode::Validation, "model has no states");
  require(m.rewards.size() == n, ErrorCode::Validation, "rewards size mismatch");
  require(m.actions.size() == n, ErrorCode::Validation, "actions size mismatch");
  require(m.initial < n, ErrorCode::Validation, "initial state out of range");
  for (StateId s = 0; s < n; ++s) {
    require(std::isfinite(m.rewards[s]), ErrorCode::Validation, "non-finite reward");
    require(!m.actions[s].empty(), ErrorCode::Validation,
            "state " + std::to_string(s) + " has an empty action list");
    for (std::size_t a = 0; a < m.actions[s].size(); ++a)
      validate_distribution(m.actions[s][a].dist, n,
                            "state " + std::to_string(s) + " action " + std::to_string(a));
  }
}

// Every action of s returns to s with probability one.
inline bool is_absorbing(const Mdp& m, StateId s) {
  for (const auto& act : m.actions[s]) {
    if (act.dist.size() != 1 || act.dist.front().target != s) return false;
  }
  return true;
}

// Uniformizes the action count to d by duplicating each state's first action.
inline Mdp pad_actions(const Mdp& m, std::size_t d) {
  require(d >= m.max_degree(), ErrorCode::Validation,
          "pad degree " + std::to_string(d) + " below maximal action count " +
              std::to_string(m.max_degree()));
  Mdp out = m;
  for (auto& acts : out.actions) {
    const Action first = acts.front();
    while (acts.size() < d) acts.push_back(first);
  }
  return out;
}

inline MarkovChain induce_chain(const Mdp& m, const MemorylessPolicy& pi) {
  const std::size_t n = m.state_count();
  require(pi.size() == n, ErrorCode::Validation, "policy does not cover every state");
  MarkovChain chain;
  chain.initial = m.initial;
  chain.labels = m.labels;
  chain.rows.resize(n);
  std::vector<double> dense(n, 0.0);
  std::vector<char> mark(n, 0);
  std::vector<StateId> touched;
  for (StateId s = 0; s < n; ++s) {
    require(pi[s].size() == m.action_count(s), ErrorCode::Validation,
            "policy arity mismatch at state " + std::to_string(s));
    double mass = 0.0;
    for (double w : pi[s]) mass += w;
    require(std::abs(mass - 1.0) <= kRowTolerance, ErrorCode::Validation,
            "policy row does not sum to one at state " + std::to_string(s));
    for (std::size_t a = 0; a < pi[s].size(); ++a) {
      if (pi[s][a] == 0.0) continue;
      for (const auto& [t, p] : m.actions[s][a].dist) {
        if (!mark[t]) {
          mark[t] = 1;
          touched.push_back(t);
        }
        dense[t] += pi[s][a] * p;
      }
    }
    std::sort(touched.begin(), touched.end());
    for (StateId t : touched) {
      if (dense[t] > 0.0) chain.rows[s].push_back({t, dense[t]});
      dense[t] = 0.0;
      mark[t] = 0;
    }
    touched.clear();
  }
  return chain;
}

}  // namespace pshield
