#pragma once

#include <random>
#include <string>

#include <pshield.hpp>

namespace pshield::testing {

inline std::string fixture(const std::string& name) {
  return std::string(PSHIELD_DATA_DIR) + "/fixtures/" + name;
}

inline Mdp f1() { return load_model(fixture("f1.json")); }
inline Mdp f2() { return load_model(fixture("f2.json")); }

// F1 state ids
inline constexpr StateId kS0 = 0, kG = 1, kU = 2;
// F2 state ids
inline constexpr StateId kGhi = 1, kGlo = 2, kF2U = 3;

// Random MDP with up to `max_states` states and up to `max_actions` actions
// per state. Some safe states are absorbing; roughly a tenth are unsafe.
inline Mdp random_mdp(Rng& rng, std::size_t max_states = 50, std::size_t max_actions = 4,
                      std::size_t max_support = 4) {
  std::uniform_int_distribution<std::size_t> n_dist(2, max_states);
  const std::size_t n = n_dist(rng);
  std::uniform_int_distribution<std::size_t> state(0, n - 1);
  std::uniform_int_distribution<std::size_t> acts(1, max_actions);
  std::uniform_int_distribution<std::size_t> support(1, std::min(n, max_support));
  Mdp m;
  m.initial = state(rng);
  m.labels.assign(n, Label::Safe);
  m.rewards.assign(n, 0.0);
  m.actions.resize(n);
  for (StateId s = 0; s < n; ++s) {
    const double u = uniform01(rng);
    if (u < 0.1) m.labels[s] = Label::Unsafe;
    m.rewards[s] = uniform01(rng) < 0.2 ? 1.0 : 0.0;
    if (u > 0.9) {
      m.actions[s].push_back({"stay", {{s, 1.0}}});
      continue;
    }
    const std::size_t k = acts(rng);
    for (std::size_t a = 0; a < k; ++a) {
      std::vector<StateId> targets;
      const std::size_t want = support(rng);
      while (targets.size() < want) {
        const StateId t = state(rng);
        if (std::find(targets.begin(), targets.end(), t) == targets.end()) targets.push_back(t);
      }
      std::vector<double> w(targets.size());
      double sum = 0.0;
      for (double& x : w) sum += (x = 0.05 + uniform01(rng));
      Action act{"a" + std::to_string(a), {}};
      double used = 0.0;
      for (std::size_t k2 = 0; k2 < targets.size(); ++k2) {
        const double p = k2 + 1 == targets.size() ? 1.0 - used : w[k2] / sum;
        used += p;
        act.dist.push_back({targets[k2], p});
      }
      m.actions[s].push_back(std::move(act));
    }
  }
  validate(m);
  return m;
}

}  // namespace pshield::testing
