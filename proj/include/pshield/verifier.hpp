#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <vector>

#include "pshield/error.hpp"
#include "pshield/mdp.hpp"
#include "pshield/model_io.hpp"
#include "pshield/random.hpp"
#include "pshield/reach.hpp"
#include "pshield/shield.hpp"

namespace pshield {

inline constexpr double kVerifyTolerance = 1e-9;

struct SafetyReport {
  double probability = 0.0;  // exact reach probability from (s_init, p)
  double bound = 0.0;
  bool pass = false;
  std::size_t chain_size = 0;
};

// Markov chain induced on the level closure by a memoryless shield policy.
// Shield state k of `index` is chain state k.
struct ShieldChain {
  MarkovChain chain;
  std::shared_ptr<const LevelIndex> index;
  std::vector<double> rewards;
  StateId initial = 0;
};

inline ShieldChain induce_shield_chain(const ShieldModel& model, const ShieldPolicy& policy) {
  require(policy.index != nullptr, ErrorCode::Validation, "shield policy has no level index");
  const LevelIndex& index = *policy.index;
  require(policy.choices.size() == index.size(), ErrorCode::Validation,
          "shield policy does not cover its level index");
  const Mdp& m = model.mdp();
  const std::size_t n = index.size();

  ShieldChain out;
  out.index = policy.index;
  out.initial = index.id(model.initial());
  out.chain.initial = out.initial;
  out.chain.rows.resize(n);
  out.chain.labels.resize(n);
  out.rewards.resize(n);

  std::vector<double> acc(n, 0.0);
  std::vector<StateId> touched;
  for (StateId k = 0; k < n; ++k) {
    const ShieldState x = index.state_of(k);
    out.chain.labels[k] = m.labels[x.state];
    out.rewards[k] = m.rewards[x.state];
    if (model.absorbing(x.state)) {
      out.chain.rows[k] = {{k, 1.0}};
      continue;
    }
    touched.clear();
    for (const auto& [a, w] : policy.choices[k]) {
      if (w <= 0.0) continue;
      const Resolution r = model.resolve(x, a);
      for (std::size_t b = 0; b < r.mixture.size(); ++b) {
        if (r.mixture[b] <= 0.0) continue;
        for (const auto& tr : m.actions[x.state][b].dist) {
          if (tr.prob <= 0.0) continue;
          const StateId t = index.id({tr.target, model.next_level(r, tr.target)});
          if (acc[t] == 0.0) touched.push_back(t);
          acc[t] += w * r.mixture[b] * tr.prob;
        }
      }
    }
    std::sort(touched.begin(), touched.end());
    for (StateId t : touched) {
      out.chain.rows[k].push_back({t, acc[t]});
      acc[t] = 0.0;
    }
  }
  return out;
}

// Second oracle: iterates x <- A x + b from x = 0 on non-target states.
// The iterates increase monotonically to the reach probability; iteration
// stops once an update changes no entry by more than `tolerance`.
inline ValueVector gamma_iteration_reach(const MarkovChain& chain, const std::vector<char>& target,
                                         double tolerance = 1e-15,
                                         std::size_t max_iterations = 10'000'000) {
  const std::size_t n = chain.state_count();
  const auto relevant = can_reach(chain, target);
  ValueVector x(n, 0.0), next(n, 0.0);
  for (StateId s = 0; s < n; ++s) x[s] = next[s] = target[s] ? 1.0 : 0.0;
  std::vector<StateId> active;
  for (StateId s = 0; s < n; ++s)
    if (!target[s] && relevant[s]) active.push_back(s);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    double delta = 0.0;
    for (StateId s : active) {
      double v = 0.0;
      for (const auto& [t, p] : chain.rows[s]) v += p * x[t];
      delta = std::max(delta, std::abs(v - x[s]));
      next[s] = v;
    }
    for (StateId s : active) x[s] = next[s];
    if (delta <= tolerance) return x;
  }
  fail(ErrorCode::Internal, "gamma iteration did not converge");
}

inline SafetyReport verify_chain(const ShieldChain& sc, double p) {
  const auto reach = exact_reach(sc.chain, unsafe_mask(sc.chain));
  SafetyReport rep;
  rep.probability = reach[sc.initial];
  rep.bound = p;
  rep.pass = rep.probability <= p + kVerifyTolerance;
  rep.chain_size = sc.chain.state_count();
  return rep;
}

inline SafetyReport verify_shield_policy_exact(const ShieldModel& model, const ShieldPolicy& policy) {
  return verify_chain(induce_shield_chain(model, policy), model.threshold());
}

// Discounted value J of the shield policy from (s_init, p).
inline double shield_policy_value(const ShieldModel& model, const ShieldPolicy& policy, double gamma) {
  const ShieldChain sc = induce_shield_chain(model, policy);
  return discounted_value(sc.chain, sc.rewards, gamma)[sc.initial];
}

// Uniformly random memoryless shield policy: each shield state picks one
// encoded action, or a random mixture of two when `mixed` is set.
inline ShieldPolicy random_shield_policy(const ShieldModel& model,
                                         std::shared_ptr<const LevelIndex> index, Rng& rng,
                                         bool mixed = false) {
  ShieldPolicy pi;
  pi.choices.resize(index->size());
  const std::size_t actions = model.action_space_size();
  std::uniform_int_distribution<std::size_t> pick(0, actions - 1);
  for (auto& c : pi.choices) {
    c.push_back({model.decode(pick(rng)), 1.0});
    if (mixed) {
      const double w = uniform01(rng);
      c.front().second = w;
      c.push_back({model.decode(pick(rng)), 1.0 - w});
    }
  }
  pi.index = std::move(index);
  return pi;
}

struct Interval {
  double estimate = 0.0;
  double low = 0.0;
  double high = 0.0;
};

inline constexpr double kZ99 = 2.5758293035489004;

inline Interval wilson_interval(std::size_t hits, std::size_t n, double z = kZ99) {
  require(n > 0, ErrorCode::Validation, "empty sample");
  const double nn = static_cast<double>(n);
  const double ph = static_cast<double>(hits) / nn;
  const double z2 = z * z;
  const double centre = (ph + z2 / (2 * nn)) / (1 + z2 / nn);
  const double half = z / (1 + z2 / nn) * std::sqrt(ph * (1 - ph) / nn + z2 / (4 * nn * nn));
  return {ph, std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

// Fraction of episodes that visit an unsafe state. Episodes run until an
// absorbing state or `horizon` steps.
inline Interval monte_carlo_safety(std::shared_ptr<const ShieldModel> model, const ShieldPolicy& policy,
                                   std::size_t n, std::uint64_t seed, std::size_t horizon = 100'000) {
  require(n >= 100, ErrorCode::Validation, "need at least 100 episodes");
  Rng rng = make_rng(seed);
  ShieldEnv env(model, horizon);
  const Mdp& m = model->mdp();
  std::size_t hits = 0;
  for (std::size_t e = 0; e < n; ++e) {
    env.reset();
    bool violated = m.unsafe(env.state().state);
    while (!env.done() && !violated) {
      const StepOutcome out = env.step(policy.sample(env.state(), rng), rng);
      violated = m.unsafe(out.next.state);
    }
    hits += violated;
  }
  return wilson_interval(hits, n);
}

// ---------------------------------------------------------------------------
// Brute-force RCOP over randomized stationary policies.

struct RcopSolution {
  MemorylessPolicy policy;
  double reach = 0.0;
  double value = -std::numeric_limits<double>::infinity();
  std::size_t evaluated = 0;
  bool found = false;
};

struct RcopOptions {
  std::size_t grid = 100;
  std::size_t dirichlet_samples = 10'000;
  std::size_t budget = 10'000'000;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<Mixture> candidate_mixtures(std::size_t actions, const RcopOptions& opts, Rng& rng) {
  std::vector<Mixture> out;
  if (actions == 1) return {{1.0}};
  if (actions == 2) {
    for (std::size_t g = 0; g <= opts.grid; ++g) {
      const double x = static_cast<double>(g) / static_cast<double>(opts.grid);
      out.push_back({x, 1.0 - x});
    }
    return out;
  }
  for (std::size_t a = 0; a < actions; ++a) out.push_back(basis_vector(actions, a));
  std::gamma_distribution<double> unit(1.0, 1.0);
  for (std::size_t k = 0; k < opts.dirichlet_samples; ++k) {
    Mixture x(actions);
    double sum = 0.0;
    for (double& v : x) sum += (v = unit(rng));
    for (double& v : x) v /= sum;
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace detail

inline RcopSolution brute_force_rcop(const Mdp& m, double p, double gamma, const RcopOptions& opts = {}) {
  require(opts.grid >= 1, ErrorCode::Validation, "grid must be positive");
  Rng rng = make_rng(opts.seed);
  const std::size_t n = m.state_count();
  std::vector<std::vector<Mixture>> cands(n);
  double total = 1.0;
  for (StateId s = 0; s < n; ++s) {
    cands[s] = detail::candidate_mixtures(m.action_count(s), opts, rng);
    total *= static_cast<double>(cands[s].size());
  }
  require(total <= static_cast<double>(opts.budget), ErrorCode::Validation,
          "policy grid of " + std::to_string(total) + " points exceeds the budget");

  RcopSolution best;
  std::vector<std::size_t> digit(n, 0);
  MemorylessPolicy pi(n);
  for (;;) {
    for (StateId s = 0; s < n; ++s) pi[s] = cands[s][digit[s]];
    const MarkovChain chain = induce_chain(m, pi);
    const double reach = exact_reach(chain, unsafe_mask(chain))[m.initial];
    ++best.evaluated;
    if (reach <= p + kVerifyTolerance) {
      const double value = discounted_value(chain, m.rewards, gamma)[m.initial];
      if (!best.found || value > best.value) {
        best.found = true;
        best.value = value;
        best.reach = reach;
        best.policy = pi;
      }
    }
    std::size_t s = 0;
    while (s < n && ++digit[s] == cands[s].size()) digit[s++] = 0;
    if (s == n) break;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Serialization

inline json report_to_json(const SafetyReport& r) {
  return {{"probability", r.probability},
          {"bound", r.bound},
          {"pass", r.pass},
          {"chain_size", r.chain_size}};
}

inline json rcop_to_json(const RcopSolution& s) {
  return {{"found", s.found},
          {"reach", s.reach},
          {"value", s.found ? json(s.value) : json(nullptr)},
          {"evaluated", s.evaluated},
          {"policy", s.policy}};
}

// Shield policies are stored as a list of entries over (state, level).
inline json shield_policy_to_json(const ShieldPolicy& pi) {
  json entries = json::array();
  for (std::size_t k = 0; k < pi.choices.size(); ++k) {
    const ShieldState x = pi.index->state_of(k);
    json choice = json::array();
    for (const auto& [a, w] : pi.choices[k])
      choice.push_back({{"i", a.i}, {"j", a.j}, {"profile", a.profile}, {"weight", w}});
    entries.push_back({{"state", x.state}, {"level", x.level}, {"choices", std::move(choice)}});
  }
  return {{"kind", "shield"}, {"entries", std::move(entries)}};
}

// Rebuilds a policy over `model`'s level closure; shield states missing
// from the document are a validation error.
inline ShieldPolicy shield_policy_from_json(const json& j, const ShieldModel& model) {
  try {
    auto index = std::make_shared<LevelIndex>(reachable_levels(model));
    ShieldPolicy pi;
    pi.choices.resize(index->size());
    std::vector<char> seen(index->size(), 0);
    for (const auto& e : j.at("entries")) {
      const ShieldState x{e.at("state").get<StateId>(), e.at("level").get<double>()};
      const auto k = index->find(x);
      if (!k) continue;
      auto& c = pi.choices[*k];
      for (const auto& ch : e.at("choices")) {
        const EncodedAction a{ch.at("i").get<std::size_t>(), ch.at("j").get<std::size_t>(),
                              ch.at("profile").get<std::size_t>()};
        require(a.i < model.degree() && a.j < model.degree() && a.profile < model.profiles().size(),
                ErrorCode::Validation, "policy action out of range");
        c.push_back({a, ch.at("weight").get<double>()});
      }
      seen[*k] = !c.empty();
    }
    for (std::size_t k = 0; k < seen.size(); ++k)
      require(seen[k], ErrorCode::Validation, "policy does not cover reachable shield state " +
                                                  std::to_string(index->state_of(k).state));
    pi.index = std::move(index);
    return pi;
  } catch (const json::exception& e) {
    fail(ErrorCode::Validation, std::string("malformed policy: ") + e.what());
  }
}

}  // namespace pshield
