#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pshield/error.hpp"
#include "pshield/mdp.hpp"
#include "pshield/random.hpp"
#include "pshield/shield.hpp"
#include "pshield/verifier.hpp"

namespace pshield {

enum class LearningRateSchedule { Constant, InverseVisit };

struct LearnerConfig {
  double learning_rate = 0.1;
  LearningRateSchedule schedule = LearningRateSchedule::Constant;
  double gamma = 0.99;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_decay_fraction = 0.5;  // of total_timesteps
  std::size_t total_timesteps = 25'000;
  std::size_t episode_length = 100;
  std::uint64_t seed = 0;
  std::size_t slack_levels = 4;
  std::size_t snapshots = 10;  // exact verification every total/snapshots steps
  bool verify_snapshots = true;

  void validate() const {
    require(gamma > 0.0 && gamma < 1.0, ErrorCode::Validation, "gamma must lie in (0,1)");
    require(learning_rate > 0.0 && learning_rate <= 1.0, ErrorCode::Validation,
            "learning rate must lie in (0,1]");
    require(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0,
            ErrorCode::Validation, "exploration rates must lie in [0,1]");
    require(epsilon_decay_fraction > 0.0, ErrorCode::Validation, "decay fraction must be positive");
    require(total_timesteps > 0 && episode_length > 0, ErrorCode::Validation,
            "step budgets must be positive");
  }

  double epsilon(std::size_t step) const {
    const double horizon = epsilon_decay_fraction * static_cast<double>(total_timesteps);
    const double frac = std::min(1.0, static_cast<double>(step) / horizon);
    return epsilon_start + frac * (epsilon_end - epsilon_start);
  }
};

struct EpisodeRecord {
  std::size_t episode = 0;
  std::size_t steps = 0;  // cumulative environment steps at episode end
  double ret = 0.0;
  double discounted_return = 0.0;
  bool violated = false;
  double violation_rate = 0.0;
};

struct LearningCurve {
  std::vector<EpisodeRecord> episodes;

  void add(EpisodeRecord r) {
    const double n = static_cast<double>(episodes.size());
    const double prev = episodes.empty() ? 0.0 : episodes.back().violation_rate;
    r.episode = episodes.size();
    r.violation_rate = (prev * n + (r.violated ? 1.0 : 0.0)) / (n + 1.0);
    episodes.push_back(r);
  }

  std::size_t violations() const {
    return static_cast<std::size_t>(
        std::count_if(episodes.begin(), episodes.end(), [](const auto& e) { return e.violated; }));
  }

  double violation_rate() const {
    return episodes.empty() ? 0.0 : static_cast<double>(violations()) / episodes.size();
  }

  double mean_return_last(std::size_t k) const {
    const std::size_t n = std::min(k, episodes.size());
    if (n == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t e = episodes.size() - n; e < episodes.size(); ++e) acc += episodes[e].ret;
    return acc / static_cast<double>(n);
  }

  double mean_return_first(std::size_t k) const {
    const std::size_t n = std::min(k, episodes.size());
    if (n == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t e = 0; e < n; ++e) acc += episodes[e].ret;
    return acc / static_cast<double>(n);
  }

  std::string to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "episode,steps,return,discounted_return,violated,violation_rate\n";
    for (const auto& e : episodes)
      out << e.episode << ',' << e.steps << ',' << e.ret << ',' << e.discounted_return << ','
          << (e.violated ? 1 : 0) << ',' << e.violation_rate << '\n';
    return out.str();
  }
};

// Value table with per-entry visit counts for the 1/n schedule.
class QTable {
 public:
  QTable(std::size_t states, std::size_t actions)
      : actions_(actions), q_(states * actions, 0.0), visits_(states * actions, 0) {}

  double& at(std::size_t s, std::size_t a) { return q_[s * actions_ + a]; }
  double at(std::size_t s, std::size_t a) const { return q_[s * actions_ + a]; }
  std::size_t actions() const { return actions_; }
  const std::vector<double>& values() const { return q_; }

  // Lowest index among maximizers.
  std::size_t greedy(std::size_t s, std::size_t limit) const {
    std::size_t best = 0;
    for (std::size_t a = 1; a < limit; ++a)
      if (at(s, a) > at(s, best)) best = a;
    return best;
  }

  double max(std::size_t s, std::size_t limit) const { return at(s, greedy(s, limit)); }

  void update(std::size_t s, std::size_t a, double target, const LearnerConfig& cfg) {
    const std::size_t k = s * actions_ + a;
    ++visits_[k];
    const double lr = cfg.schedule == LearningRateSchedule::InverseVisit
                          ? 1.0 / static_cast<double>(visits_[k])
                          : cfg.learning_rate;
    q_[k] += lr * (target - q_[k]);
  }

 private:
  std::size_t actions_;
  std::vector<double> q_;
  std::vector<std::size_t> visits_;
};

namespace detail {

inline std::size_t epsilon_greedy(const QTable& q, std::size_t s, std::size_t limit, double eps,
                                  Rng& rng) {
  if (uniform01(rng) < eps) return std::min(limit - 1, static_cast<std::size_t>(uniform01(rng) * limit));
  return q.greedy(s, limit);
}

}  // namespace detail

struct SnapshotReport {
  std::size_t step = 0;
  double epsilon = 0.0;
  SafetyReport greedy;
  SafetyReport behaviour;  // epsilon-greedy policy actually run at that step
};

struct ShieldedRun {
  ShieldPolicy policy;  // greedy
  LearningCurve curve;
  std::vector<SnapshotReport> snapshots;
};

inline ShieldPolicy greedy_shield_policy(const ShieldModel& model,
                                         std::shared_ptr<const LevelIndex> index, const QTable& q) {
  ShieldPolicy pi;
  pi.choices.resize(index->size());
  for (std::size_t k = 0; k < index->size(); ++k)
    pi.choices[k] = {{model.decode(q.greedy(k, q.actions())), 1.0}};
  pi.index = std::move(index);
  return pi;
}

inline ShieldPolicy epsilon_greedy_shield_policy(const ShieldModel& model,
                                                 std::shared_ptr<const LevelIndex> index,
                                                 const QTable& q, double eps) {
  const std::size_t n = q.actions();
  ShieldPolicy pi;
  pi.choices.resize(index->size());
  for (std::size_t k = 0; k < index->size(); ++k) {
    const std::size_t g = q.greedy(k, n);
    auto& c = pi.choices[k];
    for (std::size_t a = 0; a < n; ++a) {
      const double w = eps / static_cast<double>(n) + (a == g ? 1.0 - eps : 0.0);
      if (w > 0.0) c.push_back({model.decode(a), w});
    }
  }
  pi.index = std::move(index);
  return pi;
}

// Q-learning over shield states keyed by the reachable-level closure. Every
// interaction goes through the shield. Terminal transitions bootstrap 0.
inline ShieldedRun train_shielded(std::shared_ptr<const ShieldModel> model, const LearnerConfig& cfg) {
  cfg.validate();
  auto index = std::make_shared<const LevelIndex>(reachable_levels(*model));
  const std::size_t actions = model->action_space_size();
  QTable q(index->size(), actions);
  Rng agent = make_rng(cfg.seed, 1);
  ShieldEnv env(model, cfg.episode_length);
  env.reset(cfg.seed);
  const Mdp& m = model->mdp();

  ShieldedRun run;
  const std::size_t every =
      cfg.snapshots == 0 ? 0 : std::max<std::size_t>(1, cfg.total_timesteps / cfg.snapshots);
  EpisodeRecord ep;
  double discount = 1.0;
  ep.violated = m.unsafe(env.state().state);
  for (std::size_t t = 0; t < cfg.total_timesteps; ++t) {
    const std::size_t x = index->id(env.state());
    const std::size_t a = detail::epsilon_greedy(q, x, actions, cfg.epsilon(t), agent);
    const StepOutcome out = env.step(model->decode(a));
    const std::size_t y = index->id(out.next);
    const double target = out.reward + (out.terminated ? 0.0 : cfg.gamma * q.max(y, actions));
    q.update(x, a, target, cfg);

    ep.ret += out.reward;
    discount *= cfg.gamma;
    ep.discounted_return += discount * out.reward;
    ep.violated = ep.violated || m.unsafe(out.next.state);
    if (env.done()) {
      ep.steps = t + 1;
      run.curve.add(ep);
      env.reset();
      ep = EpisodeRecord{};
      discount = 1.0;
      ep.violated = m.unsafe(env.state().state);
    }

    if (every > 0 && (t + 1) % every == 0 && cfg.verify_snapshots) {
      SnapshotReport snap;
      snap.step = t + 1;
      snap.epsilon = cfg.epsilon(t + 1);
      snap.greedy = verify_shield_policy_exact(*model, greedy_shield_policy(*model, index, q));
      snap.behaviour = verify_shield_policy_exact(
          *model, epsilon_greedy_shield_policy(*model, index, q, snap.epsilon));
      run.snapshots.push_back(snap);
    }
  }
  run.policy = greedy_shield_policy(*model, index, q);
  return run;
}

struct UnshieldedRun {
  MemorylessPolicy policy;  // greedy, over each state's own actions
  LearningCurve curve;
};

inline UnshieldedRun train_unshielded(const Mdp& m, const LearnerConfig& cfg) {
  cfg.validate();
  const std::size_t d = m.max_degree();
  QTable q(m.state_count(), d);
  Rng agent = make_rng(cfg.seed, 1);
  Rng world = make_rng(cfg.seed);
  MdpEnv env(m, cfg.episode_length);

  UnshieldedRun run;
  EpisodeRecord ep;
  double discount = 1.0;
  ep.violated = m.unsafe(env.state());
  for (std::size_t t = 0; t < cfg.total_timesteps; ++t) {
    const StateId s = env.state();
    const std::size_t a = detail::epsilon_greedy(q, s, m.action_count(s), cfg.epsilon(t), agent);
    const BaseOutcome out = env.step(a, world);
    const double target =
        out.reward + (out.terminated ? 0.0 : cfg.gamma * q.max(out.next, m.action_count(out.next)));
    q.update(s, a, target, cfg);

    ep.ret += out.reward;
    discount *= cfg.gamma;
    ep.discounted_return += discount * out.reward;
    ep.violated = ep.violated || m.unsafe(out.next);
    if (env.done()) {
      ep.steps = t + 1;
      run.curve.add(ep);
      env.reset();
      ep = EpisodeRecord{};
      discount = 1.0;
      ep.violated = m.unsafe(env.state());
    }
  }
  run.policy.resize(m.state_count());
  for (StateId s = 0; s < m.state_count(); ++s) {
    run.policy[s].assign(m.action_count(s), 0.0);
    run.policy[s][q.greedy(s, m.action_count(s))] = 1.0;
  }
  return run;
}

struct Evaluation {
  double mean_return = 0.0;
  std::size_t violations = 0;
  std::size_t episodes = 0;
};

// Frozen-policy rollouts of a shield policy; episodes end on absorption or
// after `episode_length` steps.
inline Evaluation evaluate(std::shared_ptr<const ShieldModel> model, const ShieldPolicy& policy,
                           std::size_t episodes, std::uint64_t seed, std::size_t episode_length) {
  require(episodes >= 1 && episode_length >= 1, ErrorCode::Validation,
          "need at least one episode of positive length");
  Rng rng = make_rng(seed);
  ShieldEnv env(model, episode_length);
  const Mdp& m = model->mdp();
  Evaluation ev;
  ev.episodes = episodes;
  double total = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    env.reset();
    bool violated = m.unsafe(env.state().state);
    while (!env.done()) {
      const StepOutcome out = env.step(policy.sample(env.state(), rng), rng);
      total += out.reward;
      violated = violated || m.unsafe(out.next.state);
    }
    ev.violations += violated;
  }
  ev.mean_return = total / static_cast<double>(episodes);
  return ev;
}

inline Evaluation evaluate(const Mdp& m, const MemorylessPolicy& policy, std::size_t episodes,
                           std::uint64_t seed, std::size_t episode_length) {
  require(episodes >= 1 && episode_length >= 1, ErrorCode::Validation,
          "need at least one episode of positive length");
  Rng rng = make_rng(seed);
  MdpEnv env(m, episode_length);
  Evaluation ev;
  ev.episodes = episodes;
  double total = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    env.reset();
    bool violated = m.unsafe(env.state());
    while (!env.done()) {
      const std::size_t a = sample_index(policy[env.state()], rng);
      const BaseOutcome out = env.step(a, rng);
      total += out.reward;
      violated = violated || m.unsafe(out.next);
    }
    ev.violations += violated;
  }
  ev.mean_return = total / static_cast<double>(episodes);
  return ev;
}

}  // namespace pshield
