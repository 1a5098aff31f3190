#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pshield/error.hpp"
#include "pshield/geometry.hpp"
#include "pshield/mdp.hpp"
#include "pshield/random.hpp"
#include "pshield/reach.hpp"

namespace pshield {

inline constexpr double kBudgetTolerance = 1e-12;

// Augmented state: base state and the safety level it must respect.
struct ShieldState {
  StateId state = 0;
  double level = 0.0;

  friend bool operator==(const ShieldState&, const ShieldState&) = default;
};

// (i, j) select a point of the vertex set through g_encode; `profile`
// selects the rule predicting next levels.
struct EncodedAction {
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t profile = 0;

  friend bool operator==(const EncodedAction&, const EncodedAction&) = default;
};

// Profile 0 is "tight" (alpha = beta). Profile k in 1..K is
// "uniform-slack-k": alpha = beta + (k/K)(1 - beta).
struct ProfileFamily {
  std::size_t slack_levels = 4;

  std::size_t size() const { return slack_levels + 1; }

  double level(double beta, std::size_t profile) const {
    if (profile == 0 || slack_levels == 0) return beta;
    const double frac = static_cast<double>(profile) / static_cast<double>(slack_levels);
    return std::clamp(beta + frac * (1.0 - beta), beta, 1.0);
  }

  std::string name(std::size_t profile) const {
    return profile == 0 ? "tight" : "uniform-slack-" + std::to_string(profile);
  }
};

struct Resolution {
  std::size_t profile_used = 0;
  bool fell_back = false;
  AlphaMap alpha;
  HalfspaceCoefficients coeffs;
  VertexSet vertices;
  Mixture mixture;

  // Expected next level under the chosen mixture; never exceeds the budget.
  double expected_level() const {
    double acc = 0.0;
    for (std::size_t a = 0; a < mixture.size(); ++a) acc += mixture[a] * coeffs.c[a];
    return acc;
  }
};

// The shielded MDP: base model padded to a uniform degree, certificate and
// safety threshold. Immutable; shared by sessions, learners and verifiers.
class ShieldModel {
 public:
  ShieldModel(const Mdp& base, SafetyCertificate cert, double p, ProfileFamily profiles = {})
      : mdp_(pad_actions(base, base.max_degree())),
        cert_(std::move(cert)),
        p_(p),
        profiles_(profiles) {
    require(p >= 0.0 && p <= 1.0, ErrorCode::Validation, "safety threshold must lie in [0,1]");
    require(cert_.beta.size() == mdp_.state_count(), ErrorCode::Validation,
            "certificate does not match the model");
    require(cert_.inductive && certify_inductive(mdp_, cert_.beta), ErrorCode::Certification,
            "certificate is not an inductive upper bound");
    if (cert_.beta[mdp_.initial] > p)
      fail(ErrorCode::Infeasible, "infeasible: beta(s_init) = " +
                                      std::to_string(cert_.beta[mdp_.initial]) +
                                      " exceeds p = " + std::to_string(p));

    const std::size_t n = mdp_.state_count();
    successors_.resize(n);
    absorbing_.resize(n);
    for (StateId s = 0; s < n; ++s) {
      auto& succ = successors_[s];
      for (const auto& act : mdp_.actions[s])
        for (const auto& tr : act.dist) succ.push_back(tr.target);
      std::sort(succ.begin(), succ.end());
      succ.erase(std::unique(succ.begin(), succ.end()), succ.end());
      absorbing_[s] = is_absorbing(mdp_, s);
    }
  }

  const Mdp& mdp() const { return mdp_; }
  const SafetyCertificate& certificate() const { return cert_; }
  const ValueVector& beta() const { return cert_.beta; }
  double threshold() const { return p_; }
  const ProfileFamily& profiles() const { return profiles_; }
  std::size_t degree() const { return mdp_.actions.front().size(); }
  std::size_t action_space_size() const { return degree() * degree() * profiles_.size(); }
  bool absorbing(StateId s) const { return absorbing_[s]; }
  ShieldState initial() const { return {mdp_.initial, p_}; }

  // Mixed-radix flat index: i + d*j + d*d*profile.
  EncodedAction decode(std::size_t flat) const {
    const std::size_t d = degree();
    require(flat < action_space_size(), ErrorCode::Validation,
            "action index " + std::to_string(flat) + " out of range");
    return {flat % d, (flat / d) % d, flat / (d * d)};
  }

  std::size_t encode(const EncodedAction& a) const {
    const std::size_t d = degree();
    return a.i + d * a.j + d * d * a.profile;
  }

  AlphaMap alpha(StateId s, std::size_t profile) const {
    AlphaMap out;
    out.states = successors_[s];
    out.values.reserve(out.states.size());
    for (StateId t : out.states) out.values.push_back(profiles_.level(cert_.beta[t], profile));
    return out;
  }

  // Alpha and polytope for a profile, falling back to tight when the
  // requested profile cannot meet the current budget.
  Resolution resolve_profile(const ShieldState& at, std::size_t profile) const {
    require(profile < profiles_.size(), ErrorCode::Validation, "unknown profile");
    Resolution r;
    r.profile_used = profile;
    r.alpha = alpha(at.state, profile);
    r.coeffs = alpha_action_values(mdp_, at.state, r.alpha, at.level);
    if (!feasible(r.coeffs) && profile != 0) {
      r.fell_back = true;
      r.profile_used = 0;
      r.alpha = alpha(at.state, 0);
      r.coeffs = alpha_action_values(mdp_, at.state, r.alpha, at.level);
    }
    if (!feasible(r.coeffs))
      fail(ErrorCode::Internal, "tight profile infeasible at state " + std::to_string(at.state));
    r.vertices = enumerate_vertices(r.coeffs);
    return r;
  }

  Resolution resolve(const ShieldState& at, const EncodedAction& a) const {
    const std::size_t d = degree();
    require(a.i < d && a.j < d, ErrorCode::Validation, "encoded action index out of range");
    Resolution r = resolve_profile(at, a.profile);
    r.mixture = g_encode(r.coeffs, r.vertices, a.i, a.j);
    return r;
  }

  double next_level(const Resolution& r, StateId next) const {
    const double* v = r.alpha.find(next);
    require(v != nullptr, ErrorCode::Internal, "successor outside alpha support");
    return *v;
  }

 private:
  Mdp mdp_;
  SafetyCertificate cert_;
  double p_;
  ProfileFamily profiles_;
  std::vector<std::vector<StateId>> successors_;
  std::vector<char> absorbing_;
};

inline std::shared_ptr<const ShieldModel> make_shield(const Mdp& m, SafetyCertificate cert,
                                                      double p, ProfileFamily profiles = {}) {
  return std::make_shared<const ShieldModel>(m, std::move(cert), p, profiles);
}

struct StepDiagnostics {
  Mixture mixture;
  std::size_t base_action = 0;
  std::size_t profile_used = 0;
  bool fell_back = false;
  double budget = 0.0;          // level before the step
  double expected_level = 0.0;  // sum_a v_a c_a
};

struct StepOutcome {
  ShieldState next;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
  StepDiagnostics diagnostics;
};

// Samples base action and successor for a resolved step and checks the two
// level invariants. Consumes exactly two variates.
inline StepOutcome shield_transition(const ShieldModel& model, const ShieldState& at,
                                     const Resolution& r, Rng& rng) {
  const Mdp& m = model.mdp();
  StepOutcome out;
  out.diagnostics.mixture = r.mixture;
  out.diagnostics.profile_used = r.profile_used;
  out.diagnostics.fell_back = r.fell_back;
  out.diagnostics.budget = at.level;
  out.diagnostics.expected_level = r.expected_level();
  if (out.diagnostics.expected_level > at.level + kBudgetTolerance)
    fail(ErrorCode::Internal, "budget invariant violated");

  const std::size_t a = sample_index(r.mixture, rng);
  out.diagnostics.base_action = a;
  const auto& dist = m.actions[at.state][a].dist;
  std::vector<double> probs;
  probs.reserve(dist.size());
  for (const auto& tr : dist) probs.push_back(tr.prob);
  const StateId next = dist[sample_index(probs, rng)].target;

  out.next = {next, model.next_level(r, next)};
  if (out.next.level < model.beta()[next]) fail(ErrorCode::Internal, "floor invariant violated");
  out.reward = m.rewards[next];
  out.terminated = model.absorbing(next);
  return out;
}

// Single-owner reset/step session over encoded actions.
class ShieldEnv {
 public:
  explicit ShieldEnv(std::shared_ptr<const ShieldModel> model, std::size_t episode_length = 0)
      : model_(std::move(model)), episode_length_(episode_length), rng_(make_rng(0)) {
    current_ = model_->initial();
  }

  const ShieldModel& model() const { return *model_; }
  std::shared_ptr<const ShieldModel> model_ptr() const { return model_; }
  const ShieldState& state() const { return current_; }
  std::size_t steps() const { return steps_; }
  bool done() const { return done_; }
  std::size_t action_space_size() const { return model_->action_space_size(); }
  Rng& rng() { return rng_; }

  ShieldState reset(std::uint64_t seed) {
    rng_ = make_rng(seed);
    return reset();
  }

  // Restarts the episode keeping the random stream.
  ShieldState reset() {
    current_ = model_->initial();
    steps_ = 0;
    done_ = false;
    return current_;
  }

  StepOutcome step(const EncodedAction& a) { return step(a, rng_); }

  StepOutcome step(const EncodedAction& a, Rng& rng) {
    require(!done_, ErrorCode::Validation, "step on a finished episode; call reset first");
    const Resolution r = model_->resolve(current_, a);
    StepOutcome out = shield_transition(*model_, current_, r, rng);
    current_ = out.next;
    ++steps_;
    out.truncated = !out.terminated && episode_length_ > 0 && steps_ >= episode_length_;
    done_ = out.terminated || out.truncated;
    return out;
  }

  StepOutcome step_flat(std::size_t index) { return step(model_->decode(index)); }

 private:
  std::shared_ptr<const ShieldModel> model_;
  std::size_t episode_length_;
  Rng rng_;
  ShieldState current_;
  std::size_t steps_ = 0;
  bool done_ = false;
};

// Dense numbering of a finite set of shield states, grouped by base state.
class LevelIndex {
 public:
  explicit LevelIndex(std::size_t state_count = 0) : levels_(state_count) {}

  // Returns true when the pair was not present.
  bool insert(const ShieldState& x) {
    auto& lv = levels_[x.state];
    auto it = std::lower_bound(lv.begin(), lv.end(), x.level);
    if (it != lv.end() && *it == x.level) return false;
    lv.insert(it, x.level);
    finalized_ = false;
    return true;
  }

  void finalize() {
    offsets_.assign(levels_.size() + 1, 0);
    for (std::size_t s = 0; s < levels_.size(); ++s)
      offsets_[s + 1] = offsets_[s] + levels_[s].size();
    finalized_ = true;
  }

  std::optional<std::size_t> find(const ShieldState& x) const {
    require(finalized_, ErrorCode::Internal, "level index used before finalize");
    if (x.state >= levels_.size()) return std::nullopt;
    const auto& lv = levels_[x.state];
    auto it = std::lower_bound(lv.begin(), lv.end(), x.level);
    if (it == lv.end() || *it != x.level) return std::nullopt;
    return offsets_[x.state] + static_cast<std::size_t>(it - lv.begin());
  }

  std::size_t id(const ShieldState& x) const {
    auto found = find(x);
    if (!found)
      fail(ErrorCode::Validation, "unreachable shield state (" + std::to_string(x.state) + ", " +
                                      std::to_string(x.level) + ")");
    return *found;
  }

  ShieldState state_of(std::size_t id) const {
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), id);
    const auto s = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    return {s, levels_[s][id - offsets_[s]]};
  }

  const std::vector<double>& levels(StateId s) const { return levels_[s]; }
  std::size_t size() const { return offsets_.empty() ? 0 : offsets_.back(); }
  std::size_t base_state_count() const { return levels_.size(); }

 private:
  std::vector<std::vector<double>> levels_;
  std::vector<std::size_t> offsets_;
  bool finalized_ = false;
};

// Closure of shield states reachable from the initial state under every
// encoded action. Finite because every level is either p or one of the
// profile values beta(s') + (k/K)(1 - beta(s')).
inline LevelIndex reachable_levels(const ShieldModel& model, std::size_t max_states = 10'000'000) {
  const Mdp& m = model.mdp();
  LevelIndex index(m.state_count());
  std::deque<ShieldState> queue;
  index.insert(model.initial());
  queue.push_back(model.initial());
  std::size_t count = 1;
  std::vector<char> used(model.degree());
  while (!queue.empty()) {
    const ShieldState at = queue.front();
    queue.pop_front();
    if (model.absorbing(at.state)) continue;
    for (std::size_t k = 0; k < model.profiles().size(); ++k) {
      const Resolution r = model.resolve_profile(at, k);
      std::fill(used.begin(), used.end(), 0);
      for (const auto& v : r.vertices)
        for (std::size_t a = 0; a < v.size(); ++a)
          if (v[a] > 0.0) used[a] = 1;
      for (std::size_t a = 0; a < used.size(); ++a) {
        if (!used[a]) continue;
        for (const auto& tr : m.actions[at.state][a].dist) {
          if (tr.prob <= 0.0) continue;
          const ShieldState next{tr.target, model.next_level(r, tr.target)};
          if (index.insert(next)) {
            if (++count > max_states)
              fail(ErrorCode::Validation, "level closure exceeds " + std::to_string(max_states) +
                                              " shield states");
            queue.push_back(next);
          }
        }
      }
    }
  }
  index.finalize();
  return index;
}

// Memoryless policy over a finite set of shield states; each entry is a
// distribution over encoded actions.
struct ShieldPolicy {
  using Choice = std::pair<EncodedAction, double>;

  std::shared_ptr<const LevelIndex> index;
  std::vector<std::vector<Choice>> choices;

  const std::vector<Choice>& at(const ShieldState& x) const { return choices[index->id(x)]; }

  // Consumes exactly one variate.
  EncodedAction sample(const ShieldState& x, Rng& rng) const {
    const auto& opts = at(x);
    std::vector<double> w;
    w.reserve(opts.size());
    for (const auto& [a, p] : opts) w.push_back(p);
    return opts[sample_index(w, rng)].first;
  }

  static ShieldPolicy constant(std::shared_ptr<const LevelIndex> idx, EncodedAction a) {
    ShieldPolicy pi;
    pi.choices.assign(idx->size(), {{a, 1.0}});
    pi.index = std::move(idx);
    return pi;
  }
};

// Finite-memory policy on the base MDP obtained from a shield policy; the
// memory is the running safety level.
class LiftedPolicy {
 public:
  LiftedPolicy(std::shared_ptr<const ShieldModel> model, ShieldPolicy policy)
      : model_(std::move(model)), policy_(std::move(policy)) {
    reset();
  }

  void reset() {
    level_ = model_->threshold();
    pending_.reset();
  }

  double level() const { return level_; }

  // Base-action distribution at s given the current memory, for the
  // shield action selected by `a`.
  Mixture distribution(StateId s, const EncodedAction& a) const {
    return model_->resolve({s, level_}, a).mixture;
  }

  // Samples the shield choice and the base action. Consumes two variates,
  // in the same order as a shield rollout.
  std::size_t act(StateId s, Rng& rng) {
    const ShieldState at{s, level_};
    const EncodedAction a = policy_.sample(at, rng);
    pending_ = model_->resolve(at, a);
    return sample_index(pending_->mixture, rng);
  }

  void observe(StateId next) {
    require(pending_.has_value(), ErrorCode::Validation, "observe called before act");
    level_ = model_->next_level(*pending_, next);
    pending_.reset();
  }

 private:
  std::shared_ptr<const ShieldModel> model_;
  ShieldPolicy policy_;
  double level_ = 0.0;
  std::optional<Resolution> pending_;
};

struct BaseOutcome {
  StateId next = 0;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
};

// Plain reset/step session over a base MDP.
class MdpEnv {
 public:
  explicit MdpEnv(const Mdp& m, std::size_t episode_length = 0)
      : mdp_(&m), episode_length_(episode_length), absorbing_(m.state_count()) {
    for (StateId s = 0; s < m.state_count(); ++s) absorbing_[s] = is_absorbing(m, s);
    reset();
  }

  StateId reset() {
    state_ = mdp_->initial;
    steps_ = 0;
    done_ = false;
    return state_;
  }

  StateId state() const { return state_; }
  bool done() const { return done_; }

  // Consumes exactly one variate.
  BaseOutcome step(std::size_t action, Rng& rng) {
    require(!done_, ErrorCode::Validation, "step on a finished episode; call reset first");
    require(action < mdp_->action_count(state_), ErrorCode::Validation, "action out of range");
    const auto& dist = mdp_->actions[state_][action].dist;
    std::vector<double> probs;
    probs.reserve(dist.size());
    for (const auto& tr : dist) probs.push_back(tr.prob);
    BaseOutcome out;
    out.next = dist[sample_index(probs, rng)].target;
    out.reward = mdp_->rewards[out.next];
    out.terminated = absorbing_[out.next];
    state_ = out.next;
    ++steps_;
    out.truncated = !out.terminated && episode_length_ > 0 && steps_ >= episode_length_;
    done_ = out.terminated || out.truncated;
    return out;
  }

 private:
  const Mdp* mdp_;
  std::size_t episode_length_;
  std::vector<char> absorbing_;
  StateId state_ = 0;
  std::size_t steps_ = 0;
  bool done_ = false;
};

struct TraceStep {
  StateId state;
  double reward;

  friend bool operator==(const TraceStep&, const TraceStep&) = default;
};

// Runs `steps` shield steps under a memoryless shield policy, restarting on
// episode end. Used for seed-matched comparisons with the lifted policy.
inline std::vector<TraceStep> rollout_shield(std::shared_ptr<const ShieldModel> model,
                                             const ShieldPolicy& policy, std::size_t steps,
                                             std::uint64_t seed, std::size_t episode_length = 0) {
  Rng rng = make_rng(seed);
  ShieldEnv env(model, episode_length);
  env.reset();
  std::vector<TraceStep> trace;
  trace.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    if (env.done()) env.reset();
    const EncodedAction a = policy.sample(env.state(), rng);
    const StepOutcome out = env.step(a, rng);
    trace.push_back({out.next.state, out.reward});
  }
  return trace;
}

inline std::vector<TraceStep> rollout_lifted(std::shared_ptr<const ShieldModel> model,
                                             const ShieldPolicy& policy, std::size_t steps,
                                             std::uint64_t seed, std::size_t episode_length = 0) {
  Rng rng = make_rng(seed);
  MdpEnv env(model->mdp(), episode_length);
  LiftedPolicy lifted(model, policy);
  std::vector<TraceStep> trace;
  trace.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    if (env.done()) {
      env.reset();
      lifted.reset();
    }
    const std::size_t a = lifted.act(env.state(), rng);
    const BaseOutcome out = env.step(a, rng);
    lifted.observe(out.next);
    trace.push_back({out.next, out.reward});
  }
  return trace;
}

}  // namespace pshield
