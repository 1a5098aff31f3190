// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include <Eigen/Dense>

#include "support.hpp"

using namespace pshield;
using namespace pshield::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok && pass) detail << "first failure: " << what << "; ";
    pass = pass && ok;
  }
};

int failures = 0;

void report(const std::string& name, const std::function<void(Outcome&)>& body) {
  Outcome out;
  const auto t0 = Clock::now();
  try {
    body(out);
  } catch (const std::exception& e) {
    out.check(false, std::string("exception: ") + e.what());
  }
  failures += !out.pass;
  std::cout << (out.pass ? "PASS " : "FAIL ") << name << " (" << seconds_since(t0) << " s) "
            << out.detail.str() << std::endl;
}

// Minimal reach probability over all deterministic memoryless policies.
ValueVector brute_force_beta(const Mdp& m) {
  const std::size_t n = m.state_count();
  ValueVector best(n, 1.0);
  std::vector<std::size_t> digit(n, 0);
  for (;;) {
    MemorylessPolicy pi(n);
    for (StateId s = 0; s < n; ++s) {
      pi[s].assign(m.action_count(s), 0.0);
      pi[s][digit[s]] = 1.0;
    }
    const MarkovChain c = induce_chain(m, pi);
    const ValueVector v = exact_reach(c, unsafe_mask(c));
    for (StateId s = 0; s < n; ++s) best[s] = std::min(best[s], v[s]);
    std::size_t s = 0;
    while (s < n && ++digit[s] == m.action_count(s)) digit[s++] = 0;
    if (s == n) break;
  }
  return best;
}

bool close(const Mixture& a, const Mixture& b, double tol) {
  for (std::size_t k = 0; k < a.size(); ++k)
    if (std::abs(a[k] - b[k]) > tol) return false;
  return true;
}

bool contains(const VertexSet& set, const Mixture& x, double tol) {
  return std::any_of(set.begin(), set.end(), [&](const Mixture& v) { return close(v, x, tol); });
}

// Dense vertex reference: every feasible basic solution of the simplex cut
// by the half-space.
VertexSet reference_vertices(const HalfspaceCoefficients& h) {
  const std::size_t d = h.dimension();
  const std::size_t m = d + 1;
  VertexSet out;
  std::vector<char> pick(m, 0);
  std::fill(pick.begin(), pick.begin() + static_cast<long>(d - 1), 1);
  std::sort(pick.begin(), pick.end());
  do {
    const auto n = static_cast<Eigen::Index>(d);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    a.row(0).setOnes();
    b[0] = 1.0;
    Eigen::Index row = 1;
    for (std::size_t k = 0; k < m; ++k) {
      if (!pick[k]) continue;
      if (k < d)
        a(row, static_cast<Eigen::Index>(k)) = 1.0;
      else
        for (std::size_t j = 0; j < d; ++j) a(row, static_cast<Eigen::Index>(j)) = h.q - h.c[j];
      ++row;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (lu.rank() < n) continue;
    const Eigen::VectorXd x = lu.solve(b);
    Mixture v(x.data(), x.data() + d);
    bool ok = true;
    for (double z : v) ok = ok && z >= -1e-12;
    if (!ok || halfspace_slack(h, v) < -1e-12) continue;
    for (double& z : v) z = std::max(z, 0.0);
    if (!contains(out, v, 1e-9)) out.push_back(v);
  } while (std::next_permutation(pick.begin(), pick.end()));
  return out;
}

bool feasible_point(const HalfspaceCoefficients& h, const Mixture& x) {
  double sum = 0.0;
  for (double v : x) {
    if (v < 0.0) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= 1e-12 && halfspace_slack(h, x) >= -1e-12;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PSHIELD_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct TrainingSummary {
  std::vector<ShieldedRun> runs;
};

TrainingSummary train_seeds(const BuiltEnv& env, std::shared_ptr<const ShieldModel> model, int seeds) {
  TrainingSummary out;
  LearnerConfig cfg;
  cfg.total_timesteps = env.params.total_timesteps;
  cfg.episode_length = env.params.episode_length;
  for (int seed = 0; seed < seeds; ++seed) {
    cfg.seed = static_cast<std::uint64_t>(seed);
    out.runs.push_back(train_shielded(model, cfg));
  }
  return out;
}

}  // namespace

int main() {
  report("certificate correctness on F1", [](Outcome& o) {
    const auto t0 = Clock::now();
    const SafetyCertificate c = interval_iteration(f1(), 1e-9);
    const double secs = seconds_since(t0);
    o.detail << "beta(s0)=" << c.beta[kS0] << " ";
    o.check(c.beta[kS0] >= 2.0 / 7.0 && c.beta[kS0] <= 2.0 / 7.0 + 1e-9, "beta(s0) bracket");
    o.check(c.beta[kG] == 0.0 && c.beta[kU] == 1.0, "pinned states");
    o.check(certify_inductive(f1(), c.beta), "inductive");
    o.check(secs < 1.0, "runtime");
  });

  report("certificate soundness on 500 random models", [](Outcome& o) {
    Rng rng = make_rng(2024);
    for (int trial = 0; trial < 500; ++trial) {
      const bool small = trial % 5 == 0;
      const Mdp m = small ? random_mdp(rng, 6, 3) : random_mdp(rng, 50, 4);
      const double eps = trial % 2 ? 1e-6 : 1e-9;
      const SafetyCertificate c = interval_iteration(m, eps);
      o.check(certify_inductive(m, c.beta), "inductive, trial " + std::to_string(trial));
      for (StateId s = 0; s < m.state_count(); ++s)
        o.check(c.lower[s] <= c.beta[s] && c.beta[s] - c.lower[s] <= eps, "bracket, trial " + std::to_string(trial));
      if (small) {
        const ValueVector truth = brute_force_beta(m);
        for (StateId s = 0; s < m.state_count(); ++s)
          o.check(c.beta[s] >= truth[s] - 1e-12 && c.lower[s] <= truth[s] + 1e-12,
                  "enumerated optimum, trial " + std::to_string(trial));
      }
    }
  });

  report("geometry oracle equivalence on 10^4 instances", [](Outcome& o) {
    Rng rng = make_rng(99);
    std::size_t checked = 0;
    for (int trial = 0; checked < 10'000; ++trial) {
      const std::size_t d = 1 + static_cast<std::size_t>(uniform01(rng) * 5);
      HalfspaceCoefficients h;
      h.q = uniform01(rng);
      for (std::size_t a = 0; a < d; ++a) h.c.push_back(uniform01(rng) < 0.1 ? h.q : uniform01(rng));
      if (!feasible(h)) continue;
      ++checked;
      const std::string tag = "trial " + std::to_string(trial);
      const VertexSet v = enumerate_vertices(h);
      const VertexSet ref = reference_vertices(h);
      o.check(v.size() == ref.size(), "vertex count, " + tag);
      for (const auto& x : ref) o.check(contains(v, x, 1e-9), "vertex match, " + tag);
      VertexSet images;
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          images.push_back(g_encode(h, v, i, j));
          o.check(feasible_point(h, images.back()), "g feasibility, " + tag);
        }
      for (const auto& x : v) o.check(contains(images, x, 1e-12), "g coverage, " + tag);
    }
  });

  report("exact safety of random shield policies", [](Outcome& o) {
    struct Case {
      std::string name;
      Mdp m;
      double p;
    };
    std::vector<Case> cases{{"F1", f1(), 0.3}, {"F1", f1(), 0.9}, {"F2", f2(), 0.2}};
    for (const char* name : {"colour-bomb-v1", "bridge-v1"}) {
      BuiltEnv env = build_named(name);
      cases.push_back({name, std::move(env.mdp), env.params.safety_bound});
    }
    Rng rng = make_rng(31);
    double worst_gap = 0.0;
    for (const auto& c : cases) {
      const auto model = make_shield(c.m, interval_iteration(c.m, 1e-9), c.p);
      auto index = std::make_shared<const LevelIndex>(reachable_levels(*model));
      for (int trial = 0; trial < 100; ++trial) {
        const ShieldPolicy pi = random_shield_policy(*model, index, rng, trial % 2 == 1);
        const ShieldChain chain = induce_shield_chain(*model, pi);
        const SafetyReport r = verify_chain(chain, c.p);
        o.check(r.probability <= c.p + 1e-9, c.name + " bound");
        const auto target = unsafe_mask(chain.chain);
        const ValueVector a = exact_reach(chain.chain, target);
        const ValueVector b = gamma_iteration_reach(chain.chain, target);
        for (std::size_t s = 0; s < a.size(); ++s) worst_gap = std::max(worst_gap, std::abs(a[s] - b[s]));
      }
    }
    o.detail << "max oracle gap " << worst_gap << " ";
    o.check(worst_gap <= 1e-9, "oracle agreement");
  });

  report("safety throughout training", [](Outcome& o) {
    for (const char* name : {"colour-bomb-v1", "bridge-v1"}) {
      const BuiltEnv env = build_named(name);
      const double p = env.params.safety_bound;
      const auto model = make_shield(env.mdp, interval_iteration(env.mdp, 1e-9), p);
      const TrainingSummary t = train_seeds(env, model, 10);
      double worst = 0.0;
      for (std::size_t seed = 0; seed < t.runs.size(); ++seed) {
        const ShieldedRun& run = t.runs[seed];
        const auto n = static_cast<double>(run.curve.episodes.size());
        const double limit = p + 2.0 * std::sqrt(p * (1.0 - p) / n);
        worst = std::max(worst, run.curve.violation_rate());
        o.check(run.curve.violation_rate() <= limit, std::string(name) + " rate, seed " + std::to_string(seed));
        o.check(run.snapshots.size() == 10, std::string(name) + " snapshot count");
        for (const auto& s : run.snapshots)
          o.check(s.greedy.pass && s.behaviour.pass, std::string(name) + " snapshot, seed " + std::to_string(seed));
      }
      o.detail << name << " worst rate " << worst << "; ";
    }
    const BuiltEnv bridge = build_named("bridge-v1");
    LearnerConfig cfg;
    cfg.total_timesteps = bridge.params.total_timesteps;
    cfg.episode_length = bridge.params.episode_length;
    const UnshieldedRun plain = train_unshielded(bridge.mdp, cfg);
    o.detail << "unshielded bridge-v1 rate " << plain.curve.violation_rate() << " ";
    o.check(plain.curve.violation_rate() > bridge.params.safety_bound, "unshielded contrast");
  });

  report("reward", [](Outcome& o) {
    const BuiltEnv bomb = build_named("colour-bomb-v1");
    const auto model = make_shield(bomb.mdp, interval_iteration(bomb.mdp, 1e-9), bomb.params.safety_bound);
    const TrainingSummary t = train_seeds(bomb, model, 10);
    double lowest = 1.0;
    for (const auto& run : t.runs) lowest = std::min(lowest, run.curve.mean_return_last(100));
    o.detail << "colour-bomb-v1 lowest final-100 " << lowest << "; ";
    o.check(lowest >= 0.9, "colour-bomb-v1 final-100 return");

    const BuiltEnv media = build_named("media-streaming");
    const auto media_model =
        make_shield(media.mdp, interval_iteration(media.mdp, 1e-9), media.params.safety_bound);
    const TrainingSummary m = train_seeds(media, media_model, 3);
    for (const auto& run : m.runs) {
      const double first = run.curve.mean_return_first(100);
      const double last = run.curve.mean_return_last(100);
      o.detail << "media " << first << " -> " << last << "; ";
      o.check(last > first, "media improves");
      o.check(last < 0.0, "media stays negative");
    }
  });

  report("optimality desk check on F2", [](Outcome& o) {
    const Mdp m = f2();
    const RcopSolution sol = brute_force_rcop(m, 0.2, 0.5, RcopOptions{.grid = 1000});
    o.detail << "rcop J=" << sol.value << " ";
    o.check(sol.found && std::abs(sol.value - 0.38) <= 1e-6, "rcop value");

    const auto model = make_shield(m, interval_iteration(m, 1e-9), 0.2);
    double lowest = 1.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      LearnerConfig cfg;
      cfg.gamma = 0.5;
      cfg.total_timesteps = 50'000;
      cfg.episode_length = 10;
      cfg.schedule = LearningRateSchedule::InverseVisit;
      cfg.seed = seed;
      const ShieldedRun run = train_shielded(model, cfg);
      lowest = std::min(lowest, shield_policy_value(*model, run.policy, 0.5));
      for (std::uint64_t k = 0; k < 20; ++k)
        o.check(rollout_shield(model, run.policy, 10, k, 5) == rollout_lifted(model, run.policy, 10, k, 5),
                "lift fidelity on F2");
    }
    o.detail << "lowest learned J=" << lowest << " ";
    o.check(lowest >= 0.38 * 0.95, "learned value");

    const BuiltEnv bomb = build_named("colour-bomb-v1");
    const auto bomb_model = make_shield(bomb.mdp, interval_iteration(bomb.mdp, 1e-9), bomb.params.safety_bound);
    LearnerConfig cfg;
    cfg.total_timesteps = bomb.params.total_timesteps;
    cfg.episode_length = bomb.params.episode_length;
    const ShieldedRun run = train_shielded(bomb_model, cfg);
    for (std::uint64_t k = 0; k < 10; ++k)
      o.check(rollout_shield(bomb_model, run.policy, 10'000, k, bomb.params.episode_length) ==
                  rollout_lifted(bomb_model, run.policy, 10'000, k, bomb.params.episode_length),
              "lift fidelity on colour-bomb-v1");
  });

  report("feasibility gate", [](Outcome& o) {
    const auto dir = std::filesystem::temp_directory_path() / "pshield_acceptance_gate";
    const int code = run_cli("train --model " + fixture("f1.json") + " --shielded --p 0.2 --out-dir " + dir.string());
    o.detail << "exit code " << code << " ";
    o.check(code == 2, "exit code");
  });

  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
