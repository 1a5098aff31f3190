// Drives the shield session with uniformly random flat actions and prints
// one line per step: state, level, mixture, base action.

#include <iostream>
#include <random>

#include <pshield.hpp>

using namespace pshield;

int main(int argc, char** argv) {
  const std::string name = argc > 1 ? argv[1] : "colour-bomb-v1";
  const std::uint64_t seed = argc > 2 ? std::stoull(argv[2]) : 0;
  try {
    const BuiltEnv env = build_named(name);
    const auto model = make_shield(env.mdp, interval_iteration(env.mdp, 1e-9), env.params.safety_bound);
    ShieldEnv session(model, env.params.episode_length);
    std::mt19937_64 pick(seed);
    std::uniform_int_distribution<std::size_t> action(0, session.action_space_size() - 1);

    ShieldState s = session.reset(seed);
    std::cout << "actions=" << session.action_space_size() << " start=" << s.state << " level=" << s.level << "\n";
    double total = 0.0;
    while (!session.done()) {
      const std::size_t idx = action(pick);
      const StepOutcome out = session.step_flat(idx);
      total += out.reward;
      std::cout << session.steps() << " idx=" << idx << " a=" << out.diagnostics.base_action
                << " -> s=" << out.next.state << " level=" << out.next.level << " r=" << out.reward
                << (out.diagnostics.fell_back ? " fallback" : "") << "\n";
    }
    std::cout << "return=" << total << " unsafe=" << env.mdp.unsafe(session.state().state) << "\n";
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  }
}
