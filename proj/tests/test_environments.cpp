#include <gtest/gtest.h>

#include "support.hpp"

using namespace pshield;
using namespace pshield::testing;

namespace {

ErrorCode parse_error(const std::string& text) {
  try {
    parse_grid_map(text);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

double prob_to(const Action& a, StateId t) {
  for (const auto& tr : a.dist)
    if (tr.target == t) return tr.prob;
  return 0.0;
}

const Action& named(const Mdp& m, StateId s, const std::string& name) {
  for (const auto& a : m.actions[s])
    if (a.name == name) return a;
  throw std::runtime_error("no action " + name);
}

}  // namespace

TEST(Environments, StateAndActionCounts) {
  for (const auto& name : builtin_env_names()) {
    const BuiltEnv env = build_named(name);
    EXPECT_EQ(env.mdp.state_count(), env.params.state_space_size) << name;
    EXPECT_EQ(env.mdp.max_degree(), env.params.action_space_size) << name;
  }
}

TEST(Environments, DefaultParameters) {
  const EnvParams media = default_params("media-streaming");
  EXPECT_EQ(media.episode_length, 40u);
  EXPECT_EQ(media.safety_bound, 0.001);
  const EnvParams v2 = default_params("colour-bomb-v2");
  EXPECT_EQ(v2.random_action_probability, 0.1);
  EXPECT_EQ(v2.episode_length, 250u);
  EXPECT_EQ(v2.total_timesteps, 100'000u);
  const EnvParams bridge = default_params("bridge-v2");
  EXPECT_EQ(bridge.random_action_probability, 0.04);
  EXPECT_EQ(bridge.total_timesteps, 200'000u);
  EXPECT_EQ(bridge.safety_bound, 0.01);
  EXPECT_THROW(default_params("pacman"), Error);
}

TEST(Environments, MediaStreamingDynamics) {
  const BuiltEnv env = build_named("media-streaming");
  const Mdp& m = env.mdp;
  const std::size_t costs = 22;
  auto id = [&](std::size_t b, std::size_t c) { return b * costs + c; };
  EXPECT_EQ(m.initial, id(0, 0));
  EXPECT_EQ(m.rewards[id(0, 3)], -1.0);
  EXPECT_EQ(m.rewards[id(1, 3)], 0.0);
  EXPECT_TRUE(m.unsafe(id(5, 21)));
  EXPECT_FALSE(m.unsafe(id(5, 20)));
  // buffer 3, cost 4, fast: arrival 0.9, departure 0.7, cost +1
  const Action& fast = named(m, id(3, 4), "fast");
  EXPECT_NEAR(prob_to(fast, id(4, 5)), 0.9 * 0.3, 1e-15);
  EXPECT_NEAR(prob_to(fast, id(3, 5)), 0.9 * 0.7 + 0.1 * 0.3, 1e-15);
  EXPECT_NEAR(prob_to(fast, id(2, 5)), 0.1 * 0.7, 1e-15);
  const Action& slow = named(m, id(0, 4), "slow");
  EXPECT_NEAR(prob_to(slow, id(1, 4)), 0.1 * 0.3, 1e-15);
  EXPECT_NEAR(prob_to(slow, id(0, 4)), 0.1 * 0.7 + 0.9 * 0.7 + 0.9 * 0.3, 1e-15);
  // spending the last unit of cost leads to the unsafe level
  EXPECT_GT(prob_to(named(m, id(3, 20), "fast"), id(3, 21)), 0.0);
  EXPECT_TRUE(is_absorbing(m, id(3, 21)));
}

TEST(Environments, ParseErrors) {
  EXPECT_EQ(parse_error("S..\n..\n"), ErrorCode::Validation);     // ragged
  EXPECT_EQ(parse_error("...\n...\n"), ErrorCode::Validation);    // no start
  EXPECT_EQ(parse_error("S.S\n...\n"), ErrorCode::Validation);    // two starts
  EXPECT_EQ(parse_error("S.x\n...\n"), ErrorCode::Validation);    // unknown glyph
  EXPECT_EQ(parse_error("S..\nconfig: Y\n...\n"), ErrorCode::Validation);
  EXPECT_EQ(parse_error("S..\nconfig: B\n"), ErrorCode::Validation);
  EXPECT_EQ(parse_error("S#BYUPGRT\n........."), ErrorCode::Ok);
}

TEST(Environments, RenderRoundTrip) {
  for (const auto& name : {"colour-bomb-v1", "colour-bomb-v2", "bridge-v1", "bridge-v2"}) {
    const GridLayout layout = parse_grid_map(builtin_map(name));
    EXPECT_EQ(render_grid_map(layout), builtin_map(name)) << name;
  }
}

TEST(Environments, WrongSizeRejected) {
  const GridLayout small = parse_grid_map("S..\n...\n");
  EXPECT_THROW(build_gridworld(small, default_params("bridge-v1"), GridVariant::BridgeV1), Error);
  std::string v2 = builtin_map("colour-bomb-v2");
  v2 = v2.substr(0, v2.find("config:"));
  EXPECT_THROW(build_gridworld(parse_grid_map(v2), default_params("colour-bomb-v2"),
                               GridVariant::ColourBombV2),
               Error);
}

TEST(Environments, SlipDistribution) {
  const GridLayout layout = parse_grid_map(builtin_map("colour-bomb-v1"));
  const Mdp m = build_named("colour-bomb-v1").mdp;
  const std::size_t w = layout.width;
  const StateId centre = 4 * w + 4;  // the start cell
  const Action& up = named(m, centre, "up");
  EXPECT_NEAR(prob_to(up, 3 * w + 4), 0.9, 1e-15);
  EXPECT_NEAR(prob_to(up, 5 * w + 4), 0.1 / 3, 1e-15);
  EXPECT_NEAR(prob_to(up, 4 * w + 3), 0.1 / 3, 1e-15);
  EXPECT_NEAR(prob_to(up, 4 * w + 5), 0.1 / 3, 1e-15);
  // border bump: moving left from column 0 stays in place
  const StateId edge = 3 * w;
  EXPECT_NEAR(prob_to(named(m, edge, "left"), edge), 0.9, 1e-15);
}

TEST(Environments, WallsBlockMoves) {
  const GridLayout layout = parse_grid_map(builtin_map("bridge-v1"));
  const Mdp m = build_named("bridge-v1").mdp;
  const std::size_t w = layout.width;
  ASSERT_EQ(layout.at(9, 2), Cell::Wall);
  const StateId on_bridge = 9 * w + 3;
  const Action& left = named(m, on_bridge, "left");
  EXPECT_NEAR(prob_to(left, on_bridge), 0.96 + 0.04 / 3, 1e-15);
}

TEST(Environments, ZonesAndTerminals) {
  const GridLayout layout = parse_grid_map(builtin_map("colour-bomb-v1"));
  const Mdp m = build_named("colour-bomb-v1").mdp;
  const std::size_t w = layout.width;
  for (StateId s = 0; s < m.state_count(); ++s) {
    const Cell c = layout.cells[s];
    if (c == Cell::Bomb) {
      EXPECT_TRUE(m.unsafe(s));
      EXPECT_TRUE(is_absorbing(m, s));
    } else {
      EXPECT_FALSE(m.unsafe(s));
    }
    if (is_reward_cell(c)) {
      EXPECT_EQ(m.rewards[s], 1.0);
      EXPECT_TRUE(is_absorbing(m, s));
    }
    if (c == Cell::Green || c == Cell::Red) {
      EXPECT_EQ(m.actions[s].front().name, "stay");
      for (std::size_t a = 1; a < m.action_count(s); ++a) {
        ASSERT_EQ(m.actions[s][a].dist.size(), 1u);  // exits are deterministic
        const StateId t = m.actions[s][a].dist.front().target;
        EXPECT_TRUE(layout.cells[t] == Cell::Empty || layout.cells[t] == Cell::Start);
      }
    }
  }
  const StateId green = 0 * w + 4;
  ASSERT_EQ(layout.cells[green], Cell::Green);
  EXPECT_EQ(m.action_count(green), 2u);  // stay, exit-down
  EXPECT_EQ(named(m, green, "exit-down").dist.front().target, 1 * w + 4);
}

TEST(Environments, ColourBombV2Configurations) {
  const GridLayout layout = parse_grid_map(builtin_map("colour-bomb-v2"));
  ASSERT_EQ(layout.zone_configs.size(), 4u);
  const Mdp m = build_named("colour-bomb-v2").mdp;
  const std::size_t cells = layout.width * layout.height;
  const auto [sr, sc] = layout.start();
  const StateId start = sr * layout.width + sc;
  EXPECT_EQ(m.initial, start);
  // leaving the start cell resamples the configuration uniformly
  const Action& up = named(m, start, "up");
  for (std::size_t k = 0; k < 4; ++k)
    EXPECT_NEAR(prob_to(up, k * cells + start - layout.width), 0.9 / 4, 1e-15);
  // a yellow cell is terminal only in configurations listing Y
  const StateId yellow = 0;
  ASSERT_EQ(layout.cells[yellow], Cell::Yellow);
  EXPECT_EQ(m.rewards[0 * cells + yellow], 1.0);  // config "Y"
  EXPECT_EQ(m.rewards[1 * cells + yellow], 0.0);  // config "U"
  EXPECT_FALSE(is_absorbing(m, 1 * cells + yellow));
  EXPECT_EQ(m.rewards[3 * cells + yellow], 1.0);  // config "YU"
  // entering the green zone resamples
  const StateId green = 6 * layout.width;
  ASSERT_EQ(layout.cells[green], Cell::Green);
  const Action& left = named(m, 2 * cells + green + 1, "left");
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(prob_to(left, k * cells + green), 0.9 / 4, 1e-15);
}

TEST(Environments, BridgeSafePathExists) {
  for (const auto& name : {"bridge-v1", "bridge-v2"}) {
    const BuiltEnv env = build_named(name);
    const SafetyCertificate c = interval_iteration(env.mdp, 1e-9);
    EXPECT_LT(c.beta[env.mdp.initial], 1e-4) << name;
    // the straight corridor above the start is risky
    const StateId corridor = 9 * 20 + 10;
    EXPECT_GT(c.beta[corridor], 0.01) << name;
  }
}

TEST(Environments, ExportRoundTrip) {
  for (const auto& name : builtin_env_names()) {
    const Mdp m = build_named(name).mdp;
    EXPECT_EQ(parse_model(serialize_model(m)), m) << name;
  }
}
