#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pshield/error.hpp"
#include "pshield/mdp.hpp"

namespace pshield {

// Per-environment experiment parameters.
struct EnvParams {
  double random_action_probability = 0.0;
  std::size_t episode_length = 100;
  std::size_t total_timesteps = 25'000;
  double safety_bound = 0.05;
  std::size_t action_space_size = 4;
  std::size_t state_space_size = 0;
};

inline const std::vector<std::string>& builtin_env_names() {
  static const std::vector<std::string> names{"media-streaming", "colour-bomb-v1",
                                              "colour-bomb-v2", "bridge-v1", "bridge-v2"};
  return names;
}

inline EnvParams default_params(const std::string& name) {
  if (name == "media-streaming") return {0.0, 40, 25'000, 0.001, 2, 462};
  if (name == "colour-bomb-v1") return {0.1, 100, 25'000, 0.05, 4, 81};
  if (name == "colour-bomb-v2") return {0.1, 250, 100'000, 0.05, 4, 900};
  if (name == "bridge-v1" || name == "bridge-v2") return {0.04, 600, 200'000, 0.01, 4, 400};
  fail(ErrorCode::Validation, "unknown environment " + name);
}

// ---------------------------------------------------------------------------
// Media streaming

struct MediaStreamingRates {
  double fast = 0.9;
  double slow = 0.1;
  double out = 0.7;
  std::size_t buffer_size = 20;
};

// State (buffer, cost) with index buffer * (C + 2) + cost. The cost counts
// `fast` actions and saturates at C + 1, the absorbing unsafe level.
inline Mdp build_media_streaming(const EnvParams& params, const MediaStreamingRates& rates = {}) {
  const std::size_t cap = params.episode_length / 2;
  const std::size_t costs = cap + 2;
  const std::size_t buffers = rates.buffer_size + 1;
  const std::size_t n = buffers * costs;
  auto index = [&](std::size_t b, std::size_t c) { return b * costs + c; };

  Mdp m;
  m.initial = index(0, 0);
  m.labels.assign(n, Label::Safe);
  m.rewards.assign(n, 0.0);
  m.actions.resize(n);
  for (std::size_t b = 0; b < buffers; ++b) {
    for (std::size_t c = 0; c < costs; ++c) {
      const StateId s = index(b, c);
      m.rewards[s] = b == 0 ? -1.0 : 0.0;
      if (c > cap) {
        m.labels[s] = Label::Unsafe;
        m.actions[s].push_back({"stay", {{s, 1.0}}});
        continue;
      }
      for (const bool fast : {true, false}) {
        const double in = fast ? rates.fast : rates.slow;
        const std::size_t next_c = fast ? std::min(c + 1, cap + 1) : c;
        std::map<StateId, double> acc;
        for (int arrive = 0; arrive <= 1; ++arrive) {
          for (int leave = 0; leave <= 1; ++leave) {
            const double p = (arrive ? in : 1.0 - in) * (leave ? rates.out : 1.0 - rates.out);
            if (p == 0.0) continue;
            const auto lvl = std::clamp<long>(static_cast<long>(b) + arrive - leave, 0,
                                              static_cast<long>(rates.buffer_size));
            acc[index(static_cast<std::size_t>(lvl), next_c)] += p;
          }
        }
        Action act{fast ? "fast" : "slow", {}};
        for (const auto& [t, p] : acc) act.dist.push_back({t, p});
        m.actions[s].push_back(std::move(act));
      }
    }
  }
  validate(m);
  return m;
}

// ---------------------------------------------------------------------------
// Gridworlds

enum class Cell { Empty, Wall, Start, Bomb, Yellow, Blue, Pink, Green, Red, TerminalYellow };

inline bool is_reward_cell(Cell c) {
  return c == Cell::Yellow || c == Cell::Blue || c == Cell::Pink || c == Cell::TerminalYellow;
}

inline Cell cell_from_glyph(char g) {
  switch (g) {
    case 'S': return Cell::Start;
    case '.': return Cell::Empty;
    case '#': return Cell::Wall;
    case 'B': return Cell::Bomb;
    case 'Y': return Cell::Yellow;
    case 'U': return Cell::Blue;
    case 'P': return Cell::Pink;
    case 'G': return Cell::Green;
    case 'R': return Cell::Red;
    case 'T': return Cell::TerminalYellow;
    default: fail(ErrorCode::Validation, std::string("unknown map glyph '") + g + "'");
  }
}

inline char glyph_of(Cell c) {
  static constexpr std::string_view glyphs = "S.#BYUPGRT";
  static constexpr std::array<Cell, 10> order{Cell::Start, Cell::Empty, Cell::Wall,  Cell::Bomb,
                                              Cell::Yellow, Cell::Blue, Cell::Pink, Cell::Green,
                                              Cell::Red,    Cell::TerminalYellow};
  for (std::size_t k = 0; k < order.size(); ++k)
    if (order[k] == c) return glyphs[k];
  return '?';
}

struct GridLayout {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Cell> cells;  // row-major, row 0 on top
  // Reward-cell kinds active in each zone configuration (colour-bomb-v2).
  std::vector<std::vector<Cell>> zone_configs;

  Cell at(std::size_t row, std::size_t col) const { return cells[row * width + col]; }

  std::pair<std::size_t, std::size_t> start() const {
    for (std::size_t k = 0; k < cells.size(); ++k)
      if (cells[k] == Cell::Start) return {k / width, k % width};
    fail(ErrorCode::Validation, "layout has no start");
  }
};

// Rows of glyphs, optionally followed by lines `config: <glyphs>` naming
// the reward cells active in each zone configuration.
inline GridLayout parse_grid_map(const std::string& text) {
  GridLayout layout;
  std::istringstream in(text);
  std::string line;
  std::size_t starts = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("config:", 0) == 0) {
      std::vector<Cell> active;
      for (char g : line.substr(7)) {
        if (g == ' ') continue;
        const Cell c = cell_from_glyph(g);
        require(is_reward_cell(c), ErrorCode::Validation, "zone configuration lists a non-reward glyph");
        active.push_back(c);
      }
      layout.zone_configs.push_back(std::move(active));
      continue;
    }
    require(layout.zone_configs.empty(), ErrorCode::Validation, "grid rows after configuration lines");
    if (layout.height == 0) layout.width = line.size();
    require(line.size() == layout.width, ErrorCode::Validation,
            "ragged map row " + std::to_string(layout.height));
    for (char g : line) {
      const Cell c = cell_from_glyph(g);
      starts += c == Cell::Start;
      layout.cells.push_back(c);
    }
    ++layout.height;
  }
  require(layout.height > 0, ErrorCode::Validation, "empty map");
  require(starts == 1, ErrorCode::Validation,
          "map must contain exactly one start, found " + std::to_string(starts));
  return layout;
}

inline std::string render_grid_map(const GridLayout& layout) {
  std::string out;
  for (std::size_t r = 0; r < layout.height; ++r) {
    for (std::size_t c = 0; c < layout.width; ++c) out += glyph_of(layout.at(r, c));
    out += '\n';
  }
  for (const auto& cfg : layout.zone_configs) {
    out += "config: ";
    for (Cell c : cfg) out += glyph_of(c);
    out += '\n';
  }
  return out;
}

enum class GridVariant { ColourBombV1, ColourBombV2, BridgeV1, BridgeV2 };

inline std::pair<std::size_t, std::size_t> expected_size(GridVariant v) {
  switch (v) {
    case GridVariant::ColourBombV1: return {9, 9};
    case GridVariant::ColourBombV2: return {15, 15};
    default: return {20, 20};
  }
}

namespace detail {

inline constexpr std::array<const char*, 4> kDirections{"left", "right", "up", "down"};
inline constexpr std::array<int, 4> kDRow{0, 0, -1, 1};
inline constexpr std::array<int, 4> kDCol{-1, 1, 0, 0};

inline constexpr std::size_t kZoneConfigs = 4;

}  // namespace detail

// Directional moves slip uniformly to the three other directions with the
// layout's random_action_probability; blocked moves stay in place. Bombs
// are unsafe and absorbing, reward cells give +1 and absorb. Green/red
// zones offer {stay} plus a deterministic exit to each bordering white cell.
// colour-bomb-v2 carries a zone-configuration index that is resampled
// uniformly when the agent enters the green zone or moves from the start.
inline Mdp build_gridworld(const GridLayout& layout, const EnvParams& params, GridVariant variant) {
  const auto [w, h] = expected_size(variant);
  require(layout.width == w && layout.height == h, ErrorCode::Validation,
          "layout is " + std::to_string(layout.width) + "x" + std::to_string(layout.height) +
              ", expected " + std::to_string(w) + "x" + std::to_string(h));
  const bool v2 = variant == GridVariant::ColourBombV2;
  if (v2)
    require(layout.zone_configs.size() == detail::kZoneConfigs, ErrorCode::Validation,
            "colour-bomb-v2 layout must declare 4 zone configurations");
  const std::size_t configs = v2 ? detail::kZoneConfigs : 1;
  const std::size_t cells = w * h;
  const std::size_t n = cells * configs;
  const double rho = params.random_action_probability;

  auto kind = [&](std::size_t cell, std::size_t cfg) {
    const Cell c = layout.cells[cell];
    if (v2 && is_reward_cell(c)) {
      const auto& active = layout.zone_configs[cfg];
      if (std::find(active.begin(), active.end(), c) == active.end()) return Cell::Empty;
    }
    return c;
  };
  auto is_white = [](Cell c) { return c == Cell::Empty || c == Cell::Start; };

  Mdp m;
  const auto [sr, sc] = layout.start();
  m.initial = sr * w + sc;
  m.labels.assign(n, Label::Safe);
  m.rewards.assign(n, 0.0);
  m.actions.resize(n);

  for (std::size_t cfg = 0; cfg < configs; ++cfg) {
    for (std::size_t cell = 0; cell < cells; ++cell) {
      const StateId s = cfg * cells + cell;
      const std::size_t row = cell / w, col = cell % w;
      const Cell here = kind(cell, cfg);
      auto& acts = m.actions[s];

      if (here == Cell::Wall || here == Cell::Bomb || is_reward_cell(here)) {
        if (here == Cell::Bomb) m.labels[s] = Label::Unsafe;
        if (is_reward_cell(here)) m.rewards[s] = 1.0;
        acts.push_back({"stay", {{s, 1.0}}});
        continue;
      }

      // Successor distribution over configurations when landing on `target`.
      auto land = [&](std::map<StateId, double>& acc, std::size_t target, double p) {
        const bool entering_green = layout.cells[target] == Cell::Green && target != cell;
        const bool leaving_start = layout.cells[cell] == Cell::Start;
        if (v2 && (entering_green || leaving_start)) {
          for (std::size_t k = 0; k < configs; ++k)
            acc[k * cells + target] += p / static_cast<double>(configs);
        } else {
          acc[cfg * cells + target] += p;
        }
      };
      auto neighbour = [&](std::size_t dir) -> std::optional<std::size_t> {
        const long r = static_cast<long>(row) + detail::kDRow[dir];
        const long c = static_cast<long>(col) + detail::kDCol[dir];
        if (r < 0 || c < 0 || r >= static_cast<long>(h) || c >= static_cast<long>(w))
          return std::nullopt;
        return static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c);
      };
      auto to_action = [](std::string name, const std::map<StateId, double>& acc) {
        Action a{std::move(name), {}};
        for (const auto& [t, p] : acc)
          if (p > 0.0) a.dist.push_back({t, p});
        return a;
      };

      if (here == Cell::Green || here == Cell::Red) {
        acts.push_back({"stay", {{s, 1.0}}});
        for (std::size_t dir = 0; dir < 4; ++dir) {
          const auto nb = neighbour(dir);
          if (!nb || !is_white(kind(*nb, cfg))) continue;
          std::map<StateId, double> acc;
          land(acc, *nb, 1.0);
          acts.push_back(to_action(std::string("exit-") + detail::kDirections[dir], acc));
        }
        continue;
      }

      for (std::size_t dir = 0; dir < 4; ++dir) {
        std::map<StateId, double> acc;
        for (std::size_t actual = 0; actual < 4; ++actual) {
          const double p = actual == dir ? 1.0 - rho : rho / 3.0;
          if (p == 0.0) continue;
          auto nb = neighbour(actual);
          if (!nb || layout.cells[*nb] == Cell::Wall) nb = cell;
          land(acc, *nb, p);
        }
        acts.push_back(to_action(detail::kDirections[dir], acc));
      }
    }
  }
  validate(m);
  return m;
}

// ---------------------------------------------------------------------------
// Built-in layouts. Bridge v1 has a railed width-1 bridge on the left and a
// lava-flanked corridor straight above the start; bridge v2 replaces the
// bridge with a lava-free detour on the right.

inline const std::string& builtin_map(const std::string& name) {
  static const std::map<std::string, std::string> maps{
      {"colour-bomb-v1",
       "Y..BGB..U\n"
       ".........\n"
       "...B.B...\n"
       ".........\n"
       "....S....\n"
       ".........\n"
       "..B...B..\n"
       ".........\n"
       "P..BRB...\n"},
      {"colour-bomb-v2",
       "Y......B......U\n"
       "...............\n"
       "..B.......B....\n"
       "...............\n"
       ".....B...B.....\n"
       "B.............B\n"
       "G......S......R\n"
       "B.............B\n"
       ".....B...B.....\n"
       "...............\n"
       "..B.......B....\n"
       "...............\n"
       "...............\n"
       "...B.....B.....\n"
       "P......B......Y\n"
       "config: Y\n"
       "config: U\n"
       "config: P\n"
       "config: YU\n"},
      {"bridge-v1",
       "TTTTTTTTTTTTTTTTTTTT\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "BB#.#BBBBB.BBBBBBBBB\n"
       "BB#.#BBBBB.BBBBBBBBB\n"
       "BB#.#BBBBB.BBBBBBBBB\n"
       "BB#.#BBBBB.BBBBBBBBB\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "..........S.........\n"
       "....................\n"},
      {"bridge-v2",
       "TTTTTTTTTTTTTTTTTTTT\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "BBBBBBBBBB.BBBBBB...\n"
       "BBBBBBBBBB.BBBBBB...\n"
       "BBBBBBBBBB.BBBBBB...\n"
       "BBBBBBBBBB.BBBBBB...\n"
       "BBBBBBBBBB.BBBBBB...\n"
       "BBBBBBBBBB.BBBBBB...\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "....................\n"
       "..........S.........\n"
       "....................\n"},
  };
  auto it = maps.find(name);
  require(it != maps.end(), ErrorCode::Validation, "no built-in map for " + name);
  return it->second;
}

inline GridVariant variant_of(const std::string& name) {
  if (name == "colour-bomb-v1") return GridVariant::ColourBombV1;
  if (name == "colour-bomb-v2") return GridVariant::ColourBombV2;
  if (name == "bridge-v1") return GridVariant::BridgeV1;
  if (name == "bridge-v2") return GridVariant::BridgeV2;
  fail(ErrorCode::Validation, "not a gridworld: " + name);
}

struct BuiltEnv {
  Mdp mdp;
  EnvParams params;
};

inline BuiltEnv build_named(const std::string& name) {
  EnvParams params = default_params(name);
  if (name == "media-streaming") return {build_media_streaming(params), params};
  return {build_gridworld(parse_grid_map(builtin_map(name)), params, variant_of(name)), params};
}

}  // namespace pshield
