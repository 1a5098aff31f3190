#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "pshield/error.hpp"
#include "pshield/mdp.hpp"

namespace pshield {

// Distribution over a state's d actions.
using Mixture = std::vector<double>;
using VertexSet = std::vector<Mixture>;

inline constexpr double kVertexDedupTolerance = 1e-12;

// Predicted next safety levels, one per successor of the current state.
// `states` is sorted and unique.
struct AlphaMap {
  std::vector<StateId> states;
  std::vector<double> values;

  const double* find(StateId s) const {
    auto it = std::lower_bound(states.begin(), states.end(), s);
    if (it == states.end() || *it != s) return nullptr;
    return &values[static_cast<std::size_t>(it - states.begin())];
  }
};

// Half-space sum_a x_a (q - c_a) >= 0 intersected with the simplex.
struct HalfspaceCoefficients {
  std::vector<double> c;  // c_a = sum_{s'} P(s,a,s') alpha(s')
  double q = 0.0;

  std::size_t dimension() const { return c.size(); }
  bool contains_vertex(std::size_t i) const { return c[i] <= q; }
};

inline HalfspaceCoefficients alpha_action_values(const Mdp& m, StateId s, const AlphaMap& alpha,
                                                 double q) {
  HalfspaceCoefficients h;
  h.q = q;
  h.c.reserve(m.action_count(s));
  for (const auto& act : m.actions[s]) {
    double acc = 0.0;
    for (const auto& [t, p] : act.dist) {
      const double* a = alpha.find(t);
      require(a != nullptr, ErrorCode::Validation,
              "alpha does not cover successor " + std::to_string(t));
      acc += p * *a;
    }
    h.c.push_back(acc);
  }
  return h;
}

// The simplex meets the half-space iff some pure action fits the budget.
inline bool feasible(const HalfspaceCoefficients& h) {
  return !h.c.empty() && *std::min_element(h.c.begin(), h.c.end()) <= h.q;
}

inline double halfspace_slack(const HalfspaceCoefficients& h, const Mixture& x) {
  double acc = 0.0;
  for (std::size_t a = 0; a < x.size(); ++a) acc += x[a] * (h.q - h.c[a]);
  return acc;
}

inline Mixture basis_vector(std::size_t d, std::size_t i) {
  Mixture x(d, 0.0);
  x[i] = 1.0;
  return x;
}

namespace detail {

inline bool same_point(const Mixture& a, const Mixture& b, double tol) {
  for (std::size_t k = 0; k < a.size(); ++k)
    if (std::abs(a[k] - b[k]) > tol) return false;
  return true;
}

inline void push_unique(VertexSet& set, Mixture v) {
  for (const auto& w : set)
    if (same_point(w, v, kVertexDedupTolerance)) return;
  set.push_back(std::move(v));
}

// Point on the edge chi_i -- chi_j where the budget is met with equality.
inline Mixture edge_point(const HalfspaceCoefficients& h, std::size_t i, std::size_t j) {
  const double t = std::clamp((h.q - h.c[j]) / (h.c[i] - h.c[j]), 0.0, 1.0);
  Mixture x(h.dimension(), 0.0);
  x[i] = t;
  x[j] += 1.0 - t;
  return x;
}

inline double distance_to_vertex(const Mixture& v, std::size_t i) {
  double acc = 0.0;
  for (std::size_t a = 0; a < v.size(); ++a) {
    const double diff = v[a] - (a == i ? 1.0 : 0.0);
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

inline Mixture normalized(Mixture x) {
  double sum = 0.0;
  for (double& v : x) {
    v = std::max(v, 0.0);
    sum += v;
  }
  for (double& v : x) v /= sum;
  return x;
}

template <class Distance>
Mixture inverse_distance_mean(const VertexSet& vertices, Distance&& distance) {
  const std::size_t d = vertices.front().size();
  std::vector<double> weights;
  weights.reserve(vertices.size());
  for (const auto& v : vertices) {
    const double dist = distance(v);
    if (dist == 0.0) return v;
    weights.push_back(1.0 / dist);
  }
  Mixture out(d, 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < vertices.size(); ++k) {
    total += weights[k];
    for (std::size_t a = 0; a < d; ++a) out[a] += weights[k] * vertices[k][a];
  }
  for (double& v : out) v /= total;
  return normalized(std::move(out));
}

}  // namespace detail

// Vertices of simplex ∩ half-space. They lie on simplex vertices and edges:
// every chi_i inside, plus the crossing point of every edge joining an
// outside vertex to a strictly inside one.
inline VertexSet enumerate_vertices(const HalfspaceCoefficients& h) {
  require(feasible(h), ErrorCode::Validation, "vertex enumeration on an empty polytope");
  const std::size_t d = h.dimension();
  VertexSet out;
  for (std::size_t i = 0; i < d; ++i)
    if (h.contains_vertex(i)) detail::push_unique(out, basis_vector(d, i));
  for (std::size_t i = 0; i < d; ++i) {
    if (!(h.c[i] > h.q)) continue;
    for (std::size_t j = 0; j < d; ++j)
      if (h.c[j] < h.q) detail::push_unique(out, detail::edge_point(h, i, j));
  }
  return out;
}

// Fixed-size encoding of the polytope: maps an index pair onto a feasible
// mixture such that every vertex is hit by some pair.
inline Mixture g_encode(const HalfspaceCoefficients& h, const VertexSet& vertices, std::size_t i,
                        std::size_t j) {
  require(!vertices.empty(), ErrorCode::Validation, "g_encode needs a nonempty vertex set");
  const std::size_t d = h.dimension();
  require(i < d && j < d, ErrorCode::Validation, "action index out of range");
  if (h.contains_vertex(i)) return basis_vector(d, i);
  if (i == j)
    return detail::inverse_distance_mean(
        vertices, [&](const Mixture& v) { return detail::distance_to_vertex(v, i); });
  if (h.contains_vertex(j)) return detail::edge_point(h, i, j);
  return detail::inverse_distance_mean(vertices, [&](const Mixture& v) {
    return std::min(detail::distance_to_vertex(v, i), detail::distance_to_vertex(v, j));
  });
}

}  // namespace pshield
