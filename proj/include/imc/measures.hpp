#pragma once

// Nodal Dirac measures (the discrete control space), the projection of general
// measures onto it, total variation and Jordan decomposition.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "json.hpp"

#include "imc/fem_core.hpp"

namespace imc {

/// Identifies the spatial mesh a discrete measure lives on. Measures on
/// different meshes are never mixed without an explicit re-projection.
struct GridAnchor {
  std::size_t n_nodes = 0;
  double length = 0.0;

  static GridAnchor of(const SpaceTimeGrid& g) { return {g.n_nodes(), g.length}; }
  bool operator==(const GridAnchor&) const = default;
};

/// u = sum_j coeffs(j) * delta_{x_j}
struct DiscreteMeasure {
  Vector coeffs;
  GridAnchor anchor;

  static DiscreteMeasure zero(const SpaceTimeGrid& g) {
    return {Vector::Zero(static_cast<Eigen::Index>(g.n_nodes())), GridAnchor::of(g)};
  }
  static DiscreteMeasure from_coeffs(const SpaceTimeGrid& g, Vector c) {
    if (static_cast<std::size_t>(c.size()) != g.n_nodes())
      throw std::invalid_argument("DiscreteMeasure: coefficient count differs from node count");
    return {std::move(c), GridAnchor::of(g)};
  }

  Eigen::Index size() const { return coeffs.size(); }
};

struct Atom {
  double location = 0.0;
  double weight = 0.0;
};

/// Finite atom list plus an optional P1 density given by nodal values on a
/// reference grid. Only used as input to the projection.
struct GeneralMeasure {
  std::vector<Atom> atoms;
  Vector density;  // empty, or nodal values on the projection grid

  static GeneralMeasure dirac(double x, double w = 1.0) { return {{Atom{x, w}}, {}}; }
};

inline double total_variation(const DiscreteMeasure& u) { return u.coeffs.lpNorm<1>(); }

struct JordanParts {
  Vector plus;
  Vector minus;
};

inline JordanParts jordan_split(const DiscreteMeasure& u) {
  return {u.coeffs.cwiseMax(0.0), (-u.coeffs).cwiseMax(0.0)};
}

namespace detail {

inline void check_same_grid(const DiscreteMeasure& a, const DiscreteMeasure& b) {
  if (!(a.anchor == b.anchor))
    throw std::invalid_argument("measures are anchored to different grids");
}

}  // namespace detail

inline DiscreteMeasure operator+(const DiscreteMeasure& a, const DiscreteMeasure& b) {
  detail::check_same_grid(a, b);
  return {a.coeffs + b.coeffs, a.anchor};
}
inline DiscreteMeasure operator-(const DiscreteMeasure& a, const DiscreteMeasure& b) {
  detail::check_same_grid(a, b);
  return {a.coeffs - b.coeffs, a.anchor};
}
inline DiscreteMeasure operator*(double s, const DiscreteMeasure& a) {
  return {s * a.coeffs, a.anchor};
}

/// Projection onto nodal Dirac measures: coefficient j is the integral of the
/// hat function phi_j against u. Atoms split between the two nodes of their
/// element by barycentric weights; densities integrate exactly against P1.
inline DiscreteMeasure upsilon_h(const GeneralMeasure& u, const SpaceTimeGrid& grid) {
  const auto n = static_cast<Eigen::Index>(grid.n_nodes());
  Vector c = Vector::Zero(n);
  const double tol = 1e-14 * grid.length;

  for (const auto& atom : u.atoms) {
    if (!std::isfinite(atom.location) || atom.location < -tol ||
        atom.location > grid.length + tol)
      throw std::invalid_argument("upsilon_h: atom outside the domain");
    const double x = std::clamp(atom.location, 0.0, grid.length);
    const std::size_t node = grid.node_index(x);
    if (node != SpaceTimeGrid::npos) {
      c(static_cast<Eigen::Index>(node)) += atom.weight;
      continue;
    }
    auto e = static_cast<Eigen::Index>(std::floor(x / grid.h));
    e = std::clamp<Eigen::Index>(e, 0, n - 2);
    const double s = (x - grid.x_nodes[e]) / grid.h;
    c(e) += atom.weight * (1.0 - s);
    c(e + 1) += atom.weight * s;
  }

  if (u.density.size() > 0) {
    if (u.density.size() != n)
      throw std::invalid_argument("upsilon_h: density must be given at the grid nodes");
    c += assemble(grid, 1.0).mass * u.density;
  }
  return {std::move(c), GridAnchor::of(grid)};
}

// Sparse form: [{"node": j, "x": x_j, "coefficient": u_j}, ...] for u_j != 0.
inline nlohmann::json to_sparse_json(const DiscreteMeasure& u, const SpaceTimeGrid& grid,
                                     double drop_tol = 0.0) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    if (std::abs(u.coeffs(j)) <= drop_tol) continue;
    arr.push_back({{"node", j}, {"x", grid.x_nodes[j]}, {"coefficient", u.coeffs(j)}});
  }
  return arr;
}

inline nlohmann::json to_dense_json(const DiscreteMeasure& u) {
  return std::vector<double>(u.coeffs.data(), u.coeffs.data() + u.coeffs.size());
}

inline DiscreteMeasure measure_from_json(const nlohmann::json& j, const SpaceTimeGrid& grid) {
  auto u = DiscreteMeasure::zero(grid);
  if (!j.is_array()) throw std::invalid_argument("measure JSON must be an array");
  if (!j.empty() && j.front().is_number()) {
    if (j.size() != grid.n_nodes())
      throw std::invalid_argument("dense measure JSON has the wrong length");
    for (std::size_t i = 0; i < j.size(); ++i)
      u.coeffs(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return u;
  }
  for (const auto& e : j) {
    const auto node = e.at("node").get<std::size_t>();
    if (node >= grid.n_nodes()) throw std::invalid_argument("measure JSON node out of range");
    u.coeffs(static_cast<Eigen::Index>(node)) += e.at("coefficient").get<double>();
  }
  return u;
}

}  // namespace imc
