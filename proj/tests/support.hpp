#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance runner. Everything here works on dense matrices built from
// scratch, never on the library's banded storage or cached operators.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "imc/experiments.hpp"

namespace imc::oracle {

using Rng = std::mt19937_64;

inline Vector random_vector(Rng& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

// P1 mass and stiffness by 2-point Gauss quadrature per element.
struct DenseFem {
  Matrix mass;
  Matrix stiffness;
};

inline DenseFem dense_fem(const SpaceTimeGrid& g) {
  const auto n = static_cast<Eigen::Index>(g.n_nodes());
  DenseFem f{Matrix::Zero(n, n), Matrix::Zero(n, n)};
  const double q = 0.5 / std::sqrt(3.0);
  for (Eigen::Index e = 0; e + 1 < n; ++e) {
    const double h = g.x_nodes[e + 1] - g.x_nodes[e];
    for (double s : {0.5 - q, 0.5 + q}) {
      const double phi[2] = {1.0 - s, s};
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) f.mass(e + a, e + b) += 0.5 * h * phi[a] * phi[b];
    }
    const double dphi[2] = {-1.0 / h, 1.0 / h};
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) f.stiffness(e + a, e + b) += h * dphi[a] * dphi[b];
  }
  return f;
}

// Final state of the implicit Euler sweep via dense LU solves.
inline Vector dense_final_state(const SpaceTimeGrid& g, double a, const Vector& u) {
  const auto f = dense_fem(g);
  Vector y = f.mass.lu().solve(u);
  for (double tau : g.tau) y = (f.mass + tau * a * f.stiffness).lu().solve(f.mass * y);
  return y;
}

inline Matrix dense_final_map(const SpaceTimeGrid& g, double a) {
  const auto n = static_cast<Eigen::Index>(g.n_nodes());
  Matrix s(n, n);
  for (Eigen::Index j = 0; j < n; ++j) s.col(j) = dense_final_state(g, a, Vector::Unit(n, j));
  return s;
}

inline double dense_objective(const SpaceTimeGrid& g, double a, const Vector& u, const Vector& y_d) {
  const Vector r = dense_final_state(g, a, u) - y_d;
  return 0.5 * r.dot(dense_fem(g).mass * r);
}

// Central differences of J, one coordinate at a time.
inline Vector fd_gradient(const ReducedProblem& p, const Vector& u, double step) {
  Vector g(u.size());
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    Vector up = u, um = u;
    up(j) += step;
    um(j) -= step;
    g(j) = (p.evaluate(up).value - p.evaluate(um).value) / (2.0 * step);
  }
  return g;
}

// Quadratic J(u) = 1/2 (S u - y_d)^T M (S u - y_d) in explicit form.
struct DenseQuadratic {
  Matrix s;
  Matrix m;
  Vector y_d;

  double operator()(const Vector& u) const {
    const Vector r = s * u - y_d;
    return 0.5 * r.dot(m * r);
  }
};

inline DenseQuadratic dense_quadratic(const SpaceTimeGrid& g, double a, const Vector& y_d) {
  return {dense_final_map(g, a), dense_fem(g).mass, y_d};
}

struct BruteForceResult {
  double value = 0.0;
  Vector u;
};

// Grid search over {u >= 0, sum u <= alpha} for three coordinates.
inline BruteForceResult brute_force_simplex3(const DenseQuadratic& j, double alpha, int steps) {
  BruteForceResult best{std::numeric_limits<double>::infinity(), Vector::Zero(3)};
  const double d = alpha / steps;
  Vector u(3);
  for (int a = 0; a <= steps; ++a)
    for (int b = 0; a + b <= steps; ++b)
      for (int c = 0; a + b + c <= steps; ++c) {
        u << a * d, b * d, c * d;
        const double v = j(u);
        if (v < best.value) best = {v, u};
      }
  return best;
}

// Grid search over {sum |u| <= alpha}: every sign pattern of the simplex grid.
inline BruteForceResult brute_force_cross_polytope3(const DenseQuadratic& j, double alpha,
                                                    int steps) {
  BruteForceResult best{std::numeric_limits<double>::infinity(), Vector::Zero(3)};
  const double d = alpha / steps;
  Vector u(3);
  for (int a = -steps; a <= steps; ++a)
    for (int b = -(steps - std::abs(a)); b <= steps - std::abs(a); ++b) {
      const int rest = steps - std::abs(a) - std::abs(b);
      for (int c = -rest; c <= rest; ++c) {
        u << a * d, b * d, c * d;
        const double v = j(u);
        if (v < best.value) best = {v, u};
      }
    }
  return best;
}

// <u, phi_h> for atoms plus a P1 density, with phi_h given by nodal values.
// Atoms evaluate phi_h pointwise; the density integral uses 2-point Gauss.
inline double pairing(const GeneralMeasure& u, const SpaceTimeGrid& g, const Vector& phi) {
  auto eval = [&](const Vector& v, double x) {
    auto e = static_cast<Eigen::Index>(std::floor(x / g.h));
    e = std::clamp<Eigen::Index>(e, 0, v.size() - 2);
    const double s = (x - g.x_nodes[e]) / g.h;
    return (1.0 - s) * v(e) + s * v(e + 1);
  };
  double total = 0.0;
  for (const auto& a : u.atoms) total += a.weight * eval(phi, a.location);
  if (u.density.size() > 0) {
    const double q = 0.5 / std::sqrt(3.0);
    for (Eigen::Index e = 0; e + 1 < phi.size(); ++e)
      for (double s : {0.5 - q, 0.5 + q}) {
        const double x = g.x_nodes[e] + s * g.h;
        total += 0.5 * g.h * eval(phi, x) * eval(u.density, x);
      }
  }
  return total;
}

inline GeneralMeasure random_atoms(Rng& rng, double length, int max_atoms) {
  std::uniform_int_distribution<int> count(1, max_atoms);
  std::uniform_real_distribution<double> loc(0.0, length), w(-2.0, 2.0);
  GeneralMeasure m;
  const int k = count(rng);
  for (int i = 0; i < k; ++i) m.atoms.push_back({loc(rng), w(rng)});
  return m;
}

inline double atoms_total_variation(const GeneralMeasure& m) {
  // Atoms at distinct random locations: TV is the sum of |weights|.
  double s = 0.0;
  for (const auto& a : m.atoms) s += std::abs(a.weight);
  return s;
}

// The 20-element configuration with y_d from the fine-grid forward solve.
inline ExperimentConfig reference_config(double alpha, SolverKind solver = SolverKind::positive) {
  ExperimentConfig c;
  c.alpha = alpha;
  c.solver = solver;
  return c;
}

inline ExperimentConfig second_example(double alpha) {
  ExperimentConfig c = reference_config(alpha, SolverKind::general);
  c.true_control = {{0.3, 1.0}, {0.8, -0.5}};
  return c;
}

inline ReducedProblem problem_for(const ExperimentConfig& c) {
  return ReducedProblem(c.coarse_grid(), c.diffusion_a, generate_desired_state(c));
}

// Bounds that must hold at every converged positive iterate.
struct KktCheck {
  bool ok = true;
  double worst = 0.0;
};

inline KktCheck positive_kkt_bounds(const PositiveKktIterate& it, double alpha, double tol) {
  KktCheck c;
  auto need = [&](double excess) {
    c.worst = std::max(c.worst, excess);
    c.ok = c.ok && excess <= tol;
  };
  need(it.residual_norm);
  need(it.u.sum() - alpha);
  need(-it.u.minCoeff());
  need(-it.mu1);
  need(-it.mu2.minCoeff());
  need(it.mu1 * (it.u.sum() - alpha));
  need(it.mu2.cwiseProduct(it.u).maxCoeff());
  return c;
}

inline KktCheck general_kkt_bounds(const GeneralKktIterate& it, double alpha, double tol,
                                   double comp_tol) {
  KktCheck c;
  auto need = [&](double excess, double bound) {
    c.worst = std::max(c.worst, excess);
    c.ok = c.ok && excess <= bound;
  };
  need(it.residual_norm, tol);
  need(it.u_plus.sum() + it.u_minus.sum() - alpha, tol);
  need(-it.u_plus.minCoeff(), tol);
  need(-it.u_minus.minCoeff(), tol);
  need(it.complementarity(), comp_tol);
  return c;
}

}  // namespace imc::oracle
