#pragma once

// Implicit Euler (dG(0) in time, P1 in space) state and adjoint solvers for
// the heat equation with homogeneous Neumann data and a measure initial datum.

#include <algorithm>
#include <cstddef>
#include <future>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "imc/fem_core.hpp"
#include "imc/measures.hpp"

namespace imc {

enum class TrajectoryKind { state, adjoint };

/// values[0] belongs to t_0 and values[n_steps] to T.
struct Trajectory {
  std::vector<Vector> values;
  TrajectoryKind kind = TrajectoryKind::state;

  const Vector& initial() const { return values.front(); }
  const Vector& final() const { return values.back(); }

  double max_abs() const {
    double m = 0.0;
    for (const auto& v : values) m = std::max(m, v.cwiseAbs().maxCoeff());
    return m;
  }
};

/// Piecewise constant in time, P1 in space: slices[k-1] is f on (t_{k-1}, t_k].
/// An empty slice list is the zero source.
struct SourceTerm {
  std::vector<Vector> slices;

  static SourceTerm zero() { return {}; }
  bool is_zero() const { return slices.empty(); }
};

namespace detail {

inline void check_dims(const FemSystem& sys, const SpaceTimeGrid& grid) {
  if (static_cast<std::size_t>(sys.n_nodes()) != grid.n_nodes())
    throw std::invalid_argument("FEM system and grid have different node counts");
}

inline void check_source(const SourceTerm& f, const SpaceTimeGrid& grid) {
  if (f.is_zero()) return;
  if (f.slices.size() != grid.n_steps())
    throw std::invalid_argument("source term needs one slice per time step");
  for (const auto& s : f.slices)
    if (static_cast<std::size_t>(s.size()) != grid.n_nodes())
      throw std::invalid_argument("source slice has the wrong length");
}

}  // namespace detail

/// Factorizations of M + tau_k a A, one per distinct step size.
class StepFactors {
 public:
  StepFactors(const FemSystem& sys, const SpaceTimeGrid& grid) : mass_(sys.mass) {
    for (double t : grid.tau) {
      if (find(t) != nullptr) continue;
      entries_.emplace_back(t, TridiagLdlt(sys.step_matrix(t)));
    }
  }

  const TridiagLdlt& at(double tau) const {
    const auto* f = find(tau);
    if (f == nullptr) throw std::out_of_range("StepFactors: unknown step size");
    return *f;
  }

  const TridiagLdlt& mass() const { return mass_; }
  std::size_t distinct() const { return entries_.size(); }

 private:
  const TridiagLdlt* find(double tau) const {
    for (const auto& [t, f] : entries_)
      if (t == tau) return &f;
    return nullptr;
  }

  TridiagLdlt mass_;
  std::vector<std::pair<double, TridiagLdlt>> entries_;
};

/// y_0 solves M y_0 = u; then (M + tau_k a A) y_k = M y_{k-1} + tau_k M f_k.
inline Trajectory solve_forward(const FemSystem& sys, const SpaceTimeGrid& grid,
                                const StepFactors& factors, const DiscreteMeasure& u,
                                const SourceTerm& f) {
  detail::check_dims(sys, grid);
  detail::check_source(f, grid);
  if (static_cast<std::size_t>(u.size()) != grid.n_nodes())
    throw std::invalid_argument("solve_forward: control has the wrong length");

  Trajectory y;
  y.kind = TrajectoryKind::state;
  y.values.reserve(grid.n_steps() + 1);
  y.values.push_back(factors.mass().solve(u.coeffs));
  for (std::size_t k = 0; k < grid.n_steps(); ++k) {
    const double tau = grid.tau[k];
    Vector rhs = sys.mass * y.values.back();
    if (!f.is_zero()) rhs += tau * (sys.mass * f.slices[k]);
    y.values.push_back(factors.at(tau).solve(rhs));
  }
  return y;
}

inline Trajectory solve_forward(const FemSystem& sys, const SpaceTimeGrid& grid,
                                const DiscreteMeasure& u, const SourceTerm& f) {
  detail::check_dims(sys, grid);
  return solve_forward(sys, grid, StepFactors(sys, grid), u, f);
}

/// phi_N = terminal residual (M phi_N = M r); (M + tau_k a A) phi_{k-1} = M phi_k.
inline Trajectory solve_adjoint(const FemSystem& sys, const SpaceTimeGrid& grid,
                                const StepFactors& factors, const Vector& terminal_residual) {
  detail::check_dims(sys, grid);
  if (static_cast<std::size_t>(terminal_residual.size()) != grid.n_nodes())
    throw std::invalid_argument("solve_adjoint: terminal residual has the wrong length");

  const std::size_t n = grid.n_steps();
  Trajectory phi;
  phi.kind = TrajectoryKind::adjoint;
  phi.values.assign(n + 1, Vector());
  phi.values[n] = terminal_residual;
  for (std::size_t k = n; k >= 1; --k)
    phi.values[k - 1] = factors.at(grid.tau[k - 1]).solve(sys.mass * phi.values[k]);
  return phi;
}

inline Trajectory solve_adjoint(const FemSystem& sys, const SpaceTimeGrid& grid,
                                const Vector& terminal_residual) {
  detail::check_dims(sys, grid);
  return solve_adjoint(sys, grid, StepFactors(sys, grid), terminal_residual);
}

/// Dense matrix S with S e_j = final state of the forward solve started from
/// the unit Dirac coefficient vector e_j (f = 0). Column blocks are computed
/// concurrently.
inline Matrix final_time_operator(const FemSystem& sys, const SpaceTimeGrid& grid,
                                  const StepFactors& factors) {
  detail::check_dims(sys, grid);
  const auto n = static_cast<Eigen::Index>(grid.n_nodes());
  Matrix s(n, n);

  auto fill = [&](Eigen::Index lo, Eigen::Index hi) {
    for (Eigen::Index j = lo; j < hi; ++j) {
      Vector y = factors.mass().solve(Vector(Vector::Unit(n, j)));
      for (std::size_t k = 0; k < grid.n_steps(); ++k)
        y = factors.at(grid.tau[k]).solve(sys.mass * y);
      s.col(j) = y;
    }
  };

  const Eigen::Index workers = std::min<Eigen::Index>(
      std::max(1u, std::thread::hardware_concurrency()), std::max<Eigen::Index>(1, n / 32));
  if (workers <= 1) {
    fill(0, n);
    return s;
  }
  std::vector<std::future<void>> jobs;
  const Eigen::Index chunk = (n + workers - 1) / workers;
  for (Eigen::Index lo = 0; lo < n; lo += chunk)
    jobs.push_back(std::async(std::launch::async, fill, lo, std::min(n, lo + chunk)));
  for (auto& j : jobs) j.get();
  return s;
}

inline Matrix final_time_operator(const FemSystem& sys, const SpaceTimeGrid& grid) {
  detail::check_dims(sys, grid);
  return final_time_operator(sys, grid, StepFactors(sys, grid));
}

/// (y_u(T) - y_d)^T M z_v(T) - sum_j phi_u(0)(x_j) v_j, where z_v solves the
/// state equation with f = 0. Vanishes up to rounding.
inline double duality_gap(const FemSystem& sys, const SpaceTimeGrid& grid,
                          const DiscreteMeasure& u, const DiscreteMeasure& v, const Vector& y_d,
                          const SourceTerm& f) {
  detail::check_same_grid(u, v);
  const StepFactors factors(sys, grid);
  const Trajectory y = solve_forward(sys, grid, factors, u, f);
  const Trajectory z = solve_forward(sys, grid, factors, v, SourceTerm::zero());
  const Vector r = y.final() - y_d;
  const Trajectory phi = solve_adjoint(sys, grid, factors, r);
  return r.dot(sys.mass * z.final()) - phi.initial().dot(v.coeffs);
}

}  // namespace imc
