#pragma once

// Reduced tracking objective over nodal Dirac coefficients and the semismooth
// Newton method for the nonnegative, budget-constrained problem
//
//   min 1/2 (y_N(u) - y_d)^T M (y_N(u) - y_d)   s.t.  sum u <= alpha, u >= 0.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/LU>

#include "imc/fem_core.hpp"
#include "imc/measures.hpp"
#include "imc/pde_solver.hpp"

namespace imc {

struct ObjectiveValue {
  double value = 0.0;
  Vector gradient;  // phi(x_j, 0)
};

/// J(u) and its gradient, the initial-time adjoint driven by y_N(u) - y_d.
inline ObjectiveValue objective_and_gradient(const FemSystem& sys, const SpaceTimeGrid& grid,
                                             const StepFactors& factors, const Vector& u,
                                             const Vector& y_d, const SourceTerm& f) {
  if (y_d.size() != u.size()) throw std::invalid_argument("objective: y_d has the wrong length");
  const auto y = solve_forward(sys, grid, factors, DiscreteMeasure::from_coeffs(grid, u), f);
  const Vector r = y.final() - y_d;
  const auto phi = solve_adjoint(sys, grid, factors, r);
  return {0.5 * r.dot(sys.mass * r), phi.initial()};
}

inline ObjectiveValue objective_and_gradient(const FemSystem& sys, const SpaceTimeGrid& grid,
                                             const Vector& u, const Vector& y_d,
                                             const SourceTerm& f) {
  return objective_and_gradient(sys, grid, StepFactors(sys, grid), u, y_d, f);
}

/// S^T M S, the (constant) Hessian of J.
inline Matrix hessian(const FemSystem& sys, const Matrix& final_map) {
  Matrix h = final_map.transpose() * (sys.mass * final_map);
  return 0.5 * (h + h.transpose());
}

inline Matrix hessian(const FemSystem& sys, const SpaceTimeGrid& grid) {
  return hessian(sys, final_time_operator(sys, grid));
}

/// Grid, FEM matrices, target and source of one control problem, with the
/// final-time map and Hessian built lazily and cached.
class ReducedProblem {
 public:
  ReducedProblem(SpaceTimeGrid grid, double diffusion_a, Vector y_d, SourceTerm f = {})
      : grid_(std::move(grid)),
        sys_(assemble(grid_, diffusion_a)),
        factors_(sys_, grid_),
        y_d_(std::move(y_d)),
        f_(std::move(f)) {
    if (static_cast<std::size_t>(y_d_.size()) != grid_.n_nodes())
      throw std::invalid_argument("ReducedProblem: desired state has the wrong length");
    detail::check_source(f_, grid_);
  }

  const SpaceTimeGrid& grid() const { return grid_; }
  const FemSystem& sys() const { return sys_; }
  const StepFactors& factors() const { return factors_; }
  const Vector& desired_state() const { return y_d_; }
  const SourceTerm& source() const { return f_; }
  Eigen::Index n() const { return static_cast<Eigen::Index>(grid_.n_nodes()); }

  const Matrix& final_map() const {
    if (!s_) s_ = std::make_shared<Matrix>(final_time_operator(sys_, grid_, factors_));
    return *s_;
  }

  const Matrix& hess() const {
    if (!h_) h_ = std::make_shared<Matrix>(hessian(sys_, final_map()));
    return *h_;
  }

  ObjectiveValue evaluate(const Vector& u) const {
    return objective_and_gradient(sys_, grid_, factors_, u, y_d_, f_);
  }

  Trajectory state(const Vector& u) const {
    return solve_forward(sys_, grid_, factors_, DiscreteMeasure::from_coeffs(grid_, u), f_);
  }

  /// y(T) for the zero control, i.e. the part of the final state driven by f.
  Vector free_final_state() const { return state(Vector::Zero(n())).final(); }

  Trajectory adjoint(const Vector& u) const {
    return solve_adjoint(sys_, grid_, factors_, state(u).final() - y_d_);
  }

 private:
  SpaceTimeGrid grid_;
  FemSystem sys_;
  StepFactors factors_;
  Vector y_d_;
  SourceTerm f_;
  mutable std::shared_ptr<Matrix> s_;
  mutable std::shared_ptr<Matrix> h_;
};

enum class SolveStatus { converged, max_iterations, singular_newton_matrix, gamma_limit };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::max_iterations: return "max_iterations";
    case SolveStatus::singular_newton_matrix: return "singular_newton_matrix";
    case SolveStatus::gamma_limit: return "gamma_limit";
  }
  return "unknown";
}

struct SsnConfig {
  double alpha = 1.0;
  double kappa = 1.0;
  double tol = 1e-12;
  int max_iter = 200;

  void validate() const {
    if (!(alpha >= 0.0)) throw std::invalid_argument("SsnConfig: alpha must be >= 0");
    if (!(kappa > 0.0)) throw std::invalid_argument("SsnConfig: kappa must be > 0");
    if (!(tol > 0.0)) throw std::invalid_argument("SsnConfig: tol must be > 0");
    if (max_iter < 0) throw std::invalid_argument("SsnConfig: max_iter must be >= 0");
  }
};

struct PositiveKktIterate {
  Vector u;
  double mu1 = 0.0;
  Vector mu2;
  double residual_norm = 0.0;
  int iteration = 0;
  SolveStatus status = SolveStatus::max_iterations;
  std::string diagnostic;
  std::vector<double> residual_history;
  std::vector<int> active_bounds;      // |{i : mu2_i - kappa u_i >= 0}| per step
  std::vector<bool> budget_active;     // mu1 + kappa (sum u - alpha) >= 0 per step

  bool converged() const { return status == SolveStatus::converged; }
};

/// F = [g + mu1 1 - mu2; N1; N2] with
///   N1 = max{0, mu1 + kappa (sum u - alpha)} - mu1,
///   N2 = max{0, mu2 - kappa u} - mu2 (componentwise).
inline Vector ncp_residual(const Vector& u, double mu1, const Vector& mu2, const Vector& g,
                           const SsnConfig& cfg) {
  const Eigen::Index n = u.size();
  if (mu2.size() != n || g.size() != n)
    throw std::invalid_argument("ncp_residual: inconsistent vector lengths");
  Vector f(2 * n + 1);
  f.head(n) = g + Vector::Constant(n, mu1) - mu2;
  f(n) = std::max(0.0, mu1 + cfg.kappa * (u.sum() - cfg.alpha)) - mu1;
  f.tail(n) = (mu2 - cfg.kappa * u).cwiseMax(0.0) - mu2;
  return f;
}

namespace detail {

// Bound- and budget-constrained quadratic in x whose smooth gradient is
// K^T M (K x + d) + P x, with K mapping x to the final state and
// d = y(T; x = 0) - y_d.
struct ActiveSetModel {
  Matrix k;
  Matrix mass;
  Vector offset;
  Matrix coupling;  // P, or empty for P = 0
};

struct ActiveSetPrediction {
  std::vector<bool> bound_active;  // nu_i - kappa x_i >= 0
  bool budget_active = false;      // mu1 + kappa (sum x - alpha) >= 0

  int active_count() const {
    return static_cast<int>(std::count(bound_active.begin(), bound_active.end(), true));
  }
};

inline ActiveSetPrediction predict_active_set(const Vector& x, double mu1, const Vector& nu,
                                              double kappa, double alpha) {
  ActiveSetPrediction p;
  p.bound_active.resize(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i)
    p.bound_active[static_cast<std::size_t>(i)] = nu(i) - kappa * x(i) >= 0.0;
  p.budget_active = mu1 + kappa * (x.sum() - alpha) >= 0.0;
  return p;
}

struct NewtonTarget {
  Vector x;
  double mu1 = 0.0;
  Vector gradient;  // K^T M r + P x at the new point
};

// Primal part of the full semismooth Newton step. Active bound rows give
// x_i = 0, inactive ones nu_i = 0, an inactive budget row mu1 = 0 and an
// active one sum x = alpha. The stationarity rows of the free variables are
// then solved in the unknowns (r, x_F, mu1) with r = K x + d:
//
//   r - K_F x_F = d,   K_F^T M r + P_FF x_F + mu1 1 = 0,   1^T x_F = alpha.
//
// This is the same linear system as the full Jacobian, but K^T M K is never
// formed, so the conditioning of K is not squared. The new multipliers on the
// active bounds follow from the stationarity rows, evaluated with the r of the
// same solve.
inline std::optional<NewtonTarget> newton_target(const ActiveSetModel& m,
                                                 const ActiveSetPrediction& p, double alpha) {
  const Eigen::Index n = m.k.rows();
  std::vector<Eigen::Index> free;
  for (std::size_t i = 0; i < p.bound_active.size(); ++i)
    if (!p.bound_active[i]) free.push_back(static_cast<Eigen::Index>(i));
  const auto nf = static_cast<Eigen::Index>(free.size());
  const Eigen::Index dim = n + nf + (p.budget_active ? 1 : 0);

  Matrix a = Matrix::Zero(dim, dim);
  Vector rhs = Vector::Zero(dim);
  a.topLeftCorner(n, n).setIdentity();
  rhs.head(n) = m.offset;
  for (Eigen::Index c = 0; c < nf; ++c) {
    const Vector kc = m.k.col(free[c]);
    a.block(0, n + c, n, 1) = -kc;
    a.block(n + c, 0, 1, n) = (m.mass * kc).transpose();
    if (m.coupling.size() > 0)
      for (Eigen::Index r = 0; r < nf; ++r) a(n + c, n + r) = m.coupling(free[c], free[r]);
    if (p.budget_active) {
      a(n + c, n + nf) = 1.0;
      a(n + nf, n + c) = 1.0;
    }
  }
  if (p.budget_active) rhs(n + nf) = alpha;

  const Vector sol = Eigen::PartialPivLU<Matrix>(a).solve(rhs);
  if (!sol.allFinite()) return std::nullopt;
  NewtonTarget t;
  t.x = Vector::Zero(m.k.cols());
  for (Eigen::Index c = 0; c < nf; ++c) t.x(free[c]) = sol(n + c);
  t.mu1 = p.budget_active ? sol(n + nf) : 0.0;
  t.gradient = m.k.transpose() * (m.mass * sol.head(n));
  if (m.coupling.size() > 0) t.gradient += m.coupling * t.x;
  return t;
}

// nu_i = (gradient + mu1)_i on active bounds, 0 elsewhere.
inline Vector multipliers_from_stationarity(const Vector& stationarity, double mu1,
                                            const ActiveSetPrediction& p) {
  Vector nu = Vector::Zero(stationarity.size());
  for (Eigen::Index i = 0; i < nu.size(); ++i)
    if (p.bound_active[static_cast<std::size_t>(i)]) nu(i) = stationarity(i) + mu1;
  return nu;
}

}  // namespace detail

/// Semismooth Newton on F(u, mu1, mu2) = 0. At a kink max{0, t} with t = 0 the
/// derivative of t is taken, so the constraint counts as active. No line search.
inline PositiveKktIterate ssn_solve_positive(const ReducedProblem& prob, const SsnConfig& cfg,
                                             std::optional<Vector> u0 = std::nullopt) {
  cfg.validate();
  const Eigen::Index n = prob.n();
  PositiveKktIterate it;
  it.u = u0 ? *u0 : Vector::Zero(n);
  if (it.u.size() != n) throw std::invalid_argument("ssn_solve_positive: start has wrong length");
  it.mu2 = Vector::Zero(n);
  const detail::ActiveSetModel model{prob.final_map(), prob.sys().mass.to_dense(),
                                     prob.free_final_state() - prob.desired_state(), Matrix()};

  Vector g = prob.evaluate(it.u).gradient;
  for (int step = 0;; ++step) {
    const Vector f = ncp_residual(it.u, it.mu1, it.mu2, g, cfg);
    it.residual_norm = f.norm();
    it.residual_history.push_back(it.residual_norm);
    it.iteration = step;
    if (it.residual_norm <= cfg.tol) {
      it.status = SolveStatus::converged;
      return it;
    }
    if (step >= cfg.max_iter) {
      it.status = SolveStatus::max_iterations;
      it.diagnostic = "no convergence within max_iter; residual " + std::to_string(it.residual_norm);
      return it;
    }

    const auto pred = detail::predict_active_set(it.u, it.mu1, it.mu2, cfg.kappa, cfg.alpha);
    it.active_bounds.push_back(pred.active_count());
    it.budget_active.push_back(pred.budget_active);
    const auto target = detail::newton_target(model, pred, cfg.alpha);
    if (!target) {
      it.status = SolveStatus::singular_newton_matrix;
      it.diagnostic = "singular Newton matrix; try a different kappa";
      return it;
    }
    it.u = target->x;
    it.mu1 = target->mu1;
    g = prob.evaluate(it.u).gradient;
    it.mu2 = detail::multipliers_from_stationarity(target->gradient, it.mu1, pred);
  }
}

struct PositiveOptimalityReport {
  double total_mass = 0.0;      // sum u_j
  double lambda_bar = 0.0;      // min_j phi(x_j, 0)
  double duality_value = 0.0;   // sum_j phi(x_j, 0) u_j
  bool budget_active = false;
  bool identity_checked = false;
  double identity_residual = 0.0;       // |duality_value - alpha lambda_bar|
  double identity_relative = 0.0;
  std::vector<std::size_t> support;     // {j : u_j > support_eps}
  std::vector<bool> support_attains_min;
  bool support_condition = true;
  bool lambda_nonpositive = true;
  bool unique_certificate = false;      // neighbouring adjoint values all distinct
};

/// Distinct nodal values of phi(., 0) at every pair of neighbouring nodes.
inline bool neighbour_values_distinct(const Vector& phi0) {
  for (Eigen::Index j = 0; j + 1 < phi0.size(); ++j)
    if (phi0(j) == phi0(j + 1)) return false;
  return true;
}

inline PositiveOptimalityReport verify_positive_optimality(const ReducedProblem& prob,
                                                           const PositiveKktIterate& it,
                                                           const SsnConfig& cfg) {
  PositiveOptimalityReport r;
  const Vector phi0 = prob.evaluate(it.u).gradient;
  const double scale = std::max(cfg.alpha, 1.0);
  const double support_eps = 1e-10 * scale;
  const double min_eps = 1e-8;

  r.total_mass = it.u.sum();
  r.lambda_bar = phi0.minCoeff();
  r.duality_value = phi0.dot(it.u);
  r.budget_active = std::abs(r.total_mass - cfg.alpha) <= 1e-9 * scale;
  r.lambda_nonpositive = r.lambda_bar <= 0.0;
  r.unique_certificate = neighbour_values_distinct(phi0);

  if (r.budget_active) {
    r.identity_checked = true;
    r.identity_residual = std::abs(r.duality_value - cfg.alpha * r.lambda_bar);
    const double denom = std::abs(cfg.alpha * r.lambda_bar);
    r.identity_relative = denom > 0.0 ? r.identity_residual / denom : r.identity_residual;
  }

  for (Eigen::Index j = 0; j < it.u.size(); ++j) {
    if (it.u(j) <= support_eps) continue;
    r.support.push_back(static_cast<std::size_t>(j));
    const bool attains = phi0(j) <= r.lambda_bar + min_eps * (1.0 + std::abs(r.lambda_bar));
    r.support_attains_min.push_back(attains);
    r.support_condition = r.support_condition && attains;
  }
  return r;
}

}  // namespace imc
