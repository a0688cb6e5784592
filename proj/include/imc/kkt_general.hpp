#pragma once

// Signed controls via u = u+ - u-, with the complementarity u+_i u-_i = 0
// enforced by the penalty gamma (u+)^T u-:
//
//   min J(u+ - u-) + gamma (u+)^T u-   s.t.  sum(u+ + u-) <= alpha, u+, u- >= 0.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "imc/kkt_positive.hpp"

namespace imc {

struct GeneralSsnConfig {
  double alpha = 1.0;
  double kappa = 2.0;
  double gamma = 70.0;
  double tol = 1e-12;
  int max_iter = 2000;
  bool line_search = true;     // backtracking on ||F||; full steps when false
  int line_search_memory = 3;  // reference value: max of the last residuals

  void validate() const {
    if (!(alpha >= 0.0)) throw std::invalid_argument("GeneralSsnConfig: alpha must be >= 0");
    if (!(kappa > 0.0)) throw std::invalid_argument("GeneralSsnConfig: kappa must be > 0");
    if (!(gamma > 0.0)) throw std::invalid_argument("GeneralSsnConfig: gamma must be > 0");
    if (!(tol > 0.0)) throw std::invalid_argument("GeneralSsnConfig: tol must be > 0");
    if (max_iter < 0) throw std::invalid_argument("GeneralSsnConfig: max_iter must be >= 0");
    if (line_search_memory < 1)
      throw std::invalid_argument("GeneralSsnConfig: line_search_memory must be >= 1");
  }
};

struct HomotopyStage {
  double gamma = 0.0;
  int newton_steps = 0;
  double residual = 0.0;
  double complementarity = 0.0;
  SolveStatus status = SolveStatus::max_iterations;
};

struct GeneralKktIterate {
  Vector u_plus;
  Vector u_minus;
  double mu1 = 0.0;
  Vector mu2;
  Vector mu3;
  double gamma = 0.0;
  double residual_norm = 0.0;
  int iteration = 0;         // Newton steps of the last solve
  int total_newton_steps = 0;
  int homotopy_stage = 0;
  SolveStatus status = SolveStatus::max_iterations;
  std::string diagnostic;
  std::vector<double> residual_history;
  std::vector<double> step_lengths;
  std::vector<HomotopyStage> stages;

  static GeneralKktIterate zeros(Eigen::Index n) {
    GeneralKktIterate it;
    it.u_plus = Vector::Zero(n);
    it.u_minus = Vector::Zero(n);
    it.mu2 = Vector::Zero(n);
    it.mu3 = Vector::Zero(n);
    return it;
  }

  Vector control() const { return u_plus - u_minus; }
  double complementarity() const { return u_plus.cwiseProduct(u_minus).maxCoeff(); }
  bool converged() const { return status == SolveStatus::converged; }
};

inline double penalized_objective(const ReducedProblem& prob, const Vector& u_plus,
                                  const Vector& u_minus, double gamma) {
  return prob.evaluate(u_plus - u_minus).value + gamma * u_plus.dot(u_minus);
}

inline double penalized_objective(const FemSystem& sys, const SpaceTimeGrid& grid,
                                  const Vector& u_plus, const Vector& u_minus,
                                  const Vector& y_d, const SourceTerm& f, double gamma) {
  return objective_and_gradient(sys, grid, u_plus - u_minus, y_d, f).value +
         gamma * u_plus.dot(u_minus);
}

/// F = [dL/du+; dL/du-; N1; N2; N3] (length 4n + 1). The budget argument of N1
/// is sum(u+ + u-) - alpha, matching the constraint.
inline Vector general_kkt_residual(const GeneralKktIterate& it, const Vector& g_plus,
                                   const Vector& g_minus, const GeneralSsnConfig& cfg) {
  const Eigen::Index n = it.u_plus.size();
  if (it.u_minus.size() != n || it.mu2.size() != n || it.mu3.size() != n ||
      g_plus.size() != n || g_minus.size() != n)
    throw std::invalid_argument("general_kkt_residual: inconsistent vector lengths");
  const double k = cfg.kappa;
  Vector f(4 * n + 1);
  f.segment(0, n) = g_plus + cfg.gamma * it.u_minus + Vector::Constant(n, it.mu1) - it.mu2;
  f.segment(n, n) = g_minus + cfg.gamma * it.u_plus + Vector::Constant(n, it.mu1) - it.mu3;
  f(2 * n) = std::max(0.0, it.mu1 + k * (it.u_plus.sum() + it.u_minus.sum() - cfg.alpha)) - it.mu1;
  f.segment(2 * n + 1, n) = (it.mu2 - k * it.u_plus).cwiseMax(0.0) - it.mu2;
  f.segment(2 * n + 1 + n, n) = (it.mu3 - k * it.u_minus).cwiseMax(0.0) - it.mu3;
  return f;
}

namespace detail {

struct GeneralPoint {
  Vector x;  // [u+; u-]
  double mu1 = 0.0;
  Vector nu;  // [mu2; mu3]
  Vector g;   // gradient of J at u+ - u-
};

inline GeneralKktIterate unpack(GeneralKktIterate it, const GeneralPoint& z) {
  const Eigen::Index n = z.g.size();
  it.u_plus = z.x.head(n);
  it.u_minus = z.x.tail(n);
  it.mu1 = z.mu1;
  it.mu2 = z.nu.head(n);
  it.mu3 = z.nu.tail(n);
  return it;
}

}  // namespace detail

/// Semismooth Newton for the penalized problem at fixed gamma = cfg.gamma,
/// started from `start` (zeros by default), with the kink convention of the
/// positive solver. With cfg.line_search the Newton step is halved until
/// ||F|| <= max(last line_search_memory residuals) - 1e-4 t ||F_k||; if no
/// step length down to 2^-26 qualifies, the full step is taken.
inline GeneralKktIterate ssn_solve_general(const ReducedProblem& prob, const GeneralSsnConfig& cfg,
                                           std::optional<GeneralKktIterate> start = std::nullopt) {
  cfg.validate();
  const Eigen::Index n = prob.n();
  GeneralKktIterate it = start ? *start : GeneralKktIterate::zeros(n);
  if (it.u_plus.size() != n || it.u_minus.size() != n || it.mu2.size() != n || it.mu3.size() != n)
    throw std::invalid_argument("ssn_solve_general: start has wrong length");
  it.gamma = cfg.gamma;
  it.residual_history.clear();
  it.step_lengths.clear();
  it.diagnostic.clear();

  detail::ActiveSetModel model;
  const Matrix& s = prob.final_map();
  model.k.resize(n, 2 * n);
  model.k << s, -s;
  model.mass = prob.sys().mass.to_dense();
  model.offset = prob.free_final_state() - prob.desired_state();
  model.coupling = Matrix::Zero(2 * n, 2 * n);
  model.coupling.topRightCorner(n, n).diagonal().setConstant(cfg.gamma);
  model.coupling.bottomLeftCorner(n, n).diagonal().setConstant(cfg.gamma);

  detail::GeneralPoint z;
  z.x.resize(2 * n);
  z.x << it.u_plus, it.u_minus;
  z.mu1 = it.mu1;
  z.nu.resize(2 * n);
  z.nu << it.mu2, it.mu3;
  z.g = prob.evaluate(it.control()).gradient;

  auto residual = [&](const detail::GeneralPoint& p) {
    const GeneralKktIterate tmp = detail::unpack(GeneralKktIterate::zeros(n), p);
    return general_kkt_residual(tmp, p.g, -p.g, cfg).norm();
  };

  for (int step = 0;; ++step) {
    it.residual_norm = residual(z);
    it.residual_history.push_back(it.residual_norm);
    it.iteration = step;
    if (it.residual_norm <= cfg.tol) {
      it = detail::unpack(std::move(it), z);
      it.status = SolveStatus::converged;
      return it;
    }
    if (step >= cfg.max_iter) {
      it = detail::unpack(std::move(it), z);
      it.status = SolveStatus::max_iterations;
      it.diagnostic = "no convergence within max_iter; residual " + std::to_string(it.residual_norm);
      return it;
    }

    const auto pred = detail::predict_active_set(z.x, z.mu1, z.nu, cfg.kappa, cfg.alpha);
    const auto target = detail::newton_target(model, pred, cfg.alpha);
    if (!target) {
      it = detail::unpack(std::move(it), z);
      it.status = SolveStatus::singular_newton_matrix;
      it.diagnostic = "singular Newton matrix; try a different kappa or gamma";
      return it;
    }
    detail::GeneralPoint full;
    full.x = target->x;
    full.mu1 = target->mu1;
    full.g = prob.evaluate(full.x.head(n) - full.x.tail(n)).gradient;
    full.nu = detail::multipliers_from_stationarity(target->gradient, full.mu1, pred);

    double t = 1.0;
    if (cfg.line_search) {
      const double t_min = std::ldexp(1.0, -26);
      bool accepted = false;
      for (; t >= t_min; t *= 0.5) {
        detail::GeneralPoint trial{z.x + t * (full.x - z.x), z.mu1 + t * (full.mu1 - z.mu1),
                                   z.nu + t * (full.nu - z.nu), z.g + t * (full.g - z.g)};
        const auto& h = it.residual_history;
        const auto window = std::min<std::ptrdiff_t>(cfg.line_search_memory, std::ssize(h));
        const double ref = *std::max_element(h.end() - window, h.end());
        if (residual(trial) <= ref - 1e-4 * t * it.residual_norm) {
          z = std::move(trial);
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        t = 1.0;
        z = std::move(full);
      }
    } else {
      z = std::move(full);
    }
    it.step_lengths.push_back(t);
  }
}

struct HomotopyConfig {
  double gamma0 = 1.0;
  double growth = 2.0;
  double gamma_max = 65536.0;

  void validate() const {
    if (!(gamma0 > 0.0)) throw std::invalid_argument("HomotopyConfig: gamma0 must be > 0");
    if (!(growth > 1.0)) throw std::invalid_argument("HomotopyConfig: growth must be > 1");
    if (!(gamma_max >= gamma0)) throw std::invalid_argument("HomotopyConfig: gamma_max < gamma0");
  }
};

inline double complementarity_tolerance(double alpha) {
  const double s = std::max(alpha, 1.0);
  return 1e-12 * s * s;
}

/// Solve with gamma = gamma0, gamma0 * growth, ... warm-starting each stage
/// from the previous one, until the complementarity test passes.
/// cfg.gamma is ignored.
inline GeneralKktIterate gamma_homotopy(const ReducedProblem& prob, GeneralSsnConfig cfg,
                                        const HomotopyConfig& hc = {}) {
  hc.validate();
  const double comp_tol = complementarity_tolerance(cfg.alpha);
  std::vector<HomotopyStage> stages;
  int total = 0;
  std::optional<GeneralKktIterate> warm;

  for (int stage = 0;; ++stage) {
    cfg.gamma = hc.gamma0 * std::pow(hc.growth, stage);
    if (cfg.gamma > hc.gamma_max) {
      GeneralKktIterate last = warm ? *warm : GeneralKktIterate::zeros(prob.n());
      last.status = SolveStatus::gamma_limit;
      last.diagnostic = "gamma exceeded gamma_max without reaching complementarity";
      last.stages = stages;
      last.total_newton_steps = total;
      return last;
    }
    GeneralKktIterate it = ssn_solve_general(prob, cfg, warm);
    total += it.iteration;
    stages.push_back({cfg.gamma, it.iteration, it.residual_norm, it.complementarity(), it.status});
    it.homotopy_stage = stage;
    it.total_newton_steps = total;
    it.stages = stages;
    if (!it.converged()) return it;
    if (it.complementarity() <= comp_tol) return it;
    warm = std::move(it);
  }
}

struct GeneralOptimalityReport {
  double tv_plus = 0.0;
  double tv_minus = 0.0;
  double total_variation = 0.0;
  bool budget_active = false;
  double final_misfit = 0.0;   // ||y(T) - y_d||_M
  double adjoint_max = 0.0;    // max over the space-time adjoint
  double phi0_sup = 0.0;       // ||phi(., 0)||_inf
  double complementarity = 0.0;
  std::vector<std::size_t> support_plus;
  std::vector<std::size_t> support_minus;
  bool plus_at_min = true;     // supp(u+) in {phi(., 0) = -||phi(0)||}
  bool minus_at_max = true;    // supp(u-) in {phi(., 0) = +||phi(0)||}
  bool unique_certificate = false;
};

inline GeneralOptimalityReport verify_general_optimality(const ReducedProblem& prob,
                                                         const GeneralKktIterate& it,
                                                         double alpha) {
  GeneralOptimalityReport r;
  const double scale = std::max(alpha, 1.0);
  const double support_eps = 1e-10 * scale;
  const double min_eps = 1e-8;

  const auto y = prob.state(it.control());
  const Vector res = y.final() - prob.desired_state();
  const auto phi = solve_adjoint(prob.sys(), prob.grid(), prob.factors(), res);
  const Vector& phi0 = phi.initial();

  r.tv_plus = it.u_plus.cwiseMax(0.0).sum();
  r.tv_minus = it.u_minus.cwiseMax(0.0).sum();
  r.total_variation = it.control().lpNorm<1>();
  r.budget_active = std::abs(it.u_plus.sum() + it.u_minus.sum() - alpha) <= 1e-9 * scale;
  r.final_misfit = std::sqrt(std::max(0.0, res.dot(prob.sys().mass * res)));
  r.adjoint_max = phi.max_abs();
  r.phi0_sup = phi0.cwiseAbs().maxCoeff();
  r.complementarity = it.complementarity();
  r.unique_certificate = neighbour_values_distinct(phi0);

  const double slack = min_eps * (1.0 + r.phi0_sup);
  for (Eigen::Index j = 0; j < it.u_plus.size(); ++j) {
    if (it.u_plus(j) > support_eps) {
      r.support_plus.push_back(static_cast<std::size_t>(j));
      r.plus_at_min = r.plus_at_min && phi0(j) <= -r.phi0_sup + slack;
    }
    if (it.u_minus(j) > support_eps) {
      r.support_minus.push_back(static_cast<std::size_t>(j));
      r.minus_at_max = r.minus_at_max && phi0(j) >= r.phi0_sup - slack;
    }
  }
  return r;
}

}  // namespace imc
