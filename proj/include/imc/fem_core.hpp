#pragma once

// Uniform 1D space-time grids and P1 finite-element matrices.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace imc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Uniform spatial mesh on [0, length] together with a uniform time partition
/// 0 = t_0 < ... < t_{n_steps} = T.
struct SpaceTimeGrid {
  double length = 1.0;
  std::size_t n_elements = 0;
  double h = 0.0;
  std::vector<double> x_nodes;
  std::vector<double> t_nodes;
  std::vector<double> tau;

  std::size_t n_nodes() const { return x_nodes.size(); }
  std::size_t n_steps() const { return tau.size(); }
  double final_time() const { return t_nodes.back(); }

  /// Index of the node at coordinate x, or npos when x is not a grid node.
  std::size_t node_index(double x, double rel_tol = 1e-10) const {
    const double s = x / h;
    const double r = std::round(s);
    if (r < 0.0 || r > static_cast<double>(n_elements)) return npos;
    if (std::abs(s - r) > rel_tol * std::max(1.0, s)) return npos;
    return static_cast<std::size_t>(r);
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

inline SpaceTimeGrid build_grid(double length, std::size_t n_elements, double final_time,
                                std::size_t n_steps) {
  if (!(length > 0.0) || !std::isfinite(length))
    throw std::invalid_argument("build_grid: domain length must be positive");
  if (!(final_time > 0.0) || !std::isfinite(final_time))
    throw std::invalid_argument("build_grid: final time must be positive");
  if (n_elements < 1) throw std::invalid_argument("build_grid: need at least one element");
  if (n_steps < 1) throw std::invalid_argument("build_grid: need at least one time step");

  SpaceTimeGrid g;
  g.length = length;
  g.n_elements = n_elements;
  g.h = length / static_cast<double>(n_elements);
  g.x_nodes.resize(n_elements + 1);
  for (std::size_t j = 0; j <= n_elements; ++j)
    g.x_nodes[j] = length * static_cast<double>(j) / static_cast<double>(n_elements);

  const double dt = final_time / static_cast<double>(n_steps);
  g.t_nodes.resize(n_steps + 1);
  for (std::size_t k = 0; k <= n_steps; ++k)
    g.t_nodes[k] = final_time * static_cast<double>(k) / static_cast<double>(n_steps);
  g.t_nodes.back() = final_time;
  g.tau.assign(n_steps, dt);
  return g;
}

/// Symmetric tridiagonal matrix stored as its diagonal and first off-diagonal.
struct SymTridiag {
  Vector diag;
  Vector off;  // off(i) couples rows i and i+1

  Eigen::Index size() const { return diag.size(); }

  Vector operator*(const Vector& x) const {
    const Eigen::Index n = size();
    Vector y = diag.cwiseProduct(x);
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
      y(i) += off(i) * x(i + 1);
      y(i + 1) += off(i) * x(i);
    }
    return y;
  }

  Matrix operator*(const Matrix& x) const {
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) y.col(c) = (*this) * Vector(x.col(c));
    return y;
  }

  /// this + s * other
  SymTridiag plus_scaled(double s, const SymTridiag& other) const {
    return SymTridiag{diag + s * other.diag, off + s * other.off};
  }

  Matrix to_dense() const {
    const Eigen::Index n = size();
    Matrix d = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) d(i, i) = diag(i);
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
      d(i, i + 1) = off(i);
      d(i + 1, i) = off(i);
    }
    return d;
  }
};

/// LDL^T factorization of a symmetric positive definite tridiagonal matrix.
class TridiagLdlt {
 public:
  TridiagLdlt() = default;

  explicit TridiagLdlt(const SymTridiag& a) {
    const Eigen::Index n = a.size();
    d_.resize(n);
    l_.resize(n > 0 ? n - 1 : 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      double di = a.diag(i);
      if (i > 0) di -= l_(i - 1) * l_(i - 1) * d_(i - 1);
      if (!(di > 0.0) || !std::isfinite(di))
        throw std::domain_error("TridiagLdlt: matrix is not positive definite");
      d_(i) = di;
      if (i + 1 < n) l_(i) = a.off(i) / di;
    }
  }

  Vector solve(const Vector& b) const {
    const Eigen::Index n = d_.size();
    if (b.size() != n) throw std::invalid_argument("TridiagLdlt::solve: size mismatch");
    Vector x = b;
    for (Eigen::Index i = 1; i < n; ++i) x(i) -= l_(i - 1) * x(i - 1);
    for (Eigen::Index i = 0; i < n; ++i) x(i) /= d_(i);
    for (Eigen::Index i = n - 2; i >= 0; --i) x(i) -= l_(i) * x(i + 1);
    return x;
  }

  Matrix solve(const Matrix& b) const {
    Matrix x(b.rows(), b.cols());
    for (Eigen::Index c = 0; c < b.cols(); ++c) x.col(c) = solve(Vector(b.col(c)));
    return x;
  }

  const Vector& pivots() const { return d_; }

 private:
  Vector d_;
  Vector l_;
};

/// Consistent P1 mass matrix, raw stiffness matrix (gradient products) and the
/// diffusion coefficient that multiplies it in the time-stepping scheme.
struct FemSystem {
  SymTridiag mass;
  SymTridiag stiffness;
  double diffusion_a = 1.0;

  Eigen::Index n_nodes() const { return mass.size(); }

  /// M + tau * a * A
  SymTridiag step_matrix(double tau) const {
    return mass.plus_scaled(tau * diffusion_a, stiffness);
  }
};

inline FemSystem assemble(const SpaceTimeGrid& grid, double a) {
  if (!(a > 0.0) || !std::isfinite(a))
    throw std::invalid_argument("assemble: diffusion coefficient must be positive");
  if (grid.n_elements < 1 || grid.n_nodes() != grid.n_elements + 1)
    throw std::invalid_argument("assemble: invalid grid");

  const auto n = static_cast<Eigen::Index>(grid.n_nodes());
  FemSystem sys;
  sys.diffusion_a = a;
  sys.mass.diag = Vector::Zero(n);
  sys.mass.off = Vector::Zero(n - 1);
  sys.stiffness.diag = Vector::Zero(n);
  sys.stiffness.off = Vector::Zero(n - 1);

  // Element-by-element exact integration of hat-function products. The grid is
  // uniform, so every element uses the same h and A*1 cancels exactly.
  const double he = grid.h;
  for (Eigen::Index e = 0; e + 1 < n; ++e) {
    sys.mass.diag(e) += he / 3.0;
    sys.mass.diag(e + 1) += he / 3.0;
    sys.mass.off(e) += he / 6.0;
    sys.stiffness.diag(e) += 1.0 / he;
    sys.stiffness.diag(e + 1) += 1.0 / he;
    sys.stiffness.off(e) -= 1.0 / he;
  }
  return sys;
}

}  // namespace imc
