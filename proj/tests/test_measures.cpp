#include <gtest/gtest.h>

#include "imc/measures.hpp"
#include "support.hpp"

using namespace imc;

namespace {
const SpaceTimeGrid kGrid = build_grid(1.0, 20, 1.0, 20);
}

TEST(Upsilon, NodalDiracIsUnitVector) {
  const auto u = upsilon_h(GeneralMeasure::dirac(0.5), kGrid);
  EXPECT_EQ(u.coeffs, Vector(Vector::Unit(21, 10)));
}

TEST(Upsilon, MidpointDiracSplitsEvenly) {
  const auto u = upsilon_h(GeneralMeasure::dirac(0.525), kGrid);
  EXPECT_NEAR(u.coeffs(10), 0.5, 1e-12);
  EXPECT_NEAR(u.coeffs(11), 0.5, 1e-12);
  EXPECT_NEAR(total_variation(u), 1.0, 1e-12);
}

TEST(Upsilon, LebesgueMeasure) {
  GeneralMeasure leb;
  leb.density = Vector::Ones(21);
  const auto u = upsilon_h(leb, kGrid);
  EXPECT_NEAR(u.coeffs(0), 0.025, 1e-15);
  EXPECT_NEAR(u.coeffs(20), 0.025, 1e-15);
  for (int j = 1; j < 20; ++j) EXPECT_NEAR(u.coeffs(j), 0.05, 1e-15);
  EXPECT_NEAR(total_variation(u), 1.0, 1e-14);
}

TEST(Upsilon, RejectsAtomsOutsideDomain) {
  EXPECT_THROW(upsilon_h(GeneralMeasure::dirac(1.2), kGrid), std::invalid_argument);
  EXPECT_THROW(upsilon_h(GeneralMeasure::dirac(-0.1), kGrid), std::invalid_argument);
}

TEST(Jordan, Examples) {
  const auto g = build_grid(1.0, 2, 1.0, 1);
  auto p = jordan_split(DiscreteMeasure::from_coeffs(g, Vector::Zero(3)));
  EXPECT_EQ(p.plus.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(p.minus.cwiseAbs().maxCoeff(), 0.0);
  Vector c(3);
  c << 1.0, -0.5, 0.0;
  p = jordan_split(DiscreteMeasure::from_coeffs(g, c));
  EXPECT_EQ(p.plus, Vector(Vector::Unit(3, 0)));
  EXPECT_EQ(p.minus, Vector(0.5 * Vector::Unit(3, 1)));
  EXPECT_DOUBLE_EQ(total_variation(DiscreteMeasure::from_coeffs(g, c)), 1.5);
  EXPECT_DOUBLE_EQ(total_variation(DiscreteMeasure::from_coeffs(g, Vector::Unit(3, 2))), 1.0);
}

TEST(Jordan, RandomRecomposition) {
  oracle::Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const auto u = DiscreteMeasure::from_coeffs(kGrid, oracle::random_vector(rng, 21));
    const auto p = jordan_split(u);
    EXPECT_EQ(p.plus - p.minus, u.coeffs);
    EXPECT_EQ(p.plus.cwiseProduct(p.minus).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GE(p.plus.minCoeff(), 0.0);
    EXPECT_GE(p.minus.minCoeff(), 0.0);
  }
}

TEST(Measures, GridAnchorsAreEnforced) {
  const auto g = build_grid(1.0, 10, 1.0, 1);
  EXPECT_THROW(DiscreteMeasure::zero(kGrid) + DiscreteMeasure::zero(g), std::invalid_argument);
  EXPECT_THROW(DiscreteMeasure::from_coeffs(g, Vector::Zero(3)), std::invalid_argument);
}

TEST(Measures, JsonRoundTrip) {
  oracle::Rng rng(37);
  auto u = DiscreteMeasure::from_coeffs(kGrid, oracle::random_vector(rng, 21));
  u.coeffs(4) = 0.0;
  const auto sparse = to_sparse_json(u, kGrid);
  EXPECT_EQ(sparse.size(), 20u);
  EXPECT_EQ(measure_from_json(sparse, kGrid).coeffs, u.coeffs);
  EXPECT_EQ(measure_from_json(to_dense_json(u), kGrid).coeffs, u.coeffs);
}

TEST(UpsilonProperty, Linearity) {
  oracle::Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    auto u = oracle::random_atoms(rng, 1.0, 6);
    auto v = oracle::random_atoms(rng, 1.0, 6);
    const double a = 1.7, b = -0.3;
    GeneralMeasure w;
    for (auto at : u.atoms) w.atoms.push_back({at.location, a * at.weight});
    for (auto at : v.atoms) w.atoms.push_back({at.location, b * at.weight});
    const Vector lhs = upsilon_h(w, kGrid).coeffs;
    const Vector rhs = (a * upsilon_h(u, kGrid) + b * upsilon_h(v, kGrid)).coeffs;
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(UpsilonProperty, IdentityOnNodalMeasures) {
  oracle::Rng rng(43);
  const Vector c = oracle::random_vector(rng, 21);
  GeneralMeasure m;
  for (int j = 0; j < 21; ++j) m.atoms.push_back({kGrid.x_nodes[j], c(j)});
  EXPECT_EQ(upsilon_h(m, kGrid).coeffs, c);
}

TEST(UpsilonProperty, PairingAndContractionOnHundredSets) {
  oracle::Rng rng(47);
  for (int trial = 0; trial < 100; ++trial) {
    auto u = oracle::random_atoms(rng, 1.0, 8);
    if (trial % 2 == 0) u.density = oracle::random_vector(rng, 21);
    const Vector phi = oracle::random_vector(rng, 21);
    const auto p = upsilon_h(u, kGrid);
    EXPECT_LE(std::abs(oracle::pairing(u, kGrid, phi) - p.coeffs.dot(phi)), 1e-12) << trial;
    if (u.density.size() == 0) {
      EXPECT_LE(total_variation(p), oracle::atoms_total_variation(u) + 1e-14) << trial;
    }
  }
}

TEST(UpsilonProperty, PositiveMeasuresStayPositive) {
  oracle::Rng rng(53);
  for (int trial = 0; trial < 50; ++trial) {
    auto u = oracle::random_atoms(rng, 1.0, 8);
    for (auto& a : u.atoms) a.weight = std::abs(a.weight);
    EXPECT_GE(upsilon_h(u, kGrid).coeffs.minCoeff(), 0.0);
  }
}
