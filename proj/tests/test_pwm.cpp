#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"
#include "pwmsense/pwm.hpp"

using namespace pwmsense;

namespace {

constexpr double kUm = 270.0;

PwmConfig config(CarrierScheme s, double u_m = kUm) {
  PwmConfig c;
  c.scheme = s;
  c.u_m = u_m;
  return c;
}

/// Exact integral over one period of a piecewise-constant function of sigma,
/// with the discontinuities located by bisection on a fine scan.
template <class F>
double piecewise_constant_mean(F&& f) {
  const int scan = 4096;
  double acc = 0.0;
  double lo = 0.0;
  double level = f(0.5 / scan);
  for (int k = 1; k <= scan; ++k) {
    const double mid = (k + 0.5) / scan;
    const double next = k < scan ? f(mid) : level;
    if (next != level || k == scan) {
      double edge;
      if (k == scan) {
        edge = 1.0;
      } else {
        double a = (k - 0.5) / scan, b = mid;
        for (int it = 0; it < 200; ++it) {
          const double m = 0.5 * (a + b);
          if (f(m) == level) a = m; else b = m;
        }
        edge = 0.5 * (a + b);
      }
      acc += level * (edge - lo);
      lo = edge;
      level = next;
    }
  }
  return acc;
}

double rel_err(const Mat3& a, const Mat3& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST(Wrap, Examples) {
  EXPECT_EQ(wrap(0.0, kUm), 0.0);
  EXPECT_DOUBLE_EQ(wrap(0.25, 1.0), 0.25);
  auto g = oracle::rng(1);
  for (int i = 0; i < 100; ++i) {
    const double s = oracle::uniform(g, -50, 50);
    EXPECT_NEAR(wrap(s + 1.0, kUm), wrap(s, kUm), 1e-9);
    EXPECT_GE(wrap(s, kUm), -kUm / 2);
    EXPECT_LT(wrap(s, kUm), kUm / 2);
  }
}

TEST(Modulate, Examples) {
  EXPECT_EQ(modulate(0.0, 0.0, kUm), -kUm);
  for (double s : {0.0, 0.1, 0.37, 0.5, 0.99}) EXPECT_EQ(modulate(kUm, s, kUm), kUm);
  EXPECT_THROW(modulate(kUm * 1.0001, 0.1, kUm), std::domain_error);
  EXPECT_THROW(s1(-kUm * 1.5, 0.1, kUm), std::domain_error);
}

TEST(Modulate, MeanOverUniformSigma) {
  auto g = oracle::rng(2);
  double acc = 0.0;
  const int m = 1000000;
  for (int i = 0; i < m; ++i) acc += modulate(0.4 * kUm, oracle::uniform(g, 0.0, 1.0), kUm);
  EXPECT_NEAR(acc / m, 0.4 * kUm, 1e-2 * kUm);
}

TEST(Modulate, MatchesCarrierComparator) {
  auto g = oracle::rng(3);
  for (int i = 0; i < 2000; ++i) {
    const double u = oracle::uniform(g, -kUm, kUm);
    const double s = oracle::uniform(g, -3, 3);
    if (std::abs(u - oracle::carrier(s, kUm)) < 1e-9 * kUm) continue;
    EXPECT_EQ(modulate(u, s, kUm), oracle::comparator_pwm(u, s, kUm)) << "u=" << u << " sigma=" << s;
  }
}

TEST(Modulate, PeriodicWithMeanU) {
  auto g = oracle::rng(4);
  for (int i = 0; i < 20; ++i) {
    const double u = oracle::uniform(g, -kUm, kUm);
    const double mean = piecewise_constant_mean([&](double s) { return modulate(u, s, kUm); });
    EXPECT_NEAR(mean, u, 1e-6 * kUm);
    const double s = oracle::uniform(g, 0, 1);
    EXPECT_EQ(modulate(u, s + 3.0, kUm), modulate(u, s, kUm));
  }
}

TEST(S0, Examples) {
  EXPECT_EQ(s0(0.0, 0.0, kUm), -kUm);
  for (double s : {0.0, 0.2, 0.5, 0.8}) {
    EXPECT_EQ(s0(kUm, s, kUm), 0.0);
    EXPECT_EQ(s0(-kUm, s, kUm), 0.0);
  }
}

TEST(S0, ZeroMean) {
  auto g = oracle::rng(5);
  for (int i = 0; i < 50; ++i) {
    const double u = oracle::uniform(g, -kUm, kUm);
    EXPECT_NEAR(piecewise_constant_mean([&](double s) { return s0(u, s, kUm); }), 0.0, 1e-10 * kUm);
  }
}

TEST(S1, Examples) {
  EXPECT_EQ(s1(0.0, 0.0, kUm), 0.0);
  EXPECT_DOUBLE_EQ(s1(0.0, 0.25, 1.0), -0.25);
  EXPECT_NEAR(oracle::s1_by_integration(0.0, 0.25, 1.0), -0.25, 1e-5);
  for (double s : {0.0, 0.13, 0.5, 0.77}) {
    EXPECT_EQ(s1(kUm, s, kUm), 0.0);
    EXPECT_EQ(s1(-kUm, s, kUm), 0.0);
  }
}

TEST(S1, MatchesIntegratedProbingSignal) {
  auto g = oracle::rng(6);
  for (int i = 0; i < 20; ++i) {
    const double u = oracle::uniform(g, -kUm, kUm);
    const double s = oracle::uniform(g, 0, 1);
    EXPECT_NEAR(s1(u, s, kUm), oracle::s1_by_integration(u, s, kUm), 1e-5 * kUm) << "u=" << u << " sigma=" << s;
  }
}

TEST(S1, ZeroMeanAndPeriodic) {
  auto g = oracle::rng(7);
  for (int i = 0; i < 50; ++i) {
    const double u = oracle::uniform(g, -kUm, kUm);
    EXPECT_NEAR(oracle::periodic_trapezoid([&](double s) { return s1(u, s, kUm); }, 10000), 0.0, 1e-8 * kUm);
    const double s = oracle::uniform(g, 0, 1);
    EXPECT_NEAR(s1(u, s + 1.0, kUm), s1(u, s, kUm), 1e-9 * kUm);
  }
}

TEST(S1, ContinuousAtKinks) {
  // u_m = 1 keeps the slope (and hence the one-sided difference) O(1)
  auto g = oracle::rng(8);
  const double delta = 1e-12;
  for (int i = 0; i < 1000; ++i) {
    const double u = oracle::uniform(g, -1, 1);
    const double rise = (1.0 - u) / 4.0;
    const double kinks[] = {0.0, rise, 1.0 - rise, 0.5, 1.0};
    const double k = kinks[i % 5];
    EXPECT_NEAR(s1(u, k - delta, 1.0), s1(u, k + delta, 1.0), 1e-10) << "u=" << u << " kink=" << k;
  }
}

TEST(S1, DerivativeIsS0AwayFromKinks) {
  auto g = oracle::rng(9);
  const double h = 1e-6;
  int checked = 0;
  while (checked < 500) {
    const double u = oracle::uniform(g, -kUm, kUm);
    const double s = oracle::uniform(g, 0, 1);
    const double rise = (kUm - u) / (4 * kUm);
    bool near = false;
    for (double k : {0.0, rise, 1.0 - rise, 0.5, 1.0}) near |= std::abs(s - k) < 10 * h;
    if (near) continue;
    const double fd = (s1(u, s + h, kUm) - s1(u, s - h, kUm)) / (2 * h);
    EXPECT_NEAR(fd, s0(u, s, kUm), 1e-6 * kUm);
    ++checked;
  }
}

TEST(S1Abc, SingleCarrierEqualReferencesGiveEqualComponents) {
  const PwmConfig c = config(CarrierScheme::SingleCarrier);
  auto g = oracle::rng(10);
  for (int i = 0; i < 100; ++i) {
    const double v = oracle::uniform(g, -kUm, kUm);
    const double s = oracle::uniform(g, 0, 1);
    const Abc x = s1_abc(c, {v, v, v}, s);
    EXPECT_EQ(x.a, x.b);
    EXPECT_EQ(x.b, x.c);
    const Abc y = s1_abc(c, {0.3 * kUm, v, v}, s);
    EXPECT_EQ(y.b, y.c);
  }
}

TEST(S1Abc, InterleavedShiftsCarrier) {
  const PwmConfig c = config(CarrierScheme::Interleaved);
  const Abc x = s1_abc(c, {0, 0, 0}, 0.0);
  EXPECT_EQ(x.a, 0.0);
  EXPECT_DOUBLE_EQ(x.b, s1(0.0, -1.0 / 3.0, kUm));
  EXPECT_DOUBLE_EQ(x.c, s1(0.0, -2.0 / 3.0, kUm));
  EXPECT_FALSE(x.a == x.b && x.b == x.c);
}

TEST(RippleMatrixAbc, ZeroAtPwmLimit) {
  for (auto s : {CarrierScheme::SingleCarrier, CarrierScheme::Interleaved}) {
    EXPECT_EQ(ripple_matrix_abc(config(s), {kUm, kUm, kUm}).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(ripple_matrix_abc(config(s), {-kUm, -kUm, -kUm}).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(RippleMatrixAbc, SingleCarrierAtZeroReference) {
  const PwmConfig c = config(CarrierScheme::SingleCarrier);
  const Mat3 a = ripple_matrix_abc(c, {0, 0, 0});
  const Mat3 expected = Mat3::Constant(kUm * kUm / 48.0);
  EXPECT_LT(rel_err(a, expected), 1e-12);
  EXPECT_LT(rel_err(oracle::ripple_abc_quadrature(c, {0, 0, 0}), expected), 1e-8);
}

TEST(RippleMatrixAbc, InterleavedAtZeroReference) {
  const PwmConfig c = config(CarrierScheme::Interleaved);
  const Mat3 a = ripple_matrix_abc(c, {0, 0, 0});
  Mat3 expected = Mat3::Constant(-13.0 * kUm * kUm / 1296.0);
  expected.diagonal().setConstant(kUm * kUm / 48.0);
  EXPECT_LT(rel_err(oracle::ripple_abc_quadrature(c, {0, 0, 0}), expected), 1e-8);
  EXPECT_LT(rel_err(a, expected), 1e-12);
}

TEST(RippleMatrixAbc, MatchesQuadratureOnRandomReferences) {
  auto g = oracle::rng(11);
  for (auto s : {CarrierScheme::SingleCarrier, CarrierScheme::Interleaved}) {
    const PwmConfig c = config(s);
    for (int i = 0; i < 100; ++i) {
      const Abc u{oracle::uniform(g, -kUm, kUm), oracle::uniform(g, -kUm, kUm), oracle::uniform(g, -kUm, kUm)};
      EXPECT_LT(rel_err(ripple_matrix_abc(c, u), oracle::ripple_abc_quadrature(c, u)), 1e-8)
          << to_string(s) << " u=" << u.a << "," << u.b << "," << u.c;
    }
  }
}

TEST(RippleMatrixAlphaBeta, Examples) {
  const RippleMatrix single0 = ripple_matrix_alphabeta(config(CarrierScheme::SingleCarrier), {0, 0, 0});
  EXPECT_EQ(single0.rank, Rank::Rank0);
  EXPECT_LT(single0.m.norm(), 1e-9);

  const RippleMatrix inter0 = ripple_matrix_alphabeta(config(CarrierScheme::Interleaved), {0, 0, 0});
  EXPECT_EQ(inter0.rank, Rank::Rank2);
  EXPECT_LT((inter0.m - (5.0 * kUm * kUm / 243.0) * Mat2::Identity()).cwiseAbs().maxCoeff(),
            1e-8 * 5.0 * kUm * kUm / 243.0);
  // quadrature + explicit congruence
  const ClarkeMat cl = clarke_matrix();
  const Mat2 quad = cl * oracle::ripple_abc_quadrature(config(CarrierScheme::Interleaved), {0, 0, 0}) * cl.transpose();
  EXPECT_LT((quad - (5.0 * kUm * kUm / 243.0) * Mat2::Identity()).cwiseAbs().maxCoeff(), 1e-8 * 5.0 * kUm * kUm / 243.0);

  const RippleMatrix deg = ripple_matrix_alphabeta(config(CarrierScheme::SingleCarrier), {10, 5, 5});
  EXPECT_EQ(deg.rank, Rank::Rank1);
  EXPECT_LE(std::abs(deg.m.determinant()), 1e-9 * deg.m.squaredNorm());
}

TEST(RankClassify, Examples) {
  EXPECT_EQ(rank_classify(Mat2::Zero()), Rank::Rank0);
  EXPECT_EQ(rank_classify(Vec2(1.0, 0.0).asDiagonal().toDenseMatrix()), Rank::Rank1);
  EXPECT_EQ(rank_classify((5.0 * kUm * kUm / 243.0) * Mat2::Identity()), Rank::Rank2);
  EXPECT_EQ(rank_classify(Vec2(1.0, 1e-6).asDiagonal().toDenseMatrix(), {1e-5, 1e-12}), Rank::Rank1);
}

TEST(RippleMatrixAlphaBeta, SingularValuesMatchClarkeTimesProjectedAbc) {
  // C C^T = (2/3) I and C^T C = P (common-mode removal), so
  // sigma(C A C^T) = sqrt(2/3) sigma(C A P); ranks of C A C^T and C A coincide.
  auto g = oracle::rng(12);
  const ClarkeMat cl = clarke_matrix();
  const Mat3 proj = Mat3::Identity() - Mat3::Constant(1.0 / 3.0);
  for (auto s : {CarrierScheme::SingleCarrier, CarrierScheme::Interleaved}) {
    for (int i = 0; i < 200; ++i) {
      Abc u{oracle::uniform(g, -kUm, kUm), oracle::uniform(g, -kUm, kUm), oracle::uniform(g, -kUm, kUm)};
      if (i % 5 == 1) u.c = u.b;
      const Mat3 a = ripple_matrix_abc(config(s), u);
      const Eigen::Matrix<double, 2, 3> cap = cl * a * proj;
      const Vec2 sv1 = std::sqrt(2.0 / 3.0) * Eigen::JacobiSVD<Eigen::Matrix<double, 2, 3>>(cap).singularValues();
      const RippleMatrix ab = ripple_matrix_alphabeta(config(s), u);
      const Vec2 sv2 = Eigen::JacobiSVD<Mat2>(ab.m).singularValues();
      EXPECT_LT((sv1 - sv2).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, sv1(0)));

      const Eigen::Matrix<double, 2, 3> ca = cl * a;
      const Vec2 sv3 = Eigen::JacobiSVD<Eigen::Matrix<double, 2, 3>>(ca).singularValues();
      const double scale = std::max(1.0, sv3(0));
      const int rank_ca = (sv3(0) > 1e-12 * kUm * kUm) + (sv3(1) > 1e-9 * scale);
      EXPECT_EQ(rank_ca, std::stoi(to_string(ab.rank))) << to_string(s) << " " << u.a << "," << u.b << "," << u.c;
    }
  }
}

TEST(RippleMatrixAlphaBeta, SingularValuesMatchClarkeTimesAbcWithoutCommonMode) {
  // when A^abc maps the common-mode direction onto itself, P drops out
  const ClarkeMat cl = clarke_matrix();
  const Mat3 a = ripple_matrix_abc(config(CarrierScheme::Interleaved), {0, 0, 0});
  const Eigen::Matrix<double, 2, 3> ca = std::sqrt(2.0 / 3.0) * cl * a;
  const Vec2 sv1 = Eigen::JacobiSVD<Eigen::Matrix<double, 2, 3>>(ca).singularValues();
  const Vec2 sv2 =
      Eigen::JacobiSVD<Mat2>(ripple_matrix_alphabeta(config(CarrierScheme::Interleaved), {0, 0, 0}).m).singularValues();
  EXPECT_LT((sv1 - sv2).cwiseAbs().maxCoeff(), 1e-10 * sv1(0));
}

TEST(RippleMatrixAlphaBeta, PositiveSemidefinite) {
  auto g = oracle::rng(13);
  for (int i = 0; i < 200; ++i) {
    const Abc u{oracle::uniform(g, -kUm, kUm), oracle::uniform(g, -kUm, kUm), oracle::uniform(g, -kUm, kUm)};
    const RippleMatrix a = ripple_matrix_alphabeta(config(CarrierScheme::Interleaved), u);
    Eigen::SelfAdjointEigenSolver<Mat2> es(a.m);
    EXPECT_GE(es.eigenvalues()(0), -1e-12 * a.m.norm());
    EXPECT_EQ(a.m(0, 1), a.m(1, 0));
  }
}

TEST(RankStructure, SingleCarrierGridRule) {
  const PwmConfig c = config(CarrierScheme::SingleCarrier);
  const int m = 10;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      for (int k = 0; k < m; ++k) {
        auto level = [&](int q) { return (-0.9 + 1.8 * q / (m - 1)) * kUm; };
        const Abc u{level(i), level(j), level(k)};
        const int equal_pairs = (i == j) + (j == k) + (i == k);
        const Rank expected = equal_pairs == 3 ? Rank::Rank0 : (equal_pairs == 1 ? Rank::Rank1 : Rank::Rank2);
        EXPECT_EQ(ripple_matrix_alphabeta(c, u).rank, expected) << u.a << "," << u.b << "," << u.c;
      }
    }
  }
}

TEST(RankStructure, InterleavedAlwaysInvertibleInside) {
  const PwmConfig c = config(CarrierScheme::Interleaved);
  auto g = oracle::rng(14);
  for (int i = 0; i < 1000; ++i) {
    Abc u{oracle::uniform(g, -0.95, 0.95) * kUm, oracle::uniform(g, -0.95, 0.95) * kUm,
          oracle::uniform(g, -0.95, 0.95) * kUm};
    if (i % 4 == 1) u.c = u.b;
    if (i % 4 == 2) u.b = u.c = u.a;
    EXPECT_EQ(ripple_matrix_alphabeta(c, u).rank, Rank::Rank2) << u.a << "," << u.b << "," << u.c;
  }
}

TEST(SwitchingPattern, CenteredPulseAtZeroReference) {
  const SwitchingPattern p = switching_pattern(config(CarrierScheme::SingleCarrier), {0, 0, 0});
  EXPECT_DOUBLE_EQ(p.phases[0].rise, 0.25);
  EXPECT_DOUBLE_EQ(p.phases[0].fall, 0.75);
  // bisection on the comparator transitions
  EXPECT_NEAR(oracle::bisect_transition(0.0, 0.0, 0.5, kUm), 0.25, 1e-12);
  EXPECT_NEAR(oracle::bisect_transition(0.0, 0.5, 1.0, kUm), 0.75, 1e-12);
}

TEST(SwitchingPattern, EdgesMatchComparatorTransitions) {
  auto g = oracle::rng(15);
  for (int i = 0; i < 100; ++i) {
    const double u = oracle::uniform(g, -0.99, 0.99) * kUm;
    const SwitchingPattern p = switching_pattern(config(CarrierScheme::SingleCarrier), {u, u, u});
    EXPECT_NEAR(p.phases[0].rise, oracle::bisect_transition(u, 0.0, 0.5, kUm), 1e-12);
    EXPECT_NEAR(p.phases[0].fall, oracle::bisect_transition(u, 0.5, 1.0, kUm), 1e-12);
  }
}

TEST(SwitchingPattern, DegenerateAtLimits) {
  const SwitchingPattern top = switching_pattern(config(CarrierScheme::SingleCarrier), {kUm, kUm, kUm});
  EXPECT_TRUE(top.phases[0].degenerate());
  EXPECT_TRUE(top.edges().empty());
  const SwitchingPattern bottom = switching_pattern(config(CarrierScheme::SingleCarrier), {-kUm, -kUm, -kUm});
  EXPECT_TRUE(bottom.phases[0].degenerate());
  EXPECT_EQ(bottom.phases[0].rise, bottom.phases[0].fall);
}

TEST(SwitchingPattern, InterleavedPhaseBShiftedByThird) {
  const SwitchingPattern p = switching_pattern(config(CarrierScheme::Interleaved), {0, 0, 0});
  std::vector<double> b_edges;
  for (const SwitchingEdge& e : p.edges()) {
    if (e.phase == 1) b_edges.push_back(e.tau);
  }
  ASSERT_EQ(b_edges.size(), 2u);
  std::sort(b_edges.begin(), b_edges.end());
  EXPECT_NEAR(b_edges[0], 1.0 / 12.0, 1e-15);  // (3/4 + 1/3) mod 1
  EXPECT_NEAR(b_edges[1], 0.25 + 1.0 / 3.0, 1e-15);
}

TEST(SwitchingPattern, PiecewiseLevelsReproduceModulation) {
  auto g = oracle::rng(16);
  for (auto s : {CarrierScheme::SingleCarrier, CarrierScheme::Interleaved}) {
    const PwmConfig c = config(s);
    for (int i = 0; i < 50; ++i) {
      const Abc u{oracle::uniform(g, -kUm, kUm), oracle::uniform(g, -kUm, kUm), oracle::uniform(g, -kUm, kUm)};
      const SwitchingPattern p = switching_pattern(c, u);
      // phase levels can change only at listed edges, and do change there
      for (const SwitchingEdge& e : p.edges()) {
        const double before = modulate(u[e.phase], e.tau - 1e-9 - c.carrier_shift(e.phase), kUm);
        const double after = modulate(u[e.phase], e.tau + 1e-9 - c.carrier_shift(e.phase), kUm);
        EXPECT_EQ(after - before, 2 * kUm * e.direction);
      }
      const auto bp = p.breakpoints();
      for (std::size_t k = 0; k + 1 < bp.size(); ++k) {
        const Abc lo = modulate_abc(c, u, bp[k] + 1e-9);
        const Abc hi = modulate_abc(c, u, bp[k + 1] - 1e-9);
        if (bp[k + 1] - bp[k] > 3e-9) {
          EXPECT_EQ(lo.a, hi.a);
          EXPECT_EQ(lo.b, hi.b);
          EXPECT_EQ(lo.c, hi.c);
        }
      }
    }
  }
}
