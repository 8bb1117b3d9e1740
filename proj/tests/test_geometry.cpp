#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "spherecnf/diagnostics.hpp"
#include "spherecnf/sphere.hpp"
#include "test_helpers.hpp"

using namespace spherecnf;
using Catch::Approx;

namespace {

Eigen::VectorXd vec3(double x, double y, double z) {
  Eigen::VectorXd v(3);
  v << x, y, z;
  return v;
}

}  // namespace

TEST_CASE("manifold point enforces the unit-norm invariant") {
  CHECK_NOTHROW(ManifoldPoint(vec3(0, 0, 1)));
  CHECK_THROWS_AS(ManifoldPoint(vec3(0, 0, 1.001)), NumericError);
  CHECK_THROWS_AS(ManifoldPoint(vec3(0, 0, 0)), NumericError);
  const ManifoldPoint q = ManifoldPoint::normalized(vec3(3, 4, 12));
  CHECK(q.coords().norm() == Approx(1.0).margin(1e-15));
}

TEST_CASE("tangent vectors enforce tangency") {
  const ManifoldPoint q(vec3(0, 0, 1));
  CHECK_NOTHROW(TangentVector(q, vec3(1, 2, 0)));
  CHECK_THROWS_AS(TangentVector(q, vec3(1, 2, 0.1)), NumericError);
}

TEST_CASE("project_tangent matches hand-evaluated cases") {
  const ManifoldPoint pole(vec3(0, 0, 1));
  CHECK(project_tangent(pole, vec3(1, 0, 0)).vec.isApprox(vec3(1, 0, 0)));
  CHECK(project_tangent(pole, vec3(0, 0, 5)).vec.norm() == 0.0);

  const ManifoldPoint qx(vec3(1, 0, 0));
  CHECK(project_tangent(qx, vec3(1, 1, 0)).vec.isApprox(vec3(0, 1, 0)));
}

TEST_CASE("project_tangent is idempotent and tangential") {
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const ManifoldPoint q = sample_uniform(SphereSpec{2}, 1, rng).front();
    const Eigen::VectorXd v = rng.normal_vector(3) * 3.0;
    const TangentVector pv = project_tangent(q, v);
    CHECK(std::abs(q.coords().dot(pv.vec)) < 1e-9);
    const TangentVector ppv = project_tangent(q, pv.vec);
    CHECK((ppv.vec - pv.vec).norm() < 1e-12);
  }
}

TEST_CASE("retraction normalizes and handles degenerate steps") {
  const ManifoldPoint q(vec3(1, 0, 0));
  CHECK(retract(q, vec3(0, 0, 0)).coords().isApprox(vec3(1, 0, 0)));
  CHECK(retract(q, vec3(1, 0, 0)).coords().isApprox(vec3(1, 0, 0)));
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  CHECK(retract(q, vec3(0, 1, 0))
            .coords()
            .isApprox(vec3(inv_sqrt2, inv_sqrt2, 0), 1e-15));
  CHECK_THROWS_AS(retract(q, vec3(-1, 0, 0)), NumericError);

  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const ManifoldPoint p = sample_uniform(SphereSpec{3}, 1, rng).front();
    const ManifoldPoint moved = retract(p, rng.normal_vector(4) * 0.3);
    CHECK(std::abs(moved.coords().norm() - 1.0) < 1e-15);
  }
}

TEST_CASE("generator fields match the projected coordinate fields") {
  const ManifoldPoint pole(vec3(0, 0, 1));
  const auto gens = generator_fields(pole);
  REQUIRE(gens.size() == 3);
  CHECK(gens[2].vec.norm() == 0.0);           // e_3 - 1*q vanishes at the pole
  CHECK(gens[0].vec.isApprox(vec3(1, 0, 0)));

  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  const ManifoldPoint q(vec3(inv_sqrt2, inv_sqrt2, 0));
  const auto g = generator_fields(q);
  CHECK(g[0].vec.isApprox(vec3(0.5, -0.5, 0), 1e-14));
}

TEST_CASE("generator fields span the tangent space (rank n)") {
  Rng rng(13);
  for (int n : {1, 2, 3, 5}) {
    const SphereSpec spec{n};
    const ManifoldPoint q = sample_uniform(spec, 1, rng).front();
    const auto gens = generator_fields(q);
    Eigen::MatrixXd stacked(spec.ambient_dim(), spec.ambient_dim());
    for (int i = 0; i < spec.ambient_dim(); ++i) stacked.col(i) = gens[i].vec;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(stacked);
    lu.setThreshold(1e-10);
    CHECK(lu.rank() == n);
    for (const auto& gen : gens)
      CHECK(std::abs(q.coords().dot(gen.vec)) < 1e-12);
  }
}

TEST_CASE("generator divergences equal -n q_i") {
  const ManifoldPoint pole(vec3(0, 0, 1));
  CHECK(generator_divergences(pole).isApprox(vec3(0, 0, -2)));
  const ManifoldPoint qx(vec3(1, 0, 0));
  CHECK(generator_divergences(qx).isApprox(vec3(-2, 0, 0)));
}

TEST_CASE("generator divergence formula agrees with the chart oracle") {
  // Realize each generator as a constant-coefficient field and compare the
  // closed form -n q_i with the finite-difference chart divergence.
  Rng rng(17);
  for (int n : {2, 3}) {
    const SphereSpec spec{n};
    const int m = spec.ambient_dim();
    for (int i = 0; i < m; ++i) {
      Eigen::VectorXd c = Eigen::VectorXd::Zero(m);
      c[i] = 1.0;
      const CoefficientNet net = test_helpers::constant_field(c);
      for (int rep = 0; rep < 5; ++rep) {
        const ManifoldPoint q = sample_point_away_from_poles(spec, rng);
        const double expected = -static_cast<double>(n) * q[i];
        const double fd = chart_divergence_fd(net, 0.0, q);
        CHECK(std::abs(fd - expected) < 1e-4);
      }
    }
  }
}

TEST_CASE("log uniform density uses the S^n surface area") {
  CHECK(log_uniform_density(SphereSpec{2}) ==
        Approx(-2.531024246969290793).epsilon(1e-14));  // -log(4 pi)
  CHECK(log_uniform_density(SphereSpec{1}) ==
        Approx(-1.8378770664093454836).epsilon(1e-14));  // -log(2 pi)
  CHECK(log_uniform_density(SphereSpec{3}) ==
        Approx(-2.9826069522587456577).epsilon(1e-14));  // -log(2 pi^2)
  CHECK(sphere_area(SphereSpec{2}) ==
        Approx(4.0 * std::numbers::pi).epsilon(1e-14));
}

TEST_CASE("uniform sampling is deterministic, unit-norm and symmetric") {
  const SphereSpec spec{2};
  Rng rng_a(42), rng_b(42);
  const auto a = sample_uniform(spec, 10, rng_a);
  const auto b = sample_uniform(spec, 10, rng_b);
  for (int i = 0; i < 10; ++i) {
    CHECK(a[i].coords() == b[i].coords());  // bit-identical given the seed
    CHECK(std::abs(a[i].coords().norm() - 1.0) < 1e-12);
  }

  Rng rng(123);
  const int count = 100000;
  const auto points = sample_uniform(spec, count, rng);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(3);
  int upper = 0;
  for (const auto& p : points) {
    mean += p.coords();
    if (p[2] > 0.0) ++upper;
  }
  mean /= count;
  CHECK(mean.norm() < 0.02);
  CHECK(std::abs(static_cast<double>(upper) / count - 0.5) < 0.01);
}

TEST_CASE("geodesic distance") {
  const ManifoldPoint a(vec3(1, 0, 0));
  const ManifoldPoint b(vec3(0, 1, 0));
  CHECK(geodesic_distance(a, a) == 0.0);
  CHECK(geodesic_distance(a, b) == Approx(std::numbers::pi / 2).epsilon(1e-12));
  CHECK(geodesic_distance(a, ManifoldPoint(vec3(-1, 0, 0))) ==
        Approx(std::numbers::pi).epsilon(1e-12));
}
