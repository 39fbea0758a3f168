#include "doctest.h"
#include "oracles.hpp"

#include "suq/perturb.hpp"

#include <numbers>
#include <random>

using namespace suq;

namespace {

using P = BarycentricPoint<double>;
using V2 = Vector2<double>;

const Corner kCorners[3] = {Corner::OneComponent, Corner::TwoComponent, Corner::ThreeComponent};

P random_inside(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector3<double> w(u(rng), u(rng), u(rng));
  return point_from_weights<double>(w / w.sum());
}

AnisotropyEigenSystem<double> random_eig(std::mt19937_64& rng) {
  const auto a = oracle::random_spd(rng, 3.0);
  return decompose(Stress{a[0], a[1], a[2], a[3], a[4], a[5]});
}

}  // namespace

TEST_CASE("corner perturbation examples") {
  std::mt19937_64 rng(31);
  const P x = random_inside(rng);
  CHECK((perturb_point_corner(x, Corner::ThreeComponent, 0.0).position - x.position).norm() < 1e-15);
  const P at = perturb_point_corner(x, Corner::TwoComponent, 1.0);
  CHECK(at.position.norm() == 0.0);
  CHECK(at.weights(1) == 1.0);

  const P mid = perturb_point_corner(point_from_position<double>({0.3, 0.2}), Corner::ThreeComponent, 0.5);
  CHECK(mid.position(0) == doctest::Approx(0.4).epsilon(1e-14));
  CHECK(mid.position(1) == doctest::Approx((0.2 + std::sqrt(3.0) / 2) / 2).epsilon(1e-14));
}

TEST_CASE("delta_b = 1 lands exactly on every corner") {
  std::mt19937_64 rng(32);
  for (int c = 0; c < 100; ++c) {
    const P x = random_inside(rng);
    for (Corner corner : kCorners) {
      const P y = perturb_point_corner(x, corner, 1.0);
      CHECK((y.position - corner_position<double>(corner)).norm() <= 1e-12);
    }
  }
}

TEST_CASE("delta_b outside [0,1] is rejected") {
  const P x = point_from_position<double>({0.3, 0.2});
  CHECK_THROWS_AS(perturb_point_corner(x, Corner::OneComponent, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(perturb_point_corner(x, Corner::OneComponent, 1.5), std::invalid_argument);
}

TEST_CASE("magnitude perturbation examples") {
  const P origin = point_from_position<double>({0.0, 0.0});
  const P q = perturb_point_magnitude(origin, Corner::OneComponent, 0.25);
  CHECK(q.position(0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(std::abs(q.position(1)) < 1e-15);

  const P x = point_from_position<double>({0.3, 0.2});
  CHECK((perturb_point_magnitude(x, Corner::OneComponent, 0.0).position - x.position).norm() < 1e-15);
  CHECK((perturb_point_magnitude(x, Corner::ThreeComponent, 10.0).position -
         corner_position<double>(Corner::ThreeComponent))
            .norm() <= 1e-15);
  // already at the corner
  const P c = point_from_position<double>(corner_position<double>(Corner::OneComponent));
  CHECK((perturb_point_magnitude(c, Corner::OneComponent, 0.3).position - c.position).norm() == 0.0);
  CHECK_THROWS_AS(perturb_point_magnitude(x, Corner::OneComponent, -1.0), std::invalid_argument);
}

TEST_CASE("magnitude perturbation moves exactly p toward the corner") {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int c = 0; c < 1000; ++c) {
    const P x = random_inside(rng);
    const Corner corner = kCorners[c % 3];
    const double dist = (corner_position<double>(corner) - x.position).norm();
    const double p = u(rng) * dist;
    const P y = perturb_point_magnitude(x, corner, p);
    CHECK((y.position - x.position).norm() == doctest::Approx(p).epsilon(1e-12));
    CHECK((corner_position<double>(corner) - y.position).norm() == doctest::Approx(dist - p).epsilon(1e-9));
    CHECK(y.inside());
  }
}

TEST_CASE("componentwise examples") {
  const P x = point_from_position<double>({0.2, 0.1});
  CHECK((perturb_point_componentwise<double>(x, V2::Zero()).position - x.position).norm() < 1e-15);
  const P y = perturb_point_componentwise<double>(x, V2(0.1, 0.05));
  CHECK(y.position(0) == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(y.position(1) == doctest::Approx(0.15).epsilon(1e-14));

  const P centroid = point_from_weights<double>(Vector3<double>::Constant(1.0 / 3));
  const P far = perturb_point_componentwise<double>(centroid, V2(10.0, 0.0));
  CHECK((far.position - V2(1.0, 0.0)).norm() < 1e-12);
}

TEST_CASE("projection matches brute-force nearest boundary point") {
  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const V2 c[3] = {{1, 0}, {0, 0}, {0.5, std::sqrt(3.0) / 2}};
  for (int t = 0; t < 500; ++t) {
    const V2 q(u(rng), u(rng));
    const V2 got = project_to_triangle(q);
    if (point_from_position(q).inside(0.0)) {
      CHECK((got - q).norm() == 0.0);
      continue;
    }
    double best = 1e300;
    for (int e = 0; e < 3; ++e) {
      for (int s = 0; s <= 20000; ++s) {
        const V2 cand = c[e] + (s / 20000.0) * (c[(e + 1) % 3] - c[e]);
        best = std::min(best, (cand - q).norm());
      }
    }
    CHECK((got - q).norm() <= best + 1e-12);
    CHECK((got - q).norm() >= best - 1e-4);
  }
}

TEST_CASE("every mode preserves trace and realizability") {
  std::mt19937_64 rng(35);
  std::uniform_real_distribution<double> u(0.0, 1.0), s(-1.0, 1.0);
  for (int c = 0; c < 1000; ++c) {
    const auto eig = random_eig(rng);
    const Corner corner = kCorners[c % 3];
    const PerturbationSpec<double> specs[4] = {
        PerturbationSpec<double>::data_free(corner, u(rng)),
        PerturbationSpec<double>::magnitude(corner, 2.0 * u(rng)),
        PerturbationSpec<double>::componentwise(V2(s(rng), s(rng))),
        PerturbationSpec<double>::full(V2(s(rng), s(rng)), {3 * s(rng), 1.5 * s(rng), 3 * s(rng)}),
    };
    for (const auto& spec : specs) {
      const Stress out = build_perturbed_stress(eig, spec);
      REQUIRE(out.trace() == doctest::Approx(2.0 * eig.k).epsilon(1e-10));
      REQUIRE(is_realizable(out));
    }
  }
}

TEST_CASE("3C with delta_b = 1 gives the isotropic tensor") {
  std::mt19937_64 rng(36);
  for (int c = 0; c < 100; ++c) {
    const auto eig = random_eig(rng);
    const Stress out = build_perturbed_stress(eig, PerturbationSpec<double>::data_free(Corner::ThreeComponent, 1.0));
    const Matrix3<double> iso = Matrix3<double>::Identity() * (2.0 * eig.k / 3.0);
    CHECK((out.matrix() - iso).cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, eig.k));
  }
}

TEST_CASE("zero perturbation reproduces the input") {
  std::mt19937_64 rng(37);
  for (int c = 0; c < 100; ++c) {
    const auto eig = random_eig(rng);
    const Stress ref = reconstruct(eig);
    const Stress out = build_perturbed_stress(eig, PerturbationSpec<double>::magnitude(Corner::OneComponent, 0.0));
    CHECK((out.matrix() - ref.matrix()).cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, eig.k));
  }
}

TEST_CASE("full correction with extracted targets recovers the target tensor") {
  std::mt19937_64 rng(38);
  int checked = 0;
  for (int c = 0; c < 500; ++c) {
    const auto rans = random_eig(rng);
    auto target = random_eig(rng);
    // equal k
    const auto ta = reconstruct(target);
    const Stress dns = Stress::from_matrix(ta.matrix() * (rans.k / target.k));
    target = decompose(dns);
    const auto& l = target.lambda;
    if (l(0) - l(1) < 1e-6 || l(1) - l(2) < 1e-6) continue;
    const auto& r = rans.lambda;
    if (r(0) - r(1) < 1e-6 || r(1) - r(2) < 1e-6) continue;
    const V2 corr = to_barycentric(target).position - to_barycentric(rans).position;
    const auto angles = extract_angles(rans.frame, target.frame);
    const Stress out = build_perturbed_stress(rans, PerturbationSpec<double>::full(corr, angles));
    REQUIRE((out.matrix() - dns.matrix()).cwiseAbs().maxCoeff() < 1e-9 * std::max(1.0, dns.matrix().norm()));
    ++checked;
  }
  CHECK(checked > 400);
}

TEST_CASE("corner idempotence and monotone approach") {
  std::mt19937_64 rng(39);
  for (int c = 0; c < 200; ++c) {
    const P x = random_inside(rng);
    for (Corner corner : kCorners) {
      const P once = perturb_point_corner(x, corner, 1.0);
      const P twice = perturb_point_corner(once, corner, 1.0);
      CHECK((once.position - twice.position).norm() == 0.0);
      double prev = 1e300;
      for (int k = 0; k <= 20; ++k) {
        const double d = (perturb_point_corner(x, corner, k / 20.0).position - corner_position<double>(corner)).norm();
        CHECK(d <= prev + 1e-15);
        prev = d;
      }
    }
  }
}

TEST_CASE("spec validation") {
  CHECK_NOTHROW(PerturbationSpec<double>::data_free(Corner::OneComponent, 0.5).validate());
  auto s = PerturbationSpec<double>::data_free(Corner::OneComponent, 0.5);
  s.p = 0.1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  auto m = PerturbationSpec<double>::magnitude(Corner::OneComponent, -0.1);
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
  auto f = PerturbationSpec<double>::full(V2::Zero(), {});
  f.angles.reset();
  CHECK_THROWS_AS(f.validate(), std::invalid_argument);
  auto d = PerturbationSpec<double>::data_free(Corner::TwoComponent, 1.2);
  CHECK_THROWS_AS(d.validate(), std::invalid_argument);
}

TEST_CASE("degenerate input comes back isotropic") {
  AnisotropyEigenSystem<double> eig;
  eig.k = 1e-14;
  eig.degenerate = true;
  const Stress out = build_perturbed_stress(eig, PerturbationSpec<double>::data_free(Corner::OneComponent, 1.0));
  CHECK(out.uu == doctest::Approx(2e-14 / 3));
  CHECK(out.uv == 0.0);
}
