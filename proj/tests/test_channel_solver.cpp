#include "doctest.h"

#include "suq/channel_solver.hpp"
#include "suq/errors.hpp"
#include "suq/features.hpp"

#include <sstream>

using namespace suq;

namespace {

ChannelConfig at(double re) {
  ChannelConfig cfg;
  cfg.re_tau = re;
  return cfg;
}

const ChannelState& baseline180() {
  static const ChannelState s = solve_baseline(at(180));
  return s;
}

double max_abs(const Eigen::VectorXd& v) { return v.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("config validation names the field") {
  auto expect = [](ChannelConfig cfg, const std::string& field) {
    try {
      cfg.validate();
      FAIL("expected ConfigError for " << field);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  ChannelConfig c = at(0);
  expect(c, "re_tau");
  c = at(180);
  c.residual_tol = 0;
  expect(c, "residual_tol");
  c = at(180);
  c.under_relaxation = 1.5;
  expect(c, "under_relaxation");
  c = at(180);
  c.n_cells = 4;
  expect(c, "n_cells");
  c = at(5200);
  c.stretch = 1.0;
  expect(c, "y+");
  CHECK_THROWS_AS(solve_baseline(at(-1)), ConfigError);
}

TEST_CASE("grid") {
  for (double re : {180.0, 1000.0, 5200.0}) {
    const Eigen::VectorXd y = make_grid(at(re));
    CHECK(y.size() == 192);
    CHECK(y(0) == 0.0);
    CHECK(y(1) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(y(191) == re);
    for (Eigen::Index i = 1; i < y.size(); ++i) CHECK(y(i) > y(i - 1));
  }
  ChannelConfig c = at(180);
  c.stretch = 1.02;
  const Eigen::VectorXd y = make_grid(c);
  CHECK((y(2) - y(1)) / (y(1) - y(0)) == doctest::Approx(1.02));
}

TEST_CASE("forced laminar flow matches the parabola") {
  ChannelConfig cfg = at(180);
  cfg.n_cells = 384;
  cfg.laminar = true;
  const ChannelState s = solve_baseline(cfg);
  CHECK(s.converged);
  for (Eigen::Index i = 1; i < s.size(); ++i) {
    const double y = s.y_plus(i);
    const double exact = y - y * y / (2 * cfg.re_tau);
    CHECK(std::abs(s.u_plus(i) - exact) <= 1e-3 * exact);
  }
  CHECK(max_abs(s.nu_t_plus) == 0.0);
}

TEST_CASE("baseline at Re_tau = 180") {
  const auto& s = baseline180();
  CHECK(s.converged);
  CHECK(s.residual_history.back() < 1e-8);
  CHECK(s.u_plus(0) == 0.0);
  CHECK(s.k_plus(0) == 0.0);
  CHECK(s.dudy(s.size() - 1) == 0.0);
  CHECK(s.u_plus.allFinite());
  CHECK(s.k_plus.minCoeff() >= 0.0);
  CHECK(s.omega_plus.minCoeff() > 0.0);
  CHECK(max_abs(momentum_balance_error(s)) < 0.01);
  CHECK(s.realizability_violations == 0);
  // Well-known log-law range for SST at this Re_tau.
  CHECK(s.u_plus(s.size() - 1) > 16.0);
  CHECK(s.u_plus(s.size() - 1) < 20.0);
}

TEST_CASE("baseline stresses lie on the plane-strain line") {
  const auto trace = barycentric_trace(baseline180());
  int mapped = 0;
  for (const auto& t : trace) {
    if (t.degenerate) continue;
    CHECK(std::abs(t.lambda2) < 1e-10);
    ++mapped;
  }
  CHECK(trace.front().degenerate);
  CHECK(mapped == static_cast<int>(trace.size()) - 1);
}

TEST_CASE("grid convergence of the baseline") {
  ChannelConfig fine = at(180);
  fine.n_cells = 384;
  const ChannelState f = solve_baseline(fine);
  const double uc = baseline180().u_plus(baseline180().size() - 1);
  CHECK(std::abs(f.u_plus(f.size() - 1) - uc) < 0.005 * uc);
}

TEST_CASE("identical configs give bit-identical residual histories") {
  const ChannelState again = solve_baseline(at(180));
  CHECK(again.residual_history == baseline180().residual_history);
  CHECK(again.u_plus == baseline180().u_plus);
}

TEST_CASE("non-convergence carries the residual history") {
  ChannelConfig cfg = at(180);
  cfg.max_iters = 5;
  try {
    solve_baseline(cfg);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.history().size() == 5);
  }
}

TEST_CASE("zero perturbation reproduces the baseline") {
  const auto& base = baseline180();
  const ChannelState s = solve_with_injection(at(180), corner_source(Corner::OneComponent, 0.0));
  CHECK(s.converged);
  CHECK(max_abs(s.u_plus - base.u_plus) < 2e-4 * max_abs(base.u_plus));

  // Same discrete fixed point: the gap closes with the tolerance.
  ChannelConfig tight = at(180);
  tight.residual_tol = 1e-11;
  tight.max_iters = 200000;
  const ChannelState b = solve_baseline(tight);
  for (Corner c : {Corner::OneComponent, Corner::ThreeComponent}) {
    const ChannelState t = solve_with_injection(tight, corner_source(c, 0.0));
    CHECK(max_abs(t.u_plus - b.u_plus) < 1e-6 * max_abs(b.u_plus));
    CHECK(max_abs(t.k_plus - b.k_plus) < 1e-5 * max_abs(b.k_plus));
  }
}

TEST_CASE("frozen baseline stresses reproduce the baseline velocity") {
  const auto& base = baseline180();
  const ChannelState s = solve_with_injection(at(180), frozen_source(base.tau));
  CHECK(max_abs(s.u_plus - base.u_plus) < 1e-3 * max_abs(base.u_plus));
}

TEST_CASE("corner injections keep momentum balance and realizability") {
  for (double re : {180.0}) {
    for (Corner c : {Corner::OneComponent, Corner::TwoComponent, Corner::ThreeComponent}) {
      for (double db : {0.5, 1.0}) {
        const ChannelState s = solve_with_injection(at(re), corner_source(c, db));
        CAPTURE(corner_name(c));
        CAPTURE(db);
        CHECK(s.converged);
        CHECK(max_abs(momentum_balance_error(s)) < 0.01);
        CHECK(s.realizability_violations == 0);
        for (const auto& t : s.tau) CHECK(is_realizable(t));
      }
    }
  }
}

TEST_CASE("3C at delta_b = 1 puts every node on the isotropic corner") {
  const ChannelState s = solve_with_injection(at(180), corner_source(Corner::ThreeComponent, 1.0));
  for (const auto& t : barycentric_trace(s)) {
    if (t.degenerate) continue;
    CHECK((t.point.position - corner_position<double>(Corner::ThreeComponent)).norm() < 1e-10);
  }
  // no shear stress is left: the flow is laminar
  const double y = s.re_tau;
  CHECK(s.u_plus(s.size() - 1) == doctest::Approx(y / 2).epsilon(1e-3));
}

TEST_CASE("envelope") {
  const UqEnvelope zero = uq_envelope(at(180), [](Corner c) { return corner_source(c, 0.0); });
  CHECK(zero.members.size() == 3);
  CHECK(max_abs(zero.width()) < 2e-4 * max_abs(zero.baseline.u_plus));

  const UqEnvelope one = uq_envelope(at(180), [](Corner c) { return corner_source(c, 1.0); });
  for (Eigen::Index i = 0; i < one.baseline.size(); ++i) {
    const double y = one.baseline.y_plus(i);
    CHECK(one.u_min(i) <= one.baseline.u_plus(i));
    CHECK(one.u_max(i) >= one.baseline.u_plus(i));
    if (y >= 30 && y <= 0.3 * 180) CHECK(one.width()(i) > 0.0);
  }
  CHECK(one.integrated_width() > zero.integrated_width());
}

TEST_CASE("forest source rejects mismatched forests before iterating") {
  auto forest = std::make_shared<RegressionForest>();
  forest->feature_names = {"re_d", "y_plus"};
  forest->target_names = {"p"};
  ForestSourceOptions opt;
  opt.kind = TargetKind::PCorr;
  CHECK_THROWS_AS(forest_source(forest, opt), ConfigError);
  opt.kind = TargetKind::P;
  opt.feature_names = {"re_d"};
  CHECK_THROWS_AS(forest_source(forest, opt), ConfigError);
  opt.feature_names = {"re_d", "nope"};
  CHECK_THROWS_AS(forest_source(forest, opt), ConfigError);
  CHECK_THROWS_AS(forest_source(nullptr, ForestSourceOptions{}), ConfigError);
}

TEST_CASE("forest source with a constant forest equals the magnitude perturbation") {
  // A single-leaf forest predicting p everywhere.
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(1, 6);
  Eigen::MatrixXd y = Eigen::MatrixXd::Constant(1, 1, 0.05);
  ForestHyperparams hp;
  hp.n_trees = 1;
  auto forest = std::make_shared<const RegressionForest>(fit(x, y, hp, default_feature_names(), {"p"}));
  ForestSourceOptions opt;
  opt.corner = Corner::TwoComponent;
  const auto src = forest_source(forest, opt);
  const auto& base = baseline180();
  const auto out = src(base);
  const auto spec = PerturbationSpec<double>::magnitude(Corner::TwoComponent, 0.05);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Stress ref = build_perturbed_stress(decompose(base.tau[i]), spec);
    CHECK((out[i].matrix() - ref.matrix()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("names") {
  CHECK(parse_corner("1C") == Corner::OneComponent);
  CHECK(parse_corner("3c") == Corner::ThreeComponent);
  CHECK_THROWS_AS(parse_corner("4C"), ConfigError);
  for (TargetKind k : {TargetKind::P, TargetKind::PCorr, TargetKind::PCorrAngles}) {
    CHECK(parse_target_kind(to_string(k)) == k);
  }
  CHECK(target_names(TargetKind::PCorrAngles).size() == 5);
  CHECK_THROWS_AS(parse_target_kind("angles"), ConfigError);
  CHECK_THROWS_AS(corner_source(Corner::OneComponent, 1.1), ConfigError);
}

TEST_CASE("solution CSV") {
  std::ostringstream out;
  write_solution_csv(out, baseline180());
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  CHECK(header == "y_plus,U_plus,k_plus,omega_plus,nu_t_plus,uu,vv,ww,uv,C1,C2,C3");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 192);
}
