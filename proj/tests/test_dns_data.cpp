#include "doctest.h"
#include "oracles.hpp"

#include "suq/channel_solver.hpp"
#include "suq/dns_data.hpp"
#include "suq/errors.hpp"
#include "suq/features.hpp"

#include <filesystem>
#include <map>
#include <random>
#include <sstream>

using namespace suq;

namespace {

const std::filesystem::path kData = SUQ_TEST_DATA;

ColumnMap single_table() {
  ColumnMap m;
  m.y_delta = 0;
  m.y_plus = 1;
  m.u_plus = 2;
  m.stress_y_plus = 1;
  m.uu = 3;
  m.vv = 4;
  m.ww = 5;
  m.uv = 6;
  return m;
}

const ChannelState& baseline(double re) {
  static std::map<double, ChannelState> cache;
  auto it = cache.find(re);
  if (it == cache.end()) {
    ChannelConfig cfg;
    cfg.re_tau = re;
    it = cache.emplace(re, solve_baseline(cfg)).first;
  }
  return it->second;
}

DnsProfile as_profile(const ChannelState& s) {
  DnsProfile p;
  const Eigen::Index n = s.size();
  p.re_tau = s.re_tau;
  p.y_plus = s.y_plus;
  p.y_delta = s.y_plus / s.re_tau;
  p.u_plus = s.u_plus;
  p.uu.resize(n);
  p.vv.resize(n);
  p.ww.resize(n);
  p.uv.resize(n);
  p.uw = Eigen::VectorXd::Zero(n);
  p.vw = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Stress& t = s.tau[static_cast<std::size_t>(i)];
    p.uu(i) = t.uu;
    p.vv(i) = t.vv;
    p.ww(i) = t.ww;
    p.uv(i) = t.uv;
  }
  return p;
}

}  // namespace

TEST_CASE("three-row table parses exactly") {
  std::istringstream in(
      "# y/delta y+ U uu vv ww uv\n"
      "0 0 0 0 0 0 0\n"
      "0.5 90 15.25 2.5 0.75 1.125 -0.5\n"
      "1 180 18.5 0.5 0.25 0.375 0\n");
  const DnsProfile p = parse_profile(in, single_table());
  CHECK(p.size() == 3);
  CHECK(p.re_tau == 180.0);
  CHECK(p.y_plus(1) == 90.0);
  CHECK(p.u_plus(1) == 15.25);
  CHECK(p.uu(1) == 2.5);
  CHECK(p.vv(1) == 0.75);
  CHECK(p.ww(1) == 1.125);
  CHECK(p.uv(1) == -0.5);
  CHECK(p.uw.isZero(0.0));
  CHECK(p.k_plus()(1) == 0.5 * (2.5 + 0.75 + 1.125));
}

TEST_CASE("shuffled rows come back sorted") {
  std::istringstream in(
      "0.5 90 15.25 2.5 0.75 1.125 -0.5\n"
      "% comment in the middle\n"
      "1 180 18.5 0.5 0.25 0.375 0\n"
      "0 0 0 0 0 0 0\n"
      "0.25 45 13 3 0.6 1 -0.6\n");
  const DnsProfile p = parse_profile(in, single_table());
  CHECK(p.y_plus == Eigen::Vector4d(0, 45, 90, 180));
  CHECK(p.u_plus == Eigen::Vector4d(0, 13, 15.25, 18.5));
  CHECK(p.uv(1) == -0.6);
}

TEST_CASE("parse errors carry the line number") {
  auto line_of = [](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      parse_profile(in, single_table());
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of("0 0 0 0 0 0 0\n# c\n1 1 x 0 0 0 0\n") == 3);
  CHECK(line_of("0 0 0 0 0 0 0\n1 1 1 0 0\n") == 2);
  CHECK(line_of("0 0 0 0 0 0 0\n0.1 5 1 1 1 1 0\n0.1 5 2 1 1 1 0\n") == 3);
  std::istringstream empty("% nothing\n");
  CHECK_THROWS_AS(parse_profile(empty, single_table()), DataError);
  std::istringstream bad("0 0 0 0 0 0 0\n1 10 1 1 1 1 5\n");
  CHECK_THROWS_AS(parse_profile(bad, single_table()), DataError);
  std::istringstream negative("0 0 0 0 0 0 0\n1 10 1 -1 1 1 0\n");
  CHECK_THROWS_AS(parse_profile(negative, single_table()), DataError);
  ColumnMap unmapped = single_table();
  unmapped.uv = -1;
  std::istringstream any("0 0 0 0 0 0 0\n");
  CHECK_THROWS_AS(parse_profile(any, unmapped), ConfigError);
}

TEST_CASE("mean and fluctuation files merge on the mean grid") {
  const DnsProfile p = load_profile(kData / "channel_tiny_mean.dat", kData / "channel_tiny_fluc.dat",
                                    ColumnMap::lee_moser());
  CHECK(p.size() == 5);
  CHECK(p.re_tau == 100.0);
  CHECK(p.y_plus == (Eigen::VectorXd(5) << 0, 5, 20, 50, 100).finished());
  CHECK(p.u_plus(3) == 14.5);
  // shared nodes are copied, not smoothed
  CHECK(p.uu(1) == 4.0);
  CHECK(p.uv(2) == -0.7);
  CHECK(p.vv(4) == 0.5);
  CHECK_THROWS_AS(load_profile(kData / "missing.dat", ColumnMap::lee_moser()), DataError);

  std::istringstream mean("0 0 0\n1 200 10\n");
  std::istringstream shorter("0 0 0 0 0 0 0 0 0\n0.5 100 1 1 1 0 0 0 1.5\n");
  CHECK_THROWS_AS(parse_profile(mean, shorter, ColumnMap::lee_moser()), DataError);
}

TEST_CASE("interpolation") {
  const DnsProfile p = reference_profile(1000);
  const DnsProfile same = interpolate(p, p.y_plus);
  CHECK((same.uv - p.uv).cwiseAbs().maxCoeff() == 0.0);
  CHECK((same.u_plus - p.u_plus).cwiseAbs().maxCoeff() == 0.0);

  DnsProfile flat = p;
  flat.ww.setConstant(0.7);
  Eigen::VectorXd mid(p.size() - 1);
  for (Eigen::Index i = 0; i + 1 < p.size(); ++i) mid(i) = 0.5 * (p.y_plus(i) + p.y_plus(i + 1));
  CHECK((interpolate(flat, mid).ww.array() - 0.7).abs().maxCoeff() < 1e-15);

  ChannelConfig cfg;
  cfg.re_tau = 1000;
  const Eigen::VectorXd grid = make_grid(cfg);
  const DnsProfile on = interpolate(p, grid);
  for (Eigen::Index j = 0; j < grid.size(); ++j) {
    const auto* it = std::upper_bound(p.y_plus.data(), p.y_plus.data() + p.size(), grid(j));
    const Eigen::Index hi = std::clamp<Eigen::Index>(it - p.y_plus.data(), 1, p.size() - 1);
    const double lo_v = std::min(p.uv(hi - 1), p.uv(hi)), hi_v = std::max(p.uv(hi - 1), p.uv(hi));
    CHECK(on.uv(j) >= lo_v - 1e-14);
    CHECK(on.uv(j) <= hi_v + 1e-14);
  }
  CHECK(on.y_plus(grid.size() - 1) == 1000.0);

  CHECK_THROWS_AS(interpolate(p, Eigen::Vector2d(10, 1001)), DataError);
  CHECK_THROWS_AS(interpolate(p, Eigen::Vector2d(-1, 10)), DataError);
}

TEST_CASE("reference profiles are realizable and isotropize toward the center") {
  for (double re : {180.0, 550.0, 1000.0, 2000.0, 5200.0}) {
    const DnsProfile p = reference_profile(re);
    CHECK_NOTHROW(p.validate());
    for (Eigen::Index i = 1; i < p.size(); ++i) CHECK(is_realizable(p.stress(i)));
    // total shear of the mean flow balances the pressure gradient
    for (Eigen::Index i = 1; i + 1 < p.size(); i += 16) {
      const double h = p.y_plus(i + 1) - p.y_plus(i - 1);
      const double slope = (p.u_plus(i + 1) - p.u_plus(i - 1)) / h;
      CHECK(slope - p.uv(i) == doctest::Approx(1.0 - p.y_plus(i) / re).epsilon(0.01));
    }
    const auto center = to_barycentric(decompose(p.stress(p.size() - 1)));
    CHECK(center.weights(2) > center.weights(0));
    CHECK(center.weights(2) > center.weights(1));
  }
}

TEST_CASE("baseline centerline velocity at Re_tau = 1000 against the reference") {
  const DnsProfile p = reference_profile(1000);
  const auto& s = baseline(1000);
  const double ref = p.u_plus(p.size() - 1);
  CHECK(std::abs(s.u_plus(s.size() - 1) - ref) < 0.05 * ref);
}

TEST_CASE("shear noise") {
  const DnsProfile p = reference_profile(1000);
  const DnsProfile a = with_shear_noise(p, 0.05, 7), b = with_shear_noise(p, 0.05, 7);
  const DnsProfile c = with_shear_noise(p, 0.05, 8);
  CHECK(a.uv == b.uv);
  CHECK(a.uv != c.uv);
  CHECK(a.uu == p.uu);
  for (Eigen::Index i = 0; i < p.size(); ++i) CHECK(std::abs(a.uv(i) - p.uv(i)) <= 0.05 * std::abs(p.uv(i)));
  CHECK(with_shear_noise(p, 0.0, 1).uv == p.uv);
  CHECK_THROWS_AS(with_shear_noise(p, -0.1, 1), ConfigError);
}

TEST_CASE("Lee-Moser round trip") {
  const DnsProfile p = reference_profile(550, 65);
  std::stringstream mean, fluct;
  write_lee_moser(p, mean, fluct);
  const DnsProfile q = parse_profile(mean, fluct, ColumnMap::lee_moser());
  CHECK(q.re_tau == doctest::Approx(550).epsilon(1e-12));
  CHECK(q.y_plus == p.y_plus);
  CHECK(q.uv == p.uv);
  CHECK(q.uu == p.uu);
  CHECK(q.u_plus == p.u_plus);
  CHECK(lee_moser_mean_path("d", 550).filename() == "LM_Channel_0550_mean_prof.dat");
  CHECK(lee_moser_fluct_path("d", 5200).filename() == "LM_Channel_5200_vel_fluc_prof.dat");
  CHECK(relative_l2(q.u_plus, p.u_plus) == 0.0);
}

TEST_CASE("identical stresses give zero targets") {
  const auto& s = baseline(180);
  const DnsProfile same = as_profile(s);
  for (TargetKind kind : {TargetKind::P, TargetKind::PCorr, TargetKind::PCorrAngles}) {
    const TrainingSet t = build_targets(s, same, kind, default_feature_names());
    CHECK(t.rows() > 0);
    CHECK(t.y.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("targets against the reference profile") {
  const auto& s = baseline(1000);
  const DnsProfile dns = interpolate(reference_profile(1000), s.y_plus);
  const TrainingSet p = build_targets(s, dns, TargetKind::P, default_feature_names());
  const TrainingSet c = build_targets(s, dns, TargetKind::PCorr, default_feature_names());
  const TrainingSet a = build_targets(s, dns, TargetKind::PCorrAngles, default_feature_names());
  CHECK(p.excluded == 1);  // the wall node
  CHECK(p.rows() == s.size() - 1);
  CHECK(p.rows() == c.rows());
  CHECK(a.excluded >= p.excluded);
  CHECK(a.rows() + static_cast<Eigen::Index>(a.excluded) == s.size());
  CHECK(p.y.minCoeff() >= 0.0);
  CHECK(p.y.maxCoeff() <= 1.0);
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    CHECK(p.y(r, 0) == doctest::Approx(c.y.row(r).norm()).epsilon(1e-14));
    CHECK(p.node[static_cast<std::size_t>(r)] == c.node[static_cast<std::size_t>(r)]);
    CHECK(p.re_tau[static_cast<std::size_t>(r)] == 1000.0);
    const auto rans = decompose(s.tau[static_cast<std::size_t>(p.node[static_cast<std::size_t>(r)])]);
    CHECK(std::abs(rans.lambda(1)) < 1e-10);
  }
  CHECK(p.x == feature_matrix(s).bottomRows(p.rows()));

  // centerline row against the independent path
  const Eigen::Index last = s.size() - 1;
  const Stress& t = s.tau[static_cast<std::size_t>(last)];
  const auto r = oracle::barycentric_position(t.uu, t.vv, t.ww, t.uv, t.uw, t.vw);
  const auto d = oracle::barycentric_position(dns.uu(last), dns.vv(last), dns.ww(last), dns.uv(last), 0, 0);
  const double expected = std::hypot(d[0] - r[0], d[1] - r[1]);
  CHECK(std::abs(p.y(p.rows() - 1, 0) - expected) < 1e-10);
}

TEST_CASE("build_targets rejects other grids") {
  const auto& s = baseline(180);
  const DnsProfile p = reference_profile(180);
  CHECK_THROWS_AS(build_targets(s, p, TargetKind::P, default_feature_names()), DataError);
  DnsProfile shifted = as_profile(s);
  shifted.y_plus(5) += 1e-3;
  CHECK_THROWS_AS(build_targets(s, shifted, TargetKind::P, default_feature_names()), DataError);
}

TEST_CASE("training sets stack and export") {
  const auto& s = baseline(180);
  const DnsProfile dns = interpolate(reference_profile(180), s.y_plus);
  TrainingSet all;
  all.append(build_targets(s, dns, TargetKind::P, default_feature_names()));
  all.append(build_targets(s, dns, TargetKind::P, default_feature_names()));
  CHECK(all.rows() == 2 * (s.size() - 1));
  CHECK(all.excluded == 2);
  CHECK_NOTHROW(all.validate());
  CHECK_THROWS_AS(all.append(build_targets(s, dns, TargetKind::PCorr, default_feature_names())), DataError);

  std::ostringstream out;
  write_training_csv(out, all);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  CHECK(header == "re_d,turb_intensity,strain_timescale,prod_dissipation,visc_ratio,y_plus,p,re_tau,node");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == all.rows());

  TrainingSet broken = all;
  broken.y(0, 0) = -0.1;
  CHECK_THROWS_AS(broken.validate(), DataError);
  broken = all;
  broken.node.pop_back();
  CHECK_THROWS_AS(broken.validate(), DataError);
}
