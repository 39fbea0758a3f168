#include "suq/dns_data.hpp"

#include "suq/csv.hpp"
#include "suq/errors.hpp"
#include "suq/features.hpp"
#include "suq/rotation.hpp"

// pchip.hpp in Boost 1.74 calls unqualified isnan.
#include <math.h>

#include <boost/math/interpolators/pchip.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace suq {

namespace {

struct Table {
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> lines;
};

bool is_comment_or_blank(const std::string& line) {
  const auto pos = line.find_first_not_of(" \t\r");
  return pos == std::string::npos || line[pos] == '%' || line[pos] == '#';
}

Table read_table(std::istream& in, int max_column) {
  Table t;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (is_comment_or_blank(line)) continue;
    std::istringstream tokens(line);
    std::vector<double> row;
    std::string tok;
    while (tokens >> tok) {
      double v = 0.0;
      const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || end != tok.data() + tok.size() || !std::isfinite(v)) {
        throw ParseError("non-numeric token '" + tok + "'", number);
      }
      row.push_back(v);
    }
    if (static_cast<int>(row.size()) <= max_column) {
      throw ParseError("expected at least " + std::to_string(max_column + 1) + " columns, found " +
                           std::to_string(row.size()),
                       number);
    }
    t.rows.push_back(std::move(row));
    t.lines.push_back(number);
  }
  if (t.rows.empty()) throw DataError("profile contains no data rows");
  return t;
}

/// Sorts by column `key` and rejects repeated coordinates.
void sort_rows(Table& t, int key) {
  std::vector<std::size_t> order(t.rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return t.rows[a][key] < t.rows[b][key]; });
  Table sorted;
  for (auto i : order) {
    sorted.rows.push_back(std::move(t.rows[i]));
    sorted.lines.push_back(t.lines[i]);
  }
  for (std::size_t i = 1; i < sorted.rows.size(); ++i) {
    if (!(sorted.rows[i][key] > sorted.rows[i - 1][key])) {
      throw ParseError("y+ is not strictly monotone (repeated value " + csv::number(sorted.rows[i][key]) + ")",
                       sorted.lines[i]);
    }
  }
  t = std::move(sorted);
}

Eigen::VectorXd column(const Table& t, int c) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(t.rows.size()));
  if (c < 0) return v;
  for (std::size_t i = 0; i < t.rows.size(); ++i) v(static_cast<Eigen::Index>(i)) = t.rows[i][c];
  return v;
}

int max_of(std::initializer_list<int> cols) { return std::max(cols); }

void require_mapped(int c, const char* name) {
  if (c < 0) throw ConfigError(std::string("column map: '") + name + "' must be mapped");
}

/// Monotone cubic through (x, f); x strictly increasing, t inside [x0, xn].
Eigen::VectorXd resample(const Eigen::VectorXd& x, const Eigen::VectorXd& f, const Eigen::VectorXd& t) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd out(t.size());
  if (n == 1) return Eigen::VectorXd::Constant(t.size(), f(0));
  if (n < 4) {
    for (Eigen::Index j = 0; j < t.size(); ++j) {
      const auto* it = std::upper_bound(x.data(), x.data() + n, t(j));
      const Eigen::Index hi = std::clamp<Eigen::Index>(it - x.data(), 1, n - 1);
      const double w = (t(j) - x(hi - 1)) / (x(hi) - x(hi - 1));
      out(j) = (1.0 - w) * f(hi - 1) + w * f(hi);
    }
    return out;
  }
  boost::math::interpolators::pchip<std::vector<double>> spline(std::vector<double>(x.begin(), x.end()),
                                                                std::vector<double>(f.begin(), f.end()));
  for (Eigen::Index j = 0; j < t.size(); ++j) out(j) = spline(t(j));
  return out;
}

void finish_profile(DnsProfile& p, bool has_y_delta) {
  const Eigen::Index n = p.size();
  if (has_y_delta && p.y_delta(n - 1) > 0.0) {
    p.re_tau = p.y_plus(n - 1) / p.y_delta(n - 1);
  } else {
    p.re_tau = p.y_plus(n - 1);
    p.y_delta = p.y_plus / p.re_tau;
  }
  p.validate();
}

}  // namespace

std::vector<Stress> DnsProfile::stresses() const {
  std::vector<Stress> out(static_cast<std::size_t>(size()));
  for (Eigen::Index i = 0; i < size(); ++i) out[static_cast<std::size_t>(i)] = stress(i);
  return out;
}

void DnsProfile::validate() const {
  const Eigen::Index n = size();
  if (n == 0) throw DataError("profile is empty");
  for (const auto* v : {&y_delta, &u_plus, &uu, &vv, &ww, &uv, &uw, &vw}) {
    if (v->size() != n) throw DataError("profile columns differ in length");
    if (!v->allFinite()) throw DataError("profile contains non-finite values");
  }
  if (!y_plus.allFinite()) throw DataError("profile contains non-finite values");
  if (!(re_tau > 0.0)) throw DataError("profile re_tau must be positive");
  if (y_plus(0) < 0.0) throw DataError("y+ must start at or above the wall (y+ >= 0)");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i > 0 && !(y_plus(i) > y_plus(i - 1))) {
      throw DataError("y+ is not strictly increasing at row " + std::to_string(i));
    }
    if (uu(i) < -1e-12 || vv(i) < -1e-12 || ww(i) < -1e-12) {
      throw DataError("negative normal stress at y+ = " + csv::number(y_plus(i)));
    }
    const bool off_plane = uw(i) != 0.0 || vw(i) != 0.0;
    const bool ok = off_plane ? is_realizable(stress(i), 1e-8) : uv(i) * uv(i) <= uu(i) * vv(i) + 1e-8;
    if (!ok) throw DataError("non-realizable stress at y+ = " + csv::number(y_plus(i)));
  }
}

DnsProfile parse_profile(std::istream& in, const ColumnMap& map) {
  require_mapped(map.y_plus, "y_plus");
  require_mapped(map.u_plus, "u_plus");
  for (auto [c, name] : {std::pair{map.uu, "uu"}, {map.vv, "vv"}, {map.ww, "ww"}, {map.uv, "uv"}}) {
    require_mapped(c, name);
  }
  Table t = read_table(in, max_of({map.y_delta, map.y_plus, map.u_plus, map.uu, map.vv, map.ww, map.uv,
                                   map.uw, map.vw}));
  sort_rows(t, map.y_plus);
  DnsProfile p;
  p.y_plus = column(t, map.y_plus);
  p.y_delta = column(t, map.y_delta);
  p.u_plus = column(t, map.u_plus);
  p.uu = column(t, map.uu);
  p.vv = column(t, map.vv);
  p.ww = column(t, map.ww);
  p.uv = column(t, map.uv);
  p.uw = column(t, map.uw);
  p.vw = column(t, map.vw);
  finish_profile(p, map.y_delta >= 0);
  return p;
}

DnsProfile parse_profile(std::istream& mean, std::istream& stresses, const ColumnMap& map) {
  require_mapped(map.y_plus, "y_plus");
  require_mapped(map.u_plus, "u_plus");
  require_mapped(map.stress_y_plus, "stress_y_plus");
  for (auto [c, name] : {std::pair{map.uu, "uu"}, {map.vv, "vv"}, {map.ww, "ww"}, {map.uv, "uv"}}) {
    require_mapped(c, name);
  }
  Table tm = read_table(mean, max_of({map.y_delta, map.y_plus, map.u_plus}));
  sort_rows(tm, map.y_plus);
  Table ts = read_table(stresses, max_of({map.stress_y_plus, map.uu, map.vv, map.ww, map.uv, map.uw, map.vw}));
  sort_rows(ts, map.stress_y_plus);

  DnsProfile p;
  p.y_plus = column(tm, map.y_plus);
  p.y_delta = column(tm, map.y_delta);
  p.u_plus = column(tm, map.u_plus);
  const Eigen::VectorXd ys = column(ts, map.stress_y_plus);
  const double tol = 1e-9 * std::max(1.0, ys.cwiseAbs().maxCoeff());
  if (p.y_plus(0) < ys(0) - tol || p.y_plus(p.size() - 1) > ys(ys.size() - 1) + tol) {
    throw DataError("stress table covers y+ in [" + csv::number(ys(0)) + ", " + csv::number(ys(ys.size() - 1)) +
                    "], mean table needs [" + csv::number(p.y_plus(0)) + ", " +
                    csv::number(p.y_plus(p.size() - 1)) + "]");
  }
  const Eigen::VectorXd targets = p.y_plus.cwiseMax(ys(0)).cwiseMin(ys(ys.size() - 1));
  auto take = [&](int c) -> Eigen::VectorXd {
    if (c < 0) return Eigen::VectorXd::Zero(p.size());
    return resample(ys, column(ts, c), targets);
  };
  p.uu = take(map.uu);
  p.vv = take(map.vv);
  p.ww = take(map.ww);
  p.uv = take(map.uv);
  p.uw = take(map.uw);
  p.vw = take(map.vw);
  finish_profile(p, map.y_delta >= 0);
  return p;
}

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return in;
}

}  // namespace

DnsProfile load_profile(const std::filesystem::path& file, const ColumnMap& map) {
  auto in = open_input(file);
  try {
    return parse_profile(in, map);
  } catch (const ParseError& e) {
    throw ParseError(file.string() + ": " + e.what(), e.line());
  }
}

DnsProfile load_profile(const std::filesystem::path& mean, const std::filesystem::path& stresses,
                        const ColumnMap& map) {
  auto in_mean = open_input(mean);
  auto in_stress = open_input(stresses);
  return parse_profile(in_mean, in_stress, map);
}

DnsProfile interpolate(const DnsProfile& profile, const Eigen::VectorXd& y_plus_targets) {
  const Eigen::Index n = profile.size();
  if (n == 0) throw DataError("cannot interpolate an empty profile");
  const double lo = profile.y_plus(0), hi = profile.y_plus(n - 1);
  const double tol = 1e-9 * std::max(1.0, hi);
  for (Eigen::Index j = 0; j < y_plus_targets.size(); ++j) {
    const double t = y_plus_targets(j);
    if (!(t >= lo - tol && t <= hi + tol)) {
      throw DataError("interpolation target y+ = " + csv::number(t) + " lies outside the data range [" +
                      csv::number(lo) + ", " + csv::number(hi) + "]");
    }
  }
  const Eigen::VectorXd t = y_plus_targets.cwiseMax(lo).cwiseMin(hi);
  DnsProfile out;
  out.re_tau = profile.re_tau;
  out.y_plus = y_plus_targets;
  out.y_delta = y_plus_targets / profile.re_tau;
  out.u_plus = resample(profile.y_plus, profile.u_plus, t);
  out.uu = resample(profile.y_plus, profile.uu, t);
  out.vv = resample(profile.y_plus, profile.vv, t);
  out.ww = resample(profile.y_plus, profile.ww, t);
  out.uv = resample(profile.y_plus, profile.uv, t);
  out.uw = resample(profile.y_plus, profile.uw, t);
  out.vw = resample(profile.y_plus, profile.vw, t);
  return out;
}

DnsProfile with_shear_noise(const DnsProfile& profile, double amplitude, std::uint64_t seed) {
  if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) throw ConfigError("noise amplitude must be >= 0");
  DnsProfile out = profile;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.uv(i) *= 1.0 + amplitude * unit(rng);
  return out;
}

double relative_l2(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw DataError("relative_l2: size mismatch");
  const double nb = b.norm();
  if (!(nb > 0.0)) throw DataError("relative_l2: reference has zero norm");
  return (a - b).norm() / nb;
}

// ---- analytic reference ----

namespace {

constexpr double kCessKappa = 0.426;
constexpr double kCessA = 25.4;

double cess_nu_t(double y_plus, double re_tau) {
  const double eta = y_plus / re_tau;
  const double a = 2.0 * eta - eta * eta;
  const double b = 3.0 - 4.0 * eta + 2.0 * eta * eta;
  const double damp = 1.0 - std::exp(-y_plus / kCessA);
  const double c = kCessKappa * kCessKappa * re_tau * re_tau / 9.0 * a * a * b * b * damp * damp;
  return 0.5 * std::sqrt(1.0 + c) - 0.5;
}

double cess_slope(double y_plus, double re_tau) {
  return (1.0 - y_plus / re_tau) / (1.0 + cess_nu_t(y_plus, re_tau));
}

}  // namespace

DnsProfile reference_profile(double re_tau, Eigen::Index n_points) {
  if (!(re_tau > 0.0)) throw ConfigError("re_tau must be positive");
  if (n_points < 4) throw ConfigError("reference profile needs at least 4 points");
  DnsProfile p;
  p.re_tau = re_tau;
  p.y_delta.resize(n_points);
  for (Eigen::Index j = 0; j < n_points; ++j) {
    p.y_delta(j) = 1.0 - std::cos(0.5 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n_points - 1));
  }
  p.y_delta(n_points - 1) = 1.0;
  p.y_plus = p.y_delta * re_tau;
  p.u_plus.resize(n_points);
  p.u_plus(0) = 0.0;
  constexpr int sub = 64;  // Simpson panels per interval
  for (Eigen::Index j = 1; j < n_points; ++j) {
    const double a = p.y_plus(j - 1), b = p.y_plus(j);
    const double h = (b - a) / sub;
    double sum = cess_slope(a, re_tau) + cess_slope(b, re_tau);
    for (int m = 1; m < sub; ++m) sum += (m % 2 ? 4.0 : 2.0) * cess_slope(a + m * h, re_tau);
    p.u_plus(j) = p.u_plus(j - 1) + sum * h / 3.0;
  }
  p.uu.resize(n_points);
  p.vv.resize(n_points);
  p.ww.resize(n_points);
  p.uv.resize(n_points);
  p.uw = Eigen::VectorXd::Zero(n_points);
  p.vw = Eigen::VectorXd::Zero(n_points);
  for (Eigen::Index j = 0; j < n_points; ++j) {
    const double y = p.y_plus(j);
    const double outer = 1.0 - p.y_delta(j);
    const double nut = cess_nu_t(y, re_tau);
    p.uv(j) = -outer * nut / (1.0 + nut);
    const double s = y / 15.0;
    p.uu(j) = 7.6 * s * s * std::exp(2.0 * (1.0 - s)) +
              (1.0 - std::exp(-(y / 30.0) * (y / 30.0))) * (0.8 + 3.0 * std::pow(outer, 4));
    const double q4 = std::pow(y / 18.0, 4);
    p.vv(j) = (0.6 + 0.8 * outer * outer) * q4 / (1.0 + q4);
    const double r2 = (y / 12.0) * (y / 12.0);
    p.ww(j) = (0.6 + 1.2 * outer * outer) * r2 / (1.0 + r2);
  }
  p.validate();
  return p;
}

void write_lee_moser(const DnsProfile& profile, std::ostream& mean, std::ostream& fluct) {
  const Eigen::Index n = profile.size();
  const Eigen::VectorXd k = profile.k_plus();
  char re[32];
  std::snprintf(re, sizeof re, "%.17g", profile.re_tau);
  mean << "% Channel mean profile, Re_tau = " << re << "\n"
       << "% y/delta y^+ U dU/dy W P\n";
  fluct << "% Channel velocity fluctuation profile, Re_tau = " << re << "\n"
        << "% y/delta y^+ u'u' v'v' w'w' u'v' u'w' v'w' k\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    const double slope =
        i + 1 < n ? (profile.u_plus(i + 1) - profile.u_plus(i)) / (profile.y_plus(i + 1) - profile.y_plus(i)) : 0.0;
    mean << csv::number(profile.y_delta(i)) << ' ' << csv::number(profile.y_plus(i)) << ' '
         << csv::number(profile.u_plus(i)) << ' ' << csv::number(slope) << " 0 0\n";
    fluct << csv::number(profile.y_delta(i)) << ' ' << csv::number(profile.y_plus(i)) << ' '
          << csv::number(profile.uu(i)) << ' ' << csv::number(profile.vv(i)) << ' ' << csv::number(profile.ww(i))
          << ' ' << csv::number(profile.uv(i)) << ' ' << csv::number(profile.uw(i)) << ' '
          << csv::number(profile.vw(i)) << ' ' << csv::number(k(i)) << '\n';
  }
}

namespace {

std::string lee_moser_stem(double re_tau) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "LM_Channel_%04d", static_cast<int>(std::lround(re_tau)));
  return buf;
}

}  // namespace

std::filesystem::path lee_moser_mean_path(const std::filesystem::path& dir, double re_tau) {
  return dir / (lee_moser_stem(re_tau) + "_mean_prof.dat");
}

std::filesystem::path lee_moser_fluct_path(const std::filesystem::path& dir, double re_tau) {
  return dir / (lee_moser_stem(re_tau) + "_vel_fluc_prof.dat");
}

void write_lee_moser(const DnsProfile& profile, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream mean(lee_moser_mean_path(dir, profile.re_tau));
  std::ofstream fluct(lee_moser_fluct_path(dir, profile.re_tau));
  if (!mean || !fluct) throw DataError("cannot write DNS files into '" + dir.string() + "'");
  write_lee_moser(profile, mean, fluct);
}

// ---- training targets ----

void TrainingSet::validate() const {
  if (x.rows() != y.rows()) throw DataError("training set: feature and target row counts differ");
  if (static_cast<Eigen::Index>(re_tau.size()) != x.rows() || static_cast<Eigen::Index>(node.size()) != x.rows()) {
    throw DataError("training set: provenance does not cover every row");
  }
  if (x.cols() != static_cast<Eigen::Index>(feature_names.size()) ||
      y.cols() != static_cast<Eigen::Index>(target_names.size())) {
    throw DataError("training set: column names do not match the matrices");
  }
  if (!x.allFinite() || !y.allFinite()) throw DataError("training set contains non-finite values");
  if (target_names.size() == 1 && target_names[0] == "p" && (y.array() < 0.0).any()) {
    throw DataError("training set: negative p target");
  }
}

void TrainingSet::append(const TrainingSet& other) {
  if (rows() == 0 && feature_names.empty()) {
    const std::size_t skipped = excluded;
    *this = other;
    excluded += skipped;
    return;
  }
  if (other.feature_names != feature_names || other.target_names != target_names) {
    throw DataError("training sets with different columns cannot be stacked");
  }
  Eigen::MatrixXd xs(x.rows() + other.x.rows(), x.cols());
  xs << x, other.x;
  Eigen::MatrixXd ys(y.rows() + other.y.rows(), y.cols());
  ys << y, other.y;
  x = std::move(xs);
  y = std::move(ys);
  re_tau.insert(re_tau.end(), other.re_tau.begin(), other.re_tau.end());
  node.insert(node.end(), other.node.begin(), other.node.end());
  excluded += other.excluded;
}

TrainingSet build_targets(const ChannelState& rans, const DnsProfile& dns, TargetKind kind,
                          const std::vector<std::string>& feature_names, double frame_gap) {
  const Eigen::Index n = rans.size();
  if (dns.size() != n || static_cast<Eigen::Index>(rans.tau.size()) != n) {
    throw DataError("grid mismatch: RANS has " + std::to_string(n) + " nodes, DNS profile " +
                    std::to_string(dns.size()));
  }
  const double tol = 1e-9 * std::max(1.0, rans.re_tau);
  if ((rans.y_plus - dns.y_plus).cwiseAbs().maxCoeff() > tol) {
    throw DataError("grid mismatch: DNS profile is not on the RANS nodes");
  }
  const Eigen::MatrixXd features = feature_matrix(rans, feature_names);

  TrainingSet set;
  set.feature_names = feature_names;
  set.target_names = target_names(kind);
  std::vector<Eigen::Index> keep;
  std::vector<Eigen::VectorXd> targets;
  auto separated = [frame_gap](const Eigen::Vector3d& l) {
    return l(0) - l(1) >= frame_gap && l(1) - l(2) >= frame_gap;
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto er = decompose(rans.tau[static_cast<std::size_t>(i)]);
    const auto ed = decompose(dns.stress(i));
    if (er.degenerate || ed.degenerate) {
      ++set.excluded;
      continue;
    }
    if (kind == TargetKind::PCorrAngles && !(separated(er.lambda) && separated(ed.lambda))) {
      ++set.excluded;
      continue;
    }
    const Eigen::Vector2d corr = to_barycentric(ed).position - to_barycentric(er).position;
    Eigen::VectorXd t;
    switch (kind) {
      case TargetKind::P:
        t = Eigen::VectorXd::Constant(1, corr.norm());
        break;
      case TargetKind::PCorr:
        t = corr;
        break;
      case TargetKind::PCorrAngles: {
        const auto a = extract_angles(er.frame, ed.frame);
        t.resize(5);
        t << corr, a.alpha, a.beta, a.gamma;
        break;
      }
    }
    keep.push_back(i);
    targets.push_back(std::move(t));
  }
  const auto rows = static_cast<Eigen::Index>(keep.size());
  set.x.resize(rows, features.cols());
  set.y.resize(rows, static_cast<Eigen::Index>(set.target_names.size()));
  for (Eigen::Index r = 0; r < rows; ++r) {
    set.x.row(r) = features.row(keep[static_cast<std::size_t>(r)]);
    set.y.row(r) = targets[static_cast<std::size_t>(r)].transpose();
    set.re_tau.push_back(rans.re_tau);
    set.node.push_back(keep[static_cast<std::size_t>(r)]);
  }
  set.validate();
  return set;
}

void write_training_csv(std::ostream& out, const TrainingSet& set) {
  std::vector<std::string> names = set.feature_names;
  names.insert(names.end(), set.target_names.begin(), set.target_names.end());
  names.emplace_back("re_tau");
  names.emplace_back("node");
  csv::header(out, names);
  for (Eigen::Index r = 0; r < set.rows(); ++r) {
    std::vector<double> row(set.x.row(r).begin(), set.x.row(r).end());
    row.insert(row.end(), set.y.row(r).begin(), set.y.row(r).end());
    row.push_back(set.re_tau[static_cast<std::size_t>(r)]);
    row.push_back(static_cast<double>(set.node[static_cast<std::size_t>(r)]));
    csv::row(out, row);
  }
}

}  // namespace suq
