#include "risloc/ris.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "risloc/fft.hpp"
#include "risloc/rng.hpp"

namespace risloc {

RisProfileSet random_profiles(const SystemConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  RisProfileSet set;
  set.kind = ProfileKind::Random;
  set.beams.resize(cfg.M(), cfg.L() / 2);
  for (Eigen::Index k = 0; k < set.beams.cols(); ++k)
    for (Eigen::Index m = 0; m < set.beams.rows(); ++m) set.beams(m, k) = std::polar(1.0, 2.0 * kPi * rng.uniform());
  return set;
}

CVector focus_beam(const Vec3& x, const Anchors& anchors, const SystemConfig& cfg) {
  const Vec3 rel = anchors.R * (x - anchors.p_r);
  const double dist = rel.norm();
  if (!(dist > 0.0)) throw GeometryError("beam focus point coincides with the RIS center");
  const Vec3 k = wavenumber(anchors.theta, cfg.lambda()) + (2.0 * kPi / cfg.lambda()) * rel / dist;
  const RVector phase = cfg.Q().transpose() * k;
  CVector b(cfg.M());
  for (int m = 0; m < cfg.M(); ++m) b(m) = std::polar(1.0, -phase(m));
  return b;
}

RisProfileSet directional_profiles(const SystemConfig& cfg, const Anchors& anchors, const Vec3& xi,
                                   double sigma, std::uint64_t seed) {
  if (!(sigma > 0.0)) throw ConfigError("directional profiles need sigma > 0");
  const Vec3 local = anchors.R * (xi - anchors.p_r);
  if (std::abs(local(1)) <= 0.0) throw GeometryError("prior position lies in the RIS plane");
  Rng rng(seed);
  RisProfileSet set;
  set.kind = ProfileKind::Directional;
  set.prior = DirectionalPrior{xi, sigma};
  set.beams.resize(cfg.M(), cfg.L() / 2);
  for (Eigen::Index k = 0; k < set.beams.cols(); ++k) set.beams.col(k) = focus_beam(rng.in_ball(xi, sigma), anchors, cfg);
  return set;
}

CMatrix match(const CMatrix& Y, const std::pair<cplx, cplx>& w) {
  if (Y.cols() % 2 != 0) throw ConfigError("match: number of symbols must be even");
  CMatrix Z(Y.rows(), Y.cols() / 2);
  for (Eigen::Index k = 0; k < Z.cols(); ++k) Z.col(k) = w.first * Y.col(2 * k) + w.second * Y.col(2 * k + 1);
  return Z;
}

cplx leakage_epsilon(double v, const SystemConfig& cfg) {
  return 1.0 - std::polar(1.0, 2.0 * kPi * cfg.T_sym() * v / cfg.lambda());
}

AodGrid prior_aod_grid(const Anchors& anchors, const Vec3& xi, double sigma, int n_phi, std::uint64_t seed) {
  if (n_phi < 2) throw ConfigError("candidate grid needs at least 2 points");
  if (!(sigma > 0.0)) throw ConfigError("prior grid needs sigma > 0");
  Rng rng(seed);
  AodGrid grid;
  grid.kind = GridKind::Prior;
  grid.angles.reserve(n_phi);
  for (int s = 0; s < n_phi; ++s) grid.angles.push_back(compute_aod(rng.in_ball(xi, sigma), anchors));
  const double spacing = sigma * std::cbrt(4.0 * kPi / (3.0 * n_phi));
  grid.cell = spacing / (xi - anchors.p_r).norm();
  return grid;
}

double wrap_direction_cosine(double x, double period) {
  return x - period * std::floor((x + period / 2.0) / period);
}

AodGrid full_aod_grid(const SystemConfig& cfg, int n_phi1, int n_phi2) {
  if (n_phi1 < 2 || n_phi2 < 2) throw ConfigError("candidate grid sizes must be >= 2");
  const double period = cfg.lambda() / cfg.d();
  AodGrid grid;
  grid.kind = GridKind::Full;
  grid.n_phi1 = n_phi1;
  grid.n_phi2 = n_phi2;
  for (int n2 = 0; n2 < n_phi2; ++n2) {
    for (int n1 = 0; n1 < n_phi1; ++n1) {
      const double k1 = wrap_direction_cosine(period * n1 / n_phi1, period);
      const double k3 = wrap_direction_cosine(period * n2 / n_phi2, period);
      const double rest = 1.0 - k1 * k1 - k3 * k3;
      if (rest < 0.0) continue;
      const double k2 = std::sqrt(rest);
      const double az = (k1 == 0.0 && k2 == 0.0) ? 0.0 : std::atan2(k2, k1);
      grid.angles.push_back({az, std::acos(std::clamp(k3, -1.0, 1.0))});
      grid.bins.emplace_back(n1, n2);
    }
  }
  if (grid.angles.empty()) throw ConfigError("candidate grid is empty after removing invisible bins");
  return grid;
}

CMatrix grid_correlations(const RisProfileSet& profiles, const AodGrid& grid, const AnglePair& theta,
                          const SystemConfig& cfg, bool use_fft2) {
  if (grid.angles.empty()) throw ConfigError("grid_correlations: empty grid");
  if (profiles.M() != cfg.M()) throw ConfigError("grid_correlations: profile size mismatch");
  const CVector a_theta = steering_vector(theta, std::nullopt, cfg);
  const Eigen::Index n_grid = static_cast<Eigen::Index>(grid.size());
  const Eigen::Index half = profiles.beams.cols();

  if (!use_fft2 || grid.kind != GridKind::Full) {
    CMatrix steer(cfg.M(), n_grid);
    for (Eigen::Index s = 0; s < n_grid; ++s) steer.col(s) = steering_vector(grid.angles[s], std::nullopt, cfg);
    return steer.transpose() * (a_theta.asDiagonal() * profiles.beams);
  }

  if (grid.bins.size() != grid.angles.size()) throw ConfigError("grid_correlations: FULL grid without bin map");
  const int m1 = cfg.M1();
  const int m2 = cfg.M2();
  const int r1 = grid.n_phi1;
  const int r2 = grid.n_phi2;
  const double d = cfg.d();

  // Centering phase exp(-j (u1 (M1-1) d/2 + u3 (M2-1) d/2)) per retained bin.
  CVector centering(n_grid);
  for (Eigen::Index s = 0; s < n_grid; ++s) {
    const Vec3 u = wavenumber(grid.angles[s], cfg.lambda());
    centering(s) = std::polar(1.0, -(u(0) * (m1 - 1) * d / 2.0 + u(2) * (m2 - 1) * d / 2.0));
  }

  CMatrix out(n_grid, half);
  CVector buf(static_cast<Eigen::Index>(r1) * r2);
  for (Eigen::Index k = 0; k < half; ++k) {
    buf.setZero();
    for (int col = 0; col < m2; ++col)
      for (int row = 0; row < m1; ++row) {
        const int m = row + m1 * col;
        buf((row % r1) + static_cast<Eigen::Index>(r1) * (col % r2)) += a_theta(m) * profiles.beams(m, k);
      }
    fft::backward_2d({buf.data(), static_cast<std::size_t>(buf.size())}, r1, r2);
    for (Eigen::Index s = 0; s < n_grid; ++s) {
      const auto [n1, n2] = grid.bins[s];
      out(s, k) = buf(n1 + static_cast<Eigen::Index>(r1) * n2) * centering(s);
    }
  }
  return out;
}

std::string profiles_to_json(const RisProfileSet& profiles, int m1, int m2) {
  if (m1 * m2 != profiles.M()) throw ConfigError("profiles_to_json: M1*M2 != M");
  nlohmann::json j;
  j["format"] = "risloc.profiles";
  j["version"] = 1;
  j["M1"] = m1;
  j["M2"] = m2;
  j["L"] = profiles.L();
  j["kind"] = profiles.kind == ProfileKind::Random ? "random" : "directional";
  if (profiles.prior) {
    j["prior"] = {{"xi", {profiles.prior->xi(0), profiles.prior->xi(1), profiles.prior->xi(2)}},
                  {"sigma", profiles.prior->sigma}};
  }
  nlohmann::json beams = nlohmann::json::array();
  for (Eigen::Index k = 0; k < profiles.beams.cols(); ++k) {
    std::vector<double> flat;
    flat.reserve(2 * profiles.beams.rows());
    for (Eigen::Index m = 0; m < profiles.beams.rows(); ++m) {
      flat.push_back(profiles.beams(m, k).real());
      flat.push_back(profiles.beams(m, k).imag());
    }
    beams.push_back(std::move(flat));
  }
  j["beams"] = std::move(beams);
  return j.dump();
}

RisProfileSet profiles_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("profile container is not valid JSON: ") + e.what());
  }
  if (j.value("format", "") != "risloc.profiles") throw ConfigError("not a risloc profile container");
  const int m = j.at("M1").get<int>() * j.at("M2").get<int>();
  const int l = j.at("L").get<int>();
  const auto& beams = j.at("beams");
  if (l % 2 != 0 || static_cast<int>(beams.size()) != l / 2) throw ConfigError("profile container: bad L");
  RisProfileSet set;
  set.kind = j.at("kind").get<std::string>() == "random" ? ProfileKind::Random : ProfileKind::Directional;
  if (j.contains("prior")) {
    const auto& xi = j["prior"].at("xi");
    set.prior = DirectionalPrior{Vec3(xi[0].get<double>(), xi[1].get<double>(), xi[2].get<double>()),
                                 j["prior"].at("sigma").get<double>()};
  }
  set.beams.resize(m, l / 2);
  for (int k = 0; k < l / 2; ++k) {
    const auto flat = beams[k].get<std::vector<double>>();
    if (static_cast<int>(flat.size()) != 2 * m) throw ConfigError("profile container: bad beam length");
    for (int i = 0; i < m; ++i) set.beams(i, k) = {flat[2 * i], flat[2 * i + 1]};
  }
  return set;
}

}  // namespace risloc
