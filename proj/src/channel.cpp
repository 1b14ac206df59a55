#include "risloc/channel.hpp"

#include <algorithm>
#include <cmath>

#include "risloc/fft.hpp"
#include "risloc/rng.hpp"

namespace risloc {
namespace {

// Rows of a_n(theta) .* a_n(phi) stacked as an N x M matrix (a single row when narrowband).
CMatrix joint_steering_rows(const AnglePair& phi, const AnglePair& theta, const SystemConfig& cfg,
                            bool wideband) {
  const int rows = wideband ? cfg.N() : 1;
  CMatrix W(rows, cfg.M());
  for (int n = 0; n < rows; ++n) {
    const double lambda = wideband ? cfg.lambda_n(n) : cfg.lambda();
    const Vec3 k = wavenumber(theta, lambda) + wavenumber(phi, lambda);
    const RVector phase = cfg.Q().transpose() * k;
    for (int m = 0; m < cfg.M(); ++m) W(n, m) = std::polar(1.0, phase(m));
  }
  return W;
}

CMatrix expand_pairs(const CMatrix& half) {
  CMatrix full(half.rows(), 2 * half.cols());
  for (Eigen::Index k = 0; k < half.cols(); ++k) {
    full.col(2 * k) = half.col(k);
    full.col(2 * k + 1) = -half.col(k);
  }
  return full;
}

void check_profiles(const RisProfileSet& profiles, const SystemConfig& cfg) {
  if (profiles.M() != cfg.M() || profiles.L() != cfg.L()) {
    throw ConfigError("RIS profile set size does not match the system configuration");
  }
}

}  // namespace

CMatrix RisProfileSet::gammas() const { return expand_pairs(beams); }

CVector delay_vector(double tau, const SystemConfig& cfg) {
  CVector d(cfg.N());
  for (int n = 0; n < cfg.N(); ++n) d(n) = std::polar(1.0, -2.0 * kPi * n * cfg.delta_f() * tau);
  return d;
}

CMatrix delay_matrix(double tau, const SystemConfig& cfg) {
  return delay_vector(tau, cfg).replicate(1, cfg.L());
}

Vec3 wavenumber(const AnglePair& psi, double lambda) { return (2.0 * kPi / lambda) * unit_direction(psi); }

CVector steering_vector(const AnglePair& psi, std::optional<int> subcarrier, const SystemConfig& cfg) {
  double lambda = cfg.lambda();
  if (subcarrier) {
    if (*subcarrier < 0 || *subcarrier >= cfg.N()) throw ConfigError("subcarrier index out of range");
    lambda = cfg.lambda_n(*subcarrier);
  }
  const RVector phase = cfg.Q().transpose() * wavenumber(psi, lambda);
  CVector a(cfg.M());
  for (int m = 0; m < cfg.M(); ++m) a(m) = std::polar(1.0, phase(m));
  return a;
}

CMatrix ris_response_matrix(const AnglePair& phi, const AnglePair& theta, const RisProfileSet& profiles,
                            const SystemConfig& cfg, bool wideband) {
  check_profiles(profiles, cfg);
  const CMatrix half = joint_steering_rows(phi, theta, cfg, wideband) * profiles.beams;
  const CMatrix full = expand_pairs(half);
  return wideband ? full : CMatrix(full.replicate(cfg.N(), 1));
}

DopplerMatrices doppler_matrices(double v, const SystemConfig& cfg, bool wideband) {
  DopplerMatrices out{CMatrix(cfg.N(), cfg.L()), CVector(cfg.N())};
  for (int n = 0; n < cfg.N(); ++n) {
    const double lambda = wideband ? cfg.lambda_n(n) : cfg.lambda();
    for (int l = 0; l < cfg.L(); ++l) out.C(n, l) = std::polar(1.0, 2.0 * kPi * l * cfg.T_sym() * v / lambda);
    out.E(n) = std::polar(1.0, 2.0 * kPi * (cfg.T_o() / cfg.N()) * n * v / cfg.lambda());
  }
  return out;
}

PathSignals synthesize_paths(const ChannelParams& params, const AnglePair& theta,
                             const RisProfileSet& profiles, const SystemConfig& cfg, ChannelModel model) {
  check_profiles(profiles, cfg);
  const bool wideband = model == ChannelModel::DynamicWb;
  const CMatrix A = ris_response_matrix(params.phi, theta, profiles, cfg, wideband);
  CMatrix X_b = delay_matrix(params.tau_b, cfg);
  CMatrix X_r = delay_matrix(params.tau_r, cfg).cwiseProduct(A);
  if (model == ChannelModel::StaticNb) return {params.g_b * X_b, params.g_r * X_r};

  const DopplerMatrices dop_b = doppler_matrices(params.v_b, cfg, wideband);
  const DopplerMatrices dop_r = doppler_matrices(params.v_r, cfg, wideband);
  X_b = fft::apply_time_diagonal(dop_b.E, X_b.cwiseProduct(dop_b.C));
  X_r = fft::apply_time_diagonal(dop_r.E, X_r.cwiseProduct(dop_r.C));
  return {params.g_b * X_b, params.g_r * X_r};
}

RxSignal synthesize(const ChannelParams& params, const AnglePair& theta, const RisProfileSet& profiles,
                    const SystemConfig& cfg, ChannelModel model) {
  PathSignals paths = synthesize_paths(params, theta, profiles, cfg, model);
  return {paths.direct + paths.reflected};
}

RxSignal add_noise(const RxSignal& clean, double variance, std::uint64_t seed) {
  RxSignal out = clean;
  if (variance == 0.0) return out;
  Rng rng(seed);
  // Column-major traversal fixes the stream order.
  for (Eigen::Index l = 0; l < out.Y.cols(); ++l)
    for (Eigen::Index n = 0; n < out.Y.rows(); ++n) out.Y(n, l) += rng.complex_normal(variance);
  return out;
}

double normal_cosine(const AnglePair& psi) { return unit_direction(psi)(1); }

std::pair<cplx, cplx> path_gains(const UeState& state, const Anchors& anchors, const SystemConfig& cfg,
                                 std::uint64_t seed) {
  const double d_bu = (anchors.p_b - state.p).norm();
  const double d_br = (anchors.p_b - anchors.p_r).norm();
  const double d_ru = (anchors.p_r - state.p).norm();
  if (!(d_bu > 0.0) || !(d_br > 0.0) || !(d_ru > 0.0)) throw GeometryError("path_gains: coincident points");
  const double cos_theta = normal_cosine(anchors.theta);
  const double cos_phi = normal_cosine(compute_aod(state.p, anchors));
  if (cos_theta < 0.0) throw GeometryError("BS lies behind the RIS plane");
  if (cos_phi < 0.0) throw GeometryError("UE lies behind the RIS plane");
  constexpr double q = 0.285;
  auto cos_pow = [](double c) { return std::exp(q * std::log(std::min(c, 1.0))); };

  const double lambda = cfg.lambda();
  const double sqrt_es = std::sqrt(cfg.E_s());
  const double mag_b = lambda * sqrt_es / (4.0 * kPi * d_bu);
  const double mag_r = lambda * lambda * cos_pow(cos_theta) * cos_pow(cos_phi) * sqrt_es /
                       (16.0 * kPi * d_br * d_ru);
  Rng rng(seed);
  const double phase_b = 2.0 * kPi * rng.uniform();
  const double phase_r = 2.0 * kPi * rng.uniform();
  return {std::polar(mag_b, phase_b), std::polar(mag_r, phase_r)};
}

NarrowbandValidity nb_validity(const SystemConfig& cfg, const ChannelParams& params, const Anchors& anchors) {
  const double v_max = std::max(std::abs(params.v_r), std::abs(params.v_b));
  const double alpha_phi = std::acos(std::clamp(normal_cosine(params.phi), -1.0, 1.0));
  const double alpha_theta = std::acos(std::clamp(normal_cosine(anchors.theta), -1.0, 1.0));
  const double alpha = std::max(alpha_phi, alpha_theta);
  return {v_max * cfg.L() * cfg.N() / cfg.c(),
          std::max(cfg.M1(), cfg.M2()) * cfg.d() * std::sin(alpha) * cfg.bandwidth() / cfg.c()};
}

}  // namespace risloc
