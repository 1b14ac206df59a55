#include "risloc/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace risloc {
namespace {

double checked_distance(const Vec3& a, const Vec3& b, const char* what) {
  const double dist = (a - b).norm();
  if (!(dist > 0.0)) throw GeometryError(std::string("coincident points: ") + what);
  return dist;
}

}  // namespace

Anchors Anchors::make(const Vec3& p_b, const Vec3& p_r, const Mat3& R) {
  if ((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-12 ||
      std::abs(R.determinant() - 1.0) > 1e-12) {
    throw ConfigError("RIS rotation must be orthogonal with determinant +1");
  }
  Anchors a{p_b, p_r, R, {}};
  a.theta = compute_aod(p_b, a);
  return a;
}

Vec10 ChannelParams::to_vector() const {
  Vec10 x;
  x << tau_b, tau_r, phi.az, phi.el, v_b, v_r, g_b.real(), g_b.imag(), g_r.real(), g_r.imag();
  return x;
}

ChannelParams ChannelParams::from_vector(const Vec10& x) {
  ChannelParams p;
  p.tau_b = x(0);
  p.tau_r = x(1);
  p.phi = {x(2), x(3)};
  p.v_b = x(4);
  p.v_r = x(5);
  p.g_b = {x(6), x(7)};
  p.g_r = {x(8), x(9)};
  return p;
}

Vec10 positional_vector(const UeState& state, double v_b, double v_r, cplx g_b, cplx g_r) {
  Vec10 x;
  x << state.p, state.clock_bias, v_b, v_r, g_b.real(), g_b.imag(), g_r.real(), g_r.imag();
  return x;
}

AnglePair compute_aod(const Vec3& p, const Anchors& anchors) {
  const double dist = checked_distance(p, anchors.p_r, "point and RIS center");
  const Vec3 s = anchors.R * (p - anchors.p_r);
  const double az = (s(0) == 0.0 && s(1) == 0.0) ? 0.0 : std::atan2(s(1), s(0));
  const double el = std::acos(std::clamp(s(2) / dist, -1.0, 1.0));
  return {az, el};
}

Vec3 unit_direction(const AnglePair& psi) {
  return {std::sin(psi.el) * std::cos(psi.az), std::sin(psi.el) * std::sin(psi.az), std::cos(psi.el)};
}

double radial_velocity(const Vec3& v, const Vec3& p, const Vec3& target) {
  const double dist = checked_distance(target, p, "UE and radial-velocity target");
  return v.dot(target - p) / dist;
}

ChannelParams params_from_state(const UeState& state, const Anchors& anchors,
                                const std::pair<cplx, cplx>& gains, double c) {
  ChannelParams out = params_from_positional(
      positional_vector(state, 0.0, 0.0, gains.first, gains.second), anchors, c);
  out.v_b = radial_velocity(state.v, state.p, anchors.p_b);
  out.v_r = radial_velocity(state.v, state.p, anchors.p_r);
  return out;
}

ChannelParams params_from_positional(const Vec10& zeta_po, const Anchors& anchors, double c) {
  const Vec3 p = zeta_po.head<3>();
  const double bias = zeta_po(3);
  const double d_bu = checked_distance(anchors.p_b, p, "UE and BS");
  const double d_ru = checked_distance(anchors.p_r, p, "UE and RIS");
  const double d_br = (anchors.p_b - anchors.p_r).norm();
  ChannelParams out;
  out.tau_b = d_bu / c + bias;
  out.tau_r = (d_br + d_ru) / c + bias;
  out.phi = compute_aod(p, anchors);
  out.v_b = zeta_po(4);
  out.v_r = zeta_po(5);
  out.g_b = {zeta_po(6), zeta_po(7)};
  out.g_r = {zeta_po(8), zeta_po(9)};
  return out;
}

Mat10 geometric_jacobian(const UeState& state, const Anchors& anchors, double c) {
  const Vec3& p = state.p;
  const double d_bu = checked_distance(p, anchors.p_b, "UE and BS");
  const double d_ru = checked_distance(p, anchors.p_r, "UE and RIS");
  const Vec3 s = anchors.R * (p - anchors.p_r);
  const double rho2 = s(0) * s(0) + s(1) * s(1);
  if (!(rho2 > 0.0)) throw GeometryError("UE on the RIS pole axis: azimuth derivative undefined");
  const double s_norm2 = s.squaredNorm();

  Mat10 J = Mat10::Zero();
  J.block<1, 3>(0, 0) = (p - anchors.p_b).transpose() / (c * d_bu);
  J.block<1, 3>(1, 0) = (p - anchors.p_r).transpose() / (c * d_ru);
  J(0, 3) = 1.0;
  J(1, 3) = 1.0;
  J.block<1, 3>(2, 0) = (-s(1) * anchors.R.row(0) + s(0) * anchors.R.row(1)) / rho2;
  J.block<1, 3>(3, 0) = (-s_norm2 * anchors.R.row(2) + s(2) * (p - anchors.p_r).transpose()) /
                        (s_norm2 * std::sqrt(rho2));
  for (int i = 4; i < 10; ++i) J(i, i) = 1.0;
  return J;
}

}  // namespace risloc
