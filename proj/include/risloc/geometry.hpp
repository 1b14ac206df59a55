#pragma once

#include <utility>

#include "risloc/types.hpp"

namespace risloc {

/// Known infrastructure: BS position, RIS center and orientation, and the
/// resulting BS -> RIS angle of arrival in the RIS frame.
struct Anchors {
  Vec3 p_b;
  Vec3 p_r;
  Mat3 R;  ///< global -> RIS-local rotation
  AnglePair theta;

  /// Validates R (orthogonal, det +1) and derives theta from p_b.
  static Anchors make(const Vec3& p_b, const Vec3& p_r, const Mat3& R = Mat3::Identity());
};

struct UeState {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  double clock_bias = 0.0;  ///< seconds
};

/// Channel parameter vector. Vector order: tau_b, tau_r, phi_az, phi_el, v_b, v_r,
/// Re g_b, Im g_b, Re g_r, Im g_r.
struct ChannelParams {
  double tau_b = 0.0;
  double tau_r = 0.0;
  AnglePair phi;
  double v_b = 0.0;
  double v_r = 0.0;
  cplx g_b{0.0, 0.0};
  cplx g_r{0.0, 0.0};

  Vec10 to_vector() const;
  static ChannelParams from_vector(const Vec10& x);
};

/// Positional parameter vector order: p (3), clock bias, v_b, v_r, Re g_b, Im g_b,
/// Re g_r, Im g_r. Radial velocities and gains are carried through unchanged.
Vec10 positional_vector(const UeState& state, double v_b, double v_r, cplx g_b, cplx g_r);

/// Direction of p seen from the RIS, in the RIS frame. atan2(0, 0) = 0 on the pole axis.
AnglePair compute_aod(const Vec3& p, const Anchors& anchors);

/// Unit vector for an angle pair: [sin el cos az, sin el sin az, cos el].
Vec3 unit_direction(const AnglePair& psi);

/// v . (target - p) / |target - p|; positive when moving toward target.
double radial_velocity(const Vec3& v, const Vec3& p, const Vec3& target);

ChannelParams params_from_state(const UeState& state, const Anchors& anchors,
                                const std::pair<cplx, cplx>& gains, double c = kSpeedOfLight);

/// Maps a positional vector to channel parameters (radial velocities held fixed).
ChannelParams params_from_positional(const Vec10& zeta_po, const Anchors& anchors,
                                     double c = kSpeedOfLight);

/// d(zeta_ch)/d(zeta_po), 10 x 10, in closed form.
Mat10 geometric_jacobian(const UeState& state, const Anchors& anchors, double c = kSpeedOfLight);

}  // namespace risloc
