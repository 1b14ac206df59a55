#pragma once

#include <array>

#include <json.hpp>

#include "risloc/channel.hpp"

namespace risloc {

/// d M / d zeta_ch in the ChannelParams vector order.
using ChannelDerivatives = std::array<CMatrix, 10>;

/// Analytic derivatives of the noiseless signal. Only the dynamic models are supported.
ChannelDerivatives channel_derivatives(const ChannelParams& params, const AnglePair& theta,
                                       const RisProfileSet& profiles, const SystemConfig& cfg,
                                       ChannelModel model);

/// (2 / noise_var) sum_{n,l} Re{ dM_i conj(dM_k) }, accumulated in long double.
Mat10 fim_channel(const ChannelParams& params, const AnglePair& theta, const RisProfileSet& profiles,
                  const SystemConfig& cfg, double noise_var, ChannelModel model);
Mat10 fim_from_derivatives(const ChannelDerivatives& dM, double noise_var);

/// J^T J_ch J.
Mat10 fim_positional(const Mat10& J_ch, const Mat10& jacobian);

struct FimResult {
  Mat10 J_ch = Mat10::Zero();
  Mat10 J_po = Mat10::Zero();
  Mat10 jacobian = Mat10::Zero();
  double peb = 0.0;        ///< meters
  double crb_clock = 0.0;  ///< s^2
  double crb_v_b = 0.0;    ///< (m/s)^2
  double crb_v_r = 0.0;
  std::pair<double, double> condition_numbers{0.0, 0.0};  ///< equilibrated (J_ch, J_po)

  nlohmann::json to_json() const;
};

/// Condition number of D J D with D = diag(J_ii^-1/2); infinite when a diagonal entry is not positive.
double equilibrated_condition(const Mat10& J);

/// Inverse of J via diagonal equilibration and a Cholesky factorization.
/// Throws SingularError when the equilibrated condition number exceeds 1e14.
Mat10 invert_fim(const Mat10& J);

/// Fills peb and CRBs from J_po (and its condition number).
FimResult bounds_from_fim(const Mat10& J_po);

/// Full chain: params_from_state, J_ch, geometric Jacobian, J_po, bounds.
FimResult compute_fim(const UeState& state, const Anchors& anchors, const std::pair<cplx, cplx>& gains,
                      const RisProfileSet& profiles, const SystemConfig& cfg, double noise_var,
                      ChannelModel model);

}  // namespace risloc
