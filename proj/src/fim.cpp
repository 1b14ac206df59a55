#include "risloc/fim.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

#include "risloc/fft.hpp"
#include "risloc/geometry.hpp"

namespace risloc {

namespace {

constexpr double kMaxCondition = 1e14;

// Rows (per subcarrier when wideband) of a_n(theta)^T diag(gamma) [a_n(phi) .* j (dk_n/dpsi)^T Q],
// expanded to the L symbols.
CMatrix ris_angle_derivative(const AnglePair& phi, const AnglePair& theta, const RisProfileSet& profiles,
                             const SystemConfig& cfg, bool wideband, bool elevation) {
  const double sa = std::sin(phi.az), ca = std::cos(phi.az);
  const double se = std::sin(phi.el), ce = std::cos(phi.el);
  const Vec3 dir = elevation ? Vec3(ce * ca, ce * sa, -se) : Vec3(-se * sa, se * ca, 0.0);
  const RVector proj = cfg.Q().transpose() * dir;

  const int rows = wideband ? cfg.N() : 1;
  CMatrix W(rows, cfg.M());
  for (int n = 0; n < rows; ++n) {
    const double lambda = wideband ? cfg.lambda_n(n) : cfg.lambda();
    const double scale = 2.0 * kPi / lambda;
    const RVector phase = cfg.Q().transpose() * (wavenumber(theta, lambda) + wavenumber(phi, lambda));
    for (int m = 0; m < cfg.M(); ++m) W(n, m) = std::polar(1.0, phase(m)) * cplx(0.0, scale * proj(m));
  }
  const CMatrix half = W * profiles.beams;
  CMatrix full(rows, cfg.L());
  for (Eigen::Index k = 0; k < half.cols(); ++k) {
    full.col(2 * k) = half.col(k);
    full.col(2 * k + 1) = -half.col(k);
  }
  return wideband ? full : CMatrix(full.replicate(cfg.N(), 1));
}

// d/dv of F E(v) F^H (X .* C(v)) for a fixed X.
CMatrix velocity_derivative(const CMatrix& X, double v, const SystemConfig& cfg, bool wideband) {
  const DopplerMatrices dm = doppler_matrices(v, cfg, wideband);
  CVector E_dot(cfg.N());
  for (int k = 0; k < cfg.N(); ++k)
    E_dot(k) = cplx(0.0, 2.0 * kPi * (cfg.T_o() / cfg.N()) * k / cfg.lambda()) * dm.E(k);
  CMatrix C_dot(cfg.N(), cfg.L());
  for (int n = 0; n < cfg.N(); ++n) {
    const double lambda = wideband ? cfg.lambda_n(n) : cfg.lambda();
    for (int l = 0; l < cfg.L(); ++l)
      C_dot(n, l) = cplx(0.0, 2.0 * kPi * l * cfg.T_sym() / lambda) * dm.C(n, l);
  }
  return fft::apply_time_diagonal(E_dot, X.cwiseProduct(dm.C)) +
         fft::apply_time_diagonal(dm.E, X.cwiseProduct(C_dot));
}

CMatrix delay_derivative(double tau, const SystemConfig& cfg) {
  CVector d(cfg.N());
  for (int n = 0; n < cfg.N(); ++n)
    d(n) = cplx(0.0, -2.0 * kPi * n * cfg.delta_f()) * std::polar(1.0, -2.0 * kPi * n * cfg.delta_f() * tau);
  return d.replicate(1, cfg.L());
}

}  // namespace

ChannelDerivatives channel_derivatives(const ChannelParams& params, const AnglePair& theta,
                                       const RisProfileSet& profiles, const SystemConfig& cfg,
                                       ChannelModel model) {
  if (model == ChannelModel::StaticNb) throw ConfigError("channel_derivatives needs a dynamic channel model");
  if (profiles.M() != cfg.M() || profiles.L() != cfg.L())
    throw ConfigError("RIS profile set size does not match the system configuration");
  const bool wb = model == ChannelModel::DynamicWb;

  const CMatrix A = ris_response_matrix(params.phi, theta, profiles, cfg, wb);
  const CMatrix D_b = delay_matrix(params.tau_b, cfg);
  const CMatrix D_r = delay_matrix(params.tau_r, cfg);
  const DopplerMatrices dop_b = doppler_matrices(params.v_b, cfg, wb);
  const DopplerMatrices dop_r = doppler_matrices(params.v_r, cfg, wb);
  auto path_b = [&](const CMatrix& X) { return fft::apply_time_diagonal(dop_b.E, X.cwiseProduct(dop_b.C)); };
  auto path_r = [&](const CMatrix& X) { return fft::apply_time_diagonal(dop_r.E, X.cwiseProduct(dop_r.C)); };

  ChannelDerivatives dM;
  dM[0] = params.g_b * path_b(delay_derivative(params.tau_b, cfg));
  dM[1] = params.g_r * path_r(delay_derivative(params.tau_r, cfg).cwiseProduct(A));
  dM[2] = params.g_r * path_r(D_r.cwiseProduct(ris_angle_derivative(params.phi, theta, profiles, cfg, wb, false)));
  dM[3] = params.g_r * path_r(D_r.cwiseProduct(ris_angle_derivative(params.phi, theta, profiles, cfg, wb, true)));
  dM[4] = params.g_b * velocity_derivative(D_b, params.v_b, cfg, wb);
  dM[5] = params.g_r * velocity_derivative(D_r.cwiseProduct(A), params.v_r, cfg, wb);
  dM[6] = path_b(D_b);
  dM[7] = cplx(0.0, 1.0) * dM[6];
  dM[8] = path_r(D_r.cwiseProduct(A));
  dM[9] = cplx(0.0, 1.0) * dM[8];
  return dM;
}

Mat10 fim_from_derivatives(const ChannelDerivatives& dM, double noise_var) {
  if (!(noise_var > 0.0)) throw ConfigError("FIM needs a positive noise variance");
  Mat10 J;
  for (int i = 0; i < 10; ++i) {
    for (int k = i; k < 10; ++k) {
      long double acc = 0.0L;
      const cplx* a = dM[i].data();
      const cplx* b = dM[k].data();
      const Eigen::Index size = dM[i].size();
      for (Eigen::Index t = 0; t < size; ++t)
        acc += static_cast<long double>(a[t].real()) * b[t].real() +
               static_cast<long double>(a[t].imag()) * b[t].imag();
      J(i, k) = J(k, i) = static_cast<double>(2.0L * acc / noise_var);
    }
  }
  return J;
}

Mat10 fim_channel(const ChannelParams& params, const AnglePair& theta, const RisProfileSet& profiles,
                  const SystemConfig& cfg, double noise_var, ChannelModel model) {
  return fim_from_derivatives(channel_derivatives(params, theta, profiles, cfg, model), noise_var);
}

Mat10 fim_positional(const Mat10& J_ch, const Mat10& jacobian) {
  const Mat10 J = jacobian.transpose() * J_ch * jacobian;
  return 0.5 * (J + J.transpose());
}

double equilibrated_condition(const Mat10& J) {
  const Vec10 diag = J.diagonal();
  if ((diag.array() <= 0.0).any() || !diag.allFinite()) return std::numeric_limits<double>::infinity();
  const Vec10 s = diag.cwiseSqrt().cwiseInverse();
  const Mat10 Js = s.asDiagonal() * J * s.asDiagonal();
  const Eigen::SelfAdjointEigenSolver<Mat10> eig(Js, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

Mat10 invert_fim(const Mat10& J) {
  const double cond = equilibrated_condition(J);
  if (!(cond <= kMaxCondition)) throw SingularError("FIM is singular or ill-conditioned", cond);
  const Vec10 s = J.diagonal().cwiseSqrt().cwiseInverse();
  const Mat10 Js = s.asDiagonal() * J * s.asDiagonal();
  const Eigen::LLT<Mat10> llt(Js);
  if (llt.info() != Eigen::Success) throw SingularError("FIM is not positive definite", cond);
  const Mat10 inv = llt.solve(Mat10::Identity());
  return s.asDiagonal() * inv * s.asDiagonal();
}

FimResult bounds_from_fim(const Mat10& J_po) {
  FimResult r;
  r.J_po = J_po;
  r.condition_numbers.second = equilibrated_condition(J_po);
  const Mat10 inv = invert_fim(J_po);
  r.peb = std::sqrt(inv.topLeftCorner<3, 3>().trace());
  r.crb_clock = inv(3, 3);
  r.crb_v_b = inv(4, 4);
  r.crb_v_r = inv(5, 5);
  return r;
}

FimResult compute_fim(const UeState& state, const Anchors& anchors, const std::pair<cplx, cplx>& gains,
                      const RisProfileSet& profiles, const SystemConfig& cfg, double noise_var,
                      ChannelModel model) {
  const ChannelParams params = params_from_state(state, anchors, gains, cfg.c());
  const Mat10 J_ch = fim_channel(params, anchors.theta, profiles, cfg, noise_var, model);
  const Mat10 jac = geometric_jacobian(state, anchors, cfg.c());
  FimResult r = bounds_from_fim(fim_positional(J_ch, jac));
  r.J_ch = J_ch;
  r.jacobian = jac;
  r.condition_numbers.first = equilibrated_condition(J_ch);
  return r;
}

nlohmann::json FimResult::to_json() const {
  return {{"peb", peb},
          {"crb_clock", crb_clock},
          {"crb_v_b", crb_v_b},
          {"crb_v_r", crb_v_r},
          {"condition_ch", condition_numbers.first},
          {"condition_po", condition_numbers.second}};
}

}  // namespace risloc
