#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "risloc/channel.hpp"
#include "risloc/ris.hpp"

namespace risloc {

struct EstimatorConfig {
  int N_v = 256;
  int N_tau = 4096;
  int N_nu = 256;
  AodGrid grid;
  int N_iter = 3;
  double refine_tol = 1e-12;
  int refine_max_evals = 200;
  bool use_fft2 = true;  ///< FULL grids: build candidate templates with 2-D IFFTs
  /// Rounds of direct/reflected interference cancellation. One round is the plain
  /// pipeline; each extra round re-estimates the direct path after subtracting the
  /// reconstructed reflected path, then redoes the reflected stage.
  int sic_rounds = 1;

  void validate() const;
};

/// One entry per stage that ran. Objectives follow each stage's own sense
/// (energies are maximized, residuals minimized).
struct StageDiagnostics {
  std::string stage;
  double objective_start = 0.0;
  double objective_end = 0.0;
  int evals = 0;
  bool converged = true;
  bool improved = true;  ///< false when the refiner kept its starting point
};

struct EstimationResult {
  Vec3 p_hat = Vec3::Zero();
  double clock_bias_hat = 0.0;
  double v_b_hat = 0.0;
  double v_r_hat = 0.0;
  cplx g_b_hat{0.0, 0.0};
  cplx g_r_hat{0.0, 0.0};
  double tau_b_hat = 0.0;
  double tau_r_hat = 0.0;
  AnglePair phi_hat;
  std::vector<StageDiagnostics> diagnostics;
  std::vector<double> velocity_steps;  ///< residual velocity found in each refinement loop
  bool position_degenerate = false;

  nlohmann::json to_json(bool with_diagnostics) const;
};

// Coarse stages return values that lie exactly on their DFT grids.

double coarse_velocity(const CMatrix& Z_b, const SystemConfig& cfg, const EstimatorConfig& ecfg);
double refine_velocity(const CMatrix& Z_b, double v0, const SystemConfig& cfg, const EstimatorConfig& ecfg,
                       StageDiagnostics* diag = nullptr);
/// f(v) = sum_n |sum_k Z[n,k] exp(-j 2 k h_v v)|^2.
double velocity_objective(const CMatrix& Z_b, double v, const SystemConfig& cfg);

double coarse_delay(const CMatrix& Z_tau, const SystemConfig& cfg, const EstimatorConfig& ecfg);
double refine_delay(const CMatrix& Z_tau, double tau0, const SystemConfig& cfg, const EstimatorConfig& ecfg,
                    StageDiagnostics* diag = nullptr);
/// f(tau) = sum_t |sum_n Z[n,t] exp(+j 2 pi n delta_f tau)|^2.
double delay_objective(const CMatrix& Z_tau, double tau, const SystemConfig& cfg);

struct AngleVelocity {
  AnglePair phi;
  double v = 0.0;
  int bin = 0;        ///< velocity bin before wrap correction
  std::size_t cell = 0;  ///< grid index
};

AngleVelocity coarse_velocity_angle(const CVector& z_phi, const RisProfileSet& profiles, const AnglePair& theta,
                                    const SystemConfig& cfg, const EstimatorConfig& ecfg);

/// [g(v, phi)]_k = exp(j 2 k h_v v) a(theta)^T diag(b_k) a(phi).
CVector angle_velocity_template(double v, const AnglePair& phi, const RisProfileSet& profiles,
                                const AnglePair& theta, const SystemConfig& cfg);
/// |z - (g^H z / g^H g) g|.
double projection_residual(const CVector& z_phi, const CVector& g);

struct VelocityAngleRefinement {
  double delta_v = 0.0;
  AnglePair phi;
};

VelocityAngleRefinement refine_velocity_angle(const CVector& z_phi, double v0, const AnglePair& phi0,
                                              const RisProfileSet& profiles, const AnglePair& theta,
                                              const SystemConfig& cfg, const EstimatorConfig& ecfg,
                                              StageDiagnostics* diag = nullptr);

/// Half-widths (azimuth, elevation) of the angle refinement box around phi0.
AnglePair angle_window(const AodGrid& grid, const AnglePair& phi0, const SystemConfig& cfg);

/// (F E(v)^-1 F^H Y) .* conj(C_NB(v)).
RxSignal doppler_compensate(const RxSignal& Y, double v, const SystemConfig& cfg);

struct DirectEstimate {
  cplx g_b;
  double v_b = 0.0;
  double tau_b = 0.0;
};

DirectEstimate direct_par_est(const RxSignal& Y, const SystemConfig& cfg, const EstimatorConfig& ecfg,
                              std::vector<StageDiagnostics>* diag = nullptr);

struct ReflectedEstimate {
  AnglePair phi;
  double v_r = 0.0;
  double tau_r = 0.0;
  cplx g_r{0.0, 0.0};
  std::vector<double> velocity_steps;
};

ReflectedEstimate reflected_par_est(const RxSignal& Y_r, const RisProfileSet& profiles, const AnglePair& theta,
                                    const SystemConfig& cfg, const EstimatorConfig& ecfg,
                                    std::vector<StageDiagnostics>* diag = nullptr);

/// Throws GeometryError when the range equation is flat at its minimum.
Vec3 position_est(double tau_b, double tau_r, const AnglePair& phi, const Anchors& anchors,
                  const SystemConfig& cfg);

EstimationResult estimate(const RxSignal& Y, const RisProfileSet& profiles, const Anchors& anchors,
                          const SystemConfig& cfg, const EstimatorConfig& ecfg);

/// Velocity with zero vertical component from the two radial velocities.
Vec3 velocity_vector_est(double v_b, double v_r, const Vec3& p_hat, const Anchors& anchors);

}  // namespace risloc
