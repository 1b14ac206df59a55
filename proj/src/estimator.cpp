#include "risloc/estimator.hpp"

#include <algorithm>
#include <cmath>

#include "risloc/fft.hpp"
#include "risloc/optimize.hpp"

namespace risloc {

namespace {

double velocity_step(int n_bins, const SystemConfig& cfg) { return cfg.lambda() / (2.0 * cfg.T_sym() * n_bins); }

double delay_step(const SystemConfig& cfg, const EstimatorConfig& ecfg) { return 1.0 / (cfg.delta_f() * ecfg.N_tau); }

int wrap_bin(int i, int n) { return i > n / 2 ? i - n : i; }

double wrap_azimuth(double az) {
  while (az > kPi) az -= 2.0 * kPi;
  while (az <= -kPi) az += 2.0 * kPi;
  return az;
}

BoxOptions box_options(const EstimatorConfig& ecfg) {
  BoxOptions opt;
  opt.tol = ecfg.refine_tol;
  opt.max_evals = ecfg.refine_max_evals;
  return opt;
}

void record(StageDiagnostics* diag, std::string stage, double start, double end, const BoxResult& r, bool improved) {
  if (!diag) return;
  diag->stage = std::move(stage);
  diag->objective_start = start;
  diag->objective_end = end;
  diag->evals = r.evals;
  diag->converged = r.converged;
  diag->improved = improved;
}

// Scalar refinement of a maximized objective on [x0 - half, x0 + half].
BoxResult maximize_scalar(const std::function<double(double)>& f, double x0, double half, const EstimatorConfig& ecfg) {
  RVector start(1), lo(1), hi(1);
  start << x0;
  lo << x0 - half;
  hi << x0 + half;
  return minimize_box([&](const RVector& x) { return -f(x(0)); }, start, lo, hi, box_options(ecfg));
}

// diag(a_theta) * B, transposed; row k dotted with a(phi) gives a(theta)^T diag(b_k) a(phi).
CMatrix weighted_beams(const RisProfileSet& profiles, const AnglePair& theta, const SystemConfig& cfg) {
  const CVector a_theta = steering_vector(theta, std::nullopt, cfg);
  return (a_theta.asDiagonal() * profiles.beams).transpose();
}

CVector template_from(const CMatrix& weighted, double v, const AnglePair& phi, const SystemConfig& cfg) {
  const double h_v = 2.0 * kPi * cfg.T_sym() / cfg.lambda();
  CVector g = weighted * steering_vector(phi, std::nullopt, cfg);
  for (Eigen::Index k = 0; k < g.size(); ++k) g(k) *= std::polar(1.0, 2.0 * static_cast<double>(k) * h_v * v);
  return g;
}

double normalized_correlation(const CVector& z, const CVector& g) {
  const double gg = g.squaredNorm();
  if (gg <= 0.0) return 0.0;
  return std::norm(g.dot(z)) / gg;
}

CVector derotate_and_sum(const CMatrix& Z, double tau, const SystemConfig& cfg) {
  const CVector d = delay_vector(tau, cfg);
  return Z.transpose() * d.conjugate();
}

struct PositionSolve {
  Vec3 p;
  bool degenerate;
};

PositionSolve solve_position(double tau_b, double tau_r, const AnglePair& phi, const Anchors& anchors,
                             const SystemConfig& cfg) {
  const double delta_r = cfg.c() * std::abs(tau_r - tau_b);
  const Vec3 k = anchors.R.transpose() * unit_direction(phi);
  const Vec3 b = anchors.p_b - anchors.p_r;
  const double dist = b.norm();
  auto g = [&](double d) { return d + dist - (b - d * k).norm() - delta_r; };
  auto f = [&](double d) {
    const double r = g(d);
    return r * r;
  };
  const double d_max = 10.0 * dist;
  const double d_m = golden_section(f, 0.0, d_max, 1e-9);
  // g is non-decreasing; a vanishing slope at the minimizer means f is flat there.
  const double h = 1e-6 * std::max(1.0, d_m);
  const double slope = (g(std::min(d_m + h, d_max)) - g(std::max(d_m - h, 0.0))) /
                       (std::min(d_m + h, d_max) - std::max(d_m - h, 0.0));
  return {anchors.p_r + d_m * k, std::abs(slope) < 1e-9};
}

}  // namespace

void EstimatorConfig::validate() const {
  if (N_v < 2 || N_tau < 2 || N_nu < 2) throw ConfigError("estimator DFT sizes must be >= 2");
  if (N_iter < 1) throw ConfigError("N_iter must be >= 1");
  if (sic_rounds < 1) throw ConfigError("sic_rounds must be >= 1");
  if (refine_max_evals < 1) throw ConfigError("refine_max_evals must be >= 1");
  if (!(refine_tol >= 0.0)) throw ConfigError("refine_tol must be >= 0");
  if (grid.angles.empty()) throw ConfigError("estimator AoD grid is empty");
}

double velocity_objective(const CMatrix& Z_b, double v, const SystemConfig& cfg) {
  const double h_v = 2.0 * kPi * cfg.T_sym() / cfg.lambda();
  CVector w(Z_b.cols());
  for (Eigen::Index k = 0; k < w.size(); ++k) w(k) = std::polar(1.0, -2.0 * static_cast<double>(k) * h_v * v);
  return (Z_b * w).squaredNorm();
}

double coarse_velocity(const CMatrix& Z_b, const SystemConfig& cfg, const EstimatorConfig& ecfg) {
  RVector energy = RVector::Zero(ecfg.N_v);
  for (Eigen::Index n = 0; n < Z_b.rows(); ++n) {
    const CVector row = Z_b.row(n).transpose();
    energy += fft::padded_forward(row, ecfg.N_v).cwiseAbs2();
  }
  Eigen::Index i_m = 0;
  for (Eigen::Index i = 1; i < energy.size(); ++i)
    if (energy(i) > energy(i_m)) i_m = i;
  return wrap_bin(static_cast<int>(i_m), ecfg.N_v) * velocity_step(ecfg.N_v, cfg);
}

double refine_velocity(const CMatrix& Z_b, double v0, const SystemConfig& cfg, const EstimatorConfig& ecfg,
                       StageDiagnostics* diag) {
  auto f = [&](double v) { return velocity_objective(Z_b, v, cfg); };
  const double f0 = f(v0);
  const BoxResult r = maximize_scalar(f, v0, velocity_step(ecfg.N_v, cfg), ecfg);
  const bool improved = -r.f > f0;
  record(diag, "refine_velocity", f0, -r.f, r, improved);
  return improved ? r.x(0) : v0;
}

double delay_objective(const CMatrix& Z_tau, double tau, const SystemConfig& cfg) {
  return (Z_tau.transpose() * delay_vector(tau, cfg).conjugate()).squaredNorm();
}

double coarse_delay(const CMatrix& Z_tau, const SystemConfig& cfg, const EstimatorConfig& ecfg) {
  RVector energy = RVector::Zero(ecfg.N_tau);
  for (Eigen::Index t = 0; t < Z_tau.cols(); ++t)
    energy += fft::padded_backward(CVector(Z_tau.col(t)), ecfg.N_tau).cwiseAbs2();
  Eigen::Index i_m = 0;
  for (Eigen::Index i = 1; i < energy.size(); ++i)
    if (energy(i) > energy(i_m)) i_m = i;
  return static_cast<double>(i_m) * delay_step(cfg, ecfg);
}

double refine_delay(const CMatrix& Z_tau, double tau0, const SystemConfig& cfg, const EstimatorConfig& ecfg,
                    StageDiagnostics* diag) {
  auto f = [&](double tau) { return delay_objective(Z_tau, tau, cfg); };
  const double f0 = f(tau0);
  const BoxResult r = maximize_scalar(f, tau0, delay_step(cfg, ecfg), ecfg);
  const bool improved = -r.f > f0;
  record(diag, "refine_delay", f0, -r.f, r, improved);
  return improved ? r.x(0) : tau0;
}

AngleVelocity coarse_velocity_angle(const CVector& z_phi, const RisProfileSet& profiles, const AnglePair& theta,
                                    const SystemConfig& cfg, const EstimatorConfig& ecfg) {
  if (ecfg.grid.angles.empty()) throw ConfigError("coarse_velocity_angle: empty grid");
  if (z_phi.size() != profiles.beams.cols()) throw ConfigError("coarse_velocity_angle: length mismatch");
  const CMatrix zs = grid_correlations(profiles, ecfg.grid, theta, cfg, ecfg.use_fft2);

  double best = -1.0;
  std::size_t s_m = 0;
  int i_m = 0;
  for (Eigen::Index s = 0; s < zs.rows(); ++s) {
    const double norm = zs.row(s).norm();
    if (!(norm > 0.0)) continue;
    const CVector g = (zs.row(s).transpose().conjugate() / norm).cwiseProduct(z_phi);
    const RVector energy = fft::padded_forward(g, ecfg.N_nu).cwiseAbs2();
    for (int i = 0; i < ecfg.N_nu; ++i)
      if (energy(i) > best) {
        best = energy(i);
        s_m = static_cast<std::size_t>(s);
        i_m = i;
      }
  }
  AngleVelocity out;
  out.phi = ecfg.grid.angles[s_m];
  out.cell = s_m;
  out.bin = i_m;
  out.v = wrap_bin(i_m, ecfg.N_nu) * velocity_step(ecfg.N_nu, cfg);
  return out;
}

CVector angle_velocity_template(double v, const AnglePair& phi, const RisProfileSet& profiles,
                                const AnglePair& theta, const SystemConfig& cfg) {
  return template_from(weighted_beams(profiles, theta, cfg), v, phi, cfg);
}

double projection_residual(const CVector& z_phi, const CVector& g) {
  const double gg = g.squaredNorm();
  if (gg <= 0.0) return z_phi.norm();
  return (z_phi - (g.dot(z_phi) / gg) * g).norm();
}

AnglePair angle_window(const AodGrid& grid, const AnglePair& phi0, const SystemConfig& cfg) {
  constexpr double kMaxHalf = 0.5;
  constexpr double kMinHalf = 1e-6;
  AnglePair w{kMaxHalf, kMaxHalf};
  if (grid.kind == GridKind::Prior) {
    const double cell = grid.cell > 0.0 ? grid.cell : kMaxHalf;
    w.el = cell;
    w.az = cell / std::max(std::sin(phi0.el), 1e-3);
  } else {
    const double period = cfg.lambda() / cfg.d();
    const Vec3 u = unit_direction(phi0);
    const double d1 = period / grid.n_phi1;
    const double d3 = period / grid.n_phi2;
    double az = 0.0, el = 0.0;
    bool any = false;
    const double steps[4][2] = {{d1, 0.0}, {-d1, 0.0}, {0.0, d3}, {0.0, -d3}};
    for (const auto& st : steps) {
      const double k1 = u(0) + st[0];
      const double k3 = u(2) + st[1];
      const double rest = 1.0 - k1 * k1 - k3 * k3;
      if (rest < 0.0) continue;
      const double a = std::atan2(std::sqrt(rest), k1);
      const double e = std::acos(std::clamp(k3, -1.0, 1.0));
      az = std::max(az, std::abs(wrap_azimuth(a - phi0.az)));
      el = std::max(el, std::abs(e - phi0.el));
      any = true;
    }
    if (any) w = {az, el};
  }
  w.az = std::clamp(w.az, kMinHalf, kMaxHalf);
  w.el = std::clamp(w.el, kMinHalf, kMaxHalf);
  return w;
}

VelocityAngleRefinement refine_velocity_angle(const CVector& z_phi, double v0, const AnglePair& phi0,
                                              const RisProfileSet& profiles, const AnglePair& theta,
                                              const SystemConfig& cfg, const EstimatorConfig& ecfg,
                                              StageDiagnostics* diag) {
  const CMatrix weighted = weighted_beams(profiles, theta, cfg);
  auto corr = [&](double v, const AnglePair& phi) {
    return normalized_correlation(z_phi, template_from(weighted, v, phi, cfg));
  };
  const double res0 = projection_residual(z_phi, template_from(weighted, v0, phi0, cfg));

  // Pass 1: velocity with the angle held.
  RVector x(1), lo(1), hi(1);
  const double half_v = velocity_step(ecfg.N_nu, cfg);
  x << v0;
  lo << v0 - half_v;
  hi << v0 + half_v;
  const BoxResult rv =
      minimize_box([&](const RVector& t) { return -corr(t(0), phi0); }, x, lo, hi, box_options(ecfg));
  const double v1 = rv.x(0);

  // Pass 2: angle with the velocity held.
  const AnglePair w = angle_window(ecfg.grid, phi0, cfg);
  RVector a(2), alo(2), ahi(2);
  a << phi0.az, phi0.el;
  alo << phi0.az - w.az, std::max(0.0, phi0.el - w.el);
  ahi << phi0.az + w.az, std::min(kPi, phi0.el + w.el);
  if (!(ahi(1) > alo(1))) ahi(1) = alo(1) + 1e-9;
  a(1) = std::clamp(a(1), alo(1), ahi(1));
  const BoxResult ra = minimize_box([&](const RVector& t) { return -corr(v1, {t(0), t(1)}); }, a, alo, ahi,
                                    box_options(ecfg));

  VelocityAngleRefinement out;
  out.delta_v = v1;
  out.phi = {wrap_azimuth(ra.x(0)), ra.x(1)};
  double res1 = projection_residual(z_phi, template_from(weighted, out.delta_v, out.phi, cfg));
  bool improved = true;
  if (!(res1 <= res0)) {
    out.delta_v = v0;
    out.phi = phi0;
    res1 = res0;
    improved = false;
  }
  BoxResult merged = ra;
  merged.evals = rv.evals + ra.evals;
  merged.converged = rv.converged && ra.converged;
  record(diag, "refine_velocity_angle", res0, res1, merged, improved);
  return out;
}

RxSignal doppler_compensate(const RxSignal& Y, double v, const SystemConfig& cfg) {
  if (Y.Y.rows() != cfg.N() || Y.Y.cols() != cfg.L()) throw ConfigError("doppler_compensate: shape mismatch");
  const DopplerMatrices dm = doppler_matrices(v, cfg, false);
  RxSignal out;
  out.Y = fft::apply_time_diagonal(dm.E.conjugate(), Y.Y).cwiseProduct(dm.C.conjugate());
  return out;
}

DirectEstimate direct_par_est(const RxSignal& Y, const SystemConfig& cfg, const EstimatorConfig& ecfg,
                              std::vector<StageDiagnostics>* diag) {
  const CMatrix Z_b = match(Y.Y, kDirectCode);
  const double v0 = coarse_velocity(Z_b, cfg, ecfg);
  StageDiagnostics dv, dt;
  const double v_b = refine_velocity(Z_b, v0, cfg, ecfg, &dv);
  dv.stage = "direct.refine_velocity";

  const RxSignal comp = doppler_compensate(Y, v_b, cfg);
  const CMatrix z_tau = match(comp.Y, kDirectCode).rowwise().sum();
  const double tau0 = coarse_delay(z_tau, cfg, ecfg);
  const double tau_b = refine_delay(z_tau, tau0, cfg, ecfg, &dt);
  dt.stage = "direct.refine_delay";

  if (diag) {
    diag->push_back(dv);
    diag->push_back(dt);
  }
  const cplx g = delay_vector(tau_b, cfg).dot(z_tau.col(0)) / static_cast<double>(cfg.N() * cfg.L());
  return {g, v_b, tau_b};
}

ReflectedEstimate reflected_par_est(const RxSignal& Y_r, const RisProfileSet& profiles, const AnglePair& theta,
                                    const SystemConfig& cfg, const EstimatorConfig& ecfg,
                                    std::vector<StageDiagnostics>* diag) {
  if (profiles.M() != cfg.M() || profiles.L() != cfg.L())
    throw ConfigError("reflected_par_est: profiles do not match the configuration");
  const CMatrix Z_r = match(Y_r.Y, kReflectedCode);
  double tau_r = coarse_delay(Z_r, cfg, ecfg);
  const AngleVelocity coarse = coarse_velocity_angle(derotate_and_sum(Z_r, tau_r, cfg), profiles, theta, cfg, ecfg);

  ReflectedEstimate out;
  out.phi = coarse.phi;
  out.v_r = coarse.v;
  for (int it = 0; it < ecfg.N_iter; ++it) {
    const CMatrix Z = match(doppler_compensate(Y_r, out.v_r, cfg).Y, kReflectedCode);
    StageDiagnostics dt, dva;
    tau_r = refine_delay(Z, tau_r, cfg, ecfg, &dt);
    dt.stage = "reflected.refine_delay." + std::to_string(it);
    const VelocityAngleRefinement ref =
        refine_velocity_angle(derotate_and_sum(Z, tau_r, cfg), 0.0, out.phi, profiles, theta, cfg, ecfg, &dva);
    dva.stage = "reflected.refine_velocity_angle." + std::to_string(it);
    // Projection gain onto the refined template; the matched pair adds 1 + exp(j h_v dv).
    const CVector z_phi = derotate_and_sum(Z, tau_r, cfg);
    const CVector g = angle_velocity_template(ref.delta_v, ref.phi, profiles, theta, cfg);
    const double h_v = 2.0 * kPi * cfg.T_sym() / cfg.lambda();
    const double gg = g.squaredNorm();
    if (gg > 0.0)
      out.g_r = (g.dot(z_phi) / gg) / (static_cast<double>(cfg.N()) * (1.0 + std::polar(1.0, h_v * ref.delta_v)));
    out.v_r += ref.delta_v;
    out.phi = ref.phi;
    out.velocity_steps.push_back(ref.delta_v);
    if (diag) {
      diag->push_back(dt);
      diag->push_back(dva);
    }
  }
  out.tau_r = tau_r;
  return out;
}

Vec3 position_est(double tau_b, double tau_r, const AnglePair& phi, const Anchors& anchors,
                  const SystemConfig& cfg) {
  const PositionSolve s = solve_position(tau_b, tau_r, phi, anchors, cfg);
  if (s.degenerate) throw GeometryError("position solve: range equation is flat (UE on the BS-RIS line?)");
  return s.p;
}

EstimationResult estimate(const RxSignal& Y, const RisProfileSet& profiles, const Anchors& anchors,
                          const SystemConfig& cfg, const EstimatorConfig& ecfg) {
  ecfg.validate();
  if (Y.Y.rows() != cfg.N() || Y.Y.cols() != cfg.L()) throw ConfigError("estimate: observation shape mismatch");
  EstimationResult res;
  RxSignal Y_direct = Y;
  ReflectedEstimate refl;
  for (int round = 0; round < ecfg.sic_rounds; ++round) {
    if (round > 0) {
      ChannelParams rp;
      rp.tau_r = refl.tau_r;
      rp.phi = refl.phi;
      rp.v_r = refl.v_r;
      rp.g_r = refl.g_r;
      Y_direct.Y = Y.Y - synthesize_paths(rp, anchors.theta, profiles, cfg, ChannelModel::DynamicNb).reflected;
    }
    const DirectEstimate direct = direct_par_est(Y_direct, cfg, ecfg, &res.diagnostics);
    res.g_b_hat = direct.g_b;
    res.v_b_hat = direct.v_b;
    res.tau_b_hat = direct.tau_b;

    const DopplerMatrices dm = doppler_matrices(direct.v_b, cfg, false);
    const CMatrix D = delay_matrix(direct.tau_b, cfg);
    RxSignal Y_r;
    Y_r.Y = Y.Y - direct.g_b * fft::apply_time_diagonal(dm.E, D.cwiseProduct(dm.C));
    refl = reflected_par_est(Y_r, profiles, anchors.theta, cfg, ecfg, &res.diagnostics);
  }
  res.phi_hat = refl.phi;
  res.v_r_hat = refl.v_r;
  res.tau_r_hat = refl.tau_r;
  res.g_r_hat = refl.g_r;
  res.velocity_steps = refl.velocity_steps;

  const PositionSolve pos = solve_position(res.tau_b_hat, res.tau_r_hat, res.phi_hat, anchors, cfg);
  res.p_hat = pos.p;
  res.position_degenerate = pos.degenerate;
  res.clock_bias_hat = res.tau_b_hat - (res.p_hat - anchors.p_b).norm() / cfg.c();
  return res;
}

Vec3 velocity_vector_est(double v_b, double v_r, const Vec3& p_hat, const Anchors& anchors) {
  const Vec3 to_b = anchors.p_b - p_hat;
  const Vec3 to_r = anchors.p_r - p_hat;
  if (!(to_b.norm() > 0.0) || !(to_r.norm() > 0.0)) throw GeometryError("velocity solve: UE coincides with an anchor");
  const Vec3 u_b = to_b.normalized();
  const Vec3 u_r = to_r.normalized();
  Eigen::Matrix2d A;
  A << u_b(0), u_b(1), u_r(0), u_r(1);
  const double det = A.determinant();
  if (std::abs(det) < 1e-12) throw SingularError("velocity solve: projected directions are parallel", std::abs(det));
  const Eigen::Vector2d v = A.inverse() * Eigen::Vector2d(v_b, v_r);
  return {v(0), v(1), 0.0};
}

nlohmann::json EstimationResult::to_json(bool with_diagnostics) const {
  nlohmann::json j;
  j["p_hat"] = {p_hat(0), p_hat(1), p_hat(2)};
  j["clock_bias_hat"] = clock_bias_hat;
  j["v_b_hat"] = v_b_hat;
  j["v_r_hat"] = v_r_hat;
  j["g_b_hat"] = {g_b_hat.real(), g_b_hat.imag()};
  j["g_r_hat"] = {g_r_hat.real(), g_r_hat.imag()};
  j["tau_b_hat"] = tau_b_hat;
  j["tau_r_hat"] = tau_r_hat;
  j["phi_hat"] = {{"az", phi_hat.az}, {"el", phi_hat.el}};
  if (with_diagnostics) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& d : diagnostics)
      stages.push_back({{"stage", d.stage},
                        {"objective_start", d.objective_start},
                        {"objective_end", d.objective_end},
                        {"evals", d.evals},
                        {"converged", d.converged},
                        {"improved", d.improved}});
    j["diagnostics"] = {{"stages", stages},
                        {"velocity_steps", velocity_steps},
                        {"position_degenerate", position_degenerate}};
  }
  return j;
}

}  // namespace risloc
