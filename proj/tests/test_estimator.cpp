#include <doctest.h>

#include <cmath>

#include "risloc/estimator.hpp"
#include "risloc/fft.hpp"
#include "risloc/rng.hpp"
#include "test_support.hpp"

using namespace risloc;
using risloc::testing::reference_anchors;
using risloc::testing::rel_err;
using risloc::testing::small_config;

namespace {

double v_step(const SystemConfig& cfg, int n) { return cfg.lambda() / (2.0 * cfg.T_sym() * n); }

ChannelParams direct_only(double tau, double v, cplx g = {0.6, -0.8}) {
  ChannelParams p;
  p.tau_b = tau;
  p.v_b = v;
  p.g_b = g;
  p.tau_r = 0.0;
  p.phi = {2.0, 2.0};
  return p;
}

CMatrix direct_signal(const ChannelParams& p, const SystemConfig& cfg) {
  const RisProfileSet prof = random_profiles(cfg, 1);
  return synthesize_paths(p, reference_anchors().theta, prof, cfg, ChannelModel::DynamicNb).direct;
}

EstimatorConfig config_with(const AodGrid& grid) {
  EstimatorConfig e;
  e.grid = grid;
  return e;
}

}  // namespace

TEST_CASE("coarse velocity lands on the grid and handles negative speeds") {
  const SystemConfig cfg = small_config(32, 16, 2, 2);
  EstimatorConfig ecfg;
  ecfg.grid.angles.assign(1, {});
  const double step = v_step(cfg, ecfg.N_v);
  CHECK(step == doctest::Approx(2.19).epsilon(2e-3));

  CHECK(coarse_velocity(match(direct_signal(direct_only(40e-9, 0.0), cfg), kDirectCode), cfg, ecfg) == 0.0);
  for (double v : {10.0, -5.0, 33.3, -120.0}) {
    const double v0 = coarse_velocity(match(direct_signal(direct_only(40e-9, v), cfg), kDirectCode), cfg, ecfg);
    CHECK(std::abs(v0 - v) <= step);
    const double bins = v0 / step;
    CHECK(bins == doctest::Approx(std::round(bins)).epsilon(1e-12));
    if (v < 0) CHECK(v0 < 0.0);
  }
}

TEST_CASE("velocity refinement") {
  const SystemConfig cfg = small_config(32, 16, 2, 2);
  EstimatorConfig ecfg;
  const CMatrix Z = match(direct_signal(direct_only(40e-9, 10.0), cfg), kDirectCode);
  const double v0 = coarse_velocity(Z, cfg, ecfg);
  StageDiagnostics d;
  const double v = refine_velocity(Z, v0, cfg, ecfg, &d);
  CHECK(std::abs(v - 10.0) < 1e-3);
  CHECK(d.objective_end >= d.objective_start);

  // Fixed point.
  CHECK(std::abs(refine_velocity(Z, 10.0, cfg, ecfg) - 10.0) < 1e-6);

  Rng rng(4);
  int worse = 0;
  for (int t = 0; t < 100; ++t) {
    const double vt = rng.uniform(-60.0, 60.0);
    RxSignal clean{direct_signal(direct_only(40e-9, vt), cfg)};
    const CMatrix Zn = match(add_noise(clean, 0.5, 100 + t).Y, kDirectCode);
    const double c0 = coarse_velocity(Zn, cfg, ecfg);
    const double r = refine_velocity(Zn, c0, cfg, ecfg);
    if (velocity_objective(Zn, r, cfg) < velocity_objective(Zn, c0, cfg)) ++worse;
  }
  CHECK(worse == 0);
}

TEST_CASE("delay estimation") {
  const SystemConfig cfg = small_config(256, 4, 2, 2);
  EstimatorConfig ecfg;
  const double step = 1.0 / (cfg.delta_f() * ecfg.N_tau);
  CHECK(step == doctest::Approx(2.03e-9).epsilon(2e-3));

  auto column = [&](double tau) { return CMatrix(0.3 * delay_vector(tau, cfg)); };
  CHECK(coarse_delay(column(0.0), cfg, ecfg) == 0.0);
  const double tau = 62.36e-9;
  const double t0 = coarse_delay(column(tau), cfg, ecfg);
  CHECK(std::abs(t0 - tau) <= step);
  CHECK(t0 / step == doctest::Approx(std::round(t0 / step)).epsilon(1e-12));

  StageDiagnostics d;
  const double t1 = refine_delay(column(tau), t0, cfg, ecfg, &d);
  CHECK(std::abs(t1 - tau) < 1e-12);
  CHECK(d.objective_end >= d.objective_start);
  CHECK(std::abs(refine_delay(column(tau), tau, cfg, ecfg) - tau) < 1e-13);

  // Near the end of the unambiguous window the peak sits in the last bins.
  const double late = cfg.T_o() - 0.5 * step;
  const double tl = coarse_delay(column(late), cfg, ecfg);
  CHECK((tl > cfg.T_o() - 2 * step || tl == 0.0));

  // Multi-column input.
  CMatrix wide(256, 3);
  for (int t = 0; t < 3; ++t) wide.col(t) = std::polar(1.0, 0.7 * t) * delay_vector(tau, cfg);
  CHECK(std::abs(refine_delay(wide, coarse_delay(wide, cfg, ecfg), cfg, ecfg) - tau) < 1e-12);

  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    CVector x = 0.3 * delay_vector(rng.uniform(0.0, 5e-6), cfg);
    for (Eigen::Index n = 0; n < x.size(); ++n) x(n) += rng.complex_normal(0.2);
    const double c0 = coarse_delay(x, cfg, ecfg);
    CHECK(delay_objective(x, refine_delay(x, c0, cfg, ecfg), cfg) >= delay_objective(x, c0, cfg));
  }
}

TEST_CASE("joint angle/velocity search equals the exhaustive argmax") {
  const SystemConfig cfg = small_config(8, 32, 4, 4);
  const Anchors anchors = reference_anchors();
  const RisProfileSet prof = random_profiles(cfg, 17);
  EstimatorConfig ecfg = config_with(full_aod_grid(cfg, 8, 8));
  ecfg.N_nu = 16;
  const CMatrix zs = grid_correlations(prof, ecfg.grid, anchors.theta, cfg, false);

  Rng rng(6);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t s_true = static_cast<std::size_t>(rng.uniform() * ecfg.grid.size());
    const int bin = static_cast<int>(rng.uniform() * 16) - 8;
    const double v = bin * v_step(cfg, 16);
    CVector z = angle_velocity_template(v, ecfg.grid.angles[s_true], prof, anchors.theta, cfg);
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) += rng.complex_normal(0.5);

    double best = -1;
    std::size_t s_m = 0;
    int i_m = 0;
    for (Eigen::Index s = 0; s < zs.rows(); ++s) {
      const double nrm = zs.row(s).norm();
      for (int i = 0; i < 16; ++i) {
        cplx acc = 0;
        for (Eigen::Index k = 0; k < z.size(); ++k)
          acc += std::conj(zs(s, k)) / nrm * z(k) * std::polar(1.0, -2 * kPi * i * k / 16.0);
        if (std::norm(acc) > best) {
          best = std::norm(acc);
          s_m = static_cast<std::size_t>(s);
          i_m = i;
        }
      }
    }
    const AngleVelocity got = coarse_velocity_angle(z, prof, anchors.theta, cfg, ecfg);
    CHECK(got.cell == s_m);
    CHECK(got.bin == i_m);
    CHECK(got.cell == s_true);
    CHECK(got.v == doctest::Approx(v).epsilon(1e-12));
  }

  // Identical result without the FFT shortcut.
  ecfg.use_fft2 = false;
  const CVector z0 = angle_velocity_template(0.0, ecfg.grid.angles[3], prof, anchors.theta, cfg);
  const AngleVelocity slow = coarse_velocity_angle(z0, prof, anchors.theta, cfg, ecfg);
  CHECK(slow.cell == 3);
  CHECK(slow.v == 0.0);

  // Off-bin velocity stays within one step.
  ecfg.use_fft2 = true;
  const CVector z8 = angle_velocity_template(8.0, ecfg.grid.angles[5], prof, anchors.theta, cfg);
  CHECK(std::abs(coarse_velocity_angle(z8, prof, anchors.theta, cfg, ecfg).v - 8.0) <= v_step(cfg, 16));
  CHECK_THROWS_AS(coarse_velocity_angle(CVector::Ones(3), prof, anchors.theta, cfg, ecfg), ConfigError);
}

TEST_CASE("velocity/angle refinement resolves off-grid angles") {
  const SystemConfig cfg = small_config(8, 32, 8, 8);
  const Anchors anchors = reference_anchors();
  const RisProfileSet prof = random_profiles(cfg, 23);
  const EstimatorConfig ecfg = config_with(full_aod_grid(cfg, 16, 16));

  // Midpoint between two direction-cosine nodes.
  const double k1 = -0.25 + 1.0 / 16, k3 = -0.375 + 1.0 / 16;
  const AnglePair truth{std::atan2(std::sqrt(1 - k1 * k1 - k3 * k3), k1), std::acos(k3)};
  const double v_true = 1.3;
  const CVector z = angle_velocity_template(v_true, truth, prof, anchors.theta, cfg);
  const AngleVelocity coarse = coarse_velocity_angle(z, prof, anchors.theta, cfg, ecfg);
  StageDiagnostics d;
  auto r = refine_velocity_angle(z, coarse.v, coarse.phi, prof, anchors.theta, cfg, ecfg, &d);
  for (int pass = 0; pass < 2; ++pass)
    r = refine_velocity_angle(z, r.delta_v, r.phi, prof, anchors.theta, cfg, ecfg);
  CHECK(std::abs(r.phi.az - truth.az) < 1e-4);
  CHECK(std::abs(r.phi.el - truth.el) < 1e-4);
  CHECK(std::abs(r.delta_v - v_true) < 1e-3);
  CHECK(d.objective_end <= d.objective_start);

  // Exact start is a fixed point.
  const auto fixed = refine_velocity_angle(z, v_true, truth, prof, anchors.theta, cfg, ecfg);
  CHECK(std::abs(fixed.delta_v - v_true) < 1e-6);
  CHECK(std::abs(fixed.phi.az - truth.az) < 1e-6);

  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    CVector zn = z;
    for (Eigen::Index k = 0; k < zn.size(); ++k) zn(k) += rng.complex_normal(4.0);
    const AngleVelocity c = coarse_velocity_angle(zn, prof, anchors.theta, cfg, ecfg);
    StageDiagnostics dn;
    const auto rn = refine_velocity_angle(zn, c.v, c.phi, prof, anchors.theta, cfg, ecfg, &dn);
    const double before = projection_residual(zn, angle_velocity_template(c.v, c.phi, prof, anchors.theta, cfg));
    const double after = projection_residual(zn, angle_velocity_template(rn.delta_v, rn.phi, prof, anchors.theta, cfg));
    CHECK(after <= before);
  }
}

TEST_CASE("angle window") {
  const SystemConfig cfg = small_config(8, 4, 4, 4);
  AodGrid prior;
  prior.kind = GridKind::Prior;
  prior.cell = 0.01;
  const AnglePair w = angle_window(prior, {1.0, kPi / 2}, cfg);
  CHECK(w.el == doctest::Approx(0.01));
  CHECK(w.az == doctest::Approx(0.01));
  CHECK(angle_window(prior, {1.0, kPi / 6}, cfg).az == doctest::Approx(0.02));
  const AodGrid full = full_aod_grid(cfg, 64, 64);
  const AnglePair wf = angle_window(full, {kPi / 2, kPi / 2}, cfg);
  CHECK(wf.az == doctest::Approx(std::asin(2.0 / 64)).epsilon(1e-9));
  CHECK(wf.el == doctest::Approx(std::asin(2.0 / 64)).epsilon(1e-9));
}

TEST_CASE("Doppler compensation undoes the narrowband Doppler action") {
  const SystemConfig cfg = small_config(32, 8, 2, 2);
  const ChannelParams moving = direct_only(70e-9, 27.0);
  const ChannelParams still = direct_only(70e-9, 0.0);
  const RxSignal Y{direct_signal(moving, cfg)};
  const CMatrix back = doppler_compensate(Y, 27.0, cfg).Y;
  CHECK(rel_err(back, direct_signal(still, cfg)) < 1e-10);
  CHECK(rel_err(doppler_compensate(Y, 0.0, cfg).Y, Y.Y) < 1e-14);
  const DopplerMatrices a = doppler_matrices(9.0, cfg, false), b = doppler_matrices(-9.0, cfg, false);
  CHECK((a.E.cwiseInverse() - b.E).norm() < 1e-14);
  CHECK_THROWS_AS(doppler_compensate(RxSignal{CMatrix::Zero(3, 3)}, 1.0, cfg), ConfigError);
}

TEST_CASE("direct-path estimation") {
  const SystemConfig cfg = small_config(256, 16, 2, 2);
  EstimatorConfig ecfg;
  const ChannelParams p = direct_only(62.36e-9, 0.0, {1e-3, -2e-3});
  std::vector<StageDiagnostics> diag;
  const DirectEstimate e = direct_par_est(RxSignal{direct_signal(p, cfg)}, cfg, ecfg, &diag);
  CHECK(std::abs(e.tau_b - p.tau_b) < 1e-12);
  CHECK(std::abs(e.v_b) < 1e-9);
  CHECK(std::abs(e.g_b - p.g_b) / std::abs(p.g_b) < 1e-6);
  CHECK(diag.size() == 2);
  for (const auto& d : diag) CHECK(d.objective_end >= d.objective_start);

  const ChannelParams fast = direct_only(62.36e-9, 30.0, {1e-3, -2e-3});
  RxSignal noisy = add_noise(RxSignal{direct_signal(fast, cfg)}, 1e-8, 3);
  CHECK(std::abs(direct_par_est(noisy, cfg, ecfg).v_b - 30.0) < 0.1);

  const DirectEstimate junk = direct_par_est(add_noise(RxSignal{CMatrix::Zero(256, 16)}, 1.0, 4), cfg, ecfg);
  CHECK(std::isfinite(junk.tau_b));
  CHECK(std::isfinite(junk.v_b));
  CHECK(std::isfinite(std::abs(junk.g_b)));
}

TEST_CASE("reflected-path estimation") {
  const SystemConfig cfg = small_config(64, 32, 8, 8);
  const Anchors anchors = reference_anchors();
  const Vec3 p(-6, 8, -3);
  const RisProfileSet prof = directional_profiles(cfg, anchors, p, 0.5, 41);
  EstimatorConfig ecfg = config_with(prior_aod_grid(anchors, p, 0.5, 128, 42));
  UeState ue;
  ue.p = p;
  ChannelParams par = params_from_state(ue, anchors, {0.0, {1e-4, 5e-5}});

  SUBCASE("static, on-grid angle") {
    par.phi = ecfg.grid.angles[7];
    const RxSignal Y = synthesize(par, anchors.theta, prof, cfg, ChannelModel::DynamicNb);
    const ReflectedEstimate r = reflected_par_est(Y, prof, anchors.theta, cfg, ecfg);
    CHECK(std::abs(r.v_r) < 1e-6);
    CHECK(std::abs(r.tau_r - par.tau_r) < 1e-12);
    CHECK(std::abs(r.phi.az - par.phi.az) < 1e-6);
    CHECK(std::abs(r.phi.el - par.phi.el) < 1e-6);
    CHECK(std::abs(r.g_r - par.g_r) / std::abs(par.g_r) < 1e-5);
  }
  SUBCASE("moving UE") {
    par.v_r = 20.0;
    const RxSignal Y = synthesize(par, anchors.theta, prof, cfg, ChannelModel::DynamicNb);
    const ReflectedEstimate r = reflected_par_est(Y, prof, anchors.theta, cfg, ecfg);
    CHECK(std::abs(r.v_r - 20.0) < 0.1);
    REQUIRE(r.velocity_steps.size() == 3);
    for (std::size_t i = 1; i < r.velocity_steps.size(); ++i)
      CHECK(std::abs(r.velocity_steps[i]) <= std::abs(r.velocity_steps[i - 1]) + 1e-6);
  }
  CHECK_THROWS_AS(reflected_par_est(RxSignal{CMatrix::Zero(64, 32)}, random_profiles(small_config(64, 32, 4, 4), 1),
                                    anchors.theta, cfg, ecfg),
                  ConfigError);
}

TEST_CASE("position solve") {
  const SystemConfig cfg(table_one_settings());
  const Anchors anchors = reference_anchors();
  UeState ue;
  ue.p = {-10, 10, -10};
  ue.clock_bias = 3e-8;
  const ChannelParams par = params_from_state(ue, anchors, {1.0, 1.0});
  const Vec3 p_hat = position_est(par.tau_b, par.tau_r, par.phi, anchors, cfg);
  CHECK((p_hat - ue.p).norm() < 1e-6);

  // Closed form of the range equation.
  auto closed = [&](double dtau) -> Vec3 {
    const Vec3 b = anchors.p_b - anchors.p_r;
    const Vec3 k = anchors.R.transpose() * unit_direction(par.phi);
    const double D = b.norm();
    const double a = D - cfg.c() * dtau;
    return anchors.p_r + (D * D - a * a) / (2 * (a + k.dot(b))) * k;
  };
  CHECK((p_hat - closed(par.tau_r - par.tau_b)).norm() < 1e-6);

  const Vec3 moved = position_est(par.tau_b, par.tau_r + 1e-9, par.phi, anchors, cfg);
  // Here |dd/d(delta r)| = (D^2 + a^2) / (2 a^2), about 13.5, so 1 ns (0.3 m) moves the
  // estimate by metres; continuity shows up at smaller steps.
  CHECK((moved - p_hat).norm() > 0.0);
  CHECK((moved - p_hat).norm() < 6.0);
  const Vec3 nudged = position_est(par.tau_b, par.tau_r + 1e-12, par.phi, anchors, cfg);
  CHECK((nudged - p_hat).norm() < 5e-3);
  CHECK((moved - closed(par.tau_r + 1e-9 - par.tau_b)).norm() < 1e-6);

  // Rotated RIS.
  const Mat3 R = testing::rotation_zyx(0.3, 0.1, -0.2);
  const Anchors rot = Anchors::make({5, 5, 0}, {1, -1, 0.5}, R);
  UeState u2;
  u2.p = rot.p_r + R.transpose() * Vec3(-4, 9, -6);
  const ChannelParams p2 = params_from_state(u2, rot, {1.0, 1.0});
  CHECK((position_est(p2.tau_b, p2.tau_r, p2.phi, rot, cfg) - u2.p).norm() < 1e-6);

  // Directions along the BS-RIS line: the range equation is flat.
  const AnglePair toward_bs = anchors.theta;
  CHECK_THROWS_AS(position_est(0.0, 0.0, toward_bs, anchors, cfg), GeometryError);
  const AnglePair away{std::atan2(-1.0, -1.0), kPi / 2};
  CHECK_THROWS_AS(position_est(1e-9, 1e-9, away, anchors, cfg), GeometryError);
}

TEST_CASE("velocity vector from radial velocities") {
  const Anchors anchors = reference_anchors();
  const Vec3 p(-10, 10, -10), v(-30, 30, 0);
  const Vec3 got = velocity_vector_est(radial_velocity(v, p, anchors.p_b), radial_velocity(v, p, anchors.p_r), p, anchors);
  CHECK((got - v).norm() < 1e-9);
  CHECK(velocity_vector_est(0, 0, p, anchors).norm() == 0.0);
  // p on the line through both anchors projected to the plane.
  CHECK_THROWS_AS(velocity_vector_est(1, 1, Vec3(-3, -3, -4), anchors), SingularError);
  CHECK_THROWS_AS(velocity_vector_est(1, 1, anchors.p_r, anchors), GeometryError);
}

TEST_CASE("end-to-end noiseless inversion at desk scale") {
  const SystemConfig cfg(desk_scale_settings());
  const Anchors anchors = reference_anchors();
  const Vec3 xi = Vec3(-10, 10, -10) + Vec3(0.3, -0.2, 0.1);
  const RisProfileSet prof = directional_profiles(cfg, anchors, xi, 1.0, 11);
  EstimatorConfig ecfg = config_with(prior_aod_grid(anchors, xi, 1.0, 256, 5));

  UeState ue;
  ue.p = {-10, 10, -10};
  ue.clock_bias = 1e-6;
  SUBCASE("static, plain pipeline") {
    const ChannelParams par = params_from_state(ue, anchors, path_gains(ue, anchors, cfg, 7));
    const EstimationResult r = estimate(synthesize(par, anchors.theta, prof, cfg, ChannelModel::DynamicNb), prof,
                                        anchors, cfg, ecfg);
    CHECK((r.p_hat - ue.p).norm() < 1e-3);
    CHECK(std::abs(r.clock_bias_hat - ue.clock_bias) < 10e-12);
    CHECK(std::abs(r.v_b_hat) < 1e-2);
    CHECK(std::abs(r.v_r_hat) < 1e-2);
    CHECK(!r.position_degenerate);
    for (const auto& d : r.diagnostics) {
      if (d.stage.find("velocity_angle") != std::string::npos) CHECK(d.objective_end <= d.objective_start);
      else CHECK(d.objective_end >= d.objective_start);
    }
    const auto j = r.to_json(true);
    CHECK(j.contains("diagnostics"));
    CHECK(!r.to_json(false).contains("diagnostics"));
  }
  SUBCASE("moving, with interference cancellation") {
    ue.v = {-30, 30, 0};
    ecfg.sic_rounds = 2;
    const ChannelParams par = params_from_state(ue, anchors, path_gains(ue, anchors, cfg, 7));
    const EstimationResult r = estimate(synthesize(par, anchors.theta, prof, cfg, ChannelModel::DynamicNb), prof,
                                        anchors, cfg, ecfg);
    CHECK((r.p_hat - ue.p).norm() < 1e-3);
    CHECK(std::abs(r.clock_bias_hat - ue.clock_bias) < 10e-12);
    CHECK(std::abs(r.v_b_hat - par.v_b) < 1e-2);
    CHECK(std::abs(r.v_r_hat - par.v_r) < 1e-2);
    const Vec3 v = velocity_vector_est(r.v_b_hat, r.v_r_hat, r.p_hat, anchors);
    CHECK((v - ue.v).norm() < 0.05);
  }
}

TEST_CASE("estimator configuration validation") {
  EstimatorConfig e;
  CHECK_THROWS_AS(e.validate(), ConfigError);
  e.grid.angles.assign(1, {});
  CHECK_NOTHROW(e.validate());
  e.sic_rounds = 0;
  CHECK_THROWS_AS(e.validate(), ConfigError);
  e.sic_rounds = 1;
  e.N_tau = 1;
  CHECK_THROWS_AS(e.validate(), ConfigError);
}
