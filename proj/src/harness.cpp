#include "risloc/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "risloc/rng.hpp"

namespace risloc {

using nlohmann::json;

namespace {

// Stream tags for derive_seed; changing any of these changes every output.
// Seeds depend on the realization indices but not on the sweep index, so every
// sweep value sees the same profile, gain and noise draws (common random numbers).
enum SeedTag : std::uint64_t { kTagPrior = 1, kTagBeams = 2, kTagGrid = 3, kTagGains = 4, kTagNoise = 5 };

Vec3 vec3_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string(what) + " must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json vec3_json(const Vec3& v) { return json::array({v(0), v(1), v(2)}); }

ChannelModel model_from(const std::string& s) {
  if (s == "static_nb") return ChannelModel::StaticNb;
  if (s == "dynamic_nb") return ChannelModel::DynamicNb;
  if (s == "dynamic_wb") return ChannelModel::DynamicWb;
  throw ConfigError("unknown channel model '" + s + "'");
}

SweepKind sweep_from(const std::string& s) {
  if (s == "position_arc") return SweepKind::PositionArc;
  if (s == "bandwidth") return SweepKind::Bandwidth;
  if (s == "velocity") return SweepKind::Velocity;
  if (s == "sigma") return SweepKind::Sigma;
  if (s == "ris_size") return SweepKind::RisSize;
  throw ConfigError("unknown sweep kind '" + s + "'");
}

SystemSettings settings_from(const json& j, SystemSettings s) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  take("carrier_hz", s.carrier_hz);
  take("subcarriers", s.subcarriers);
  take("subcarrier_spacing_hz", s.subcarrier_spacing_hz);
  take("symbols", s.symbols);
  take("cp_duration_s", s.cp_duration_s);
  take("ris_rows", s.ris_rows);
  take("ris_cols", s.ris_cols);
  take("element_spacing_m", s.element_spacing_m);
  take("tx_power_dbm", s.tx_power_dbm);
  take("noise_psd_dbm_hz", s.noise_psd_dbm_hz);
  take("noise_figure_db", s.noise_figure_db);
  take("speed_of_light", s.speed_of_light);
  return s;
}

json settings_json(const SystemSettings& s) {
  return {{"carrier_hz", s.carrier_hz},
          {"subcarriers", s.subcarriers},
          {"subcarrier_spacing_hz", s.subcarrier_spacing_hz},
          {"symbols", s.symbols},
          {"cp_duration_s", s.cp_duration_s},
          {"ris_rows", s.ris_rows},
          {"ris_cols", s.ris_cols},
          {"element_spacing_m", s.element_spacing_m},
          {"tx_power_dbm", s.tx_power_dbm},
          {"noise_psd_dbm_hz", s.noise_psd_dbm_hz},
          {"noise_figure_db", s.noise_figure_db},
          {"speed_of_light", s.speed_of_light}};
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Runs fn(job) for job in [0, count) on a small pool; results are stored by index.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(count, 1)));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) fn(i);
  };
  if (threads <= 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

struct Realization {
  SweepPoint point;
  Anchors anchors;
  Vec3 xi;
  RisProfileSet profiles;
  std::pair<cplx, cplx> gains;
  ChannelParams params;
};

Realization realize(const ExperimentSpec& spec, std::size_t sweep_index, int profile) {
  SweepPoint point = sweep_point(spec, sweep_index);
  const Anchors anchors = Anchors::make(spec.p_b, spec.p_r, spec.R);
  const std::uint64_t s = spec.seed;
  const std::uint64_t pi = static_cast<std::uint64_t>(profile);

  Vec3 xi = spec.profiles.prior ? *spec.profiles.prior : Vec3(point.ue.p);
  if (!spec.profiles.prior) {
    Rng rng(derive_seed(s, {pi, kTagPrior}));
    xi = rng.in_ball(point.ue.p, point.sigma);
  }
  RisProfileSet profiles = spec.profiles.kind == ProfileKind::Directional
                               ? directional_profiles(point.cfg, anchors, xi, point.sigma, derive_seed(s, {pi, kTagBeams}))
                               : random_profiles(point.cfg, derive_seed(s, {pi, kTagBeams}));
  const auto gains = path_gains(point.ue, anchors, point.cfg, derive_seed(s, {pi, kTagGains}));
  const ChannelParams params = params_from_state(point.ue, anchors, gains, point.cfg.c());
  return {std::move(point), anchors, xi, std::move(profiles), gains, params};
}

EstimatorConfig estimator_for(const ExperimentSpec& spec, const Realization& r, int profile) {
  EstimatorConfig ecfg = spec.estimator;
  if (spec.grid.kind == GridKind::Prior) {
    ecfg.grid = prior_aod_grid(r.anchors, r.xi, r.point.sigma, spec.grid.n_phi,
                               derive_seed(spec.seed, {static_cast<std::uint64_t>(profile), kTagGrid}));
  } else {
    ecfg.grid = full_aod_grid(r.point.cfg, spec.grid.n_phi1, spec.grid.n_phi2);
  }
  return ecfg;
}

}  // namespace

std::string to_string(ChannelModel m) {
  switch (m) {
    case ChannelModel::StaticNb: return "static_nb";
    case ChannelModel::DynamicNb: return "dynamic_nb";
    case ChannelModel::DynamicWb: return "dynamic_wb";
  }
  return "?";
}

std::string to_string(SweepKind k) {
  switch (k) {
    case SweepKind::PositionArc: return "position_arc";
    case SweepKind::Bandwidth: return "bandwidth";
    case SweepKind::Velocity: return "velocity";
    case SweepKind::Sigma: return "sigma";
    case SweepKind::RisSize: return "ris_size";
  }
  return "?";
}

ExperimentSpec ExperimentSpec::from_json(const json& j) {
  try {
    ExperimentSpec spec;
    spec.schema_version = j.at("schema_version").get<int>();
    if (spec.schema_version != kSchemaVersion)
      throw ConfigError("unsupported schema_version " + std::to_string(spec.schema_version));
    spec.name = j.value("name", spec.name);

    const std::string preset = j.value("preset", std::string("desk"));
    SystemSettings base;
    if (preset == "desk") base = desk_scale_settings();
    else if (preset == "table1") base = table_one_settings();
    else throw ConfigError("unknown preset '" + preset + "'");
    spec.system = settings_from(j.value("system", json::object()), base);

    if (j.contains("anchors")) {
      const auto& a = j["anchors"];
      if (a.contains("p_b")) spec.p_b = vec3_from(a["p_b"], "anchors.p_b");
      if (a.contains("p_r")) spec.p_r = vec3_from(a["p_r"], "anchors.p_r");
      if (a.contains("R")) {
        const auto& R = a["R"];
        if (!R.is_array() || R.size() != 3) throw ConfigError("anchors.R must be 3x3");
        for (int i = 0; i < 3; ++i) spec.R.row(i) = vec3_from(R[i], "anchors.R row").transpose();
      }
    }
    if (j.contains("ue")) {
      const auto& u = j["ue"];
      if (u.contains("position")) spec.ue.p = vec3_from(u["position"], "ue.position");
      if (u.contains("velocity")) spec.ue.v = vec3_from(u["velocity"], "ue.velocity");
      spec.ue.clock_bias = u.value("clock_bias_s", 0.0);
    }

    const auto& sw = j.at("sweep");
    spec.sweep.kind = sweep_from(sw.at("kind").get<std::string>());
    spec.sweep.values = sw.at("values").get<std::vector<double>>();
    if (spec.sweep.kind == SweepKind::Velocity) spec.sweep.direction = {-1.0, 1.0, 0.0};
    if (sw.contains("direction")) spec.sweep.direction = vec3_from(sw["direction"], "sweep.direction");
    if (sw.contains("offset")) spec.sweep.offset = vec3_from(sw["offset"], "sweep.offset");

    if (j.contains("profiles")) {
      const auto& p = j["profiles"];
      const std::string kind = p.value("kind", std::string("directional"));
      if (kind == "directional") spec.profiles.kind = ProfileKind::Directional;
      else if (kind == "random") spec.profiles.kind = ProfileKind::Random;
      else throw ConfigError("unknown profile kind '" + kind + "'");
      spec.profiles.sigma = p.value("sigma", spec.profiles.sigma);
      if (p.contains("prior") && !p["prior"].is_null()) spec.profiles.prior = vec3_from(p["prior"], "profiles.prior");
    }
    spec.channel_model = model_from(j.value("channel_model", std::string("dynamic_nb")));
    spec.fim_model = model_from(j.value("fim_model", std::string("dynamic_wb")));
    spec.n_profile_realizations = j.value("n_profile_realizations", spec.n_profile_realizations);
    spec.n_noise_realizations = j.value("n_noise_realizations", spec.n_noise_realizations);
    if (j.contains("seeds")) spec.seed = j["seeds"].value("experiment", spec.seed);

    if (j.contains("estimator")) {
      const auto& e = j["estimator"];
      auto& c = spec.estimator;
      c.N_v = e.value("N_v", c.N_v);
      c.N_tau = e.value("N_tau", c.N_tau);
      c.N_nu = e.value("N_nu", c.N_nu);
      c.N_iter = e.value("N_iter", c.N_iter);
      c.refine_tol = e.value("refine_tol", c.refine_tol);
      c.refine_max_evals = e.value("refine_max_evals", c.refine_max_evals);
      c.use_fft2 = e.value("use_fft2", c.use_fft2);
      c.sic_rounds = e.value("sic_rounds", c.sic_rounds);
      if (e.contains("grid")) {
        const auto& g = e["grid"];
        const std::string kind = g.value("kind", std::string("prior"));
        if (kind == "prior") spec.grid.kind = GridKind::Prior;
        else if (kind == "full") spec.grid.kind = GridKind::Full;
        else throw ConfigError("unknown grid kind '" + kind + "'");
        spec.grid.n_phi = g.value("n_phi", spec.grid.n_phi);
        spec.grid.n_phi1 = g.value("n_phi1", spec.grid.n_phi1);
        spec.grid.n_phi2 = g.value("n_phi2", spec.grid.n_phi2);
      }
    }
    return spec;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed experiment spec: ") + e.what());
  }
}

json ExperimentSpec::to_json() const {
  json R_rows = json::array();
  for (int i = 0; i < 3; ++i) R_rows.push_back(vec3_json(R.row(i).transpose()));
  json prof = {{"kind", profiles.kind == ProfileKind::Directional ? "directional" : "random"}, {"sigma", profiles.sigma}};
  prof["prior"] = profiles.prior ? vec3_json(*profiles.prior) : json(nullptr);
  json grid_j = {{"kind", grid.kind == GridKind::Prior ? "prior" : "full"},
                 {"n_phi", grid.n_phi}, {"n_phi1", grid.n_phi1}, {"n_phi2", grid.n_phi2}};
  return {{"schema_version", schema_version},
          {"name", name},
          {"system", settings_json(system)},
          {"anchors", {{"p_b", vec3_json(p_b)}, {"p_r", vec3_json(p_r)}, {"R", R_rows}}},
          {"ue", {{"position", vec3_json(ue.p)}, {"velocity", vec3_json(ue.v)}, {"clock_bias_s", ue.clock_bias}}},
          {"sweep",
           {{"kind", to_string(sweep.kind)},
            {"values", sweep.values},
            {"direction", vec3_json(sweep.direction)},
            {"offset", vec3_json(sweep.offset)}}},
          {"profiles", prof},
          {"channel_model", to_string(channel_model)},
          {"fim_model", to_string(fim_model)},
          {"n_profile_realizations", n_profile_realizations},
          {"n_noise_realizations", n_noise_realizations},
          {"seeds", {{"experiment", seed}}},
          {"estimator",
           {{"N_v", estimator.N_v},
            {"N_tau", estimator.N_tau},
            {"N_nu", estimator.N_nu},
            {"N_iter", estimator.N_iter},
            {"refine_tol", estimator.refine_tol},
            {"refine_max_evals", estimator.refine_max_evals},
            {"use_fft2", estimator.use_fft2},
            {"sic_rounds", estimator.sic_rounds},
            {"grid", grid_j}}}};
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open spec file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("spec file " + path.string() + " is not valid JSON: " + e.what());
  }
  return ExperimentSpec::from_json(j);
}

ExperimentSpec demo_spec() {
  ExperimentSpec spec;
  spec.name = "demo-desk-arc";
  spec.sweep.kind = SweepKind::PositionArc;
  spec.sweep.values = {2.0, 5.0, 10.0, 20.0, 40.0};
  spec.n_profile_realizations = 10;
  spec.n_noise_realizations = 10;
  spec.seed = 2024;
  return spec;
}

SweepPoint sweep_point(const ExperimentSpec& spec, std::size_t index) {
  if (index >= spec.sweep.values.size()) throw ConfigError("sweep index out of range");
  const double value = spec.sweep.values[index];
  SystemSettings s = spec.system;
  UeState ue = spec.ue;
  double sigma = spec.profiles.sigma;
  switch (spec.sweep.kind) {
    case SweepKind::PositionArc:
      ue.p = value * spec.sweep.direction + spec.sweep.offset;
      break;
    case SweepKind::Bandwidth:
      if (!(value > 0.0)) throw ConfigError("bandwidth sweep values must be positive");
      s.subcarriers = static_cast<int>(std::lround(value / s.subcarrier_spacing_hz));
      if (s.subcarriers < 1) throw ConfigError("bandwidth sweep value gives fewer than one subcarrier");
      break;
    case SweepKind::Velocity: {
      const double n = spec.sweep.direction.norm();
      if (!(n > 0.0)) throw ConfigError("velocity sweep direction must be nonzero");
      ue.v = value * spec.sweep.direction / n;
      break;
    }
    case SweepKind::Sigma:
      sigma = value;
      break;
    case SweepKind::RisSize: {
      const long m = std::lround(value);
      if (m < 1 || std::abs(value - static_cast<double>(m)) > 1e-9) throw ConfigError("ris_size values must be positive integers");
      s.ris_rows = s.ris_cols = static_cast<int>(m);
      break;
    }
  }
  return {SystemConfig(s), ue, sigma};
}

ValidationReport validate_spec(const ExperimentSpec& spec) {
  ValidationReport rep;
  auto error = [&](std::string m) { rep.errors.push_back(std::move(m)); };
  if (spec.n_profile_realizations < 1) error("n_profile_realizations must be >= 1");
  if (spec.n_noise_realizations < 1) error("n_noise_realizations must be >= 1");
  if (spec.sweep.values.empty()) error("sweep.values must be nonempty");
  if (spec.profiles.kind == ProfileKind::Directional && !(spec.profiles.sigma > 0.0))
    error("profiles.sigma must be positive");
  if (spec.grid.kind == GridKind::Prior && spec.grid.n_phi < 2) error("estimator.grid.n_phi must be >= 2");
  if (spec.grid.kind == GridKind::Full && (spec.grid.n_phi1 < 2 || spec.grid.n_phi2 < 2))
    error("estimator.grid.n_phi1 and n_phi2 must be >= 2");
  {
    EstimatorConfig e = spec.estimator;
    e.grid.angles.assign(1, AnglePair{});
    try {
      e.validate();
    } catch (const ConfigError& ex) {
      error(std::string("estimator: ") + ex.what());
    }
  }
  std::optional<Anchors> anchors;
  try {
    anchors = Anchors::make(spec.p_b, spec.p_r, spec.R);
    if (normal_cosine(anchors->theta) < 0.0) error("anchors: BS lies behind the RIS plane");
  } catch (const Error& ex) {
    error(std::string("anchors: ") + ex.what());
  }
  if (!anchors) return rep;

  for (std::size_t i = 0; i < spec.sweep.values.size(); ++i) {
    const std::string at = "sweep value " + fmt(spec.sweep.values[i]) + ": ";
    try {
      const SweepPoint pt = sweep_point(spec, i);
      if (spec.profiles.kind == ProfileKind::Directional && !(pt.sigma > 0.0)) error(at + "sigma must be positive");
      if (spec.grid.kind == GridKind::Prior && !(pt.sigma > 0.0)) error(at + "prior grid needs sigma > 0");
      const Vec3 local = anchors->R * (pt.ue.p - anchors->p_r);
      if (!(local(1) > 0.0)) {
        error(at + "UE position is not in front of the RIS (local y <= 0)");
        continue;
      }
      if ((pt.ue.p - anchors->p_b).norm() == 0.0) {
        error(at + "UE coincides with the BS");
        continue;
      }
      const ChannelParams params = params_from_state(pt.ue, *anchors, {cplx(1.0), cplx(1.0)}, pt.cfg.c());
      const double t_max = pt.cfg.max_unambiguous_delay();
      if (params.tau_b < 0.0 || params.tau_b >= t_max)
        error(at + "tau_b = " + fmt(params.tau_b) + " s is outside the unambiguous delay range [0, " + fmt(t_max) + ")");
      if (params.tau_r < 0.0 || params.tau_r >= t_max)
        error(at + "tau_r = " + fmt(params.tau_r) + " s is outside the unambiguous delay range [0, " + fmt(t_max) + ")");
      const NarrowbandValidity nb = nb_validity(pt.cfg, params, *anchors);
      if (nb.mobility_ratio >= 1.0)
        rep.warnings.push_back(at + "mobility ratio max|v| L N / c = " + fmt(nb.mobility_ratio) + " is not << 1");
      if (nb.aperture_ratio >= 1.0)
        rep.warnings.push_back(at + "aperture ratio max(M1,M2) d sin(alpha) B / c = " + fmt(nb.aperture_ratio) +
                               " is not << 1 (spatial-wideband effects)");
    } catch (const Error& ex) {
      error(at + ex.what());
    }
  }
  return rep;
}

std::vector<TrialRecord> run_experiment(const ExperimentSpec& spec, const RunOptions& opt) {
  const ValidationReport rep = validate_spec(spec);
  if (!rep.ok()) throw ConfigError("invalid experiment spec: " + rep.errors.front());

  const std::size_t n_sweep = spec.sweep.values.size();
  const std::size_t n_prof = static_cast<std::size_t>(spec.n_profile_realizations);
  const int n_noise = spec.n_noise_realizations;
  std::vector<std::vector<TrialRecord>> per_job(n_sweep * n_prof);

  parallel_for(per_job.size(), opt.threads, [&](std::size_t job) {
    const std::size_t si = job / n_prof;
    const int pi = static_cast<int>(job % n_prof);
    auto& out = per_job[job];
    TrialRecord base;
    base.sweep_index = si;
    base.sweep_value = spec.sweep.values[si];
    base.profile = pi;
    try {
      const Realization r = realize(spec, si, pi);
      base.truth = r.point.ue;
      base.v_b = r.params.v_b;
      base.v_r = r.params.v_r;
      try {
        base.bound = compute_fim(r.point.ue, r.anchors, r.gains, r.profiles, r.point.cfg, r.point.cfg.noise_variance(),
                                 spec.fim_model);
        base.bound_ok = true;
      } catch (const SingularError& ex) {
        base.message = ex.what();
      }
      const EstimatorConfig ecfg = estimator_for(spec, r, pi);
      const RxSignal clean = synthesize(r.params, r.anchors.theta, r.profiles, r.point.cfg, spec.channel_model);
      for (int ni = 0; ni < n_noise; ++ni) {
        TrialRecord rec = base;
        rec.noise = ni;
        try {
          const RxSignal Y = add_noise(clean, r.point.cfg.noise_variance(),
                                       derive_seed(spec.seed, {static_cast<std::uint64_t>(pi),
                                                               static_cast<std::uint64_t>(ni), kTagNoise}));
          rec.estimate = estimate(Y, r.profiles, r.anchors, r.point.cfg, ecfg);
          rec.err_position = (rec.estimate.p_hat - rec.truth.p).norm();
          rec.err_clock = std::abs(rec.estimate.clock_bias_hat - rec.truth.clock_bias);
          rec.err_v_b = std::abs(rec.estimate.v_b_hat - rec.v_b);
          rec.err_v_r = std::abs(rec.estimate.v_r_hat - rec.v_r);
          try {
            rec.v_hat = velocity_vector_est(rec.estimate.v_b_hat, rec.estimate.v_r_hat, rec.estimate.p_hat, r.anchors);
            rec.err_velocity = (rec.v_hat - rec.truth.v).norm();
          } catch (const Error&) {
            rec.err_velocity = std::numeric_limits<double>::quiet_NaN();
          }
        } catch (const std::exception& ex) {
          rec.failed = true;
          rec.message = ex.what();
        }
        out.push_back(std::move(rec));
      }
    } catch (const std::exception& ex) {
      for (int ni = 0; ni < n_noise; ++ni) {
        TrialRecord rec = base;
        rec.noise = ni;
        rec.failed = true;
        rec.message = ex.what();
        out.push_back(std::move(rec));
      }
    }
  });

  std::vector<TrialRecord> records;
  records.reserve(per_job.size() * static_cast<std::size_t>(n_noise));
  for (auto& job : per_job)
    for (auto& rec : job) records.push_back(std::move(rec));
  std::stable_sort(records.begin(), records.end(), [](const TrialRecord& a, const TrialRecord& b) {
    return std::tie(a.sweep_index, a.profile, a.noise) < std::tie(b.sweep_index, b.profile, b.noise);
  });
  return records;
}

std::vector<BoundRecord> run_bounds(const ExperimentSpec& spec, const RunOptions& opt) {
  const ValidationReport rep = validate_spec(spec);
  if (!rep.ok()) throw ConfigError("invalid experiment spec: " + rep.errors.front());
  const std::size_t n_prof = static_cast<std::size_t>(spec.n_profile_realizations);
  std::vector<BoundRecord> records(spec.sweep.values.size() * n_prof);
  parallel_for(records.size(), opt.threads, [&](std::size_t job) {
    BoundRecord& rec = records[job];
    rec.sweep_index = job / n_prof;
    rec.sweep_value = spec.sweep.values[rec.sweep_index];
    rec.profile = static_cast<int>(job % n_prof);
    try {
      const Realization r = realize(spec, rec.sweep_index, rec.profile);
      rec.truth = r.point.ue;
      rec.validity = nb_validity(r.point.cfg, r.params, r.anchors);
      rec.bound = compute_fim(r.point.ue, r.anchors, r.gains, r.profiles, r.point.cfg, r.point.cfg.noise_variance(),
                              spec.fim_model);
      rec.bound_ok = true;
    } catch (const std::exception& ex) {
      rec.message = ex.what();
    }
  });
  return records;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<SummaryRow> aggregate(const std::vector<TrialRecord>& records) {
  if (records.empty()) throw ConfigError("aggregate: no records");
  std::size_t n_sweep = 0;
  for (const auto& r : records) n_sweep = std::max(n_sweep, r.sweep_index + 1);
  std::vector<SummaryRow> rows;
  for (std::size_t si = 0; si < n_sweep; ++si) {
    SummaryRow row;
    row.sweep_index = si;
    std::vector<double> pos;
    double se_c = 0, se_vb = 0, se_vr = 0, se_v = 0, peb_sum = 0, peb_sq = 0, crb_c = 0, crb_vb = 0, crb_vr = 0;
    int n_v = 0;
    bool seen = false;
    for (const auto& r : records) {
      if (r.sweep_index != si) continue;
      seen = true;
      row.sweep_value = r.sweep_value;
      if (r.failed) {
        ++row.failed;
        continue;
      }
      ++row.trials;
      pos.push_back(r.err_position);
      se_c += r.err_clock * r.err_clock;
      se_vb += r.err_v_b * r.err_v_b;
      se_vr += r.err_v_r * r.err_v_r;
      if (std::isfinite(r.err_velocity)) {
        se_v += r.err_velocity * r.err_velocity;
        ++n_v;
      }
      if (r.bound_ok) {
        ++row.bounds;
        peb_sum += r.bound.peb;
        peb_sq += r.bound.peb * r.bound.peb;
        crb_c += r.bound.crb_clock;
        crb_vb += r.bound.crb_v_b;
        crb_vr += r.bound.crb_v_r;
      }
    }
    if (!seen) continue;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const double n = row.trials;
    double se_p = 0;
    for (double e : pos) se_p += e * e;
    row.rmse_position = n > 0 ? std::sqrt(se_p / n) : nan;
    row.rmse_clock = n > 0 ? std::sqrt(se_c / n) : nan;
    row.rmse_v_b = n > 0 ? std::sqrt(se_vb / n) : nan;
    row.rmse_v_r = n > 0 ? std::sqrt(se_vr / n) : nan;
    row.rmse_velocity = n_v > 0 ? std::sqrt(se_v / n_v) : nan;
    row.mean_position = n > 0 ? std::accumulate(pos.begin(), pos.end(), 0.0) / n : nan;
    row.median_position = percentile(pos, 0.5);
    row.p90_position = percentile(pos, 0.9);
    const double nb = row.bounds;
    row.mean_peb = nb > 0 ? peb_sum / nb : nan;
    row.rms_peb = nb > 0 ? std::sqrt(peb_sq / nb) : nan;
    row.rms_crb_clock = nb > 0 ? std::sqrt(crb_c / nb) : nan;
    row.rms_crb_v_b = nb > 0 ? std::sqrt(crb_vb / nb) : nan;
    row.rms_crb_v_r = nb > 0 ? std::sqrt(crb_vr / nb) : nan;
    rows.push_back(row);
  }
  return rows;
}

std::vector<std::pair<double, double>> position_error_cdf(const std::vector<TrialRecord>& records,
                                                          std::size_t sweep_index) {
  std::vector<double> e;
  for (const auto& r : records)
    if (r.sweep_index == sweep_index && !r.failed) e.push_back(r.err_position);
  std::sort(e.begin(), e.end());
  std::vector<std::pair<double, double>> cdf;
  cdf.reserve(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) cdf.emplace_back(e[i], static_cast<double>(i + 1) / e.size());
  return cdf;
}

json summary_json(const ExperimentSpec& spec, const std::vector<SummaryRow>& rows) {
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"sweep_index", r.sweep_index},
                   {"sweep_value", r.sweep_value},
                   {"trials", r.trials},
                   {"failed", r.failed},
                   {"bounds", r.bounds},
                   {"rmse_position", r.rmse_position},
                   {"rmse_clock", r.rmse_clock},
                   {"rmse_v_b", r.rmse_v_b},
                   {"rmse_v_r", r.rmse_v_r},
                   {"rmse_velocity", r.rmse_velocity},
                   {"mean_position", r.mean_position},
                   {"median_position", r.median_position},
                   {"p90_position", r.p90_position},
                   {"mean_peb", r.mean_peb},
                   {"rms_peb", r.rms_peb},
                   {"rms_crb_clock", r.rms_crb_clock},
                   {"rms_crb_v_b", r.rms_crb_v_b},
                   {"rms_crb_v_r", r.rms_crb_v_r}});
  return {{"schema_version", kSchemaVersion},
          {"name", spec.name},
          {"seed", spec.seed},
          {"sweep_kind", to_string(spec.sweep.kind)},
          {"spec", spec.to_json()},
          {"rows", out}};
}

std::string records_csv(const std::vector<TrialRecord>& records) {
  std::ostringstream os;
  os << "sweep_index,sweep_value,profile,noise,failed,p_x,p_y,p_z,v_x,v_y,v_z,clock_bias,v_b,v_r,"
        "p_hat_x,p_hat_y,p_hat_z,clock_bias_hat,v_b_hat,v_r_hat,v_hat_x,v_hat_y,tau_b_hat,tau_r_hat,"
        "phi_az_hat,phi_el_hat,err_position,err_clock,err_v_b,err_v_r,err_velocity,"
        "bound_ok,peb,crb_clock,crb_v_b,crb_v_r,message\n";
  for (const auto& r : records) {
    const auto& e = r.estimate;
    std::string msg = r.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    os << r.sweep_index << ',' << fmt(r.sweep_value) << ',' << r.profile << ',' << r.noise << ',' << (r.failed ? 1 : 0);
    for (double x : {r.truth.p(0), r.truth.p(1), r.truth.p(2), r.truth.v(0), r.truth.v(1), r.truth.v(2),
                     r.truth.clock_bias, r.v_b, r.v_r, e.p_hat(0), e.p_hat(1), e.p_hat(2), e.clock_bias_hat,
                     e.v_b_hat, e.v_r_hat, r.v_hat(0), r.v_hat(1), e.tau_b_hat, e.tau_r_hat, e.phi_hat.az,
                     e.phi_hat.el, r.err_position, r.err_clock, r.err_v_b, r.err_v_r, r.err_velocity})
      os << ',' << fmt(x);
    os << ',' << (r.bound_ok ? 1 : 0);
    for (double x : {r.bound.peb, r.bound.crb_clock, r.bound.crb_v_b, r.bound.crb_v_r}) os << ',' << fmt(x);
    os << ',' << msg << '\n';
  }
  return os.str();
}

std::string bounds_csv(const std::vector<BoundRecord>& records) {
  std::ostringstream os;
  os << "sweep_index,sweep_value,profile,p_x,p_y,p_z,v_x,v_y,v_z,bound_ok,peb,crb_clock,crb_v_b,crb_v_r,"
        "condition_ch,condition_po,mobility_ratio,aperture_ratio,message\n";
  for (const auto& r : records) {
    std::string msg = r.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    os << r.sweep_index << ',' << fmt(r.sweep_value) << ',' << r.profile;
    for (double x : {r.truth.p(0), r.truth.p(1), r.truth.p(2), r.truth.v(0), r.truth.v(1), r.truth.v(2)})
      os << ',' << fmt(x);
    os << ',' << (r.bound_ok ? 1 : 0);
    for (double x : {r.bound.peb, r.bound.crb_clock, r.bound.crb_v_b, r.bound.crb_v_r, r.bound.condition_numbers.first,
                     r.bound.condition_numbers.second, r.validity.mobility_ratio, r.validity.aperture_ratio})
      os << ',' << fmt(x);
    os << ',' << msg << '\n';
  }
  return os.str();
}

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
  if (!out) throw Error("failed writing " + p.string());
}

json record_json(const TrialRecord& r) {
  json j = {{"sweep_index", r.sweep_index}, {"sweep_value", r.sweep_value}, {"profile", r.profile},
            {"noise", r.noise}, {"failed", r.failed}, {"message", r.message},
            {"truth", {{"p", vec3_json(r.truth.p)}, {"v", vec3_json(r.truth.v)}, {"clock_bias", r.truth.clock_bias},
                       {"v_b", r.v_b}, {"v_r", r.v_r}}},
            {"errors", {{"position", r.err_position}, {"clock", r.err_clock}, {"v_b", r.err_v_b},
                        {"v_r", r.err_v_r}, {"velocity", r.err_velocity}}},
            {"v_hat", vec3_json(r.v_hat)}};
  if (!r.failed) j["estimate"] = r.estimate.to_json(false);
  j["bound"] = r.bound_ok ? r.bound.to_json() : json(nullptr);
  return j;
}

}  // namespace

std::vector<std::filesystem::path> write_run_outputs(const std::filesystem::path& dir, const ExperimentSpec& spec,
                                                     const std::vector<TrialRecord>& records, OutputFormat fmt_kind) {
  std::filesystem::create_directories(dir);
  const std::string tag = std::to_string(spec.seed);
  std::vector<std::filesystem::path> paths;
  if (fmt_kind == OutputFormat::Csv) {
    paths.push_back(dir / ("records_" + tag + ".csv"));
    write_file(paths.back(), records_csv(records));
  } else {
    json arr = json::array();
    for (const auto& r : records) arr.push_back(record_json(r));
    paths.push_back(dir / ("records_" + tag + ".json"));
    write_file(paths.back(), arr.dump(1) + "\n");
  }
  paths.push_back(dir / ("summary_" + tag + ".json"));
  write_file(paths.back(), summary_json(spec, aggregate(records)).dump(2) + "\n");

  std::ostringstream cdf;
  cdf << "sweep_index,sweep_value,err_position,cdf\n";
  for (std::size_t si = 0; si < spec.sweep.values.size(); ++si)
    for (const auto& [e, F] : position_error_cdf(records, si))
      cdf << si << ',' << fmt(spec.sweep.values[si]) << ',' << fmt(e) << ',' << fmt(F) << '\n';
  paths.push_back(dir / ("cdf_" + tag + ".csv"));
  write_file(paths.back(), cdf.str());
  return paths;
}

std::vector<std::filesystem::path> write_bound_outputs(const std::filesystem::path& dir, const ExperimentSpec& spec,
                                                       const std::vector<BoundRecord>& records, OutputFormat fmt_kind) {
  std::filesystem::create_directories(dir);
  const std::string tag = std::to_string(spec.seed);
  std::vector<std::filesystem::path> paths;
  if (fmt_kind == OutputFormat::Csv) {
    paths.push_back(dir / ("bounds_" + tag + ".csv"));
    write_file(paths.back(), bounds_csv(records));
  } else {
    json arr = json::array();
    for (const auto& r : records) {
      arr.push_back({{"sweep_index", r.sweep_index}, {"sweep_value", r.sweep_value}, {"profile", r.profile},
                     {"p", vec3_json(r.truth.p)}, {"v", vec3_json(r.truth.v)},
                     {"bound", r.bound_ok ? r.bound.to_json() : json(nullptr)},
                     {"mobility_ratio", r.validity.mobility_ratio}, {"aperture_ratio", r.validity.aperture_ratio},
                     {"message", r.message}});
    }
    paths.push_back(dir / ("bounds_" + tag + ".json"));
    write_file(paths.back(), arr.dump(1) + "\n");
  }
  // Per sweep value: mean and RMS PEB over profile realizations.
  json rows = json::array();
  for (std::size_t si = 0; si < spec.sweep.values.size(); ++si) {
    double s = 0, sq = 0;
    int n = 0;
    for (const auto& r : records)
      if (r.sweep_index == si && r.bound_ok) {
        s += r.bound.peb;
        sq += r.bound.peb * r.bound.peb;
        ++n;
      }
    rows.push_back({{"sweep_index", si}, {"sweep_value", spec.sweep.values[si]}, {"bounds", n},
                    {"mean_peb", n ? s / n : std::numeric_limits<double>::quiet_NaN()},
                    {"rms_peb", n ? std::sqrt(sq / n) : std::numeric_limits<double>::quiet_NaN()}});
  }
  paths.push_back(dir / ("bounds_summary_" + tag + ".json"));
  write_file(paths.back(), json({{"schema_version", kSchemaVersion}, {"name", spec.name}, {"seed", spec.seed},
                                 {"sweep_kind", to_string(spec.sweep.kind)}, {"spec", spec.to_json()}, {"rows", rows}})
                                   .dump(2) + "\n");
  return paths;
}

}  // namespace risloc
