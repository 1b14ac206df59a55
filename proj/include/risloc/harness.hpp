#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "risloc/estimator.hpp"
#include "risloc/fim.hpp"

namespace risloc {

enum class SweepKind { PositionArc, Bandwidth, Velocity, Sigma, RisSize };

struct SweepSpec {
  SweepKind kind = SweepKind::PositionArc;
  std::vector<double> values;
  /// position_arc: p = value * direction + offset. velocity: v = value * direction / |direction|.
  Vec3 direction{-1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0), 0.0};
  Vec3 offset{0.0, 0.0, -10.0};
};

struct ProfileSpec {
  ProfileKind kind = ProfileKind::Directional;
  double sigma = 1.0;
  /// Fixed prior position. When absent a prior is drawn uniformly from the sigma-ball
  /// around the true position for every profile realization.
  std::optional<Vec3> prior;
};

struct GridSpec {
  GridKind kind = GridKind::Prior;
  int n_phi = 256;
  int n_phi1 = 64;
  int n_phi2 = 64;
};

struct ExperimentSpec {
  int schema_version = 1;
  std::string name = "experiment";
  SystemSettings system = desk_scale_settings();
  Vec3 p_b{5.0, 5.0, 0.0};
  Vec3 p_r{0.0, 0.0, 0.0};
  Mat3 R = Mat3::Identity();
  UeState ue;
  SweepSpec sweep;
  ProfileSpec profiles;
  ChannelModel channel_model = ChannelModel::DynamicNb;
  ChannelModel fim_model = ChannelModel::DynamicWb;
  int n_profile_realizations = 20;
  int n_noise_realizations = 20;
  std::uint64_t seed = 1;
  EstimatorConfig estimator;  ///< grid is built per profile realization from `grid`
  GridSpec grid;

  static ExperimentSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

inline constexpr int kSchemaVersion = 1;

ExperimentSpec load_spec(const std::filesystem::path& path);
/// Built-in desk-scale position-arc preset.
ExperimentSpec demo_spec();

std::string to_string(ChannelModel m);
std::string to_string(SweepKind k);

/// Configuration, UE state and prior radius at one sweep point.
struct SweepPoint {
  SystemConfig cfg;
  UeState ue;
  double sigma;
};
SweepPoint sweep_point(const ExperimentSpec& spec, std::size_t index);

struct ValidationReport {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  bool ok() const { return errors.empty(); }
};
ValidationReport validate_spec(const ExperimentSpec& spec);

struct TrialRecord {
  std::size_t sweep_index = 0;
  double sweep_value = 0.0;
  int profile = 0;
  int noise = 0;
  UeState truth;
  double v_b = 0.0;
  double v_r = 0.0;
  EstimationResult estimate;
  Vec3 v_hat = Vec3::Zero();
  double err_position = 0.0;
  double err_clock = 0.0;
  double err_v_b = 0.0;
  double err_v_r = 0.0;
  double err_velocity = 0.0;  ///< NaN when the velocity solve was singular
  bool bound_ok = false;
  FimResult bound;
  bool failed = false;
  std::string message;
};

struct BoundRecord {
  std::size_t sweep_index = 0;
  double sweep_value = 0.0;
  int profile = 0;
  UeState truth;
  bool bound_ok = false;
  FimResult bound;
  NarrowbandValidity validity{};
  std::string message;
};

struct RunOptions {
  unsigned threads = 1;  ///< 0 = hardware concurrency
};

/// Deterministic for a fixed spec, independent of the thread count.
std::vector<TrialRecord> run_experiment(const ExperimentSpec& spec, const RunOptions& opt = {});
std::vector<BoundRecord> run_bounds(const ExperimentSpec& spec, const RunOptions& opt = {});

struct SummaryRow {
  std::size_t sweep_index = 0;
  double sweep_value = 0.0;
  int trials = 0;
  int failed = 0;
  double rmse_position = 0.0;
  double rmse_clock = 0.0;
  double rmse_v_b = 0.0;
  double rmse_v_r = 0.0;
  double rmse_velocity = 0.0;
  double mean_position = 0.0;
  double median_position = 0.0;
  double p90_position = 0.0;
  double mean_peb = 0.0;
  double rms_peb = 0.0;  ///< sqrt(mean peb^2), the bound matched to an RMSE
  double rms_crb_clock = 0.0;
  double rms_crb_v_b = 0.0;
  double rms_crb_v_r = 0.0;
  int bounds = 0;
};

/// Rows in sweep order; failed trials are counted but excluded from the statistics.
std::vector<SummaryRow> aggregate(const std::vector<TrialRecord>& records);

/// Empirical CDF of the position error at one sweep index: sorted (error, F) with F = i / n.
std::vector<std::pair<double, double>> position_error_cdf(const std::vector<TrialRecord>& records,
                                                          std::size_t sweep_index);

/// Linear-interpolation percentile, q in [0, 1].
double percentile(std::vector<double> values, double q);

nlohmann::json summary_json(const ExperimentSpec& spec, const std::vector<SummaryRow>& rows);

enum class OutputFormat { Csv, Json };

/// Writes records, summary and CDF files into `dir`; returns the paths written.
std::vector<std::filesystem::path> write_run_outputs(const std::filesystem::path& dir, const ExperimentSpec& spec,
                                                     const std::vector<TrialRecord>& records, OutputFormat fmt);
std::vector<std::filesystem::path> write_bound_outputs(const std::filesystem::path& dir, const ExperimentSpec& spec,
                                                       const std::vector<BoundRecord>& records, OutputFormat fmt);

std::string records_csv(const std::vector<TrialRecord>& records);
std::string bounds_csv(const std::vector<BoundRecord>& records);

}  // namespace risloc
