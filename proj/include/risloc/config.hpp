#pragma once

#include "risloc/types.hpp"

namespace risloc {

/// User-facing physical and waveform settings, all in SI units except where the
/// name says dBm / dB.
struct SystemSettings {
  double carrier_hz = 30e9;
  int subcarriers = 3000;
  double subcarrier_spacing_hz = 120e3;
  int symbols = 256;
  double cp_duration_s = 0.58e-6;
  int ris_rows = 64;
  int ris_cols = 64;
  double element_spacing_m = 0.005;
  double tx_power_dbm = 20.0;
  double noise_psd_dbm_hz = -174.0;
  double noise_figure_db = 8.0;
  double speed_of_light = 3e8;
};

/// Validated system configuration with derived quantities (wavelengths, symbol
/// durations, pilot energy, RIS element positions).
class SystemConfig {
 public:
  explicit SystemConfig(const SystemSettings& s);

  const SystemSettings& settings() const { return s_; }

  double f_c() const { return s_.carrier_hz; }
  double c() const { return s_.speed_of_light; }
  double lambda() const { return s_.speed_of_light / s_.carrier_hz; }
  /// Wavelength of subcarrier n (n = 0 is the carrier).
  double lambda_n(int n) const { return s_.speed_of_light / (s_.carrier_hz + n * s_.subcarrier_spacing_hz); }
  int N() const { return s_.subcarriers; }
  double delta_f() const { return s_.subcarrier_spacing_hz; }
  double bandwidth() const { return s_.subcarriers * s_.subcarrier_spacing_hz; }
  int L() const { return s_.symbols; }
  double T_o() const { return 1.0 / s_.subcarrier_spacing_hz; }
  double T_cp() const { return s_.cp_duration_s; }
  double T_sym() const { return s_.cp_duration_s + T_o(); }
  int M1() const { return s_.ris_rows; }
  int M2() const { return s_.ris_cols; }
  int M() const { return s_.ris_rows * s_.ris_cols; }
  double d() const { return s_.element_spacing_m; }

  /// Per-subcarrier pilot energy, from a total transmit power of N*delta_f*E_s.
  double E_s() const { return E_s_; }
  /// Noise PSD including the receiver noise figure, W/Hz.
  double noise_psd() const { return noise_psd_; }
  /// Per-element complex noise variance: noise_psd * delta_f.
  double noise_variance() const { return noise_psd_ * s_.subcarrier_spacing_hz; }

  /// Element positions in the RIS frame, 3 x M. Column m = r + M1*s holds q_{r,s}.
  const Eigen::Matrix3Xd& Q() const { return Q_; }

  /// Upper end of the unambiguous delay window [0, 1/delta_f).
  double max_unambiguous_delay() const { return T_o(); }

 private:
  SystemSettings s_;
  double E_s_;
  double noise_psd_;
  Eigen::Matrix3Xd Q_;
};

/// Full-scale parameters (64x64 RIS, 3000 subcarriers, 256 symbols).
SystemSettings table_one_settings();

/// Reduced configuration used by the Monte-Carlo presets: 16x16 RIS, 256
/// subcarriers, 64 symbols, transmit power raised to 70 dBm to keep the high-SNR regime.
SystemSettings desk_scale_settings();

double dbm_to_watt(double dbm);

}  // namespace risloc
