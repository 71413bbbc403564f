#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace pmn {

using Complex = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSpeedOfLight = 299792458.0;

inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double lin) { return 10.0 * std::log10(lin); }

/// Physical-layer and algorithm constants for one RRU.
///
/// `num_subcarriers` is the total FFT size and sets the subcarrier spacing
/// B/N; only the first `num_occupied` subcarriers (n = 1..num_occupied) carry
/// SSB energy and enter the measurement model. Defaults reproduce the
/// 2.35 GHz / 100 MHz / 4-antenna setup with 10 ns delay bins.
struct SystemConfig {
  int num_antennas = 4;            // M, uniform linear array at half wavelength
  int num_subcarriers = 512;       // N total, sets subcarrier spacing
  int num_occupied = 240;          // occupied subcarriers, n = 1..num_occupied
  double bandwidth_hz = 100e6;     // B
  double cp_duration_s = 0.4e-6;   // T_p
  double carrier_freq_hz = 2.35e9; // f_c
  int num_ssb = 4;                 // G beams per burst set
  int burst_spacing_symbols = 128; // N_s symbols between consecutive burst sets
  int canceller_order = 2;         // P
  int delay_grid = 512;            // N_d
  int dict_cols = 170;             // N_p, number of grid points used
  int grid_origin = 1;             // first grid index (1 per the c(1/N_d) convention; 0 optional)
  double tx_power_dbm = 30.0;
  double noise_psd_dbm_hz = -174.0;        // N_0
  double clutter_doppler_bound_hz = 1.0;   // |f_D| below this counts as clutter
  double beam_sector_min_deg = -60.0;      // SSB sweep sector
  double beam_sector_max_deg = 60.0;
  double doppler_phase_guard = 0.1;        // max |f_D|*T_s accepted by the simulator
  double power_notch_epsilon = 1e-3;       // |a_i| below this marks power estimates unreliable

  double subcarrier_spacing_hz() const { return bandwidth_hz / num_subcarriers; }
  double symbol_period_s() const { return num_subcarriers / bandwidth_hz + cp_duration_s; }
  double delay_bin_s() const { return 1.0 / (delay_grid * subcarrier_spacing_hz()); }
  /// Largest representable delay, N_p/(N_d*Δf).
  double delay_coverage_s() const { return dict_cols * delay_bin_s(); }
  double blind_speed_hz() const { return 1.0 / (burst_spacing_symbols * symbol_period_s()); }
  int measurement_cols() const { return 3 * num_antennas * num_ssb; } // Υ = 3MG
  double tx_power_w() const { return dbm_to_watts(tx_power_dbm); }
  /// Total thermal noise power over the band, N_0 + 10 log10(B), in watts.
  double total_noise_power_w() const {
    return dbm_to_watts(noise_psd_dbm_hz + 10.0 * std::log10(bandwidth_hz));
  }
  /// Per-subcarrier, per-antenna complex noise variance (total spread over N).
  double noise_variance_w() const { return total_noise_power_w() / num_subcarriers; }

  void validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("SystemConfig: " + msg); };
    if (num_antennas < 2) fail("num_antennas must be >= 2");
    if (num_subcarriers < 1) fail("num_subcarriers must be >= 1");
    if (num_occupied < 1 || num_occupied > num_subcarriers)
      fail("num_occupied must be in [1, num_subcarriers]");
    if (bandwidth_hz <= 0) fail("bandwidth_hz must be positive");
    if (cp_duration_s < 0) fail("cp_duration_s must be nonnegative");
    if (num_ssb < 1) fail("num_ssb must be >= 1");
    if (burst_spacing_symbols < 4 * num_ssb + 4)
      fail("burst_spacing_symbols must exceed the SSB span 4G+3");
    if (canceller_order < 1) fail("canceller_order must be >= 1");
    if (dict_cols < 1 || dict_cols >= delay_grid) fail("need 1 <= dict_cols < delay_grid");
    if (grid_origin != 0 && grid_origin != 1) fail("grid_origin must be 0 or 1");
    if (grid_origin + dict_cols - 1 > delay_grid) fail("grid indices exceed delay_grid");
    if (doppler_phase_guard <= 0) fail("doppler_phase_guard must be positive");
  }
};

}  // namespace pmn
