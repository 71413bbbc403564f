#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "pmn/config.hpp"

namespace pmn {

/// ULA steering vector at half-wavelength spacing, element m = e^{+j pi m sin(theta)}.
/// The +j sign is what makes the lag-product angle extractor return +sin(theta).
inline Eigen::VectorXcd array_response(int num_antennas, double theta_rad) {
  if (num_antennas < 1) throw std::invalid_argument("array_response: need at least one antenna");
  Eigen::VectorXcd a(num_antennas);
  const double s = std::sin(theta_rad);
  for (int m = 0; m < num_antennas; ++m) a(m) = std::polar(1.0, kPi * m * s);
  return a;
}

/// One propagation path: delay, Doppler, angle (AoD = AoA for downlink active
/// sensing), complex amplitude, and whether it is clutter.
struct PathParams {
  double delay_s = 0.0;
  double doppler_hz = 0.0;
  double theta_rad = 0.0;
  Complex amplitude{0.0, 0.0};
  bool is_clutter = false;
};

/// H_{n,t} = sum_l b_l e^{-j2 pi n tau_l df} e^{j2 pi t f_l Ts} a(theta_l) a^T(theta_l).
/// Subcarrier and symbol indices follow the 1-based signal model convention.
inline Eigen::MatrixXcd channel_matrix(std::span<const PathParams> paths, int subcarrier_n,
                                       int symbol_t, const SystemConfig& cfg) {
  const int m = cfg.num_antennas;
  const double df = cfg.subcarrier_spacing_hz();
  const double ts = cfg.symbol_period_s();
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(m, m);
  for (const PathParams& p : paths) {
    const Complex phase = p.amplitude * std::polar(1.0, -2.0 * kPi * subcarrier_n * p.delay_s * df) *
                          std::polar(1.0, 2.0 * kPi * symbol_t * p.doppler_hz * ts);
    const Eigen::VectorXcd a = array_response(m, p.theta_rad);
    h.noalias() += phase * (a * a.transpose());
  }
  return h;
}

/// Beam sweep and pilot content of one SSB burst set. The burst uses the last
/// three symbols of each of the G SSBs, i.e. in-burst symbol indices
/// t = 4g + k for g = 1..G, k = 1..3. Pilots are fixed per (n, t) and reused
/// verbatim by every burst set; the beam is constant within one SSB.
struct SsbSchedule {
  Eigen::MatrixXcd beams;        // M x G, unit 2-norm columns w_g
  Eigen::MatrixXcd pilots;       // num_occupied x 3G, |s| = 1
  std::vector<int> symbol_index; // local column u -> in-burst index t = 4g+k
  uint64_t pilot_seed = 0;

  int num_ssb() const { return static_cast<int>(beams.cols()); }
  int num_symbols() const { return static_cast<int>(symbol_index.size()); }
  int ssb_of_column(int u) const { return u / 3; }        // 0-based g
  int symbol_in_ssb(int u) const { return u % 3; }        // 0-based k-1
};

/// Pseudo-random QPSK pilots plus conjugate steering beams on a uniform grid
/// over the configured sector.
inline SsbSchedule make_ssb_schedule(const SystemConfig& cfg, uint64_t pilot_seed) {
  SsbSchedule sched;
  sched.pilot_seed = pilot_seed;
  const int g_count = cfg.num_ssb;
  const int m = cfg.num_antennas;
  const int n = cfg.num_occupied;

  sched.beams.resize(m, g_count);
  const double lo = cfg.beam_sector_min_deg * kPi / 180.0;
  const double hi = cfg.beam_sector_max_deg * kPi / 180.0;
  for (int g = 0; g < g_count; ++g) {
    const double phi = (g_count == 1) ? 0.5 * (lo + hi) : lo + (hi - lo) * g / (g_count - 1);
    sched.beams.col(g) = array_response(m, phi).conjugate() / std::sqrt(double(m));
  }

  sched.pilots.resize(n, 3 * g_count);
  std::mt19937_64 rng(pilot_seed);
  std::uniform_int_distribution<int> quad(0, 3);
  for (int u = 0; u < 3 * g_count; ++u)
    for (int row = 0; row < n; ++row)
      sched.pilots(row, u) = std::polar(1.0, kPi / 4.0 + quad(rng) * kPi / 2.0);

  sched.symbol_index.resize(3 * g_count);
  for (int g = 1; g <= g_count; ++g)
    for (int k = 1; k <= 3; ++k) sched.symbol_index[(g - 1) * 3 + (k - 1)] = 4 * g + k;
  return sched;
}

/// Received samples over one or more SSB burst sets. bursts[b][u] is the
/// M x num_occupied matrix of one OFDM symbol (u indexes the 3G used symbols);
/// the global symbol index of (b, u) is b*N_s + symbol_index[u].
struct ReceivedCube {
  std::vector<std::vector<Eigen::MatrixXcd>> bursts;
  std::vector<int> symbol_index;
  int burst_spacing = 0;      // N_s
  double noise_variance = 0;  // per-element sigma^2, linear watts

  int num_bursts() const { return static_cast<int>(bursts.size()); }
  int num_symbols() const { return static_cast<int>(symbol_index.size()); }
};

/// Simulates y_{n,t} = H_{n,t} w_t s_{n,t} + z over `num_bursts` burst sets
/// (noise is circular complex Gaussian, deterministic in `noise_seed`).
/// Rejects Dopplers whose per-symbol phase advance breaks the constant-phase
/// assumption (cfg.doppler_phase_guard).
inline ReceivedCube transmit_receive(std::span<const PathParams> paths, const SsbSchedule& sched,
                                     const SystemConfig& cfg, uint64_t noise_seed,
                                     int num_bursts = -1) {
  if (num_bursts < 0) num_bursts = cfg.canceller_order + 1;
  const int m = cfg.num_antennas;
  const int n = cfg.num_occupied;
  const int symbols = sched.num_symbols();
  const double ts = cfg.symbol_period_s();
  const double df = cfg.subcarrier_spacing_hz();

  for (const PathParams& p : paths) {
    if (std::abs(p.doppler_hz) * ts > cfg.doppler_phase_guard)
      throw std::invalid_argument("transmit_receive: |f_D|*T_s exceeds the Doppler phase guard");
    if (p.delay_s < 0 || p.delay_s >= cfg.delay_coverage_s())
      throw std::invalid_argument("transmit_receive: path delay outside dictionary coverage");
  }

  // Per-path factors that do not depend on the symbol index.
  const int path_count = static_cast<int>(paths.size());
  Eigen::MatrixXcd delay_phase(n, path_count);   // e^{-j2 pi n tau df}, n = 1..N
  Eigen::MatrixXcd steer(m, path_count);
  for (int l = 0; l < path_count; ++l) {
    for (int row = 0; row < n; ++row)
      delay_phase(row, l) = std::polar(1.0, -2.0 * kPi * (row + 1) * paths[l].delay_s * df);
    steer.col(l) = array_response(m, paths[l].theta_rad);
  }

  ReceivedCube cube;
  cube.symbol_index = sched.symbol_index;
  cube.burst_spacing = cfg.burst_spacing_symbols;
  cube.noise_variance = cfg.noise_variance_w();
  cube.bursts.resize(num_bursts);

  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> gauss(0.0, std::sqrt(cube.noise_variance / 2.0));

  for (int b = 0; b < num_bursts; ++b) {
    cube.bursts[b].resize(symbols);
    for (int u = 0; u < symbols; ++u) {
      const int t_global = b * cfg.burst_spacing_symbols + sched.symbol_index[u];
      const Eigen::VectorXcd& w = sched.beams.col(sched.ssb_of_column(u));
      Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(m, n);
      for (int l = 0; l < path_count; ++l) {
        const Complex gain = paths[l].amplitude *
                             std::polar(1.0, 2.0 * kPi * t_global * paths[l].doppler_hz * ts) *
                             (steer.col(l).transpose() * w)(0);
        // y(:,n) += gain * a * delay(n) * s(n,u)  as one outer product
        y.noalias() += (gain * steer.col(l)) *
                       (delay_phase.col(l).array() * sched.pilots.col(u).array()).matrix().transpose();
      }
      if (cube.noise_variance > 0) {
        for (int col = 0; col < n; ++col)
          for (int row = 0; row < m; ++row) y(row, col) += Complex(gauss(rng), gauss(rng));
      }
      cube.bursts[b][u] = std::move(y);
    }
  }
  return cube;
}

}  // namespace pmn
