#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "pmn/config.hpp"
#include "pmn/io.hpp"
#include "pmn/signal_model.hpp"

namespace pmn {

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double v = 1.0;
  for (int i = 1; i <= k; ++i) v = v * (n - k + i) / i;
  return std::round(v);
}

/// Frequency response of the order-P multipulse canceller,
/// a(f) = (2j sin(pi f Ns Ts))^P e^{-j pi P f Ns Ts}.
inline Complex canceller_gain(double doppler_hz, int order, int burst_spacing_symbols,
                              double symbol_period_s) {
  if (order < 1) throw std::invalid_argument("canceller_gain: order must be >= 1");
  const double x = kPi * doppler_hz * burst_spacing_symbols * symbol_period_s;
  const Complex base = Complex(0.0, 2.0) * std::sin(x);
  Complex pw(1.0, 0.0);
  for (int p = 0; p < order; ++p) pw *= base;
  return pw * std::polar(1.0, -order * x);
}

/// One burst's worth of clutter-cancelled symbols.
struct CancelledCube {
  std::vector<Eigen::MatrixXcd> symbols;  // 3G matrices, M x num_occupied
  std::vector<int> symbol_index;
  double effective_noise_variance = 0;    // sigma^2 * C(2P, P)

  int num_symbols() const { return static_cast<int>(symbol_index.size()); }
};

/// Binomial-weighted combination of P+1 repeated burst sets,
/// y~ = sum_p (-1)^p C(P,p) y[t - p Ns]. The cube must hold exactly P+1 bursts
/// (oldest first); static returns cancel exactly since their bursts are
/// bitwise identical.
inline CancelledCube cancel(const ReceivedCube& cube, int order) {
  if (order < 1) throw std::invalid_argument("cancel: order must be >= 1");
  if (cube.num_bursts() != order + 1)
    throw std::invalid_argument("cancel: expected " + std::to_string(order + 1) + " bursts, got " +
                                std::to_string(cube.num_bursts()));
  CancelledCube out;
  out.symbol_index = cube.symbol_index;
  out.effective_noise_variance = cube.noise_variance * binomial(2 * order, order);
  const int symbols = cube.num_symbols();
  out.symbols.resize(symbols);
  for (int u = 0; u < symbols; ++u) {
    Eigen::MatrixXcd acc = cube.bursts[order][u];  // p = 0 is the latest burst
    for (int p = 1; p <= order; ++p) {
      const double w = (p % 2 ? -1.0 : 1.0) * binomial(order, p);
      acc.noalias() += w * cube.bursts[order - p][u];
    }
    out.symbols[u] = std::move(acc);
  }
  return out;
}

/// Data-free model: r_{n,t} = s*_{n,t} y~_{n,t}. Unit-modulus pilots preserve
/// per-sample power.
inline CancelledCube demodulate(const CancelledCube& cancelled, const SsbSchedule& sched) {
  CancelledCube out;
  out.symbol_index = cancelled.symbol_index;
  out.effective_noise_variance = cancelled.effective_noise_variance;
  out.symbols.resize(cancelled.symbols.size());
  for (size_t u = 0; u < cancelled.symbols.size(); ++u) {
    if (cancelled.symbols[u].cols() != sched.pilots.rows())
      throw std::invalid_argument("demodulate: subcarrier count mismatch with schedule");
    out.symbols[u] =
        cancelled.symbols[u].array().rowwise() * sched.pilots.col(u).conjugate().transpose().array();
  }
  return out;
}

/// Composite observation R = [R~_1, ..., R~_G], an N x Upsilon matrix whose
/// column index encodes (g outer, symbol-in-SSB middle, antenna inner).
struct MeasurementMatrix {
  Eigen::MatrixXcd r;
  int num_antennas = 0;
  int num_ssb = 0;
  double noise_variance = 0;  // per-element, post-canceller

  int cols() const { return static_cast<int>(r.cols()); }
  int rows() const { return static_cast<int>(r.rows()); }
  /// g, k, m are 0-based; the inverse of the assembly order.
  int column_index(int g, int k, int m) const { return (g * 3 + k) * num_antennas + m; }
};

inline MeasurementMatrix assemble(const CancelledCube& demodulated, const SystemConfig& cfg) {
  const int g_count = cfg.num_ssb;
  const int m = cfg.num_antennas;
  if (demodulated.num_symbols() != 3 * g_count)
    throw std::invalid_argument("assemble: expected 3G symbols, got " +
                                std::to_string(demodulated.num_symbols()));
  const int n = static_cast<int>(demodulated.symbols[0].cols());
  MeasurementMatrix mm;
  mm.num_antennas = m;
  mm.num_ssb = g_count;
  mm.noise_variance = demodulated.effective_noise_variance;
  mm.r.resize(n, 3 * g_count * m);
  for (int g = 0; g < g_count; ++g)
    for (int k = 0; k < 3; ++k) {
      const Eigen::MatrixXcd& sym = demodulated.symbols[g * 3 + k];  // M x N
      mm.r.middleCols((g * 3 + k) * m, m) = sym.transpose();
    }
  return mm;
}

/// Flat CSV dump (row, col, re, im) for external solver debugging.
inline void export_csv(const MeasurementMatrix& mm, const std::string& path) {
  CsvWriter csv(path);
  csv.header({"row", "col", "re", "im"});
  for (int row = 0; row < mm.rows(); ++row)
    for (int col = 0; col < mm.cols(); ++col) {
      csv.field(row);
      csv.field(col);
      csv.field(mm.r(row, col).real());
      csv.field(mm.r(row, col).imag());
      csv.end_row();
    }
}

/// Delay dictionary C'(n, l') = e^{-j2 pi n l'/N_d} with its precomputed
/// factorization C' = U Lambda V (thin SVD; V is the Hermitian-transposed
/// right factor). lambda() pads the squared singular values with zeros up to
/// the measurement length.
struct DelayDictionary {
  Eigen::MatrixXcd c;       // N x N_p
  Eigen::MatrixXcd u;       // N x r
  Eigen::VectorXd sigma;    // r singular values
  Eigen::MatrixXcd v;       // r x N_p
  Eigen::MatrixXcd phi;     // Lambda V, r x N_p
  int grid_origin = 1;
  int delay_grid = 0;
  double delay_bin_s = 0;

  int rows() const { return static_cast<int>(c.rows()); }
  int cols() const { return static_cast<int>(c.cols()); }
  int rank() const { return static_cast<int>(sigma.size()); }
  int grid_index_of_column(int j) const { return j + grid_origin; }
  int column_of_grid_index(int grid) const { return grid - grid_origin; }

  Eigen::VectorXd lambda() const {
    Eigen::VectorXd full = Eigen::VectorXd::Zero(rows());
    full.head(rank()) = sigma.array().square();
    return full;
  }
};

inline DelayDictionary build_dictionary(const SystemConfig& cfg) {
  cfg.validate();
  DelayDictionary dict;
  dict.grid_origin = cfg.grid_origin;
  dict.delay_grid = cfg.delay_grid;
  dict.delay_bin_s = cfg.delay_bin_s();
  const int n = cfg.num_occupied;
  dict.c.resize(n, cfg.dict_cols);
  for (int j = 0; j < cfg.dict_cols; ++j) {
    const double frac = double(j + cfg.grid_origin) / cfg.delay_grid;
    for (int row = 0; row < n; ++row) dict.c(row, j) = std::polar(1.0, -2.0 * kPi * (row + 1) * frac);
  }
  // One-time offline factorization; Jacobi keeps the reconstruction error
  // within the 1e-10 Frobenius budget.
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(dict.c, Eigen::ComputeThinU | Eigen::ComputeThinV);
  dict.u = svd.matrixU();
  dict.sigma = svd.singularValues();
  dict.v = svd.matrixV().adjoint();
  dict.phi = dict.sigma.asDiagonal() * dict.v;
  return dict;
}

/// Process-wide dictionary cache: the factorization is computed once per
/// distinct grid geometry and shared read-only afterwards.
inline const DelayDictionary& shared_dictionary(const SystemConfig& cfg) {
  static std::mutex mu;
  static std::map<std::tuple<int, int, int, int, long long>, DelayDictionary> cache;
  const auto key = std::make_tuple(cfg.num_occupied, cfg.dict_cols, cfg.delay_grid,
                                   cfg.grid_origin, std::llround(cfg.delay_bin_s() * 1e15));
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, build_dictionary(cfg)).first;
  return it->second;
}

/// Nearest-grid delay quantization, clamped to the dictionary's index range.
inline int quantize_delay(double delay_s, const SystemConfig& cfg) {
  const long idx = std::lround(delay_s / cfg.delay_bin_s());
  const long lo = cfg.grid_origin;
  const long hi = cfg.grid_origin + cfg.dict_cols - 1;
  return static_cast<int>(std::min(std::max(idx, lo), hi));
}

}  // namespace pmn
