#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmn/canceller.hpp"
#include "pmn/config.hpp"

namespace pmn {

struct SolverOptions {
  double rel_tol = 1e-6;       // delta_x, mean relative change across columns
  int max_iters = 300;         // t_max
  double init_epsilon = 1e-3;  // epsilon'
  bool collect_trace = false;
};

struct IterationTraceRow {
  int iteration;
  double mean_rel_change;
  double noise_precision;  // beta_hat
};

/// Row-sparse estimate of A in R = C'A + Z with the learned shared precisions.
struct SparseEstimate {
  Eigen::MatrixXcd a_hat;   // N_p x Upsilon
  Eigen::VectorXd gamma;    // shared per-row precisions
  double beta = 0;          // noise precision
  double epsilon = 0;       // learned shape parameter
  int iterations = 0;
  bool converged = false;
  std::vector<IterationTraceRow> trace;
};

/// MMV UAMP-SBL on the unitary-transformed model F = U^H R = Phi A + U^H Z.
///
/// The iteration runs in the rank space of the dictionary: transform rows
/// beyond the rank have zero Phi rows and zero lambda, so their only effect
/// in the full-length listing is adding |f_n|^2 to the noise-precision
/// denominator; that energy is carried here as a per-column scalar. Vector
/// steps (5-11) live on the measurement side, the (1/N) averages of steps
/// 12 and 14 and the gamma/epsilon updates of steps 16-17 run over the
/// sparse length N_p, and the noise-precision numerator is the total
/// measurement count Upsilon*N. Columns couple only through the shared
/// gamma vector, which is what enforces the common support.
inline SparseEstimate solve_mmv(const MeasurementMatrix& meas, const DelayDictionary& dict,
                                const SolverOptions& opts = {}) {
  if (meas.rows() != dict.rows())
    throw std::invalid_argument("solve_mmv: measurement/dictionary row mismatch");
  if (opts.rel_tol <= 0 || opts.max_iters < 1)
    throw std::invalid_argument("solve_mmv: need rel_tol > 0 and max_iters >= 1");

  const int n_meas = meas.rows();       // N, total measurement length per column
  const int n_sparse = dict.cols();     // N_p
  const int n_cols = meas.cols();       // Upsilon
  const int r = dict.rank();

  // The fixed unit initialization assumes a unit-RMS problem; run on R/c and
  // map the outputs back (x -> c x, precisions -> /c^2). This keeps detection
  // exactly covariant under positive scaling of R and makes physical-unit
  // inputs behave like their normalized equivalents.
  const double rms = std::sqrt(meas.r.squaredNorm() / (double(n_meas) * n_cols));
  const double unit = rms > 0 ? rms : 1.0;

  const Eigen::MatrixXcd f = (dict.u.adjoint() * meas.r) / unit;  // r x Upsilon
  Eigen::VectorXd tail_energy(n_cols);
  for (int c = 0; c < n_cols; ++c)
    tail_energy(c) =
        std::max(0.0, meas.r.col(c).squaredNorm() / (unit * unit) - f.col(c).squaredNorm());
  const double tail_total = tail_energy.sum();

  const Eigen::ArrayXd lambda = dict.sigma.array().square();  // rank part of Lambda Lambda^H 1

  // Initialization per the listing.
  Eigen::ArrayXd tau_x = Eigen::ArrayXd::Ones(n_cols);
  Eigen::MatrixXcd x_hat = Eigen::MatrixXcd::Zero(n_sparse, n_cols);
  Eigen::MatrixXcd s = Eigen::MatrixXcd::Zero(r, n_cols);
  Eigen::ArrayXd gamma = Eigen::ArrayXd::Ones(n_sparse);
  double beta = 1.0;
  double epsilon = opts.init_epsilon;

  Eigen::ArrayXXd tau_p(r, n_cols), v_h(r, n_cols), tau_s(r, n_cols);
  Eigen::MatrixXcd p(r, n_cols), h_hat(r, n_cols), q(n_sparse, n_cols);
  Eigen::MatrixXcd x_new(n_sparse, n_cols);
  Eigen::ArrayXXd denom(n_sparse, n_cols);

  SparseEstimate est;
  if (opts.collect_trace) est.trace.reserve(opts.max_iters);

  int t = 0;
  bool converged = false;
  while (t < opts.max_iters && !converged) {
    tau_p = (lambda.matrix() * tau_x.matrix().transpose()).array();
    p.noalias() = dict.phi * x_hat;
    p.array() -= tau_p.cast<Complex>() * s.array();
    const Eigen::ArrayXXd one_beta_tau = 1.0 + beta * tau_p;
    v_h = tau_p / one_beta_tau;
    h_hat.array() =
        (beta * tau_p.cast<Complex>() * f.array() + p.array()) / one_beta_tau.cast<Complex>();

    const double beta_den = (f - h_hat).squaredNorm() + v_h.sum() + tail_total;
    beta = double(n_cols) * n_meas / std::max(beta_den, 1e-300);

    tau_s = 1.0 / (tau_p + 1.0 / beta);
    s.array() = tau_s.cast<Complex>() * (f.array() - p.array());

    const Eigen::ArrayXd tau_q =
        double(n_sparse) / (tau_s.colwise() * lambda).colwise().sum().transpose();

    q.noalias() = dict.phi.adjoint() * s;
    q.array() = x_hat.array() + q.array().rowwise() * tau_q.transpose().cast<Complex>();

    denom = 1.0 + (gamma.matrix() * tau_q.matrix().transpose()).array();
    tau_x = (1.0 / denom).colwise().sum().transpose() * tau_q / double(n_sparse);
    x_new.array() = q.array() / denom.cast<Complex>();

    const Eigen::ArrayXd row_power = x_new.array().abs2().rowwise().mean();
    gamma = (2.0 * epsilon + 1.0) / (row_power + tau_x.mean()).max(1e-300);
    epsilon = 0.5 * std::sqrt(std::max(0.0, std::log(gamma.mean()) - gamma.log().mean()));

    double rel_change = 0.0;
    for (int c = 0; c < n_cols; ++c) {
      const double nn = x_new.col(c).squaredNorm();
      const double dd = (x_new.col(c) - x_hat.col(c)).squaredNorm();
      rel_change += nn > 0 ? dd / nn : (dd > 0 ? 1.0 : 0.0);
    }
    rel_change /= n_cols;

    x_hat.swap(x_new);
    ++t;

    if (!x_hat.allFinite() || !std::isfinite(beta) || !gamma.isFinite().all())
      throw std::runtime_error("solve_mmv: non-finite state at iteration " + std::to_string(t) +
                               " (AMP divergence)");
    if (opts.collect_trace) est.trace.push_back({t, rel_change, beta / (unit * unit)});
    converged = rel_change <= opts.rel_tol;
  }

  est.a_hat = unit * x_hat;
  est.gamma = (gamma / (unit * unit)).matrix();
  est.beta = beta / (unit * unit);
  est.epsilon = epsilon;
  est.iterations = t;
  est.converged = converged;
  return est;
}

/// Indices (ascending) of rows whose 2-norm reaches rel_threshold times the
/// largest row norm; empty for an all-zero estimate.
inline std::vector<int> detect_support(const SparseEstimate& est, double rel_threshold = 0.1) {
  if (rel_threshold <= 0.0 || rel_threshold >= 1.0)
    throw std::invalid_argument("detect_support: rel_threshold must be in (0,1)");
  const Eigen::VectorXd norms = est.a_hat.rowwise().norm();
  const double max_norm = norms.maxCoeff();
  std::vector<int> support;
  if (max_norm <= 0.0) return support;
  for (int i = 0; i < norms.size(); ++i)
    if (norms(i) >= rel_threshold * max_norm) support.push_back(i);
  return support;
}

}  // namespace pmn
