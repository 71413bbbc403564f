#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmn/canceller.hpp"
#include "pmn/config.hpp"
#include "pmn/extract.hpp"
#include "pmn/scenario.hpp"
#include "pmn/signal_model.hpp"
#include "pmn/uamp_sbl.hpp"

namespace pmn {

enum class Mode { kProposed, kNoCancel, kRma };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::kProposed: return "proposed";
    case Mode::kNoCancel: return "no_cancel";
    case Mode::kRma: return "rma";
  }
  return "?";
}

inline Mode mode_from_string(const std::string& s) {
  if (s == "proposed") return Mode::kProposed;
  if (s == "no_cancel") return Mode::kNoCancel;
  if (s == "rma") return Mode::kRma;
  throw std::invalid_argument("unknown mode: " + s + " (expected proposed|no_cancel|rma)");
}

struct PipelineConfig {
  Mode mode = Mode::kProposed;
  int num_windows = 5;                // burst-set windows fed to the recursive filter
  double filter_alpha = 0.9;
  double support_rel_threshold = 0.1; // gamma_rel
  SolverOptions solver;
  AssociationGates gates;
  int track_max_misses = 3;
  int rma_warmup = 64;
  double rma_rho = 0.99;
  bool compute_clutter_ratio = true;

  void validate() const {
    if (num_windows < 1) throw std::invalid_argument("PipelineConfig: num_windows must be >= 1");
    if (filter_alpha < 0 || filter_alpha > 1)
      throw std::invalid_argument("PipelineConfig: filter_alpha outside [0,1]");
    if (support_rel_threshold <= 0 || support_rel_threshold >= 1)
      throw std::invalid_argument("PipelineConfig: support_rel_threshold outside (0,1)");
    if (rma_rho < 0 || rma_rho >= 1) throw std::invalid_argument("PipelineConfig: rma_rho outside [0,1)");
    if (rma_warmup < 1) throw std::invalid_argument("PipelineConfig: rma_warmup must be >= 1");
  }
};

struct StageTimes {
  double simulate_s = 0, cancel_s = 0, solve_s = 0, extract_s = 0, total_s = 0;
};

struct TrialResult {
  std::vector<Track> tracks;                             // live smoothed tracks after the last window
  std::vector<PathEstimate> final_estimates;             // track states as estimates
  std::vector<std::vector<PathEstimate>> window_estimates;
  StageTimes times;
  int solver_iterations = 0;                             // summed over windows
  bool solver_converged_all = true;
  double clutter_suppression_ratio = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

inline double cube_energy(const std::vector<Eigen::MatrixXcd>& symbols) {
  double e = 0;
  for (const auto& s : symbols) e += s.squaredNorm();
  return e;
}

inline ReceivedCube window_view(const ReceivedCube& all, int first_burst, int count) {
  ReceivedCube w;
  w.symbol_index = all.symbol_index;
  w.burst_spacing = all.burst_spacing;
  w.noise_variance = all.noise_variance;
  w.bursts.assign(all.bursts.begin() + first_burst, all.bursts.begin() + first_burst + count);
  return w;
}

/// Single-burst identity "cancellation" for the no-suppression baseline.
inline CancelledCube passthrough(const ReceivedCube& all, int burst) {
  CancelledCube out;
  out.symbol_index = all.symbol_index;
  out.effective_noise_variance = all.noise_variance;
  out.symbols = all.bursts[burst];
  return out;
}

inline PathEstimate estimate_from_track(const Track& t) {
  PathEstimate e;
  e.grid_bin = t.grid_bin;
  e.delay_s = t.delay_s;
  e.doppler_hz = t.doppler_hz;
  e.sin_theta = t.sin_theta;
  e.theta_rad = std::asin(std::clamp(t.sin_theta, -1.0, 1.0));
  e.power = t.power;
  return e;
}

}  // namespace detail

/// Post-canceller per-measurement-element SNR of one path:
/// |a_l|^2 |b|^2 mean_g |a^T(theta) w_g|^2 / (C(2P,P) sigma^2).
inline double post_canceller_snr(const PathParams& p, const SsbSchedule& sched,
                                 const SystemConfig& cfg) {
  const Complex a_l = canceller_gain(p.doppler_hz, cfg.canceller_order, cfg.burst_spacing_symbols,
                                     cfg.symbol_period_s());
  const Eigen::VectorXcd steer = array_response(cfg.num_antennas, p.theta_rad);
  double beam_gain = 0;
  for (int g = 0; g < sched.num_ssb(); ++g)
    beam_gain += std::norm((steer.transpose() * sched.beams.col(g))(0));
  beam_gain /= sched.num_ssb();
  const double noise = binomial(2 * cfg.canceller_order, cfg.canceller_order) * cfg.noise_variance_w();
  return std::norm(a_l) * std::norm(p.amplitude) * beam_gain / noise;
}

/// Controlled-SNR knob: rescales every path amplitude by one common factor so
/// the weakest target sits at `snr_db` post-canceller per-element SNR.
inline void scale_to_target_snr(Scenario& scene, const SystemConfig& cfg, double snr_db) {
  double weakest = std::numeric_limits<double>::infinity();
  for (const auto& p : scene.paths)
    if (!p.is_clutter) weakest = std::min(weakest, post_canceller_snr(p, scene.schedule, cfg));
  if (!std::isfinite(weakest) || weakest <= 0)
    throw std::invalid_argument("scale_to_target_snr: scene has no usable target path");
  const double factor = std::sqrt(db_to_linear(snr_db) / weakest);
  for (auto& p : scene.paths) p.amplitude *= factor;
}

/// Full sensing chain over `num_windows` sliding burst-set windows:
/// simulate -> cancel -> demodulate -> assemble -> solve -> prune -> extract
/// -> recursive filter. The two baselines replace only the cancellation
/// stage. Deterministic in (scenario, seed, config).
inline TrialResult run_pipeline(const SystemConfig& cfg, const Scenario& scene, uint64_t seed,
                                const PipelineConfig& pcfg) {
  cfg.validate();
  pcfg.validate();
  const int order = cfg.canceller_order;
  const int windows = pcfg.num_windows;

  int total_bursts = 0;
  switch (pcfg.mode) {
    case Mode::kProposed:
    case Mode::kNoCancel:
      total_bursts = order + windows;
      break;
    case Mode::kRma:
      total_bursts = pcfg.rma_warmup + windows;
      break;
  }

  TrialResult result;
  const double t_start = detail::now_s();
  const ReceivedCube all = transmit_receive(scene.paths, scene.schedule, cfg, seed, total_bursts);
  result.times.simulate_s = detail::now_s() - t_start;

  const DelayDictionary& dict = shared_dictionary(cfg);
  TrackStore store(pcfg.filter_alpha, pcfg.gates, pcfg.track_max_misses);

  // RMA recursive clutter average, seeded with the first observed burst.
  std::vector<Eigen::MatrixXcd> rma_avg;
  int rma_next = 0;
  if (pcfg.mode == Mode::kRma) {
    if (total_bursts < pcfg.rma_warmup + 1)
      throw std::invalid_argument("run_pipeline: RMA needs at least rma_warmup+1 burst sets");
    rma_avg = all.bursts[0];
    for (rma_next = 1; rma_next < pcfg.rma_warmup; ++rma_next)
      for (size_t u = 0; u < rma_avg.size(); ++u)
        rma_avg[u] = pcfg.rma_rho * rma_avg[u] + (1.0 - pcfg.rma_rho) * all.bursts[rma_next][u];
  }

  for (int w = 0; w < windows; ++w) {
    double t0 = detail::now_s();
    CancelledCube demod;
    switch (pcfg.mode) {
      case Mode::kProposed:
        demod = demodulate(cancel(detail::window_view(all, w, order + 1), order), scene.schedule);
        break;
      case Mode::kNoCancel:
        demod = demodulate(detail::passthrough(all, w + order), scene.schedule);
        break;
      case Mode::kRma: {
        const int idx = pcfg.rma_warmup + w;
        CancelledCube clean;
        clean.symbol_index = all.symbol_index;
        clean.effective_noise_variance = all.noise_variance;
        clean.symbols.resize(all.bursts[idx].size());
        for (size_t u = 0; u < clean.symbols.size(); ++u)
          clean.symbols[u] = all.bursts[idx][u] - rma_avg[u];
        demod = demodulate(clean, scene.schedule);
        // the averager keeps consuming the stream
        for (size_t u = 0; u < rma_avg.size(); ++u)
          rma_avg[u] = pcfg.rma_rho * rma_avg[u] + (1.0 - pcfg.rma_rho) * all.bursts[idx][u];
        break;
      }
    }
    const MeasurementMatrix meas = assemble(demod, cfg);
    result.times.cancel_s += detail::now_s() - t0;

    t0 = detail::now_s();
    const SparseEstimate est = solve_mmv(meas, dict, pcfg.solver);
    result.solver_iterations += est.iterations;
    result.solver_converged_all = result.solver_converged_all && est.converged;
    result.times.solve_s += detail::now_s() - t0;

    t0 = detail::now_s();
    const std::vector<int> support = detect_support(est, pcfg.support_rel_threshold);
    const PrunedRows rows = prune(est, support, dict, cfg);
    const int gain_order = pcfg.mode == Mode::kProposed ? order : 0;
    const std::vector<PathEstimate> estimates = extract_paths(rows, scene.schedule, cfg, gain_order);
    store.update(estimates, w);
    result.window_estimates.push_back(estimates);
    result.times.extract_s += detail::now_s() - t0;
  }

  result.tracks = store.tracks();
  for (const Track& t : result.tracks) result.final_estimates.push_back(detail::estimate_from_track(t));

  // Clutter suppression measured on a noiseless clutter-only replay.
  if (pcfg.compute_clutter_ratio) {
    const std::vector<PathParams> clutter = scene.clutter();
    if (!clutter.empty() && pcfg.mode != Mode::kNoCancel) {
      SystemConfig quiet = cfg;
      quiet.noise_psd_dbm_hz = -std::numeric_limits<double>::infinity();
      if (pcfg.mode == Mode::kProposed) {
        const ReceivedCube c = transmit_receive(clutter, scene.schedule, quiet, 0, order + 1);
        const double pre = detail::cube_energy(c.bursts[order]);
        const double post = detail::cube_energy(cancel(c, order).symbols);
        result.clutter_suppression_ratio = pre > 0 ? post / pre : 0.0;
      } else {
        const ReceivedCube c =
            transmit_receive(clutter, scene.schedule, quiet, 0, pcfg.rma_warmup + 1);
        std::vector<Eigen::MatrixXcd> avg = c.bursts[0];
        for (int b = 1; b < pcfg.rma_warmup; ++b)
          for (size_t u = 0; u < avg.size(); ++u)
            avg[u] = pcfg.rma_rho * avg[u] + (1.0 - pcfg.rma_rho) * c.bursts[b][u];
        double pre = detail::cube_energy(c.bursts[pcfg.rma_warmup]);
        double post = 0;
        for (size_t u = 0; u < avg.size(); ++u)
          post += (c.bursts[pcfg.rma_warmup][u] - avg[u]).squaredNorm();
        result.clutter_suppression_ratio = pre > 0 ? post / pre : 0.0;
      }
    } else if (pcfg.mode == Mode::kNoCancel) {
      result.clutter_suppression_ratio = 1.0;
    }
  }

  result.times.total_s = detail::now_s() - t_start;
  return result;
}

/// Per-trial quality numbers against ground truth. Targets sharing a delay
/// bin are merged (strongest kept); clutter truths and false alarms never
/// enter the AoA mean.
struct TrialMetrics {
  double aoa_mse = std::numeric_limits<double>::quiet_NaN();  // mean (pi sin th - pi sin th_hat)^2
  double doppler_rmse = std::numeric_limits<double>::quiet_NaN();
  double detection_rate = 0.0;
  int matched_targets = 0;
  int total_targets = 0;
  int false_alarms = 0;
  int clutter_detections = 0;
};

namespace detail {

inline std::vector<PathParams> merge_by_bin(const std::vector<PathParams>& paths,
                                            const SystemConfig& cfg) {
  std::map<int, PathParams> by_bin;
  for (const auto& p : paths) {
    const int bin = quantize_delay(p.delay_s, cfg);
    auto it = by_bin.find(bin);
    if (it == by_bin.end() || std::norm(p.amplitude) > std::norm(it->second.amplitude))
      by_bin[bin] = p;
  }
  std::vector<PathParams> out;
  for (auto& [bin, p] : by_bin) out.push_back(p);
  return out;
}

}  // namespace detail

inline TrialMetrics score_against_truth(std::span<const PathEstimate> estimates,
                                        const Scenario& scene, const SystemConfig& cfg,
                                        const AssociationGates& gates = {}) {
  const std::vector<PathParams> targets = detail::merge_by_bin(scene.targets(), cfg);
  const std::vector<PathParams> clutter = detail::merge_by_bin(scene.clutter(), cfg);

  std::vector<AssociationPoint> est_pts(estimates.size());
  for (size_t i = 0; i < estimates.size(); ++i)
    est_pts[i] = {estimates[i].grid_bin, estimates[i].sin_theta};
  std::vector<AssociationPoint> tgt_pts(targets.size());
  for (size_t i = 0; i < targets.size(); ++i)
    tgt_pts[i] = {quantize_delay(targets[i].delay_s, cfg), std::sin(targets[i].theta_rad)};

  TrialMetrics m;
  m.total_targets = static_cast<int>(targets.size());
  const Association to_targets = associate(est_pts, tgt_pts, gates);

  double se_sum = 0, dop_sq = 0;
  for (const auto& [e, t] : to_targets.matches) {
    const double d_sin = kPi * (estimates[e].sin_theta - std::sin(targets[t].theta_rad));
    se_sum += d_sin * d_sin;
    const double d_dop = estimates[e].doppler_hz - targets[t].doppler_hz;
    dop_sq += d_dop * d_dop;
  }
  m.matched_targets = static_cast<int>(to_targets.matches.size());
  m.detection_rate = targets.empty() ? 0.0 : double(m.matched_targets) / targets.size();
  if (m.matched_targets > 0) {
    m.aoa_mse = se_sum / m.matched_targets;
    m.doppler_rmse = std::sqrt(dop_sq / m.matched_targets);
  }

  // Leftover estimates: clutter echoes or false alarms.
  std::vector<AssociationPoint> rest_pts;
  for (int e : to_targets.unmatched_left) rest_pts.push_back(est_pts[e]);
  std::vector<AssociationPoint> clu_pts(clutter.size());
  for (size_t i = 0; i < clutter.size(); ++i)
    clu_pts[i] = {quantize_delay(clutter[i].delay_s, cfg), std::sin(clutter[i].theta_rad)};
  const Association to_clutter = associate(rest_pts, clu_pts, gates);
  m.clutter_detections = static_cast<int>(to_clutter.matches.size());
  m.false_alarms = static_cast<int>(to_clutter.unmatched_left.size());
  return m;
}

}  // namespace pmn
