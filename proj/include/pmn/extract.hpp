#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "pmn/canceller.hpp"
#include "pmn/config.hpp"
#include "pmn/signal_model.hpp"
#include "pmn/uamp_sbl.hpp"

namespace pmn {

/// Rows of the sparse estimate that survived support detection. Row i keeps
/// its origin grid index; block (i, g) is the 3M-vector d_{i,g} laid out in
/// the measurement column order (g outer, symbol middle, antenna inner).
struct PrunedRows {
  Eigen::MatrixXcd rows;        // L_hat x Upsilon
  std::vector<int> grid_index;  // per row: l' on the delay grid
  int num_antennas = 0;
  int num_ssb = 0;

  int count() const { return static_cast<int>(rows.rows()); }
  /// d_{i,g}, all three symbols of SSB g.
  Eigen::VectorXcd block(int row, int g) const {
    return rows.row(row).segment(g * 3 * num_antennas, 3 * num_antennas).transpose();
  }
  /// b_{i,t'+k}, one symbol's M-subvector.
  Eigen::VectorXcd sub_block(int row, int g, int k) const {
    return rows.row(row).segment((g * 3 + k) * num_antennas, num_antennas).transpose();
  }
};

inline PrunedRows prune(const SparseEstimate& est, const std::vector<int>& support,
                        const DelayDictionary& dict, const SystemConfig& cfg) {
  PrunedRows pr;
  pr.num_antennas = cfg.num_antennas;
  pr.num_ssb = cfg.num_ssb;
  pr.rows.resize(static_cast<int>(support.size()), est.a_hat.cols());
  pr.grid_index.resize(support.size());
  for (size_t i = 0; i < support.size(); ++i) {
    pr.rows.row(static_cast<int>(i)) = est.a_hat.row(support[i]);
    pr.grid_index[i] = dict.grid_index_of_column(support[i]);
  }
  return pr;
}

/// tau_hat = i'/(N_d * delta_f).
inline double estimate_delay(int grid_index, const SystemConfig& cfg) {
  if (grid_index < cfg.grid_origin || grid_index > cfg.grid_origin + cfg.dict_cols - 1)
    throw std::out_of_range("estimate_delay: grid index outside dictionary");
  return grid_index * cfg.delay_bin_s();
}

/// argmax_g ||d_{i,g}||_2, ties broken toward the smaller g (0-based).
inline int select_beam(const PrunedRows& pr, int row) {
  int best = 0;
  double best_norm = -1.0;
  for (int g = 0; g < pr.num_ssb; ++g) {
    const double norm = pr.block(row, g).norm();
    if (norm > best_norm) {
      best_norm = norm;
      best = g;
    }
  }
  return best;
}

/// f_hat = -angle(sum_j b_{t'+j}^T conj(b_{t'+j+1})) / (2 pi Ts).
inline double estimate_doppler(const PrunedRows& pr, int row, int beam, double symbol_period_s) {
  Complex acc(0.0, 0.0);
  for (int j = 0; j < 2; ++j)
    acc += pr.sub_block(row, beam, j + 1).dot(pr.sub_block(row, beam, j));  // b_j^T conj(b_{j+1})
  if (std::abs(acc) == 0.0)
    throw std::domain_error("estimate_doppler: zero accumulator, phase undefined");
  return -std::arg(acc) / (2.0 * kPi * symbol_period_s);
}

struct AoaEstimate {
  double sin_theta = 0;   // clamped to [-1, 1]
  double raw = 0;         // pre-clamp value, |raw| > 1 is the clipping diagnostic
  bool clamped = false;
  double theta_rad() const { return std::asin(sin_theta); }
};

/// sin(theta_hat) = -angle(sum_j sum_m b_{t'+j}(m) conj(b_{t'+j}(m+1))) / pi.
inline AoaEstimate estimate_aoa(const PrunedRows& pr, int row, int beam) {
  if (pr.num_antennas < 2) throw std::invalid_argument("estimate_aoa: need at least 2 antennas");
  Complex acc(0.0, 0.0);
  for (int j = 0; j < 3; ++j) {
    const Eigen::VectorXcd b = pr.sub_block(row, beam, j);
    for (int m = 0; m + 1 < pr.num_antennas; ++m) acc += b(m) * std::conj(b(m + 1));
  }
  if (std::abs(acc) == 0.0)
    throw std::domain_error("estimate_aoa: zero accumulator, phase undefined");
  AoaEstimate out;
  out.raw = -std::arg(acc) / kPi;
  out.clamped = std::abs(out.raw) > 1.0;
  out.sin_theta = std::clamp(out.raw, -1.0, 1.0);
  return out;
}

struct PowerEstimate {
  double power = 0;       // |b_hat|^2, linear
  bool reliable = true;   // false when |a_i| sits in a canceller notch
};

/// |b_hat|^2 = (2M)^{-1} |a_i w^H a*(theta)|^{-2} |sum_j b_{t'+1}^T conj(b_{t'+2j})|.
/// The middle symbol pairs with the first and third; the inherent
/// |cos(2 pi f_D Ts)| factor of that pairing is reported, not corrected.
inline PowerEstimate estimate_power(const PrunedRows& pr, int row, int beam, Complex a_i,
                                    const Eigen::VectorXcd& w, double sin_theta,
                                    double notch_epsilon = 1e-3) {
  const int m = pr.num_antennas;
  PowerEstimate out;
  if (std::abs(a_i) < notch_epsilon) {
    out.reliable = false;
    if (std::abs(a_i) == 0.0) return out;
  }
  Eigen::VectorXcd steer(m);
  for (int i = 0; i < m; ++i) steer(i) = std::polar(1.0, kPi * i * sin_theta);
  const Complex proj = w.dot(steer.conjugate());  // w^H a*(M, theta)
  Complex acc(0.0, 0.0);
  for (int j = 0; j < 2; ++j)
    acc += pr.sub_block(row, beam, 2 * j).dot(pr.sub_block(row, beam, 1));  // b_{t'+1}^T conj(b_{t'+2j})
  const double denom = std::norm(a_i * proj);
  out.power = std::abs(acc) / (2.0 * m * std::max(denom, 1e-300));
  return out;
}

/// One associated path estimate out of Algorithm-2-style extraction.
struct PathEstimate {
  int grid_bin = 0;       // i'
  int beam = 0;           // g_hat, 0-based
  double delay_s = 0;
  double doppler_hz = 0;
  double sin_theta = 0;
  double theta_rad = 0;
  double power = 0;       // |b_hat|^2
  bool power_reliable = true;
  bool aoa_clamped = false;
};

/// Runs delay/beam/Doppler/AoA/power extraction on every pruned row.
/// `canceller_order` 0 means no cancellation stage (a_i = 1).
inline std::vector<PathEstimate> extract_paths(const PrunedRows& pr, const SsbSchedule& sched,
                                               const SystemConfig& cfg, int canceller_order) {
  std::vector<PathEstimate> out;
  out.reserve(pr.count());
  const double ts = cfg.symbol_period_s();
  for (int i = 0; i < pr.count(); ++i) {
    PathEstimate e;
    e.grid_bin = pr.grid_index[i];
    e.delay_s = estimate_delay(e.grid_bin, cfg);
    e.beam = select_beam(pr, i);
    e.doppler_hz = estimate_doppler(pr, i, e.beam, ts);
    const AoaEstimate aoa = estimate_aoa(pr, i, e.beam);
    e.sin_theta = aoa.sin_theta;
    e.theta_rad = aoa.theta_rad();
    e.aoa_clamped = aoa.clamped;
    const Complex a_i = canceller_order >= 1
                            ? canceller_gain(e.doppler_hz, canceller_order,
                                             cfg.burst_spacing_symbols, ts)
                            : Complex(1.0, 0.0);
    const PowerEstimate pw = estimate_power(pr, i, e.beam, a_i, sched.beams.col(e.beam),
                                            e.sin_theta, cfg.power_notch_epsilon);
    e.power = pw.power;
    e.power_reliable = pw.reliable;
    out.push_back(e);
  }
  return out;
}

/// Exponentially smoothed track state, q_hat(i) = alpha q_hat(i-1) + (1-alpha) q(i).
struct Track {
  int id = 0;
  int grid_bin = 0;       // latest associated bin, used for gating
  double delay_s = 0;
  double doppler_hz = 0;
  double sin_theta = 0;
  double power = 0;
  int last_update_burst = 0;
  int hits = 0;
  int misses = 0;
};

inline void smooth(Track& track, const PathEstimate& estimate, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("smooth: alpha outside [0,1]");
  track.delay_s = alpha * track.delay_s + (1.0 - alpha) * estimate.delay_s;
  track.doppler_hz = alpha * track.doppler_hz + (1.0 - alpha) * estimate.doppler_hz;
  track.sin_theta = alpha * track.sin_theta + (1.0 - alpha) * estimate.sin_theta;
  track.power = alpha * track.power + (1.0 - alpha) * estimate.power;
  track.grid_bin = estimate.grid_bin;
}

struct AssociationGates {
  int max_bin_distance = 1;
  double max_sin_theta_distance = 0.1;
};

/// A candidate on either side of the matcher: delay bin plus sin(theta).
struct AssociationPoint {
  int grid_bin = 0;
  double sin_theta = 0;
};

struct Association {
  std::vector<std::pair<int, int>> matches;  // (left index, right index)
  std::vector<int> unmatched_left, unmatched_right;
};

/// Greedy one-to-one matching: exact-bin pairs first, then bin distance 1,
/// up to the gate; within a pass, nearest sin(theta) wins.
inline Association associate(std::span<const AssociationPoint> left,
                             std::span<const AssociationPoint> right,
                             const AssociationGates& gates = {}) {
  struct Cand {
    int bin_dist;
    double sin_dist;
    int l, r;
  };
  std::vector<Cand> cands;
  for (int l = 0; l < static_cast<int>(left.size()); ++l)
    for (int r = 0; r < static_cast<int>(right.size()); ++r) {
      const int bd = std::abs(left[l].grid_bin - right[r].grid_bin);
      const double sd = std::abs(left[l].sin_theta - right[r].sin_theta);
      if (bd <= gates.max_bin_distance && sd <= gates.max_sin_theta_distance)
        cands.push_back({bd, sd, l, r});
    }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.bin_dist != b.bin_dist) return a.bin_dist < b.bin_dist;
    if (a.sin_dist != b.sin_dist) return a.sin_dist < b.sin_dist;
    if (a.l != b.l) return a.l < b.l;
    return a.r < b.r;
  });

  Association out;
  std::vector<char> l_used(left.size(), 0), r_used(right.size(), 0);
  for (const Cand& c : cands) {
    if (l_used[c.l] || r_used[c.r]) continue;
    l_used[c.l] = r_used[c.r] = 1;
    out.matches.emplace_back(c.l, c.r);
  }
  for (int l = 0; l < static_cast<int>(left.size()); ++l)
    if (!l_used[l]) out.unmatched_left.push_back(l);
  for (int r = 0; r < static_cast<int>(right.size()); ++r)
    if (!r_used[r]) out.unmatched_right.push_back(r);
  return out;
}

/// Burst-to-burst track maintenance: matched estimates refine their track via
/// the recursive filter, unmatched estimates open tracks, and tracks missing
/// for `max_misses` consecutive burst sets are dropped.
class TrackStore {
 public:
  explicit TrackStore(double alpha = 0.9, AssociationGates gates = {}, int max_misses = 3)
      : alpha_(alpha), gates_(gates), max_misses_(max_misses) {}

  void update(std::span<const PathEstimate> estimates, int burst_index) {
    std::vector<AssociationPoint> est_pts(estimates.size()), trk_pts(tracks_.size());
    for (size_t i = 0; i < estimates.size(); ++i)
      est_pts[i] = {estimates[i].grid_bin, estimates[i].sin_theta};
    for (size_t i = 0; i < tracks_.size(); ++i)
      trk_pts[i] = {tracks_[i].grid_bin, tracks_[i].sin_theta};

    const Association assoc = associate(est_pts, trk_pts, gates_);
    for (const auto& [e, t] : assoc.matches) {
      Track& trk = tracks_[t];
      smooth(trk, estimates[e], alpha_);
      trk.hits += 1;
      trk.misses = 0;
      trk.last_update_burst = burst_index;
    }
    for (int t : assoc.unmatched_right) tracks_[t].misses += 1;
    for (int e : assoc.unmatched_left) {
      Track trk;
      trk.id = next_id_++;
      trk.grid_bin = estimates[e].grid_bin;
      trk.delay_s = estimates[e].delay_s;
      trk.doppler_hz = estimates[e].doppler_hz;
      trk.sin_theta = estimates[e].sin_theta;
      trk.power = estimates[e].power;
      trk.hits = 1;
      trk.last_update_burst = burst_index;
      tracks_.push_back(trk);
    }
    std::erase_if(tracks_, [this](const Track& t) { return t.misses >= max_misses_; });
  }

  const std::vector<Track>& tracks() const { return tracks_; }

 private:
  double alpha_;
  AssociationGates gates_;
  int max_misses_;
  int next_id_ = 0;
  std::vector<Track> tracks_;
};

}  // namespace pmn
