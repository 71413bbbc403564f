#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmn/io.hpp"
#include "pmn/pipeline.hpp"
#include "pmn/scenario.hpp"
#include "pmn/uamp_sbl.hpp"

namespace pmn {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Everything one experiment needs: physical layer, scene statistics,
/// pipeline/solver parameters, the SNR grid and trial counts.
struct ExperimentConfig {
  SystemConfig system;
  ScenarioSpec scenario;
  PipelineConfig pipeline;
  std::vector<double> snr_grid_db = {0, 5, 10, 15, 20, 25, 30};
  std::vector<Mode> sweep_modes = {Mode::kProposed, Mode::kNoCancel};
  int trials_per_point = 50;
  int scatter_trials = 10;
  bool controlled_snr = true;  // pin the weakest target to each grid point
  uint64_t master_seed = 1;
  int threads = 0;             // 0 = hardware concurrency

  void validate() const {
    system.validate();
    scenario.validate();
    pipeline.validate();
    if (trials_per_point < 1) throw std::invalid_argument("ExperimentConfig: trials_per_point >= 1");
    if (snr_grid_db.empty()) throw std::invalid_argument("ExperimentConfig: empty snr grid");
    if (sweep_modes.empty()) throw std::invalid_argument("ExperimentConfig: empty mode list");
  }

  static ExperimentConfig from_file(const std::string& path) {
    return from_key_values(KeyValueFile::load(path));
  }

  static ExperimentConfig from_key_values(const KeyValueFile& kv) {
    ExperimentConfig c;
    SystemConfig& s = c.system;
    s.num_antennas = static_cast<int>(kv.get_int("num_antennas", s.num_antennas));
    s.num_subcarriers = static_cast<int>(kv.get_int("num_subcarriers", s.num_subcarriers));
    s.num_occupied = static_cast<int>(kv.get_int("num_occupied", s.num_occupied));
    s.bandwidth_hz = kv.get_double("bandwidth_hz", s.bandwidth_hz);
    s.cp_duration_s = kv.get_double("cp_duration_s", s.cp_duration_s);
    s.carrier_freq_hz = kv.get_double("carrier_freq_hz", s.carrier_freq_hz);
    s.num_ssb = static_cast<int>(kv.get_int("num_ssb", s.num_ssb));
    s.burst_spacing_symbols = static_cast<int>(kv.get_int("burst_spacing_symbols", s.burst_spacing_symbols));
    s.canceller_order = static_cast<int>(kv.get_int("canceller_order", s.canceller_order));
    s.delay_grid = static_cast<int>(kv.get_int("delay_grid", s.delay_grid));
    s.dict_cols = static_cast<int>(kv.get_int("dict_cols", s.dict_cols));
    s.grid_origin = static_cast<int>(kv.get_int("grid_origin", s.grid_origin));
    s.tx_power_dbm = kv.get_double("tx_power_dbm", s.tx_power_dbm);
    s.noise_psd_dbm_hz = kv.get_double("noise_psd_dbm_hz", s.noise_psd_dbm_hz);
    s.clutter_doppler_bound_hz = kv.get_double("clutter_doppler_bound_hz", s.clutter_doppler_bound_hz);
    s.beam_sector_min_deg = kv.get_double("beam_sector_min_deg", s.beam_sector_min_deg);
    s.beam_sector_max_deg = kv.get_double("beam_sector_max_deg", s.beam_sector_max_deg);
    s.doppler_phase_guard = kv.get_double("doppler_phase_guard", s.doppler_phase_guard);
    s.power_notch_epsilon = kv.get_double("power_notch_epsilon", s.power_notch_epsilon);

    ScenarioSpec& sp = c.scenario;
    sp.path_count_min = static_cast<int>(kv.get_int("path_count_min", sp.path_count_min));
    sp.path_count_max = static_cast<int>(kv.get_int("path_count_max", sp.path_count_max));
    sp.angle_span_deg_min = kv.get_double("angle_span_deg_min", sp.angle_span_deg_min);
    sp.angle_span_deg_max = kv.get_double("angle_span_deg_max", sp.angle_span_deg_max);
    sp.base_distance_m_min = kv.get_double("base_distance_m_min", sp.base_distance_m_min);
    sp.base_distance_m_max = kv.get_double("base_distance_m_max", sp.base_distance_m_max);
    sp.base_doppler_hz_min = kv.get_double("base_doppler_hz_min", sp.base_doppler_hz_min);
    sp.base_doppler_hz_max = kv.get_double("base_doppler_hz_max", sp.base_doppler_hz_max);
    sp.angle_offset_deg_min = kv.get_double("angle_offset_deg_min", sp.angle_offset_deg_min);
    sp.angle_offset_deg_max = kv.get_double("angle_offset_deg_max", sp.angle_offset_deg_max);
    sp.distance_offset_m_min = kv.get_double("distance_offset_m_min", sp.distance_offset_m_min);
    sp.distance_offset_m_max = kv.get_double("distance_offset_m_max", sp.distance_offset_m_max);
    sp.speed_offset_mps_min = kv.get_double("speed_offset_mps_min", sp.speed_offset_mps_min);
    sp.speed_offset_mps_max = kv.get_double("speed_offset_mps_max", sp.speed_offset_mps_max);
    sp.pathloss_exponent = kv.get_double("pathloss_exponent", sp.pathloss_exponent);
    sp.rcs_m2 = kv.get_double("rcs_m2", sp.rcs_m2);
    sp.clutter_fraction = kv.get_double("clutter_fraction", sp.clutter_fraction);
    sp.snr_floor_db = kv.get_double("snr_floor_db", sp.snr_floor_db);
    sp.distance_is_one_way = kv.get_bool("distance_is_one_way", sp.distance_is_one_way);
    sp.clutter_doppler_uniform = kv.get_bool("clutter_doppler_uniform", sp.clutter_doppler_uniform);

    PipelineConfig& p = c.pipeline;
    p.mode = mode_from_string(kv.get_string("mode", to_string(p.mode)));
    p.num_windows = static_cast<int>(kv.get_int("num_windows", p.num_windows));
    p.filter_alpha = kv.get_double("filter_alpha", p.filter_alpha);
    p.support_rel_threshold = kv.get_double("support_rel_threshold", p.support_rel_threshold);
    p.solver.rel_tol = kv.get_double("solver_rel_tol", p.solver.rel_tol);
    p.solver.max_iters = static_cast<int>(kv.get_int("solver_max_iters", p.solver.max_iters));
    p.gates.max_bin_distance = static_cast<int>(kv.get_int("gate_bin_distance", p.gates.max_bin_distance));
    p.gates.max_sin_theta_distance = kv.get_double("gate_sin_theta", p.gates.max_sin_theta_distance);
    p.track_max_misses = static_cast<int>(kv.get_int("track_max_misses", p.track_max_misses));
    p.rma_warmup = static_cast<int>(kv.get_int("rma_warmup", p.rma_warmup));
    p.rma_rho = kv.get_double("rma_rho", p.rma_rho);

    if (kv.has("snr_grid_db")) {
      c.snr_grid_db.clear();
      std::stringstream ss(kv.get_string("snr_grid_db", ""));
      std::string tok;
      while (std::getline(ss, tok, ',')) c.snr_grid_db.push_back(std::stod(tok));
    }
    if (kv.has("sweep_modes")) {
      c.sweep_modes.clear();
      std::stringstream ss(kv.get_string("sweep_modes", ""));
      std::string tok;
      while (std::getline(ss, tok, ',')) c.sweep_modes.push_back(mode_from_string(tok));
    }
    c.trials_per_point = static_cast<int>(kv.get_int("trials_per_point", c.trials_per_point));
    c.scatter_trials = static_cast<int>(kv.get_int("scatter_trials", c.scatter_trials));
    c.controlled_snr = kv.get_bool("controlled_snr", c.controlled_snr);
    c.master_seed = static_cast<uint64_t>(kv.get_int("master_seed", static_cast<long long>(c.master_seed)));
    c.threads = static_cast<int>(kv.get_int("threads", c.threads));
    kv.reject_unknown_keys();
    c.validate();
    return c;
  }

  /// Every resolved knob, for provenance in JSON outputs.
  nlohmann::json resolved() const {
    nlohmann::json j;
    j["num_antennas"] = system.num_antennas;
    j["num_subcarriers"] = system.num_subcarriers;
    j["num_occupied"] = system.num_occupied;
    j["bandwidth_hz"] = system.bandwidth_hz;
    j["cp_duration_s"] = system.cp_duration_s;
    j["carrier_freq_hz"] = system.carrier_freq_hz;
    j["num_ssb"] = system.num_ssb;
    j["burst_spacing_symbols"] = system.burst_spacing_symbols;
    j["canceller_order"] = system.canceller_order;
    j["delay_grid"] = system.delay_grid;
    j["dict_cols"] = system.dict_cols;
    j["grid_origin"] = system.grid_origin;
    j["tx_power_dbm"] = system.tx_power_dbm;
    j["noise_psd_dbm_hz"] = system.noise_psd_dbm_hz;
    j["clutter_doppler_bound_hz"] = system.clutter_doppler_bound_hz;
    j["beam_sector_min_deg"] = system.beam_sector_min_deg;
    j["beam_sector_max_deg"] = system.beam_sector_max_deg;
    j["doppler_phase_guard"] = system.doppler_phase_guard;
    j["power_notch_epsilon"] = system.power_notch_epsilon;
    j["subcarrier_spacing_hz"] = system.subcarrier_spacing_hz();
    j["symbol_period_s"] = system.symbol_period_s();
    j["delay_bin_s"] = system.delay_bin_s();
    j["path_count_min"] = scenario.path_count_min;
    j["path_count_max"] = scenario.path_count_max;
    j["angle_span_deg_min"] = scenario.angle_span_deg_min;
    j["angle_span_deg_max"] = scenario.angle_span_deg_max;
    j["base_distance_m_min"] = scenario.base_distance_m_min;
    j["base_distance_m_max"] = scenario.base_distance_m_max;
    j["base_doppler_hz_min"] = scenario.base_doppler_hz_min;
    j["base_doppler_hz_max"] = scenario.base_doppler_hz_max;
    j["angle_offset_deg_min"] = scenario.angle_offset_deg_min;
    j["angle_offset_deg_max"] = scenario.angle_offset_deg_max;
    j["distance_offset_m_min"] = scenario.distance_offset_m_min;
    j["distance_offset_m_max"] = scenario.distance_offset_m_max;
    j["speed_offset_mps_min"] = scenario.speed_offset_mps_min;
    j["speed_offset_mps_max"] = scenario.speed_offset_mps_max;
    j["pathloss_exponent"] = scenario.pathloss_exponent;
    j["rcs_m2"] = scenario.rcs_m2;
    j["clutter_fraction"] = scenario.clutter_fraction;
    j["snr_floor_db"] = scenario.snr_floor_db;
    j["distance_is_one_way"] = scenario.distance_is_one_way;
    j["clutter_doppler_uniform"] = scenario.clutter_doppler_uniform;
    j["mode"] = to_string(pipeline.mode);
    j["num_windows"] = pipeline.num_windows;
    j["filter_alpha"] = pipeline.filter_alpha;
    j["support_rel_threshold"] = pipeline.support_rel_threshold;
    j["solver_rel_tol"] = pipeline.solver.rel_tol;
    j["solver_max_iters"] = pipeline.solver.max_iters;
    j["gate_bin_distance"] = pipeline.gates.max_bin_distance;
    j["gate_sin_theta"] = pipeline.gates.max_sin_theta_distance;
    j["track_max_misses"] = pipeline.track_max_misses;
    j["rma_warmup"] = pipeline.rma_warmup;
    j["rma_rho"] = pipeline.rma_rho;
    j["snr_grid_db"] = snr_grid_db;
    std::vector<std::string> modes;
    for (Mode m : sweep_modes) modes.push_back(to_string(m));
    j["sweep_modes"] = modes;
    j["trials_per_point"] = trials_per_point;
    j["scatter_trials"] = scatter_trials;
    j["controlled_snr"] = controlled_snr;
    j["master_seed"] = master_seed;
    j["threads"] = threads;
    return j;
  }
};

struct TrialRecord {
  TrialMetrics metrics;
  double runtime_s = 0;
  int solver_iterations = 0;
  double clutter_suppression_ratio = std::numeric_limits<double>::quiet_NaN();
  bool diverged = false;
};

struct SweepPoint {
  double snr_db = 0;
  Mode mode = Mode::kProposed;
  int trials = 0;
  double mse_db_median = std::numeric_limits<double>::quiet_NaN();
  double mse_db_halfwidth = std::numeric_limits<double>::quiet_NaN();
  double detection_rate = 0;
  double doppler_rmse_median = std::numeric_limits<double>::quiet_NaN();
  double false_alarms_mean = 0;
  double clutter_ratio_median = std::numeric_limits<double>::quiet_NaN();
  double runtime_mean_s = 0;
  int diverged = 0;
  std::vector<TrialRecord> raw;
};

struct SweepResult {
  std::vector<SweepPoint> points;  // snr-major, mode-minor order
  double wall_time_s = 0;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline void for_each_parallel(int jobs, int threads, const std::function<void(int)>& body) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, jobs));
  if (threads == 1) {
    for (int i = 0; i < jobs; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < jobs; i = next.fetch_add(1)) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// One (snr point, trial) evaluation. Seeds depend on the trial index only,
/// so every mode sees the identical scene and noise (paired comparison) and
/// every SNR point reuses the same scene set (common random numbers; the
/// trend over SNR is then not confounded by scene resampling).
inline std::vector<TrialRecord> run_paired_trial(const ExperimentConfig& cfg, double snr_db,
                                                 int trial) {
  const uint64_t scene_seed = splitmix64(cfg.master_seed ^ splitmix64(1000003ULL + trial));
  const uint64_t noise_seed = splitmix64(scene_seed ^ 0xa5a5a5a5a5a5a5a5ULL);

  ScenarioSpec spec = cfg.scenario;
  spec.rng_seed = scene_seed;
  Scenario scene = generate(spec, cfg.system);
  if (cfg.controlled_snr) scale_to_target_snr(scene, cfg.system, snr_db);

  std::vector<TrialRecord> records;
  for (Mode mode : cfg.sweep_modes) {
    PipelineConfig pcfg = cfg.pipeline;
    pcfg.mode = mode;
    TrialRecord rec;
    try {
      const TrialResult res = run_pipeline(cfg.system, scene, noise_seed, pcfg);
      rec.metrics = score_against_truth(res.final_estimates, scene, cfg.system, pcfg.gates);
      rec.runtime_s = res.times.total_s;
      rec.solver_iterations = res.solver_iterations;
      rec.clutter_suppression_ratio = res.clutter_suppression_ratio;
    } catch (const std::runtime_error&) {
      rec.diverged = true;
    }
    records.push_back(rec);
  }
  return records;
}

inline SweepResult sweep_snr(const ExperimentConfig& cfg) {
  cfg.validate();
  const double t0 = detail::now_s();
  const int n_snr = static_cast<int>(cfg.snr_grid_db.size());
  const int n_modes = static_cast<int>(cfg.sweep_modes.size());
  const int trials = cfg.trials_per_point;

  std::vector<std::vector<std::vector<TrialRecord>>> slots(
      n_snr, std::vector<std::vector<TrialRecord>>(trials));
  detail::for_each_parallel(n_snr * trials, cfg.threads, [&](int job) {
    const int si = job / trials;
    const int trial = job % trials;
    slots[si][trial] = run_paired_trial(cfg, cfg.snr_grid_db[si], trial);
  });

  SweepResult out;
  for (int si = 0; si < n_snr; ++si)
    for (int mi = 0; mi < n_modes; ++mi) {
      SweepPoint pt;
      pt.snr_db = cfg.snr_grid_db[si];
      pt.mode = cfg.sweep_modes[mi];
      pt.trials = trials;
      std::vector<double> mse_db, dop, clut;
      double det_sum = 0, fa_sum = 0, rt_sum = 0;
      int det_n = 0;
      for (int t = 0; t < trials; ++t) {
        const TrialRecord& rec = slots[si][t][mi];
        pt.raw.push_back(rec);
        if (rec.diverged) {
          ++pt.diverged;
          continue;
        }
        if (std::isfinite(rec.metrics.aoa_mse) && rec.metrics.aoa_mse > 0)
          mse_db.push_back(linear_to_db(rec.metrics.aoa_mse));
        if (std::isfinite(rec.metrics.doppler_rmse)) dop.push_back(rec.metrics.doppler_rmse);
        if (std::isfinite(rec.clutter_suppression_ratio))
          clut.push_back(rec.clutter_suppression_ratio);
        det_sum += rec.metrics.detection_rate;
        fa_sum += rec.metrics.false_alarms;
        rt_sum += rec.runtime_s;
        ++det_n;
      }
      pt.mse_db_median = detail::median(mse_db);
      if (mse_db.size() > 1) {
        double mean = 0;
        for (double v : mse_db) mean += v;
        mean /= mse_db.size();
        double var = 0;
        for (double v : mse_db) var += (v - mean) * (v - mean);
        pt.mse_db_halfwidth = 1.96 * std::sqrt(var / (mse_db.size() - 1) / mse_db.size());
      }
      pt.detection_rate = det_n ? det_sum / det_n : 0;
      pt.false_alarms_mean = det_n ? fa_sum / det_n : 0;
      pt.runtime_mean_s = det_n ? rt_sum / det_n : 0;
      pt.doppler_rmse_median = detail::median(dop);
      pt.clutter_ratio_median = detail::median(clut);
      out.points.push_back(pt);
    }
  out.wall_time_s = detail::now_s() - t0;
  return out;
}

inline void write_sweep_csv(const SweepResult& sweep, const std::string& path) {
  CsvWriter csv(path);
  csv.header({"snr_db", "mode", "mse_db", "det_rate", "trials"});
  for (const SweepPoint& pt : sweep.points) {
    csv.field(pt.snr_db);
    csv.field(to_string(pt.mode));
    csv.field(pt.mse_db_median);
    csv.field(pt.detection_rate);
    csv.field(pt.trials);
    csv.end_row();
  }
}

inline nlohmann::json sweep_to_json(const ExperimentConfig& cfg, const SweepResult& sweep) {
  nlohmann::json j;
  j["config"] = cfg.resolved();
  j["wall_time_s"] = sweep.wall_time_s;
  nlohmann::json points = nlohmann::json::array();
  for (const SweepPoint& pt : sweep.points) {
    nlohmann::json p;
    p["snr_db"] = pt.snr_db;
    p["mode"] = to_string(pt.mode);
    p["trials"] = pt.trials;
    p["mse_db_median"] = pt.mse_db_median;
    p["mse_db_halfwidth"] = pt.mse_db_halfwidth;
    p["detection_rate"] = pt.detection_rate;
    p["doppler_rmse_median"] = pt.doppler_rmse_median;
    p["false_alarms_mean"] = pt.false_alarms_mean;
    p["clutter_ratio_median"] = pt.clutter_ratio_median;
    p["runtime_mean_s"] = pt.runtime_mean_s;
    p["diverged"] = pt.diverged;
    points.push_back(p);
  }
  j["points"] = points;
  return j;
}

/// trial/distance/speed and trial/distance/angle scatter data, the Fig. 2-3
/// style outputs. kind is truth_target, truth_clutter or estimate.
struct ScatterResult {
  std::vector<int> estimates_per_trial;
  std::vector<TrialMetrics> metrics_per_trial;
};

inline ScatterResult emit_scatter(const ExperimentConfig& cfg, const std::string& speed_csv_path,
                                  const std::string& angle_csv_path) {
  cfg.validate();
  CsvWriter speed_csv(speed_csv_path);
  speed_csv.header({"trial", "distance_m", "speed_mps", "kind"});
  CsvWriter angle_csv(angle_csv_path);
  angle_csv.header({"trial", "distance_m", "pi_sin_theta", "kind"});

  ScatterResult out;
  for (int trial = 0; trial < cfg.scatter_trials; ++trial) {
    ScenarioSpec spec = cfg.scenario;
    spec.rng_seed = splitmix64(cfg.master_seed ^ splitmix64(777 + trial));
    Scenario scene = generate(spec, cfg.system);
    const uint64_t noise_seed = splitmix64(spec.rng_seed ^ 0x5bd1e995ULL);
    const TrialResult res = run_pipeline(cfg.system, scene, noise_seed, cfg.pipeline);

    auto emit = [&](double distance_m, double speed, double pi_sin, const char* kind) {
      speed_csv.field(trial);
      speed_csv.field(distance_m);
      speed_csv.field(speed);
      speed_csv.field(std::string(kind));
      speed_csv.end_row();
      angle_csv.field(trial);
      angle_csv.field(distance_m);
      angle_csv.field(pi_sin);
      angle_csv.field(std::string(kind));
      angle_csv.end_row();
    };
    for (const PathParams& p : scene.paths)
      emit(distance_of_delay(p.delay_s), speed_of_doppler(p.doppler_hz, cfg.system.carrier_freq_hz),
           kPi * std::sin(p.theta_rad), p.is_clutter ? "truth_clutter" : "truth_target");
    for (const PathEstimate& e : res.final_estimates)
      emit(distance_of_delay(e.delay_s), speed_of_doppler(e.doppler_hz, cfg.system.carrier_freq_hz),
           kPi * e.sin_theta, "estimate");

    out.estimates_per_trial.push_back(static_cast<int>(res.final_estimates.size()));
    out.metrics_per_trial.push_back(
        score_against_truth(res.final_estimates, scene, cfg.system, cfg.pipeline.gates));
  }
  return out;
}

/// Track states as CSV rows (burst, bin, tau, f_D, sin theta, power dB, id).
inline void write_tracks_csv(const std::vector<Track>& tracks, const std::string& path) {
  CsvWriter csv(path);
  csv.header({"burst", "bin", "tau_s", "doppler_hz", "sin_theta", "power_db", "track_id"});
  for (const Track& t : tracks) {
    csv.field(t.last_update_burst);
    csv.field(t.grid_bin);
    csv.field(t.delay_s);
    csv.field(t.doppler_hz);
    csv.field(t.sin_theta);
    csv.field(t.power > 0 ? linear_to_db(t.power) : -std::numeric_limits<double>::infinity());
    csv.field(t.id);
    csv.end_row();
  }
}

/// Per-iteration solver trace as CSV.
inline void write_trace_csv(const SparseEstimate& est, const std::string& path) {
  CsvWriter csv(path);
  csv.header({"iteration", "mean_rel_change", "beta"});
  for (const IterationTraceRow& row : est.trace) {
    csv.field(row.iteration);
    csv.field(row.mean_rel_change);
    csv.field(row.noise_precision);
    csv.end_row();
  }
}

}  // namespace pmn
