#pragma once

#include <algorithm>
#include <fstream>
#include <random>
#include <stdexcept>
#include <vector>

#include "pmn/config.hpp"
#include "pmn/signal_model.hpp"

namespace pmn {

/// Randomized scene generation ranges. Each path draws a base value and an
/// independent offset and sums them (angles clipped to +-90 deg). Distances
/// are one-way by default; amplitudes follow the large-scale path-loss law
/// |b|^2 ~ P_tx * rcs / d^exponent, calibrated so the weakest configured path
/// (largest distance) sits at `snr_floor_db` relative to the per-element
/// noise variance.
struct ScenarioSpec {
  int path_count_min = 15, path_count_max = 25;
  double angle_span_deg_min = 0.0, angle_span_deg_max = 45.0;
  double base_distance_m_min = 0.0, base_distance_m_max = 60.0;
  double base_doppler_hz_min = 0.0, base_doppler_hz_max = 600.0;
  double angle_offset_deg_min = -75.0, angle_offset_deg_max = 75.0;
  double distance_offset_m_min = 60.0, distance_offset_m_max = 120.0;
  double speed_offset_mps_min = -40.0, speed_offset_mps_max = 40.0;
  double pathloss_exponent = 4.0;
  double rcs_m2 = 1.0;
  double clutter_fraction = 0.5;
  double snr_floor_db = 0.0;
  bool distance_is_one_way = true;   // false: ranges give the total path length c*tau
  bool clutter_doppler_uniform = false;  // default pins clutter at exactly f_D = 0
  uint64_t rng_seed = 1;

  void validate() const {
    auto fail = [](const char* m) { throw std::invalid_argument(std::string("ScenarioSpec: ") + m); };
    if (path_count_min < 0 || path_count_max < path_count_min) fail("bad path count range");
    if (angle_span_deg_max < angle_span_deg_min) fail("bad angle span");
    if (base_distance_m_max < base_distance_m_min || base_distance_m_min < 0) fail("bad distance range");
    if (base_doppler_hz_max < base_doppler_hz_min) fail("bad doppler range");
    if (distance_offset_m_max < distance_offset_m_min) fail("bad distance offset range");
    if (clutter_fraction < 0.0 || clutter_fraction > 1.0) fail("clutter_fraction outside [0,1]");
    if (pathloss_exponent <= 0.0) fail("pathloss exponent must be positive");
  }
};

/// A concrete scene: ground-truth paths plus the SSB schedule they are
/// observed with.
struct Scenario {
  std::vector<PathParams> paths;
  SsbSchedule schedule;

  std::vector<PathParams> targets() const {
    std::vector<PathParams> out;
    for (const auto& p : paths)
      if (!p.is_clutter) out.push_back(p);
    return out;
  }
  std::vector<PathParams> clutter() const {
    std::vector<PathParams> out;
    for (const auto& p : paths)
      if (p.is_clutter) out.push_back(p);
    return out;
  }
};

/// Round-trip delay of a reflector at the given configured distance.
inline double delay_of_distance(double distance_m, bool one_way) {
  return one_way ? 2.0 * distance_m / kSpeedOfLight : distance_m / kSpeedOfLight;
}
inline double distance_of_delay(double delay_s) { return kSpeedOfLight * delay_s / 2.0; }
/// Monostatic Doppler of a radial speed: f_D = 2 v f_c / c.
inline double doppler_of_speed(double speed_mps, double carrier_freq_hz) {
  return 2.0 * speed_mps * carrier_freq_hz / kSpeedOfLight;
}
inline double speed_of_doppler(double doppler_hz, double carrier_freq_hz) {
  return doppler_hz * kSpeedOfLight / (2.0 * carrier_freq_hz);
}

/// Draws a random cluster scene. Paths whose delay would exceed dictionary
/// coverage are resampled.
inline Scenario generate(const ScenarioSpec& spec, const SystemConfig& cfg) {
  spec.validate();
  cfg.validate();
  std::mt19937_64 rng(spec.rng_seed);
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  const int count = std::uniform_int_distribution<int>(spec.path_count_min, spec.path_count_max)(rng);
  const int clutter_count = static_cast<int>(std::lround(spec.clutter_fraction * count));

  const double d_max = spec.base_distance_m_max + spec.distance_offset_m_max;
  const double floor_lin = db_to_linear(spec.snr_floor_db);
  const double sigma2 = cfg.noise_variance_w();
  // |b(d)|^2 = kappa * P_tx * rcs / d^e with kappa anchored at d_max.
  const double kappa = floor_lin * sigma2 * std::pow(d_max, spec.pathloss_exponent) /
                       (cfg.tx_power_w() * spec.rcs_m2);

  Scenario scene;
  scene.schedule = make_ssb_schedule(cfg, rng());
  scene.paths.reserve(count);
  for (int i = 0; i < count; ++i) {
    const bool is_clutter = i < clutter_count;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000)
        throw std::runtime_error("generate: cannot place path within dictionary coverage");
      PathParams p;
      p.is_clutter = is_clutter;
      const double angle_deg = std::clamp(uniform(spec.angle_span_deg_min, spec.angle_span_deg_max) +
                                              uniform(spec.angle_offset_deg_min, spec.angle_offset_deg_max),
                                          -90.0, 90.0);
      p.theta_rad = angle_deg * kPi / 180.0;
      const double distance = uniform(spec.base_distance_m_min, spec.base_distance_m_max) +
                              uniform(spec.distance_offset_m_min, spec.distance_offset_m_max);
      p.delay_s = delay_of_distance(distance, spec.distance_is_one_way);
      if (is_clutter) {
        p.doppler_hz = spec.clutter_doppler_uniform
                           ? uniform(-cfg.clutter_doppler_bound_hz, cfg.clutter_doppler_bound_hz)
                           : 0.0;
      } else {
        p.doppler_hz = uniform(spec.base_doppler_hz_min, spec.base_doppler_hz_max) +
                       doppler_of_speed(uniform(spec.speed_offset_mps_min, spec.speed_offset_mps_max),
                                        cfg.carrier_freq_hz);
      }
      const double power = kappa * cfg.tx_power_w() * spec.rcs_m2 /
                           std::pow(distance, spec.pathloss_exponent);
      p.amplitude = std::polar(std::sqrt(power), uniform(0.0, 2.0 * kPi));
      if (p.delay_s >= cfg.delay_coverage_s()) continue;
      if (std::abs(p.doppler_hz) * cfg.symbol_period_s() > cfg.doppler_phase_guard) continue;
      scene.paths.push_back(p);
      break;
    }
  }
  return scene;
}

/// Deterministic scene assembly for tests and oracles.
inline Scenario fixed_target_scene(std::vector<PathParams> targets, std::vector<PathParams> clutter,
                                   const SystemConfig& cfg, uint64_t pilot_seed = 7) {
  Scenario scene;
  scene.schedule = make_ssb_schedule(cfg, pilot_seed);
  for (auto& p : targets) p.is_clutter = false;
  for (auto& p : clutter) p.is_clutter = true;
  scene.paths = std::move(targets);
  scene.paths.insert(scene.paths.end(), clutter.begin(), clutter.end());
  for (const auto& p : scene.paths)
    if (p.delay_s < 0 || p.delay_s >= cfg.delay_coverage_s())
      throw std::invalid_argument("fixed_target_scene: delay outside dictionary coverage");
  return scene;
}

/// Ground-truth sidecar: one `path` line per path, schedule recoverable from
/// the stored pilot seed.
inline void save_scenario(const Scenario& scene, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open scenario file for writing: " + path);
  out << "pilot_seed " << scene.schedule.pilot_seed << "\n";
  out << "paths " << scene.paths.size() << "\n";
  char buf[256];
  for (const auto& p : scene.paths) {
    std::snprintf(buf, sizeof(buf), "path %.17g %.17g %.17g %.17g %.17g %d\n", p.delay_s,
                  p.doppler_hz, p.theta_rad, p.amplitude.real(), p.amplitude.imag(),
                  p.is_clutter ? 1 : 0);
    out << buf;
  }
}

inline Scenario load_scenario(const std::string& path, const SystemConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file: " + path);
  std::string tag;
  uint64_t pilot_seed = 0;
  size_t count = 0;
  if (!(in >> tag >> pilot_seed) || tag != "pilot_seed")
    throw std::runtime_error("scenario file: missing pilot_seed");
  if (!(in >> tag >> count) || tag != "paths")
    throw std::runtime_error("scenario file: missing path count");
  Scenario scene;
  scene.schedule = make_ssb_schedule(cfg, pilot_seed);
  scene.paths.resize(count);
  for (auto& p : scene.paths) {
    double re = 0, im = 0;
    int clutter_flag = 0;
    if (!(in >> tag >> p.delay_s >> p.doppler_hz >> p.theta_rad >> re >> im >> clutter_flag) ||
        tag != "path")
      throw std::runtime_error("scenario file: malformed path line");
    p.amplitude = Complex(re, im);
    p.is_clutter = clutter_flag != 0;
  }
  return scene;
}

}  // namespace pmn
