#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "pmn/experiment.hpp"
#include "pmn/pipeline.hpp"

using namespace pmn;
using Catch::Approx;

namespace {

SystemConfig noiseless_config() {
  SystemConfig cfg;
  cfg.noise_psd_dbm_hz = -std::numeric_limits<double>::infinity();
  return cfg;
}

// On-grid three-target scene used as the end-to-end oracle; ground truth is
// exactly representable so every extractor must reproduce it.
Scenario oracle_targets_scene(const SystemConfig& cfg, std::vector<PathParams>* truth_out = nullptr) {
  // Dopplers sit inside the canceller passband, angles inside the beam sector.
  std::vector<PathParams> targets = {
      {50 * cfg.delay_bin_s(), 340.0, 15.0 * kPi / 180.0, std::polar(1.0, 0.3), false},
      {75 * cfg.delay_bin_s(), 470.0, -35.0 * kPi / 180.0, std::polar(0.8, 1.1), false},
      {110 * cfg.delay_bin_s(), 610.0, 48.0 * kPi / 180.0, std::polar(1.2, -2.0), false},
  };
  if (truth_out) *truth_out = targets;
  return fixed_target_scene(targets, {}, cfg, 11);
}

std::vector<PathParams> static_clutter(const SystemConfig& cfg, int count, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0, 1);
  std::vector<PathParams> out;
  for (int i = 0; i < count; ++i)
    out.push_back({(40.0 + 110.0 * uni(rng)) * cfg.delay_bin_s(), 0.0, (uni(rng) - 0.5) * 2.5,
                   std::polar(1.0 + 2.0 * uni(rng), uni(rng) * 2 * kPi), true});
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig cfg;
  cfg.snr_grid_db = {10.0};
  cfg.trials_per_point = 2;
  cfg.pipeline.num_windows = 2;
  cfg.pipeline.compute_clutter_ratio = false;
  cfg.scenario.path_count_min = 6;
  cfg.scenario.path_count_max = 8;
  cfg.master_seed = 99;
  return cfg;
}

}  // namespace

TEST_CASE("noiseless on-grid targets are recovered exactly") {
  SystemConfig cfg = noiseless_config();
  std::vector<PathParams> truth;
  const Scenario scene = oracle_targets_scene(cfg, &truth);
  PipelineConfig pcfg;
  pcfg.num_windows = 3;
  pcfg.compute_clutter_ratio = false;
  pcfg.solver.rel_tol = 1e-24;  // noiseless exactness needs the numerical fixed point
  pcfg.solver.max_iters = 500;
  const TrialResult res = run_pipeline(cfg, scene, 5, pcfg);

  REQUIRE(res.final_estimates.size() == truth.size());
  std::vector<PathEstimate> sorted = res.final_estimates;
  std::sort(sorted.begin(), sorted.end(),
            [](const PathEstimate& a, const PathEstimate& b) { return a.grid_bin < b.grid_bin; });
  for (size_t i = 0; i < truth.size(); ++i) {
    REQUIRE(sorted[i].grid_bin == quantize_delay(truth[i].delay_s, cfg));
    REQUIRE(std::abs(sorted[i].doppler_hz - truth[i].doppler_hz) < 1e-6);
    REQUIRE(std::abs(sorted[i].sin_theta - std::sin(truth[i].theta_rad)) < 1e-9);
    // power carries the estimator's inherent |cos(2 pi f Ts)| factor
    const double expected = std::norm(truth[i].amplitude) *
                            std::abs(std::cos(2.0 * kPi * truth[i].doppler_hz * cfg.symbol_period_s()));
    REQUIRE(sorted[i].power == Approx(expected).epsilon(1e-3));
  }

  const TrialMetrics metrics = score_against_truth(res.final_estimates, scene, cfg, pcfg.gates);
  REQUIRE(metrics.detection_rate == 1.0);
  REQUIRE(metrics.false_alarms == 0);
  REQUIRE(metrics.aoa_mse < 1e-12);
}

TEST_CASE("static clutter alone yields no detections") {
  SystemConfig cfg = noiseless_config();
  const Scenario scene = fixed_target_scene({}, static_clutter(cfg, 10, 3), cfg, 4);
  PipelineConfig pcfg;
  pcfg.num_windows = 2;
  const TrialResult res = run_pipeline(cfg, scene, 6, pcfg);
  REQUIRE(res.final_estimates.empty());
  REQUIRE(res.clutter_suppression_ratio <= 1e-20);
}

TEST_CASE("pipeline runs are deterministic in the seed") {
  SystemConfig cfg;  // thermal noise on
  std::vector<PathParams> truth;
  Scenario scene = oracle_targets_scene(cfg, &truth);
  scale_to_target_snr(scene, cfg, 15.0);
  PipelineConfig pcfg;
  pcfg.num_windows = 2;
  pcfg.compute_clutter_ratio = false;
  const TrialResult a = run_pipeline(cfg, scene, 1234, pcfg);
  const TrialResult b = run_pipeline(cfg, scene, 1234, pcfg);
  REQUIRE(a.final_estimates.size() == b.final_estimates.size());
  for (size_t i = 0; i < a.final_estimates.size(); ++i) {
    REQUIRE(a.final_estimates[i].doppler_hz == b.final_estimates[i].doppler_hz);
    REQUIRE(a.final_estimates[i].sin_theta == b.final_estimates[i].sin_theta);
    REQUIRE(a.final_estimates[i].power == b.final_estimates[i].power);
  }
  const TrialResult c = run_pipeline(cfg, scene, 1235, pcfg);
  bool identical = a.final_estimates.size() == c.final_estimates.size();
  if (identical)
    for (size_t i = 0; i < a.final_estimates.size(); ++i)
      identical = identical && a.final_estimates[i].sin_theta == c.final_estimates[i].sin_theta;
  REQUIRE_FALSE(identical);
}

TEST_CASE("without cancellation static clutter shows up in the support") {
  SystemConfig cfg = noiseless_config();
  const std::vector<PathParams> clutter = static_clutter(cfg, 5, 9);
  const Scenario scene = fixed_target_scene({}, clutter, cfg, 4);
  PipelineConfig pcfg;
  pcfg.mode = Mode::kNoCancel;
  pcfg.num_windows = 1;
  const TrialResult res = run_pipeline(cfg, scene, 6, pcfg);
  REQUIRE_FALSE(res.final_estimates.empty());
  REQUIRE(res.clutter_suppression_ratio == 1.0);

  const TrialMetrics metrics = score_against_truth(res.final_estimates, scene, cfg, pcfg.gates);
  REQUIRE(metrics.clutter_detections >= 4);  // the echoes are real, just unwanted
}

TEST_CASE("clutter-free scenes make both modes agree") {
  // paired seeds; in-passband targets, so cancellation only rescales
  SystemConfig cfg;
  std::vector<PathParams> truth;
  Scenario scene = oracle_targets_scene(cfg, &truth);
  scale_to_target_snr(scene, cfg, 20.0);
  PipelineConfig pcfg;
  pcfg.num_windows = 3;
  pcfg.compute_clutter_ratio = false;

  std::vector<double> gaps;
  for (uint64_t seed = 40; seed < 50; ++seed) {
    pcfg.mode = Mode::kProposed;
    const TrialMetrics proposed = score_against_truth(
        run_pipeline(cfg, scene, seed, pcfg).final_estimates, scene, cfg, pcfg.gates);
    pcfg.mode = Mode::kNoCancel;
    const TrialMetrics baseline = score_against_truth(
        run_pipeline(cfg, scene, seed, pcfg).final_estimates, scene, cfg, pcfg.gates);
    REQUIRE(proposed.detection_rate == 1.0);
    REQUIRE(baseline.detection_rate == 1.0);
    gaps.push_back(std::abs(linear_to_db(proposed.aoa_mse) - linear_to_db(baseline.aoa_mse)));
  }
  std::sort(gaps.begin(), gaps.end());
  REQUIRE(gaps[gaps.size() / 2] < 6.0);
}

TEST_CASE("five planted targets hold continuous tracks over ten bursts") {
  SystemConfig cfg;
  std::vector<PathParams> targets = {
      {45 * cfg.delay_bin_s(), 290.0, 0.15, std::polar(1.0, 0.1), false},
      {62 * cfg.delay_bin_s(), 320.0, -0.40, std::polar(1.0, 0.9), false},
      {88 * cfg.delay_bin_s(), 510.0, 0.65, std::polar(1.0, 2.2), false},
      {104 * cfg.delay_bin_s(), 440.0, -0.70, std::polar(1.0, -1.3), false},
      {131 * cfg.delay_bin_s(), 590.0, 0.80, std::polar(1.0, 3.0), false},
  };
  Scenario scene = fixed_target_scene(targets, {}, cfg, 21);
  scale_to_target_snr(scene, cfg, 20.0);
  PipelineConfig pcfg;
  pcfg.num_windows = 10;
  pcfg.compute_clutter_ratio = false;
  const TrialResult res = run_pipeline(cfg, scene, 77, pcfg);

  int continuous = 0;
  for (const Track& t : res.tracks)
    if (t.hits == pcfg.num_windows) ++continuous;
  REQUIRE(continuous == 5);
  const TrialMetrics metrics = score_against_truth(res.final_estimates, scene, cfg, pcfg.gates);
  REQUIRE(metrics.detection_rate == 1.0);
}

TEST_CASE("rma with rho zero subtracts the previous burst") {
  SystemConfig cfg = noiseless_config();
  const Scenario scene = fixed_target_scene({}, static_clutter(cfg, 6, 2), cfg, 8);
  PipelineConfig pcfg;
  pcfg.mode = Mode::kRma;
  pcfg.rma_rho = 0.0;
  pcfg.rma_warmup = 2;
  pcfg.num_windows = 1;
  const TrialResult res = run_pipeline(cfg, scene, 3, pcfg);
  REQUIRE(res.final_estimates.empty());  // static scene: y(k) - y(k-1) = 0
  REQUIRE(res.clutter_suppression_ratio <= 1e-20);
}

TEST_CASE("rma leaves static residual far below the forgetting bound") {
  SystemConfig cfg = noiseless_config();
  const Scenario scene = fixed_target_scene({}, static_clutter(cfg, 8, 5), cfg, 8);
  PipelineConfig pcfg;
  pcfg.mode = Mode::kRma;
  const TrialResult res = run_pipeline(cfg, scene, 3, pcfg);
  REQUIRE(res.clutter_suppression_ratio <= std::pow(pcfg.rma_rho, 64));
  REQUIRE(res.final_estimates.empty());
}

TEST_CASE("rma keeps moving targets, closed-form recursion agrees") {
  SystemConfig cfg = noiseless_config();
  const double rho = 0.99;
  const int warmup = 64;
  std::vector<double> losses;
  for (int trial = 0; trial < 10; ++trial) {
    PathParams target{(40 + 9 * trial) * cfg.delay_bin_s(), 300.0 + 30.0 * trial,
                      0.1 * trial - 0.4, std::polar(1.0, 0.37 * trial), false};
    const Scenario scene = fixed_target_scene({target}, {}, cfg, 31 + trial);
    const ReceivedCube cube =
        transmit_receive(scene.paths, scene.schedule, cfg, 0, warmup + 1);

    // reference recursion, seeded with the first burst
    std::vector<Eigen::MatrixXcd> avg = cube.bursts[0];
    for (int b = 1; b < warmup; ++b)
      for (size_t u = 0; u < avg.size(); ++u)
        avg[u] = rho * avg[u] + (1 - rho) * cube.bursts[b][u];
    double raw = 0, clean = 0;
    for (size_t u = 0; u < avg.size(); ++u) {
      raw += cube.bursts[warmup][u].squaredNorm();
      clean += (cube.bursts[warmup][u] - avg[u]).squaredNorm();
    }
    losses.push_back(clean / raw);
  }
  std::sort(losses.begin(), losses.end());
  REQUIRE(losses[losses.size() / 2] > 0.5);  // median loss < 3 dB
}

TEST_CASE("rma requires enough bursts") {
  SystemConfig cfg = noiseless_config();
  const Scenario scene = fixed_target_scene({}, static_clutter(cfg, 3, 2), cfg, 8);
  PipelineConfig pcfg;
  pcfg.mode = Mode::kRma;
  pcfg.rma_warmup = 0;
  REQUIRE_THROWS_AS(run_pipeline(cfg, scene, 3, pcfg), std::invalid_argument);
}

TEST_CASE("controlled snr pins the weakest target") {
  SystemConfig cfg;
  std::vector<PathParams> truth;
  Scenario scene = oracle_targets_scene(cfg, &truth);
  scale_to_target_snr(scene, cfg, 7.0);
  double weakest = std::numeric_limits<double>::infinity();
  for (const auto& p : scene.paths)
    weakest = std::min(weakest, post_canceller_snr(p, scene.schedule, cfg));
  REQUIRE(linear_to_db(weakest) == Approx(7.0).epsilon(1e-9));

  const Scenario empty = fixed_target_scene({}, {}, cfg, 2);
  Scenario no_targets = empty;
  REQUIRE_THROWS_AS(scale_to_target_snr(no_targets, cfg, 5.0), std::invalid_argument);
}

TEST_CASE("sweep with one point and one trial writes one row") {
  ExperimentConfig cfg = tiny_experiment();
  cfg.trials_per_point = 1;
  cfg.sweep_modes = {Mode::kProposed};
  const SweepResult sweep = sweep_snr(cfg);
  REQUIRE(sweep.points.size() == 1);
  write_sweep_csv(sweep, "sweep_one_row_test.csv");
  std::ifstream in("sweep_one_row_test.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 2);
  REQUIRE(lines[0] == "snr_db,mode,mse_db,det_rate,trials");
  std::remove("sweep_one_row_test.csv");
}

TEST_CASE("sweep outputs are byte reproducible") {
  const ExperimentConfig cfg = tiny_experiment();
  const SweepResult a = sweep_snr(cfg);
  ExperimentConfig pooled = cfg;
  pooled.threads = 3;  // worker count must not affect results
  const SweepResult b = sweep_snr(pooled);
  write_sweep_csv(a, "sweep_repro_a.csv");
  write_sweep_csv(b, "sweep_repro_b.csv");
  REQUIRE(slurp("sweep_repro_a.csv") == slurp("sweep_repro_b.csv"));
  std::remove("sweep_repro_a.csv");
  std::remove("sweep_repro_b.csv");

  const nlohmann::json j = sweep_to_json(cfg, a);
  REQUIRE(j["config"]["num_antennas"] == cfg.system.num_antennas);
  REQUIRE(j["points"].size() == a.points.size());
}

TEST_CASE("scatter on an empty scene is header-only") {
  ExperimentConfig cfg = tiny_experiment();
  cfg.system.noise_psd_dbm_hz = -std::numeric_limits<double>::infinity();
  cfg.scenario.path_count_min = 0;
  cfg.scenario.path_count_max = 0;
  cfg.scatter_trials = 2;
  const ScatterResult res = emit_scatter(cfg, "scatter_speed_empty.csv", "scatter_angle_empty.csv");
  REQUIRE(res.estimates_per_trial == std::vector<int>{0, 0});
  std::ifstream in("scatter_speed_empty.csv");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  REQUIRE(lines == 1);
  std::remove("scatter_speed_empty.csv");
  std::remove("scatter_angle_empty.csv");
}

TEST_CASE("scatter row counts cross-check the metrics") {
  ExperimentConfig cfg = tiny_experiment();
  cfg.scatter_trials = 3;
  cfg.pipeline.num_windows = 2;
  const ScatterResult res = emit_scatter(cfg, "scatter_speed_x.csv", "scatter_angle_x.csv");

  int estimate_rows = 0, truth_rows = 0;
  std::ifstream in("scatter_speed_x.csv");
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.find(",estimate") != std::string::npos) ++estimate_rows;
    if (line.find(",truth_") != std::string::npos) ++truth_rows;
  }
  int expected = 0;
  for (int c : res.estimates_per_trial) expected += c;
  REQUIRE(estimate_rows == expected);
  REQUIRE(truth_rows > 0);
  for (size_t i = 0; i < res.metrics_per_trial.size(); ++i)
    REQUIRE(res.metrics_per_trial[i].matched_targets <= res.estimates_per_trial[i]);
  std::remove("scatter_speed_x.csv");
  std::remove("scatter_angle_x.csv");
}

TEST_CASE("config files load and reject unknown keys") {
  const std::string path = "pipeline_config_test.cfg";
  {
    std::ofstream out(path);
    out << "# experiment setup\n";
    out << "num_antennas = 4\n";
    out << "canceller_order 3\n";
    out << "snr_grid_db = 0,5,10\n";
    out << "trials_per_point = 7\n";
    out << "mode = no_cancel\n";
    out << "clutter_fraction = 0.25\n";
    out << "solver_rel_tol = 1e-5\n";
  }
  const ExperimentConfig cfg = ExperimentConfig::from_file(path);
  REQUIRE(cfg.system.canceller_order == 3);
  REQUIRE(cfg.snr_grid_db == std::vector<double>{0, 5, 10});
  REQUIRE(cfg.trials_per_point == 7);
  REQUIRE(cfg.pipeline.mode == Mode::kNoCancel);
  REQUIRE(cfg.scenario.clutter_fraction == 0.25);
  REQUIRE(cfg.pipeline.solver.rel_tol == 1e-5);
  REQUIRE(cfg.system.num_subcarriers == 512);  // untouched default

  {
    std::ofstream out(path);
    out << "num_antennaz = 4\n";
  }
  REQUIRE_THROWS_AS(ExperimentConfig::from_file(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("tracks export with documented columns") {
  std::vector<Track> tracks(2);
  tracks[0] = {.id = 0, .grid_bin = 50, .delay_s = 5e-7, .doppler_hz = 120.0, .sin_theta = 0.25,
               .power = 2.0, .last_update_burst = 4, .hits = 5, .misses = 0};
  tracks[1] = {.id = 3, .grid_bin = 88, .delay_s = 8.8e-7, .doppler_hz = -340.0, .sin_theta = -0.5,
               .power = 0.5, .last_update_burst = 4, .hits = 2, .misses = 1};
  write_tracks_csv(tracks, "tracks_export_test.csv");
  std::ifstream in("tracks_export_test.csv");
  std::string header;
  std::getline(in, header);
  REQUIRE(header == "burst,bin,tau_s,doppler_hz,sin_theta,power_db,track_id");
  std::string row;
  std::getline(in, row);
  REQUIRE(row.find("4,50,5e-07") == 0);
  std::remove("tracks_export_test.csv");
}
