#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "replan/env.hpp"
#include "replan/observer.hpp"
#include "replan/rem.hpp"
#include "replan/trainer.hpp"

namespace replan::evalkit {

struct SuccessReport {
  double rate = 0.0;
  double mean_distance = 0.0;
  std::vector<double> distances;  // per goal and seed, goal-major
  std::vector<bool> successes;
};

// Runs one greedy episode per (goal seed, run seed) and thresholds the final
// task distance. `threshold` is in workspace units.
SuccessReport success_rate(trainer::Controller& controller, const env::PusherEnv& env,
                           const std::string& layout, trainer::Task task,
                           const std::vector<std::uint64_t>& goal_seeds,
                           const std::vector<std::uint64_t>& seeds, double threshold, int t_max);
std::vector<std::uint64_t> goal_seed_range(std::uint64_t first, int count);

// Approaches the puck from behind and pushes it straight at the goal; reach
// tasks drive the effector directly.
class ScriptedOracle : public trainer::Controller {
 public:
  ScriptedOracle(const env::PusherEnv& env, trainer::Task task) : env_(env), task_(task) {}
  void begin(const trainer::EpisodeSpec& spec, std::uint64_t seed) override;
  env::Vec2 act(const env::EnvState& state, const Image& image) override;

 private:
  const env::PusherEnv& env_;
  trainer::Task task_;
  env::EnvState goal_;
};

class RandomController : public trainer::Controller {
 public:
  void begin(const trainer::EpisodeSpec& spec, std::uint64_t seed) override;
  env::Vec2 act(const env::EnvState& state, const Image& image) override;

 private:
  std::mt19937_64 rng_;
};

// Spearman rank correlation with average ranks for ties. `degenerate` is set
// (and 0 returned) when either input is constant.
double spearman(const std::vector<double>& a, const std::vector<double>& b, bool* degenerate = nullptr);

enum class Sweep { kObjectPosition, kRobotPose };

struct SweepData {
  std::vector<env::EnvState> states;
  torch::Tensor latents;  // [n, D]
};

// Controlled sweeps on the open layout: object positions on a grid with the
// effector parked at the upper left, or effector positions with the puck
// parked at the lower right.
SweepData run_sweep(Observer& observer, const env::PusherEnv& env, Sweep kind, int n_points);

struct ConsistencyReport {
  double rho_x = 0.0;
  double rho_y = 0.0;
  bool degenerate = false;
  std::string coordinate;  // how latent coordinates were chosen
  int points = 0;
  int undetected = 0;  // DRM object sweep: frames with no present cell
};

// Object sweep: DRM latents use the centre of the strongest z_where block;
// other observers use, per axis, the latent dimension with the largest |rho|.
// Robot sweep: projection of the robot latent on its first principal
// direction (DRM) or of the whole latent (other observers).
ConsistencyReport consistency_metric(Observer& observer, const env::PusherEnv& env, Sweep kind,
                                     int n_points);

// Total variance of the robot latent during the object sweep divided by its
// total variance during the pose sweep.
double robot_latent_drift(DrmObserver& observer, const env::PusherEnv& env, int n_points);

struct ReconstructionReport {
  double psnr = 0.0;        // dB, mean over frames
  double iou_object = 0.0;  // object-branch mask > 0.5 vs the true puck mask
  double iou_robot = 0.0;
  int frames = 0;
};

// Deterministic encode/decode of `states` rendered at the model resolution.
ReconstructionReport reconstruction_quality(drm::DrmModel& model, const env::PusherEnv& env,
                                            const std::vector<env::EnvState>& states);

struct ObstacleReport {
  double mean_margin = 0.0;   // mean R(free) - R(across) over matched pairs
  int matched_pairs = 0;
  double mean_free = 0.0;
  double mean_across = 0.0;
  torch::Tensor heatmap;      // [G, G]
  std::vector<bool> across;   // per probe
  std::vector<bool> valid;
};

// Probes: puck on a G x G grid with the effector next to it. A probe is
// "across" when its BFS distance exceeds twice its Euclidean distance to the
// reference (or it is unreachable) and "free" when the ratio is at most 1.25.
// Every across probe is paired with the free probe of closest Euclidean
// distance (within `match_tol`).
ObstacleReport obstacle_margin(rem::ReachModel& model, Observer& observer, const env::PusherEnv& env,
                               const env::EnvState& reference, int grid, double match_tol = 0.03,
                               double oracle_step = 0.05);
struct HeatmapProbes {
  std::vector<env::EnvState> states;
  std::vector<bool> valid;
  torch::Tensor latents;
};
HeatmapProbes heatmap_probes(Observer& observer, const env::PusherEnv& env, const std::string& layout,
                             int grid);

struct AblationRow {
  std::string variant;
  std::map<std::string, double> success;  // layout -> rate; missing = gap
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<std::string> layouts;
  bool ordering_holds = false;  // full > w/o CM > w/o REM&CM and full > w/o DRM
  std::vector<std::string> gaps;
};

inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v = {"full", "wo_cm", "wo_rem_cm", "wo_drm"};
  return v;
}
// Config overrides of each variant.
std::map<std::string, std::string> variant_overrides(const std::string& variant);

AblationTable ablation_table(const std::vector<AblationRow>& rows, const std::vector<std::string>& layouts);
// CSV with one row per variant plus the published reference row.
void write_ablation_csv(const AblationTable& table, const std::filesystem::path& path);

enum class PlotKind { kLearningCurve, kSuccessCurve, kHeatmap };
PlotKind parse_plot_kind(const std::string& name);

struct PlotStats {
  int series = 0;
  int points = 0;
  int malformed = 0;
};

// Learning curves: one JSONL per seed; the mean of `final_distance` (or
// `success`) per episode with a +/- one std band. Heatmap: a CSV matrix.
PlotStats plot_emit(const std::vector<std::filesystem::path>& inputs, PlotKind kind,
                    const std::filesystem::path& png, int smooth = 10);

}  // namespace replan::evalkit
