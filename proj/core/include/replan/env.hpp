#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "replan/config.hpp"
#include "replan/image.hpp"

namespace replan::env {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double norm() const { return std::hypot(x, y); }
  bool operator==(const Vec2&) const = default;
};

// Axis-aligned rectangle in workspace units; y grows downwards (image rows).
struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  // True when a disc of radius `margin` centred at p overlaps the rectangle
  // inflated by `margin` (square corners).
  bool blocks(Vec2 p, double margin) const {
    return p.x > x0 - margin && p.x < x1 + margin && p.y > y0 - margin && p.y < y1 + margin;
  }
  bool contains(Vec2 p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
};

struct Layout {
  std::string id;
  std::vector<Rect> walls;
  Rect puck_start;
  Rect robot_start;
  Rect goal_region;
  int default_subgoals = 3;
};

// Obstacle layouts keyed by id, loaded from a versioned JSON document.
class LayoutRegistry {
 public:
  static constexpr int kFormatVersion = 1;

  static const LayoutRegistry& builtin();
  static LayoutRegistry from_json(const std::string& text);
  static LayoutRegistry from_file(const std::filesystem::path& path);
  static const std::string& builtin_json();

  const Layout& get(const std::string& id) const;
  bool contains(const std::string& id) const;
  std::vector<std::string> ids() const;
  void add(Layout layout);

 private:
  std::vector<Layout> layouts_;
};

struct EnvConfig {
  int t_max = 200;
  int resolution = 64;
  double max_step = 0.025;
  double robot_radius = 0.04;
  double puck_radius = 0.05;
  double link_width = 0.035;
  bool eval_truth = false;

  static EnvConfig from_config(const Config& config);
};

struct EnvState {
  Vec2 robot;
  Vec2 puck;
  std::string layout_id;
  int step_count = 0;

  bool operator==(const EnvState&) const = default;
};

// Evaluation-only labels. Never produced unless EnvConfig::eval_truth is set.
struct GroundTruth {
  EnvState state;
  Mask robot_mask;
  Mask puck_mask;
};

struct Observation {
  Image image;
  std::optional<GroundTruth> truth;
};

struct StepResult {
  EnvState state;
  Observation observation;
  bool done = false;
};

struct Frame {
  int step = 0;
  EnvState state;
  Vec2 action;
  Image image;  // empty when the trajectory was generated without images
};

struct Trajectory {
  std::string layout_id;
  std::uint64_t seed = 0;
  std::vector<Frame> frames;
};

// Shoulder and elbow of the rendered two-link arm for a given effector
// position. The base is fixed above the top edge of the workspace.
struct ArmPose {
  Vec2 base;
  Vec2 elbow;
  Vec2 effector;
};

// Grid BFS distance; std::nullopt means the cells are disconnected.
using GridDistance = std::optional<int>;

// Planar quasi-static pusher. Instances hold configuration only; every
// operation is a pure function of its arguments apart from the warning
// counter, so one instance per caller is the intended use.
class PusherEnv {
 public:
  explicit PusherEnv(EnvConfig config = {},
                     const LayoutRegistry& layouts = LayoutRegistry::builtin());

  std::pair<EnvState, Observation> reset(const std::string& layout_id, std::uint64_t seed) const;
  StepResult step(const EnvState& state, Vec2 action) const;
  // Dynamics without rendering.
  EnvState advance(const EnvState& state, Vec2 action) const;
  Image render(const EnvState& state, int resolution) const;
  Observation observe(const EnvState& state) const;
  GroundTruth ground_truth(const EnvState& state, int resolution) const;
  std::pair<EnvState, Observation> sample_goal(const std::string& layout_id,
                                               std::uint64_t seed) const;
  GridDistance oracle_distance(const EnvState& a, const EnvState& b, double grid_step) const;
  std::vector<Trajectory> scripted_explore(const std::string& layout_id, int episodes,
                                           std::uint64_t seed, bool with_images = true) const;

  // Canonical robot placement next to a puck, used for goal images and probes.
  Vec2 canonical_robot(const Layout& layout, Vec2 puck) const;
  bool robot_free(const Layout& layout, Vec2 p) const;
  bool puck_free(const Layout& layout, Vec2 p) const;
  ArmPose arm_pose(Vec2 effector) const;

  const EnvConfig& config() const { return config_; }
  const LayoutRegistry& layouts() const { return *layouts_; }
  const Layout& layout(const std::string& id) const { return layouts_->get(id); }
  std::int64_t clipped_action_count() const { return clipped_actions_.load(); }

 private:
  Vec2 move_disc(const Layout& layout, Vec2 from, Vec2 to, double radius) const;
  bool disc_free(const Layout& layout, Vec2 p, double radius) const;

  EnvConfig config_;
  const LayoutRegistry* layouts_;
  mutable std::atomic<std::int64_t> clipped_actions_{0};
};

// Dataset export: one sub-directory per trajectory with PNG frames and a
// `meta.jsonl` (frame, robot_xy, puck_xy, layout_id, seed per line).
void export_dataset(const std::vector<Trajectory>& trajectories, const std::filesystem::path& dir);
std::vector<Trajectory> load_dataset(const std::filesystem::path& dir);

}  // namespace replan::env
