#include "replan/env.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "replan/errors.hpp"
#include "replan/jsonl.hpp"
#include "replan/rng.hpp"

namespace replan::env {
namespace {

using nlohmann::json;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// The arm hangs from a base above the top edge of the workspace.
constexpr Vec2 kArmBase{0.5, -0.15};
constexpr double kLinkLength = 0.65;

Rect rect_from_json(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()};
}

double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = ab.x * ab.x + ab.y * ab.y;
  double t = len2 > 0 ? ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + ab * t)).norm();
}

struct Rgb {
  double r, g, b;
};

constexpr Rgb kWallColor{0.32, 0.32, 0.36};
constexpr Rgb kPuckColor{0.88, 0.16, 0.12};
constexpr Rgb kLinkColor{0.25, 0.40, 0.85};

Rgb background_color(double x, double y) {
  // Hue cycles along diagonal bands; no single colour matches much of it.
  const double phi = kTwoPi * (3.0 * x + 2.0 * y);
  const double a = 0.2 * std::cos(phi) / std::sqrt(2.0);
  const double b = 0.2 * std::sin(phi) / std::sqrt(6.0);
  return {0.72 + a + b, 0.68 - a + b, 0.56 - 2.0 * b};
}

const char* const kBuiltinLayouts = R"({
  "version": 1,
  "layouts": [
    {
      "id": "open",
      "walls": [],
      "puck_start": [0.15, 0.15, 0.85, 0.85],
      "robot_start": [0.1, 0.1, 0.9, 0.9],
      "goal_region": [0.15, 0.15, 0.85, 0.85],
      "default_subgoals": 1
    },
    {
      "id": "pusher1",
      "walls": [[0.30, 0.45, 0.35, 0.70], [0.65, 0.45, 0.70, 0.70], [0.30, 0.65, 0.70, 0.70]],
      "puck_start": [0.35, 0.20, 0.65, 0.32],
      "robot_start": [0.15, 0.06, 0.85, 0.20],
      "goal_region": [0.35, 0.80, 0.65, 0.90],
      "default_subgoals": 3
    },
    {
      "id": "pusher2",
      "walls": [[0.00, 0.33, 0.55, 0.38], [0.45, 0.62, 1.00, 0.67]],
      "puck_start": [0.15, 0.15, 0.45, 0.25],
      "robot_start": [0.10, 0.06, 0.60, 0.15],
      "goal_region": [0.55, 0.80, 0.85, 0.90],
      "default_subgoals": 4
    }
  ]
})";

}  // namespace

// ---------------------------------------------------------------- layouts

const std::string& LayoutRegistry::builtin_json() {
  static const std::string text = kBuiltinLayouts;
  return text;
}

const LayoutRegistry& LayoutRegistry::builtin() {
  static const LayoutRegistry registry = from_json(builtin_json());
  return registry;
}

LayoutRegistry LayoutRegistry::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("layouts: invalid JSON: ") + e.what());
  }
  const int version = doc.value("version", 0);
  if (version != kFormatVersion)
    throw ConfigError("layouts: format version " + std::to_string(version) + ", expected " +
                      std::to_string(kFormatVersion));
  LayoutRegistry registry;
  try {
    for (const auto& item : doc.at("layouts")) {
      Layout layout;
      layout.id = item.at("id").get<std::string>();
      for (const auto& w : item.at("walls")) layout.walls.push_back(rect_from_json(w));
      layout.puck_start = rect_from_json(item.at("puck_start"));
      layout.robot_start = rect_from_json(item.value("robot_start", item.at("puck_start")));
      layout.goal_region = rect_from_json(item.at("goal_region"));
      layout.default_subgoals = item.value("default_subgoals", 3);
      registry.add(std::move(layout));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("layouts: malformed entry: ") + e.what());
  }
  return registry;
}

LayoutRegistry LayoutRegistry::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open layouts file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

const Layout& LayoutRegistry::get(const std::string& id) const {
  for (const auto& l : layouts_)
    if (l.id == id) return l;
  throw ConfigError("unknown layout id '" + id + "'");
}

bool LayoutRegistry::contains(const std::string& id) const {
  return std::any_of(layouts_.begin(), layouts_.end(), [&](const Layout& l) { return l.id == id; });
}

std::vector<std::string> LayoutRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& l : layouts_) out.push_back(l.id);
  return out;
}

void LayoutRegistry::add(Layout layout) {
  for (auto& l : layouts_)
    if (l.id == layout.id) {
      l = std::move(layout);
      return;
    }
  layouts_.push_back(std::move(layout));
}

EnvConfig EnvConfig::from_config(const Config& config) {
  EnvConfig c;
  c.t_max = int(config.get_int("env.t_max"));
  c.resolution = int(config.get_int("env.resolution"));
  c.max_step = config.get_double("env.max_step");
  c.robot_radius = config.get_double("env.robot_radius");
  c.puck_radius = config.get_double("env.puck_radius");
  if (c.t_max < 1) throw ConfigError("env.t_max must be >= 1");
  if (c.resolution != 32 && c.resolution != 64 && c.resolution != 128)
    throw ConfigError("env.resolution must be 32, 64 or 128");
  return c;
}

// ---------------------------------------------------------------- dynamics

PusherEnv::PusherEnv(EnvConfig config, const LayoutRegistry& layouts)
    : config_(config), layouts_(&layouts) {}

bool PusherEnv::disc_free(const Layout& layout, Vec2 p, double radius) const {
  if (p.x < radius || p.x > 1.0 - radius || p.y < radius || p.y > 1.0 - radius) return false;
  for (const auto& w : layout.walls)
    if (w.blocks(p, radius)) return false;
  return true;
}

bool PusherEnv::robot_free(const Layout& layout, Vec2 p) const {
  return disc_free(layout, p, config_.robot_radius);
}

bool PusherEnv::puck_free(const Layout& layout, Vec2 p) const {
  return disc_free(layout, p, config_.puck_radius);
}

// Moves along x then y; each axis move is clipped at the contact boundary by
// bisection so discs slide along walls instead of sticking to them.
Vec2 PusherEnv::move_disc(const Layout& layout, Vec2 from, Vec2 to, double radius) const {
  Vec2 p = from;
  for (int axis = 0; axis < 2; ++axis) {
    Vec2 target = p;
    (axis == 0 ? target.x : target.y) = axis == 0 ? to.x : to.y;
    if (disc_free(layout, target, radius)) {
      p = target;
      continue;
    }
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 30; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (disc_free(layout, p + (target - p) * mid, radius))
        lo = mid;
      else
        hi = mid;
    }
    p = p + (target - p) * lo;
  }
  return p;
}

EnvState PusherEnv::advance(const EnvState& state, Vec2 action) const {
  const Layout& layout = layouts_->get(state.layout_id);
  Vec2 a{std::clamp(action.x, -1.0, 1.0), std::clamp(action.y, -1.0, 1.0)};
  if (!(a == action)) clipped_actions_.fetch_add(1);

  const double contact = config_.robot_radius + config_.puck_radius;
  const Vec2 delta = a * config_.max_step;
  const double substep = 0.25 * std::min(config_.robot_radius, config_.puck_radius);
  const int n_sub = std::max(1, int(std::ceil(delta.norm() / substep)));

  EnvState next = state;
  for (int s = 0; s < n_sub; ++s) {
    const Vec2 previous = next.robot;
    Vec2 robot = move_disc(layout, next.robot, next.robot + delta * (1.0 / n_sub),
                           config_.robot_radius);
    Vec2 offset = next.puck - robot;
    double dist = offset.norm();
    if (dist < contact) {
      Vec2 normal = dist > 1e-12 ? offset * (1.0 / dist) : delta * (1.0 / delta.norm());
      const Vec2 puck = move_disc(layout, next.puck, robot + normal * contact, config_.puck_radius);
      next.puck = puck;
      offset = puck - robot;
      dist = offset.norm();
      if (dist < contact) {
        // Puck is blocked; the effector stops at the contact boundary.
        normal = dist > 1e-12 ? offset * (1.0 / dist) : normal;
        const Vec2 backed = puck - normal * contact;
        robot = robot_free(layout, backed) ? backed : previous;
      }
    }
    next.robot = robot;
  }
  next.step_count = state.step_count + 1;
  return next;
}

StepResult PusherEnv::step(const EnvState& state, Vec2 action) const {
  StepResult r;
  r.state = advance(state, action);
  r.observation = observe(r.state);
  r.done = r.state.step_count >= config_.t_max;
  return r;
}

std::pair<EnvState, Observation> PusherEnv::reset(const std::string& layout_id,
                                                  std::uint64_t seed) const {
  const Layout& layout = layouts_->get(layout_id);
  auto rng = make_rng(seed, 0x7265736574ULL);
  EnvState s;
  s.layout_id = layout_id;
  const auto& pr = layout.puck_start;
  do {
    s.puck = {uniform(rng, pr.x0, pr.x1), uniform(rng, pr.y0, pr.y1)};
  } while (!puck_free(layout, s.puck));
  const auto& rr = layout.robot_start;
  const double clearance = config_.robot_radius + config_.puck_radius + 0.01;
  do {
    s.robot = {uniform(rng, rr.x0, rr.x1), uniform(rng, rr.y0, rr.y1)};
  } while (!robot_free(layout, s.robot) || (s.robot - s.puck).norm() < clearance);
  return {s, observe(s)};
}

Vec2 PusherEnv::canonical_robot(const Layout& layout, Vec2 puck) const {
  const double d = config_.robot_radius + config_.puck_radius + 0.005;
  const Vec2 offsets[] = {{0, -d}, {-d, 0}, {d, 0}, {0, d}, {-d, -d}, {d, -d}, {-d, d}, {d, d}};
  for (Vec2 o : offsets) {
    const Vec2 p = puck + o * (1.0 / std::max(1.0, o.norm() / d));
    if (robot_free(layout, p)) return p;
  }
  return {0.1, 0.1};
}

std::pair<EnvState, Observation> PusherEnv::sample_goal(const std::string& layout_id,
                                                        std::uint64_t seed) const {
  const Layout& layout = layouts_->get(layout_id);
  auto rng = make_rng(seed, 0x676f616cULL);
  EnvState g;
  g.layout_id = layout_id;
  const auto& gr = layout.goal_region;
  do {
    g.puck = {uniform(rng, gr.x0, gr.x1), uniform(rng, gr.y0, gr.y1)};
  } while (!puck_free(layout, g.puck));
  g.robot = canonical_robot(layout, g.puck);
  return {g, observe(g)};
}

// ---------------------------------------------------------------- rendering

ArmPose PusherEnv::arm_pose(Vec2 effector) const {
  const Vec2 d = effector - kArmBase;
  const double dist = std::clamp(d.norm(), 1e-9, 2.0 * kLinkLength);
  const double phi = std::atan2(d.y, d.x);
  const double beta = std::acos(std::clamp(dist / (2.0 * kLinkLength), -1.0, 1.0));
  const Vec2 elbow = kArmBase + Vec2{std::cos(phi + beta), std::sin(phi + beta)} * kLinkLength;
  return {kArmBase, elbow, effector};
}

Image PusherEnv::render(const EnvState& state, int resolution) const {
  if (resolution != 32 && resolution != 64 && resolution != 128)
    throw ConfigError("render resolution must be 32, 64 or 128");
  const Layout& layout = layouts_->get(state.layout_id);
  const ArmPose arm = arm_pose(state.robot);
  const double half_link = 0.5 * config_.link_width;
  Image img(3, resolution, resolution);
  const double inv = 1.0 / resolution;
  for (int py = 0; py < resolution; ++py) {
    for (int px = 0; px < resolution; ++px) {
      Rgb acc{0, 0, 0};
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const Vec2 p{(px + 0.25 + 0.5 * sx) * inv, (py + 0.25 + 0.5 * sy) * inv};
          Rgb c = background_color(p.x, p.y);
          for (const auto& w : layout.walls)
            if (w.contains(p)) c = kWallColor;
          if ((p - state.puck).norm() <= config_.puck_radius) c = kPuckColor;
          if (segment_distance(p, arm.base, arm.elbow) <= half_link ||
              segment_distance(p, arm.elbow, arm.effector) <= half_link)
            c = kLinkColor;
          if ((p - arm.effector).norm() <= config_.robot_radius) c = kLinkColor;
          acc = {acc.r + c.r, acc.g + c.g, acc.b + c.b};
        }
      }
      img.at(0, py, px) = quantize_unit(acc.r * 0.25);
      img.at(1, py, px) = quantize_unit(acc.g * 0.25);
      img.at(2, py, px) = quantize_unit(acc.b * 0.25);
    }
  }
  return img;
}

GroundTruth PusherEnv::ground_truth(const EnvState& state, int resolution) const {
  const ArmPose arm = arm_pose(state.robot);
  const double half_link = 0.5 * config_.link_width;
  GroundTruth truth{state, Mask(resolution, resolution), Mask(resolution, resolution)};
  const double inv = 1.0 / resolution;
  for (int py = 0; py < resolution; ++py) {
    for (int px = 0; px < resolution; ++px) {
      int robot = 0, puck = 0;
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const Vec2 p{(px + 0.25 + 0.5 * sx) * inv, (py + 0.25 + 0.5 * sy) * inv};
          const bool on_robot = segment_distance(p, arm.base, arm.elbow) <= half_link ||
                                segment_distance(p, arm.elbow, arm.effector) <= half_link ||
                                (p - arm.effector).norm() <= config_.robot_radius;
          robot += on_robot;
          puck += !on_robot && (p - state.puck).norm() <= config_.puck_radius;
        }
      }
      truth.robot_mask.at(py, px) = robot >= 2;
      truth.puck_mask.at(py, px) = puck >= 2;
    }
  }
  return truth;
}

Observation PusherEnv::observe(const EnvState& state) const {
  Observation o;
  o.image = render(state, config_.resolution);
  if (config_.eval_truth) o.truth = ground_truth(state, config_.resolution);
  return o;
}

// ---------------------------------------------------------------- oracle

GridDistance PusherEnv::oracle_distance(const EnvState& a, const EnvState& b,
                                        double grid_step) const {
  const double cells_f = 1.0 / grid_step;
  const int n = int(std::lround(cells_f));
  if (grid_step <= 0 || n < 1 || std::abs(cells_f - n) > 1e-6)
    throw ConfigError("oracle grid_step must divide the workspace evenly");
  const Layout& layout = layouts_->get(a.layout_id);
  auto cell_of = [&](Vec2 p) {
    const int i = std::clamp(int(p.x / grid_step), 0, n - 1);
    const int j = std::clamp(int(p.y / grid_step), 0, n - 1);
    return j * n + i;
  };
  const int start = cell_of(a.puck);
  const int goal = cell_of(b.puck);
  if (start == goal) return 0;
  std::vector<char> free(std::size_t(n) * n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const Vec2 c{(i + 0.5) * grid_step, (j + 0.5) * grid_step};
      bool ok = true;
      for (const auto& w : layout.walls)
        if (w.blocks(c, config_.puck_radius)) ok = false;
      free[std::size_t(j) * n + i] = ok;
    }
  free[start] = free[goal] = 1;
  std::vector<int> dist(std::size_t(n) * n, -1);
  std::deque<int> queue{start};
  dist[start] = 0;
  while (!queue.empty()) {
    const int c = queue.front();
    queue.pop_front();
    const int ci = c % n, cj = c / n;
    const int nbr[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    for (const auto& d : nbr) {
      const int ni = ci + d[0], nj = cj + d[1];
      if (ni < 0 || nj < 0 || ni >= n || nj >= n) continue;
      const int nc = nj * n + ni;
      if (!free[nc] || dist[nc] >= 0) continue;
      dist[nc] = dist[c] + 1;
      if (nc == goal) return dist[nc];
      queue.push_back(nc);
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- exploration

std::vector<Trajectory> PusherEnv::scripted_explore(const std::string& layout_id, int episodes,
                                                    std::uint64_t seed, bool with_images) const {
  layouts_->get(layout_id);
  std::vector<Trajectory> out;
  out.reserve(std::size_t(std::max(0, episodes)));
  const double contact = config_.robot_radius + config_.puck_radius;
  for (int e = 0; e < episodes; ++e) {
    const std::uint64_t episode_seed = derive_seed(seed, std::uint64_t(e));
    auto rng = make_rng(episode_seed, 0x6578706cULL);
    Trajectory traj;
    traj.layout_id = layout_id;
    traj.seed = episode_seed;
    EnvState s = reset(layout_id, episode_seed).first;

    // Alternates wandering (heading random walk) with push attempts
    // (approach behind the puck, then push along a random direction).
    enum class Mode { kWander, kApproach, kPush } mode = Mode::kWander;
    int remaining = 0;
    double heading = uniform(rng, 0.0, kTwoPi);
    Vec2 push_dir{1, 0};
    for (int t = 0; t < config_.t_max; ++t) {
      if (remaining <= 0) {
        if (mode == Mode::kApproach) {
          mode = Mode::kPush;
          remaining = int(uniform_int(rng, 8, 30));
        } else if (uniform(rng) < 0.6) {
          mode = Mode::kApproach;
          const double ang = uniform(rng, 0.0, kTwoPi);
          push_dir = {std::cos(ang), std::sin(ang)};
          remaining = 40;
        } else {
          mode = Mode::kWander;
          heading = uniform(rng, 0.0, kTwoPi);
          remaining = int(uniform_int(rng, 10, 30));
        }
      }
      Vec2 action;
      switch (mode) {
        case Mode::kWander: {
          heading += 0.3 * normal(rng);
          const double speed = uniform(rng, 0.5, 1.0);
          action = Vec2{std::cos(heading), std::sin(heading)} * speed;
          break;
        }
        case Mode::kApproach: {
          const Vec2 target = s.puck - push_dir * (contact + 0.02);
          const Vec2 d = (target - s.robot) * (1.0 / config_.max_step);
          action = {std::clamp(d.x, -1.0, 1.0), std::clamp(d.y, -1.0, 1.0)};
          if ((target - s.robot).norm() < 0.02) remaining = 0;
          break;
        }
        case Mode::kPush:
          action = push_dir + Vec2{0.2 * normal(rng), 0.2 * normal(rng)};
          action = {std::clamp(action.x, -1.0, 1.0), std::clamp(action.y, -1.0, 1.0)};
          break;
      }
      --remaining;
      Frame f;
      f.step = t;
      f.state = s;
      f.action = action;
      if (with_images) f.image = render(s, config_.resolution);
      traj.frames.push_back(std::move(f));
      const EnvState next = advance(s, action);
      if (mode == Mode::kWander && (next.robot - s.robot).norm() < 1e-6)
        heading = uniform(rng, 0.0, kTwoPi);
      s = next;
    }
    out.push_back(std::move(traj));
  }
  return out;
}

// ---------------------------------------------------------------- dataset io

void export_dataset(const std::vector<Trajectory>& trajectories, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& traj = trajectories[i];
    char name[32];
    std::snprintf(name, sizeof(name), "traj_%05zu", i);
    const auto tdir = dir / name;
    std::filesystem::create_directories(tdir);
    JsonlWriter meta(tdir / "meta.jsonl", false);
    for (const auto& f : traj.frames) {
      char frame[32];
      std::snprintf(frame, sizeof(frame), "%06d.png", f.step);
      if (!f.image.data.empty()) write_png(tdir / frame, f.image);
      meta.write({{"frame", f.step},
                  {"robot_xy", {f.state.robot.x, f.state.robot.y}},
                  {"puck_xy", {f.state.puck.x, f.state.puck.y}},
                  {"action", {f.action.x, f.action.y}},
                  {"layout_id", traj.layout_id},
                  {"seed", traj.seed}});
    }
  }
}

std::vector<Trajectory> load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset '" + dir.string() + "' not found");
  std::vector<std::filesystem::path> subdirs;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "meta.jsonl"))
      subdirs.push_back(entry.path());
  std::sort(subdirs.begin(), subdirs.end());
  std::vector<Trajectory> out;
  for (const auto& tdir : subdirs) {
    Trajectory traj;
    for (const auto& rec : read_jsonl(tdir / "meta.jsonl")) {
      Frame f;
      f.step = rec.at("frame").get<int>();
      f.state.robot = {rec.at("robot_xy").at(0).get<double>(), rec.at("robot_xy").at(1).get<double>()};
      f.state.puck = {rec.at("puck_xy").at(0).get<double>(), rec.at("puck_xy").at(1).get<double>()};
      f.state.layout_id = rec.at("layout_id").get<std::string>();
      f.state.step_count = f.step;
      if (rec.contains("action"))
        f.action = {rec.at("action").at(0).get<double>(), rec.at("action").at(1).get<double>()};
      traj.layout_id = f.state.layout_id;
      traj.seed = rec.at("seed").get<std::uint64_t>();
      char frame[32];
      std::snprintf(frame, sizeof(frame), "%06d.png", f.step);
      if (std::filesystem::exists(tdir / frame)) f.image = read_png(tdir / frame);
      traj.frames.push_back(std::move(f));
    }
    out.push_back(std::move(traj));
  }
  return out;
}

}  // namespace replan::env
