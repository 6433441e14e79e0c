#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "replan/config.hpp"
#include "replan/curiosity.hpp"
#include "replan/env.hpp"
#include "replan/gc_policy.hpp"
#include "replan/jsonl.hpp"
#include "replan/observer.hpp"
#include "replan/planner.hpp"
#include "replan/rem.hpp"

namespace replan::trainer {

enum class Task { kPush, kReach };
Task parse_task(const std::string& name);

// Start and goal of one episode.
struct EpisodeSpec {
  env::EnvState start;
  env::EnvState goal;
  Image start_image;  // empty unless requested
  Image goal_image;
};

// Environment from the env.* keys; env.layouts_file replaces the built-in
// layouts. `t_max` overrides env.t_max when positive.
std::unique_ptr<env::PusherEnv> make_env(const Config& config, int t_max = 0);

// Push: the goal puck comes from the layout's goal region. Reach: the goal is
// a free effector position with the puck left where it starts.
EpisodeSpec make_episode(const env::PusherEnv& env, const std::string& layout, Task task,
                         std::uint64_t seed, bool images);
// Puck distance for push, effector distance for reach.
double task_distance(Task task, const env::EnvState& state, const env::EnvState& goal);

// Anything that can drive the environment for evaluation.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual bool needs_images() const { return false; }
  virtual void begin(const EpisodeSpec& spec, std::uint64_t seed) = 0;
  virtual env::Vec2 act(const env::EnvState& state, const Image& image) = 0;
};

struct Settings {
  std::uint64_t seed = 0;
  std::filesystem::path out;
  std::string layout = "pusher2";
  Task task = Task::kPush;
  std::string observation = "drm";
  int episodes = 300;
  int checkpoint_every = 25;
  bool use_rem = true;
  bool use_cm = true;
  bool use_planner = true;
  int subgoals = 0;  // resolved N
  int t_max = 200;
  int warmup_steps = 1000;
  double random_eps = 0.1;
  double explore_noise = 0.2;
  int updates_per_step = 1;
  double threshold = 0.03;
  std::filesystem::path model_archive;

  static Settings from_config(const Config& config);
};

// Output root: REPLAN_OUT replaces the default root "runs" when run.out was
// not set explicitly.
std::filesystem::path resolve_out(const Config& config);

struct PretrainResult {
  std::filesystem::path model_archive;  // empty for the state observer
  std::filesystem::path sampling_archive;
  planner::SamplingDistribution distribution;
  drm::TrainResult train;
  std::int64_t frames = 0;
};

// Scripted exploration, DRM (or VAE) training and the planner sampling
// distribution. Writes dataset_manifest.jsonl, drm.rpa and sampling.rpa to `out`.
PretrainResult pretrain(const Config& config, const std::filesystem::path& out,
                        const std::function<void(const drm::LossRecord&)>& on_record = {});

// Frames used for representation learning, as chosen by pretrain.
std::vector<env::Frame> exploration_frames(const Config& config, const env::PusherEnv& env);

struct EpisodeResult {
  policy::Episode episode;
  double final_distance = 0.0;
  bool success = false;
  double mean_bonus = 0.0;
  int memory_inserts = 0;
  int steps = 0;
  std::vector<planner::SubgoalPlan> plans;
};

// Policy, reachability model, planner and curiosity around one observer.
class Agent : public Controller {
 public:
  Agent(const Config& config, std::unique_ptr<Observer> observer,
        planner::SamplingDistribution distribution);

  // Collection episode with exploration noise and curiosity bonuses.
  EpisodeResult collect(const env::PusherEnv& env, std::uint64_t episode_seed,
                        std::int64_t total_steps);
  bool needs_images() const override { return observer_->needs_images(); }
  void begin(const EpisodeSpec& spec, std::uint64_t seed) override;
  env::Vec2 act(const env::EnvState& state, const Image& image) override;

  Observer& observer() { return *observer_; }
  policy::Td3& policy() { return td3_; }
  rem::RemTrainer& rem() { return rem_; }
  curiosity::EpisodicMemory& memory() { return memory_; }
  const planner::SamplingDistribution& distribution() const { return distribution_; }
  const Settings& settings() const { return settings_; }
  rem::EdgeScorer edge_scorer();
  planner::PlanRequest plan_request(const rem::EdgeScorer& scorer) const;

 private:
  torch::Tensor encode(const env::EnvState& state, const Image& image);

  Settings settings_;
  std::unique_ptr<Observer> observer_;
  planner::SamplingDistribution distribution_;
  planner::CemConfig cem_;
  curiosity::CuriosityConfig curiosity_;
  policy::Td3 td3_;
  rem::RemTrainer rem_;
  curiosity::EpisodicMemory memory_;
  bool project_ = true;

  // Controller state for step-wise evaluation.
  EpisodeSpec current_;
  torch::Tensor goal_z_;
  planner::SubgoalPlan plan_;
  int step_in_episode_ = 0;
  int segment_ = 0;
  int segment_len_ = 1;
  std::uint64_t eval_seed_ = 0;
  std::mt19937_64 eval_rng_;
};

// Everything that evolves during training.
class Run {
 public:
  Run(const Config& config, std::unique_ptr<Observer> observer,
      planner::SamplingDistribution distribution);

  // One collection episode, REM training and policy updates. Returns the
  // metrics record appended to metrics.jsonl.
  nlohmann::json train_episode(const env::PusherEnv& env);

  int episode() const { return episode_; }
  std::int64_t total_steps() const { return total_steps_; }
  Agent& agent() { return agent_; }
  policy::ReplayBuffer& buffer() { return buffer_; }

  void save(Archive& archive) const;
  void load(const Archive& archive);

 private:
  Config config_;
  Agent agent_;
  policy::ReplayBuffer buffer_;
  policy::HerConfig her_;
  int episode_ = 0;
  std::int64_t total_steps_ = 0;
};

inline constexpr std::int64_t kRunStateVersion = 1;

void save_checkpoint(const Run& run, const std::filesystem::path& path);
// Throws VersionError naming both versions on mismatch.
void load_checkpoint(Run& run, const std::filesystem::path& path);

struct RunResult {
  int episodes = 0;
  std::filesystem::path out;
  std::filesystem::path checkpoint;
};

// Algorithm loop. Needs pretrain artifacts unless the observation is "state"
// (then the sampling distribution is fitted on the fly). Resumes from
// <out>/checkpoints/state.rpa when present and `resume` is set.
RunResult run(const Config& config, bool resume = true,
              const std::function<void(const nlohmann::json&)>& on_episode = {});

// Loads a trained agent from a run directory.
std::unique_ptr<Run> load_run(const Config& config, const std::filesystem::path& checkpoint);

}  // namespace replan::trainer
