#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "replan/archive.hpp"
#include "replan/config.hpp"
#include "replan/planner.hpp"
#include "replan/rem.hpp"

namespace replan::policy {

struct Transition {
  torch::Tensor z_t;     // [D]
  std::array<float, 2> action{0.f, 0.f};
  torch::Tensor z_next;  // [D]
  double reward = 0.0;   // extrinsic + bonus as logged
  double extrinsic = 0.0;
  double bonus = 0.0;
  torch::Tensor goal;    // [D]
  bool done = false;
  int step = 0;
};

// One collected episode in columnar form. Row t of `latents` is z_t, so the
// achieved latent after step t is latents[t + 1].
struct Episode {
  torch::Tensor latents;  // [T+1, D]
  torch::Tensor goals;    // [T, D] goal the policy was conditioned on
  torch::Tensor actions;  // [T, 2]
  std::vector<double> extrinsic;
  std::vector<double> bonus;
  std::vector<double> reward;
  std::vector<std::uint8_t> done;

  int length() const { return int(reward.size()); }
  Transition transition(int t) const;
};

// Builds an Episode; rewards are recomputed from the logged latents.
class EpisodeBuilder {
 public:
  void start(const torch::Tensor& z0);
  // Appends step t: action, the goal conditioned on, the resulting latent and
  // the intrinsic bonus of that latent. Returns the stored reward.
  double add(const std::array<float, 2>& action, const torch::Tensor& goal,
             const torch::Tensor& z_next, double bonus, bool done = false);
  Episode finish();
  int length() const { return int(actions_.size()); }

 private:
  std::vector<torch::Tensor> latents_, goals_;
  std::vector<std::array<float, 2>> actions_;
  Episode episode_;
};

enum class HerStrategy { kNone, kFuture, kGenerated, kMixed };
HerStrategy parse_her_strategy(const std::string& name);

struct HerConfig {
  HerStrategy strategy = HerStrategy::kMixed;
  double ratio = 0.8;
  double future_share = 0.8;
  bool keep_bonus = false;
  const planner::SamplingDistribution* distribution = nullptr;  // for generated goals
};

// Per-transition relabel decision; `goal_index` >= t + 1 for future goals.
struct Relabel {
  bool relabeled = false;
  bool generated = false;
  int goal_index = -1;
};
Relabel draw_relabel(const HerConfig& her, int t, int length, std::mt19937_64& rng);

// Copies of every transition of `episode`, each relabeled with probability
// her.ratio; rewards of relabeled copies are recomputed extrinsic rewards.
std::vector<Transition> her_relabel(const Episode& episode, const HerConfig& her, std::uint64_t seed);

struct Batch {
  torch::Tensor z, action, reward, z_next, goal, done;  // [B,D],[B,2],[B],[B,D],[B,D],[B]
  std::int64_t relabeled = 0;
};

// Episodes stored whole; the oldest episodes are dropped once the number of
// transitions exceeds the capacity.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::int64_t capacity);

  void add(Episode episode);
  std::int64_t transitions() const { return transitions_; }
  std::size_t episodes() const { return episodes_.size(); }
  const Episode& episode(std::size_t i) const { return episodes_[i]; }
  std::int64_t capacity() const { return capacity_; }

  // Uniform over stored transitions, relabeled at sample time.
  Batch sample(int batch_size, const HerConfig& her, std::mt19937_64& rng) const;
  // Achieved latents per episode, most recent last.
  std::vector<rem::LatentTrajectory> trajectories() const;
  // Every stored latent [n, D].
  torch::Tensor all_latents() const;

  void save(Archive& archive, const std::string& prefix) const;
  void load(const Archive& archive, const std::string& prefix);

 private:
  std::int64_t capacity_;
  std::int64_t transitions_ = 0;
  std::deque<Episode> episodes_;
};

struct Td3Config {
  int hidden = 256;
  double gamma = 0.98;
  double tau = 0.005;
  int delay = 2;
  double target_noise = 0.2;
  double noise_clip = 0.5;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  int batch_size = 256;

  static Td3Config from_config(const Config& config);
};

struct Td3Losses {
  double critic = 0.0;
  double actor = 0.0;
  bool actor_updated = false;
  double q_mean = 0.0;
};

class ActorImpl : public torch::nn::Module {
 public:
  ActorImpl(int dim, int hidden);
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& goal);

 private:
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(Actor);

class CriticImpl : public torch::nn::Module {
 public:
  CriticImpl(int dim, int hidden);
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& goal, const torch::Tensor& action);

 private:
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(Critic);

// Goal-conditioned TD3 over planner latents with 2-D actions in [-1,1].
class Td3 {
 public:
  Td3(int dim, Td3Config config, std::uint64_t seed);

  // Deterministic actor output plus Gaussian noise, clipped to [-1,1].
  std::array<float, 2> act(const torch::Tensor& z, const torch::Tensor& goal, double noise_std,
                           std::mt19937_64& rng);
  torch::Tensor act_batch(const torch::Tensor& z, const torch::Tensor& goal);

  // Clipped double-Q target with target-policy smoothing.
  torch::Tensor critic_target(const Batch& batch);
  Td3Losses update(const Batch& batch);

  int dim() const { return dim_; }
  const Td3Config& config() const { return config_; }
  std::int64_t updates() const { return updates_; }
  Actor& actor() { return actor_; }
  Critic& critic1() { return critic1_; }
  Critic& critic2() { return critic2_; }
  Actor& actor_target() { return actor_target_; }
  Critic& critic1_target() { return critic1_target_; }

  void save(Archive& archive, const std::string& prefix) const;
  void load(const Archive& archive, const std::string& prefix);

 private:
  int dim_;
  Td3Config config_;
  Actor actor_{nullptr}, actor_target_{nullptr};
  Critic critic1_{nullptr}, critic2_{nullptr}, critic1_target_{nullptr}, critic2_target_{nullptr};
  std::unique_ptr<torch::optim::Adam> actor_opt_, critic_opt_;
  at::Generator generator_;
  std::int64_t updates_ = 0;
};

// target <- (1 - tau) target + tau source.
void polyak_update(torch::nn::Module& target, const torch::nn::Module& source, double tau);

}  // namespace replan::policy
