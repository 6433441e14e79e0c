#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "replan/archive.hpp"
#include "replan/config.hpp"

namespace replan::rem {

// Planner latents of one episode. `steps[t]` is the environment step of row t.
struct LatentTrajectory {
  torch::Tensor latents;  // [T, D]
  std::vector<int> steps;
};

// label = 1 iff delta < k.
inline int pair_label(int delta, int k) { return delta < k ? 1 : 0; }

// k = round(ratio * t_max), at least 1.
int k_threshold(int t_max, double ratio = 0.16);

struct PairSet {
  torch::Tensor z_i;     // [P, D]
  torch::Tensor z_j;     // [P, D]
  torch::Tensor labels;  // [P] float 0/1
  std::vector<int> deltas;
  int short_trajectories = 0;  // contributed positives only

  std::int64_t size() const { return labels.defined() ? labels.size(0) : 0; }
};

// Balanced ordered pairs: half with delta < k, half with delta >= k, each
// drawn uniformly over the admissible (i < j) pairs of a trajectory.
PairSet make_pairs(const std::vector<LatentTrajectory>& trajectories, int k, int pairs_per_traj,
                   std::uint64_t seed);

// Three fully connected layers on concat(z_i, z_j) with a sigmoid output.
class ReachModelImpl : public torch::nn::Module {
 public:
  ReachModelImpl(int dim, int hidden = 128);

  torch::Tensor logits(const torch::Tensor& z_i, const torch::Tensor& z_j);
  // Broadcasts a single latent against a batch; returns [B] (or a scalar for
  // two 1-D inputs).
  torch::Tensor forward(const torch::Tensor& z_i, const torch::Tensor& z_j);

  int dim() const { return dim_; }
  int hidden() const { return hidden_; }

 private:
  int dim_;
  int hidden_;
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(ReachModel);

// Gradient-free probability; deterministic.
torch::Tensor predict(ReachModel& model, const torch::Tensor& z_i, const torch::Tensor& z_j);

inline constexpr double kBceEps = 1e-7;
// Element-wise binary cross entropy on predictions clamped to [eps, 1-eps].
torch::Tensor bce_loss(const torch::Tensor& prediction, const torch::Tensor& label);

// Batched edge scores: a [B, D] x b [B, D] -> [B].
using EdgeScorer = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>;
EdgeScorer rem_scorer(ReachModel model);
// -||a - b||_2, the w/o REM ablation.
EdgeScorer negative_l2_scorer();
EdgeScorer constant_scorer(double value);

struct EpisodicReachability {
  torch::Tensor edges;  // [N+1]
  double total = 0.0;
};

// Edges z_s0 -> sg_1 -> ... -> sg_N -> z_g; `subgoals` is [N, D] (N may be 0).
EpisodicReachability episodic_reachability(const EdgeScorer& scorer, const torch::Tensor& z_s0,
                                           const torch::Tensor& subgoals, const torch::Tensor& z_g);
// Same for a population: subgoals [P, N, D] -> edges [P, N+1].
torch::Tensor plan_edges(const EdgeScorer& scorer, const torch::Tensor& z_s0,
                         const torch::Tensor& subgoals, const torch::Tensor& z_g);

enum class Aggregator { kSum, kL2, kMin };
Aggregator parse_aggregator(const std::string& name);
std::string aggregator_name(Aggregator aggregator);

// Loss (lower is better) from edges [..., N+1] -> [...].
torch::Tensor plan_objective(const torch::Tensor& edges, Aggregator aggregator = Aggregator::kSum);
double plan_objective(const EdgeScorer& scorer, const torch::Tensor& z_s0,
                      const torch::Tensor& subgoals, const torch::Tensor& z_g,
                      Aggregator aggregator = Aggregator::kSum);

struct RemConfig {
  int hidden = 128;
  double lr = 1e-3;
  int batch_size = 256;
  int steps = 100;
  int pairs_per_traj = 64;
  int trajectories = 32;
  int min_trajectories = 4;
  int k = 32;
  Aggregator aggregator = Aggregator::kSum;

  static RemConfig from_config(const Config& config, int t_max);
};

struct RemMetrics {
  bool skipped = false;
  int steps = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  double accuracy = 0.0;  // on the pairs drawn for this call
  int short_trajectories = 0;
};

// Model plus optimizer state; training draws fresh pairs on every call.
class RemTrainer {
 public:
  RemTrainer(int dim, RemConfig config, std::uint64_t seed);

  // Samples config.trajectories episodes from `pool` (with replacement),
  // builds balanced pairs and takes config.steps minibatch steps.
  RemMetrics train(const std::vector<LatentTrajectory>& pool, std::uint64_t seed);
  // Full-batch training on a fixed pair set.
  RemMetrics fit(const PairSet& pairs, int steps, std::uint64_t seed);

  ReachModel& model() { return model_; }
  const RemConfig& config() const { return config_; }

  void save(Archive& archive, const std::string& prefix) const;
  void load(const Archive& archive, const std::string& prefix);

 private:
  RemConfig config_;
  ReachModel model_;
  torch::optim::Adam optimizer_;
};

struct Accuracy {
  double accuracy = 0.0;
  // Mean prediction per delta bin [0,k/4), [k/4,k/2), [k/2,k), [k,2k), [2k,inf).
  std::vector<double> bin_means;
  std::vector<std::int64_t> bin_counts;
};
Accuracy evaluate_pairs(ReachModel& model, const PairSet& pairs, int k);

// [G, G] matrix of predict(z_ref, probe); `probes` is [G*G, D] row-major
// over (y, x); rows flagged invalid become NaN.
torch::Tensor heatmap(ReachModel& model, const torch::Tensor& z_ref, const torch::Tensor& probes,
                      const std::vector<bool>& valid);
void export_heatmap(const torch::Tensor& matrix, const std::filesystem::path& png,
                    const std::filesystem::path& csv, int pixels_per_cell = 8);

void save_rem(Archive& archive, const ReachModel& model);
ReachModel load_rem(const Archive& archive);

}  // namespace replan::rem
