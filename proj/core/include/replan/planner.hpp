#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <torch/torch.h>

#include "replan/archive.hpp"
#include "replan/config.hpp"
#include "json.hpp"
#include "replan/rem.hpp"

namespace replan::planner {

// Diagonal Gaussian over planner latents.
struct SamplingDistribution {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  bool fallback = false;  // unit Gaussian because too few latents were seen

  int dim() const { return int(mean.size()); }

  // Per-dimension moments of `latents` [n, D], std floored at `std_floor`.
  static SamplingDistribution fit(const torch::Tensor& latents, double std_floor = 1e-3,
                                  int min_latents = 500);
  static SamplingDistribution unit(int dim);

  // [count, D] float32 samples.
  torch::Tensor sample(int count, std::uint64_t seed) const;

  void save(Archive& archive, const std::string& prefix) const;
  static SamplingDistribution load(const Archive& archive, const std::string& prefix);
};

struct CemConfig {
  int population = 256;
  int elites = 32;
  int iterations = 10;
  bool warm_start = false;
  // Extra std, as a fraction of the initial std, added to each refit and
  // decayed linearly to zero halfway through; stops early collapse.
  double extra_noise = 0.2;

  static CemConfig from_config(const Config& config);
  void validate() const;
};

struct CemHistory {
  std::vector<double> best;        // best-ever value after each iteration
  std::vector<double> elite_mean;  // mean objective of the elites
  std::int64_t discarded = 0;      // non-finite candidates
};

struct CemResult {
  Eigen::VectorXd best;
  double best_value = 0.0;
  CemHistory history;
};

// Candidates are rows; returns one loss per row (lower is better).
using BatchObjective = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;
using Objective = std::function<double(const Eigen::VectorXd&)>;
// Maps raw samples onto admissible points before evaluation (rows in place).
using Projection = std::function<void(Eigen::MatrixXd&)>;

// Elitist CEM: after the first iteration the previous elites are carried into
// each population, so the elite mean never increases on a deterministic
// objective. Elites are refitted after projection.
CemResult cem_optimize(const BatchObjective& objective, const Eigen::VectorXd& init_mean,
                       const Eigen::VectorXd& init_std, const CemConfig& config,
                       std::uint64_t seed, const Projection& project = nullptr);
CemResult cem_optimize(const Objective& objective, int dimension, const CemConfig& config,
                       std::uint64_t seed);

struct SubgoalPlan {
  torch::Tensor subgoals;     // [N, D]
  torch::Tensor edge_scores;  // [N+1]
  double objective = 0.0;
  CemHistory history;

  int count() const { return subgoals.defined() ? int(subgoals.size(0)) : 0; }
};

struct PlanRequest {
  const rem::EdgeScorer* scorer = nullptr;
  rem::Aggregator aggregator = rem::Aggregator::kSum;
  CemConfig cem;
  const SamplingDistribution* distribution = nullptr;
  // Applied to every candidate subgoal row [*, D]; may be empty.
  std::function<torch::Tensor(const torch::Tensor&)> project;
};

// Optimises the N x D decision vector of subgoals between z_s0 and z_g.
SubgoalPlan plan_subgoals(const PlanRequest& request, const torch::Tensor& z_s0,
                          const torch::Tensor& z_g, int N, std::uint64_t seed,
                          const SubgoalPlan* warm = nullptr);

// floor(t_max / (N + 1)); throws ConfigError when that is below 1.
int subgoal_schedule(int t_max, int N);

// Re-optimises the remaining subgoals from the current latent. With
// remaining_N = 0 the plan is empty and its single edge ends at z_g.
SubgoalPlan replan(const PlanRequest& request, const torch::Tensor& current_z,
                   const torch::Tensor& z_g, int remaining_N, std::uint64_t seed,
                   const SubgoalPlan* previous = nullptr);

// Target handed to the policy: the first subgoal, or z_g when none remain.
torch::Tensor policy_target(const SubgoalPlan& plan, const torch::Tensor& z_g);

nlohmann::json plan_to_json(const SubgoalPlan& plan);

}  // namespace replan::planner
