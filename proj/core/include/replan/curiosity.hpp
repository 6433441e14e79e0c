#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "replan/archive.hpp"
#include "replan/config.hpp"
#include "replan/rem.hpp"

namespace replan::curiosity {

struct CuriosityConfig {
  double beta = 0.2;
  double alpha = 0.8;
  int capacity = 64;
  double replace_prob = 0.5;
  bool persistent = false;

  static CuriosityConfig from_config(const Config& config);
};

// Bounded store of novel planner latents.
class EpisodicMemory {
 public:
  EpisodicMemory(int capacity, std::uint64_t seed);

  const std::vector<torch::Tensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  int capacity() const { return capacity_; }
  bool full() const { return int(entries_.size()) >= capacity_; }
  // [n, D]; undefined when empty.
  torch::Tensor stacked() const;

  // Inserts z when b > 0. When full, z replaces a uniformly random slot with
  // probability `replace_prob` and is dropped otherwise. Returns whether the
  // memory changed.
  bool update(const torch::Tensor& z, double b, double replace_prob = 0.5);
  void reset() { entries_.clear(); }

  void save(Archive& archive, const std::string& prefix) const;
  void load(const Archive& archive, const std::string& prefix);

 private:
  int capacity_;
  std::mt19937_64 rng_;
  std::vector<torch::Tensor> entries_;
};

// b = beta - alpha * max_m R(z, m); an empty memory gives beta.
double compute_bonus(const rem::EdgeScorer& reach, const torch::Tensor& z,
                     const EpisodicMemory& memory, double beta = 0.2, double alpha = 0.8);

// -||z_t - z_g||_1, accumulated in double in dimension order.
double l1_reward(const double* a, const double* b, std::int64_t n);
double extrinsic_reward(const torch::Tensor& z_t, const torch::Tensor& z_g);
// Batched: [B, D] x [B, D] -> [B] float64, bitwise equal to the scalar form.
torch::Tensor extrinsic_reward_batch(const torch::Tensor& z_t, const torch::Tensor& z_g);

inline double augment_reward(double r_e, double b) { return r_e + b; }

// Episode-boundary hook: clears the memory unless it is persistent.
void reset_memory(EpisodicMemory& memory, bool persistent = false);

}  // namespace replan::curiosity
