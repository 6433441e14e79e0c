#include "replan/curiosity.hpp"

#include <cmath>

#include "replan/errors.hpp"
#include "replan/rng.hpp"

namespace replan::curiosity {

CuriosityConfig CuriosityConfig::from_config(const Config& config) {
  CuriosityConfig c;
  c.beta = config.get_double("curiosity.beta");
  c.alpha = config.get_double("curiosity.alpha");
  c.capacity = int(config.get_int("curiosity.capacity"));
  c.replace_prob = config.get_double("curiosity.replace_prob");
  c.persistent = config.get_bool("curiosity.persistent");
  if (c.capacity < 1) throw ConfigError("curiosity.capacity must be >= 1");
  if (c.replace_prob < 0 || c.replace_prob > 1)
    throw ConfigError("curiosity.replace_prob must lie in [0, 1]");
  if (!config.get_bool("run.use_cm")) c.alpha = c.beta = 0.0;
  return c;
}

EpisodicMemory::EpisodicMemory(int capacity, std::uint64_t seed)
    : capacity_(capacity), rng_(make_rng(seed, 0x6d656d6fULL)) {
  if (capacity < 1) throw ParameterError("memory capacity must be >= 1");
}

torch::Tensor EpisodicMemory::stacked() const {
  if (entries_.empty()) return {};
  return torch::stack(entries_);
}

bool EpisodicMemory::update(const torch::Tensor& z, double b, double replace_prob) {
  if (!(b > 0.0)) return false;
  const auto entry = z.detach().reshape({-1}).to(torch::kFloat32).clone();
  if (!full()) {
    entries_.push_back(entry);
    return true;
  }
  if (uniform(rng_) >= replace_prob) return false;
  entries_[std::size_t(uniform_int(rng_, 0, std::int64_t(entries_.size()) - 1))] = entry;
  return true;
}

void EpisodicMemory::save(Archive& archive, const std::string& prefix) const {
  archive.put_int(prefix + "size", std::int64_t(entries_.size()));
  if (!entries_.empty()) archive.put_tensor(prefix + "entries", stacked());
  archive.put_rng(prefix + "rng", rng_);
}

void EpisodicMemory::load(const Archive& archive, const std::string& prefix) {
  entries_.clear();
  const auto n = archive.get_int(prefix + "size");
  if (n > capacity_) throw ArchiveError("stored memory exceeds capacity");
  if (n > 0) {
    const auto all = archive.get_tensor(prefix + "entries");
    for (std::int64_t i = 0; i < n; ++i) entries_.push_back(all[i].clone());
  }
  archive.get_rng(prefix + "rng", rng_);
}

double compute_bonus(const rem::EdgeScorer& reach, const torch::Tensor& z,
                     const EpisodicMemory& memory, double beta, double alpha) {
  if (memory.size() == 0) return beta;
  const auto m = memory.stacked();
  const auto query = z.detach().reshape({1, -1}).to(m.dtype()).expand({m.size(0), m.size(1)});
  const double best = reach(query, m).max().item<double>();
  return beta - alpha * best;
}

double l1_reward(const double* a, const double* b, std::int64_t n) {
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) sum += std::abs(a[i] - b[i]);
  return -sum;
}

double extrinsic_reward(const torch::Tensor& z_t, const torch::Tensor& z_g) {
  if (z_t.numel() != z_g.numel()) throw ShapeError("reward latents differ in size");
  const auto a = z_t.to(torch::kFloat64).contiguous();
  const auto b = z_g.to(torch::kFloat64).contiguous();
  return l1_reward(a.data_ptr<double>(), b.data_ptr<double>(), a.numel());
}

torch::Tensor extrinsic_reward_batch(const torch::Tensor& z_t, const torch::Tensor& z_g) {
  if (z_t.dim() != 2 || z_t.sizes() != z_g.sizes()) throw ShapeError("reward latents must both be [B, D]");
  const auto a = z_t.to(torch::kFloat64).contiguous();
  const auto b = z_g.to(torch::kFloat64).contiguous();
  const auto B = a.size(0), D = a.size(1);
  auto out = torch::empty({B}, torch::kFloat64);
  for (std::int64_t i = 0; i < B; ++i)
    out.data_ptr<double>()[i] = l1_reward(a.data_ptr<double>() + i * D, b.data_ptr<double>() + i * D, D);
  return out;
}

void reset_memory(EpisodicMemory& memory, bool persistent) {
  if (!persistent) memory.reset();
}

}  // namespace replan::curiosity
