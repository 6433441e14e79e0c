#include "replan/gc_policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <ATen/CPUGeneratorImpl.h>

#include "replan/curiosity.hpp"
#include "replan/errors.hpp"
#include "replan/rng.hpp"

namespace replan::policy {
namespace {

torch::Tensor flat(const torch::Tensor& z) { return z.detach().reshape({-1}).to(torch::kFloat32); }

torch::Tensor sample_goal(const planner::SamplingDistribution& dist, std::mt19937_64& rng) {
  auto g = torch::empty({dist.dim()});
  float* p = g.data_ptr<float>();
  for (int k = 0; k < dist.dim(); ++k) p[k] = float(dist.mean(k) + dist.std(k) * normal(rng));
  return g;
}

torch::nn::Sequential mlp(int in, int hidden, int out) {
  return torch::nn::Sequential(torch::nn::Linear(in, hidden), torch::nn::ReLU(),
                               torch::nn::Linear(hidden, hidden), torch::nn::ReLU(),
                               torch::nn::Linear(hidden, out));
}

void hard_copy(torch::nn::Module& target, const torch::nn::Module& source) {
  polyak_update(target, source, 1.0);
}

}  // namespace

Transition Episode::transition(int t) const {
  if (t < 0 || t >= length()) throw ParameterError("transition index out of range");
  Transition tr;
  tr.z_t = latents[t];
  tr.z_next = latents[t + 1];
  tr.goal = goals[t];
  tr.action = {actions[t][0].item<float>(), actions[t][1].item<float>()};
  tr.reward = reward[std::size_t(t)];
  tr.extrinsic = extrinsic[std::size_t(t)];
  tr.bonus = bonus[std::size_t(t)];
  tr.done = done[std::size_t(t)] != 0;
  tr.step = t;
  return tr;
}

void EpisodeBuilder::start(const torch::Tensor& z0) {
  latents_ = {flat(z0).clone()};
  goals_.clear();
  actions_.clear();
  episode_ = Episode{};
}

double EpisodeBuilder::add(const std::array<float, 2>& action, const torch::Tensor& goal,
                           const torch::Tensor& z_next, double bonus, bool done) {
  if (latents_.empty()) throw ParameterError("EpisodeBuilder::start was not called");
  const auto g = flat(goal).clone();
  const auto zn = flat(z_next).clone();
  const double r_e = curiosity::extrinsic_reward(zn, g);
  const double r = curiosity::augment_reward(r_e, bonus);
  latents_.push_back(zn);
  goals_.push_back(g);
  actions_.push_back(action);
  episode_.extrinsic.push_back(r_e);
  episode_.bonus.push_back(bonus);
  episode_.reward.push_back(r);
  episode_.done.push_back(done ? 1 : 0);
  return r;
}

Episode EpisodeBuilder::finish() {
  Episode ep = std::move(episode_);
  ep.latents = torch::stack(latents_);
  const auto D = ep.latents.size(1);
  ep.goals = goals_.empty() ? torch::zeros({0, D}) : torch::stack(goals_);
  ep.actions = torch::empty({std::int64_t(actions_.size()), 2});
  for (std::size_t t = 0; t < actions_.size(); ++t) {
    ep.actions[std::int64_t(t)][0] = actions_[t][0];
    ep.actions[std::int64_t(t)][1] = actions_[t][1];
  }
  latents_.clear();
  goals_.clear();
  actions_.clear();
  episode_ = Episode{};
  return ep;
}

HerStrategy parse_her_strategy(const std::string& name) {
  if (name == "none") return HerStrategy::kNone;
  if (name == "future") return HerStrategy::kFuture;
  if (name == "generated") return HerStrategy::kGenerated;
  if (name == "mixed") return HerStrategy::kMixed;
  throw ConfigError("policy.her_strategy must be none, future, generated or mixed, got '" + name + "'");
}

Relabel draw_relabel(const HerConfig& her, int t, int length, std::mt19937_64& rng) {
  Relabel r;
  if (her.strategy == HerStrategy::kNone) return r;
  if (!(uniform(rng) < her.ratio)) return r;
  r.relabeled = true;
  r.generated = her.strategy == HerStrategy::kGenerated ||
                (her.strategy == HerStrategy::kMixed && !(uniform(rng) < her.future_share));
  if (r.generated) {
    if (her.distribution == nullptr) throw ParameterError("generated HER goals need a sampling distribution");
  } else {
    r.goal_index = int(uniform_int(rng, t + 1, length));
  }
  return r;
}

std::vector<Transition> her_relabel(const Episode& episode, const HerConfig& her, std::uint64_t seed) {
  std::vector<Transition> out;
  auto rng = make_rng(seed, 0x68657200ULL);
  for (int t = 0; t < episode.length(); ++t) {
    Transition tr = episode.transition(t);
    const auto r = draw_relabel(her, t, episode.length(), rng);
    if (r.relabeled) {
      tr.goal = r.generated ? sample_goal(*her.distribution, rng) : episode.latents[r.goal_index];
      tr.extrinsic = curiosity::extrinsic_reward(tr.z_next, tr.goal);
      tr.reward = her.keep_bonus ? curiosity::augment_reward(tr.extrinsic, tr.bonus) : tr.extrinsic;
    }
    out.push_back(std::move(tr));
  }
  return out;
}

ReplayBuffer::ReplayBuffer(std::int64_t capacity) : capacity_(capacity) {
  if (capacity < 1) throw ConfigError("replay capacity must be >= 1");
}

void ReplayBuffer::add(Episode episode) {
  if (episode.length() == 0) return;
  if (!episodes_.empty() && episode.latents.size(1) != episodes_.front().latents.size(1))
    throw ShapeError("episode latent size differs from the buffer's");
  episode.latents = episode.latents.to(torch::kFloat32).contiguous();
  episode.goals = episode.goals.to(torch::kFloat32).contiguous();
  episode.actions = episode.actions.to(torch::kFloat32).contiguous();
  transitions_ += episode.length();
  episodes_.push_back(std::move(episode));
  while (transitions_ > capacity_ && episodes_.size() > 1) {
    transitions_ -= episodes_.front().length();
    episodes_.pop_front();
  }
}

Batch ReplayBuffer::sample(int batch_size, const HerConfig& her, std::mt19937_64& rng) const {
  if (transitions_ == 0) throw ParameterError("cannot sample from an empty replay buffer");
  const auto D = episodes_.front().latents.size(1);
  std::vector<std::int64_t> starts;
  starts.reserve(episodes_.size());
  std::int64_t acc = 0;
  for (const auto& ep : episodes_) {
    starts.push_back(acc);
    acc += ep.length();
  }
  Batch b;
  b.z = torch::empty({batch_size, D});
  b.z_next = torch::empty({batch_size, D});
  b.goal = torch::empty({batch_size, D});
  b.action = torch::empty({batch_size, 2});
  b.reward = torch::empty({batch_size});
  b.done = torch::empty({batch_size});
  float* z = b.z.data_ptr<float>();
  float* zn = b.z_next.data_ptr<float>();
  float* g = b.goal.data_ptr<float>();
  float* a = b.action.data_ptr<float>();
  float* r = b.reward.data_ptr<float>();
  float* d = b.done.data_ptr<float>();
  const auto row_bytes = std::size_t(D) * sizeof(float);
  for (int n = 0; n < batch_size; ++n) {
    const auto global = uniform_int(rng, 0, transitions_ - 1);
    const auto e = std::size_t(std::upper_bound(starts.begin(), starts.end(), global) - starts.begin() - 1);
    const auto& ep = episodes_[e];
    const int t = int(global - starts[e]);
    const float* lat = ep.latents.data_ptr<float>();
    std::memcpy(z + n * D, lat + t * D, row_bytes);
    std::memcpy(zn + n * D, lat + (t + 1) * D, row_bytes);
    std::memcpy(a + n * 2, ep.actions.data_ptr<float>() + t * 2, 2 * sizeof(float));
    d[n] = float(ep.done[std::size_t(t)]);
    const auto rel = draw_relabel(her, t, ep.length(), rng);
    if (!rel.relabeled) {
      std::memcpy(g + n * D, ep.goals.data_ptr<float>() + t * D, row_bytes);
      r[n] = float(ep.reward[std::size_t(t)]);
      continue;
    }
    ++b.relabeled;
    if (rel.generated) {
      const auto goal = sample_goal(*her.distribution, rng);
      std::memcpy(g + n * D, goal.data_ptr<float>(), row_bytes);
    } else {
      std::memcpy(g + n * D, lat + std::int64_t(rel.goal_index) * D, row_bytes);
    }
    std::vector<double> x(static_cast<std::size_t>(D)), y(static_cast<std::size_t>(D));
    for (std::int64_t k = 0; k < D; ++k) {
      x[std::size_t(k)] = zn[n * D + k];
      y[std::size_t(k)] = g[n * D + k];
    }
    double reward = curiosity::l1_reward(x.data(), y.data(), D);
    if (her.keep_bonus) reward = curiosity::augment_reward(reward, ep.bonus[std::size_t(t)]);
    r[n] = float(reward);
  }
  return b;
}

std::vector<rem::LatentTrajectory> ReplayBuffer::trajectories() const {
  std::vector<rem::LatentTrajectory> out;
  out.reserve(episodes_.size());
  for (const auto& ep : episodes_) {
    rem::LatentTrajectory traj;
    traj.latents = ep.latents;
    traj.steps.resize(std::size_t(ep.latents.size(0)));
    for (std::size_t t = 0; t < traj.steps.size(); ++t) traj.steps[t] = int(t);
    out.push_back(std::move(traj));
  }
  return out;
}

torch::Tensor ReplayBuffer::all_latents() const {
  std::vector<torch::Tensor> parts;
  for (const auto& ep : episodes_) parts.push_back(ep.latents);
  if (parts.empty()) return torch::zeros({0, 0});
  return torch::cat(parts);
}

void ReplayBuffer::save(Archive& archive, const std::string& prefix) const {
  archive.put_int(prefix + "capacity", capacity_);
  archive.put_int(prefix + "episodes", std::int64_t(episodes_.size()));
  for (std::size_t e = 0; e < episodes_.size(); ++e) {
    const auto& ep = episodes_[e];
    const std::string p = prefix + "ep" + std::to_string(e) + "/";
    archive.put_tensor(p + "latents", ep.latents);
    archive.put_tensor(p + "goals", ep.goals);
    archive.put_tensor(p + "actions", ep.actions);
    archive.put_doubles(p + "extrinsic", ep.extrinsic);
    archive.put_doubles(p + "bonus", ep.bonus);
    archive.put_doubles(p + "reward", ep.reward);
    archive.put_ints(p + "done", std::vector<std::int64_t>(ep.done.begin(), ep.done.end()));
  }
}

void ReplayBuffer::load(const Archive& archive, const std::string& prefix) {
  capacity_ = archive.get_int(prefix + "capacity");
  episodes_.clear();
  transitions_ = 0;
  const auto n = archive.get_int(prefix + "episodes");
  for (std::int64_t e = 0; e < n; ++e) {
    const std::string p = prefix + "ep" + std::to_string(e) + "/";
    Episode ep;
    ep.latents = archive.get_tensor(p + "latents");
    ep.goals = archive.get_tensor(p + "goals");
    ep.actions = archive.get_tensor(p + "actions");
    ep.extrinsic = archive.get_doubles(p + "extrinsic");
    ep.bonus = archive.get_doubles(p + "bonus");
    ep.reward = archive.get_doubles(p + "reward");
    for (auto v : archive.get_ints(p + "done")) ep.done.push_back(std::uint8_t(v));
    transitions_ += ep.length();
    episodes_.push_back(std::move(ep));
  }
}

Td3Config Td3Config::from_config(const Config& config) {
  Td3Config c;
  c.hidden = int(config.get_int("policy.hidden"));
  c.gamma = config.get_double("policy.gamma");
  c.tau = config.get_double("policy.tau");
  c.delay = int(config.get_int("policy.delay"));
  c.target_noise = config.get_double("policy.target_noise");
  c.noise_clip = config.get_double("policy.noise_clip");
  c.actor_lr = config.get_double("policy.actor_lr");
  c.critic_lr = config.get_double("policy.critic_lr");
  c.batch_size = int(config.get_int("policy.batch_size"));
  if (c.delay < 1) throw ConfigError("policy.delay must be >= 1");
  if (c.tau <= 0 || c.tau > 1) throw ConfigError("policy.tau must lie in (0, 1]");
  return c;
}

ActorImpl::ActorImpl(int dim, int hidden) { net_ = register_module("net", mlp(2 * dim, hidden, 2)); }

torch::Tensor ActorImpl::forward(const torch::Tensor& z, const torch::Tensor& goal) {
  return torch::tanh(net_->forward(torch::cat({z, goal}, -1)));
}

CriticImpl::CriticImpl(int dim, int hidden) { net_ = register_module("net", mlp(2 * dim + 2, hidden, 1)); }

torch::Tensor CriticImpl::forward(const torch::Tensor& z, const torch::Tensor& goal,
                                  const torch::Tensor& action) {
  return net_->forward(torch::cat({z, goal, action}, -1)).squeeze(-1);
}

void polyak_update(torch::nn::Module& target, const torch::nn::Module& source, double tau) {
  torch::NoGradGuard guard;
  auto t = target.parameters();
  const auto s = source.parameters();
  if (t.size() != s.size()) throw ShapeError("polyak update between different architectures");
  for (std::size_t i = 0; i < t.size(); ++i) t[i].mul_(1.0 - tau).add_(s[i], tau);
}

Td3::Td3(int dim, Td3Config config, std::uint64_t seed)
    : dim_(dim), config_(config),
      generator_(at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, 0x74643367ULL))) {
  torch::manual_seed(derive_seed(seed, 0x74643369ULL));
  actor_ = Actor(dim, config.hidden);
  critic1_ = Critic(dim, config.hidden);
  critic2_ = Critic(dim, config.hidden);
  actor_target_ = Actor(dim, config.hidden);
  critic1_target_ = Critic(dim, config.hidden);
  critic2_target_ = Critic(dim, config.hidden);
  hard_copy(*actor_target_, *actor_);
  hard_copy(*critic1_target_, *critic1_);
  hard_copy(*critic2_target_, *critic2_);
  for (auto* m : {static_cast<torch::nn::Module*>(actor_target_.get()),
                  static_cast<torch::nn::Module*>(critic1_target_.get()),
                  static_cast<torch::nn::Module*>(critic2_target_.get())})
    for (auto& p : m->parameters()) p.set_requires_grad(false);
  actor_opt_ = std::make_unique<torch::optim::Adam>(actor_->parameters(),
                                                     torch::optim::AdamOptions(config.actor_lr));
  auto critic_params = critic1_->parameters();
  for (auto& p : critic2_->parameters()) critic_params.push_back(p);
  critic_opt_ = std::make_unique<torch::optim::Adam>(critic_params, torch::optim::AdamOptions(config.critic_lr));
}

std::array<float, 2> Td3::act(const torch::Tensor& z, const torch::Tensor& goal, double noise_std,
                              std::mt19937_64& rng) {
  torch::NoGradGuard guard;
  const auto a = actor_->forward(flat(z).unsqueeze(0), flat(goal).unsqueeze(0))[0];
  std::array<float, 2> out{a[0].item<float>(), a[1].item<float>()};
  if (noise_std > 0)
    for (auto& v : out) v = float(v + noise_std * normal(rng));
  for (auto& v : out) v = std::clamp(v, -1.0f, 1.0f);
  return out;
}

torch::Tensor Td3::act_batch(const torch::Tensor& z, const torch::Tensor& goal) {
  torch::NoGradGuard guard;
  return actor_->forward(z.to(torch::kFloat32), goal.to(torch::kFloat32));
}

torch::Tensor Td3::critic_target(const Batch& batch) {
  torch::NoGradGuard guard;
  const auto noise = (torch::randn(batch.action.sizes(), generator_) * config_.target_noise)
                         .clamp(-config_.noise_clip, config_.noise_clip);
  const auto next_action = (actor_target_->forward(batch.z_next, batch.goal) + noise).clamp(-1.0, 1.0);
  const auto q1 = critic1_target_->forward(batch.z_next, batch.goal, next_action);
  const auto q2 = critic2_target_->forward(batch.z_next, batch.goal, next_action);
  return batch.reward + config_.gamma * (1.0 - batch.done) * torch::min(q1, q2);
}

Td3Losses Td3::update(const Batch& batch) {
  Td3Losses losses;
  const auto target = critic_target(batch);
  const auto q1 = critic1_->forward(batch.z, batch.goal, batch.action);
  const auto q2 = critic2_->forward(batch.z, batch.goal, batch.action);
  const auto critic_loss = torch::mse_loss(q1, target) + torch::mse_loss(q2, target);
  losses.critic = critic_loss.item<double>();
  losses.q_mean = q1.mean().item<double>();
  if (!std::isfinite(losses.critic))
    throw NumericalError("TD3 critic loss is not finite at update " + std::to_string(updates_) +
                         " (mean target " + std::to_string(target.mean().item<double>()) + ")");
  critic_opt_->zero_grad();
  critic_loss.backward();
  critic_opt_->step();
  ++updates_;
  if (updates_ % config_.delay == 0) {
    const auto actor_loss = -critic1_->forward(batch.z, batch.goal, actor_->forward(batch.z, batch.goal)).mean();
    actor_opt_->zero_grad();
    actor_loss.backward();
    actor_opt_->step();
    losses.actor = actor_loss.item<double>();
    losses.actor_updated = true;
    if (!std::isfinite(losses.actor)) throw NumericalError("TD3 actor loss is not finite");
    polyak_update(*actor_target_, *actor_, config_.tau);
    polyak_update(*critic1_target_, *critic1_, config_.tau);
    polyak_update(*critic2_target_, *critic2_, config_.tau);
  }
  return losses;
}

void Td3::save(Archive& archive, const std::string& prefix) const {
  archive.put_ints(prefix + "config/ints", {dim_, config_.hidden, updates_});
  archive.put_module(prefix + "actor/", *actor_);
  archive.put_module(prefix + "critic1/", *critic1_);
  archive.put_module(prefix + "critic2/", *critic2_);
  archive.put_module(prefix + "actor_target/", *actor_target_);
  archive.put_module(prefix + "critic1_target/", *critic1_target_);
  archive.put_module(prefix + "critic2_target/", *critic2_target_);
  archive.put_adam(prefix + "actor_opt/", *actor_opt_);
  archive.put_adam(prefix + "critic_opt/", *critic_opt_);
  archive.put_generator(prefix + "generator", generator_);
}

void Td3::load(const Archive& archive, const std::string& prefix) {
  const auto ints = archive.get_ints(prefix + "config/ints");
  if (ints.size() != 3 || ints[0] != dim_ || ints[1] != config_.hidden)
    throw ArchiveError("policy archive sizes do not match the configured policy");
  updates_ = ints[2];
  archive.get_module(prefix + "actor/", *actor_);
  archive.get_module(prefix + "critic1/", *critic1_);
  archive.get_module(prefix + "critic2/", *critic2_);
  archive.get_module(prefix + "actor_target/", *actor_target_);
  archive.get_module(prefix + "critic1_target/", *critic1_target_);
  archive.get_module(prefix + "critic2_target/", *critic2_target_);
  archive.get_adam(prefix + "actor_opt/", *actor_opt_);
  archive.get_adam(prefix + "critic_opt/", *critic_opt_);
  archive.get_generator(prefix + "generator", generator_);
}

}  // namespace replan::policy
