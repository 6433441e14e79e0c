#include "replan/trainer.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

#include "replan/errors.hpp"
#include "replan/rng.hpp"

namespace replan::trainer {
namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

const env::LayoutRegistry& registry_for(const Config& config) {
  const auto file = config.get_string("env.layouts_file");
  if (file.empty()) return env::LayoutRegistry::builtin();
  static std::mutex mutex;
  static std::map<std::string, std::unique_ptr<env::LayoutRegistry>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[file];
  if (!slot) slot = std::make_unique<env::LayoutRegistry>(env::LayoutRegistry::from_file(file));
  return *slot;
}

std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto b : bytes) h = (h ^ b) * 1099511628211ULL;
  return h;
}

torch::Tensor encode_frames(Observer& observer, const std::vector<env::Frame>& frames) {
  std::vector<torch::Tensor> parts;
  constexpr std::size_t kChunk = 256;
  for (std::size_t i = 0; i < frames.size(); i += kChunk) {
    std::vector<env::EnvState> states;
    std::vector<const Image*> images;
    for (std::size_t j = i; j < std::min(frames.size(), i + kChunk); ++j) {
      states.push_back(frames[j].state);
      images.push_back(&frames[j].image);
    }
    torch::NoGradGuard guard;
    parts.push_back(observer.encode(states, observer.needs_images() ? images : std::vector<const Image*>{}));
  }
  return torch::cat(parts);
}

env::Vec2 to_vec(const std::array<float, 2>& a) { return {double(a[0]), double(a[1])}; }

}  // namespace

Task parse_task(const std::string& name) {
  if (name == "push") return Task::kPush;
  if (name == "reach") return Task::kReach;
  throw ConfigError("run.task must be push or reach, got '" + name + "'");
}

std::unique_ptr<env::PusherEnv> make_env(const Config& config, int t_max) {
  auto cfg = env::EnvConfig::from_config(config);
  if (t_max > 0) cfg.t_max = t_max;
  return std::make_unique<env::PusherEnv>(cfg, registry_for(config));
}

EpisodeSpec make_episode(const env::PusherEnv& env, const std::string& layout, Task task,
                         std::uint64_t seed, bool images) {
  EpisodeSpec spec;
  spec.start = env.reset(layout, derive_seed(seed, 1)).first;
  if (task == Task::kPush) {
    spec.goal = env.sample_goal(layout, derive_seed(seed, 2)).first;
  } else {
    const auto& l = env.layout(layout);
    auto rng = make_rng(seed, 0x72656163ULL);
    spec.goal = spec.start;
    do {
      spec.goal.robot = {uniform(rng, 0.08, 0.92), uniform(rng, 0.08, 0.92)};
    } while (!env.robot_free(l, spec.goal.robot) ||
             (spec.goal.robot - spec.start.puck).norm() <
                 env.config().robot_radius + env.config().puck_radius + 0.01);
  }
  if (images) {
    spec.start_image = env.render(spec.start, env.config().resolution);
    spec.goal_image = env.render(spec.goal, env.config().resolution);
  }
  return spec;
}

double task_distance(Task task, const env::EnvState& state, const env::EnvState& goal) {
  return task == Task::kPush ? (state.puck - goal.puck).norm() : (state.robot - goal.robot).norm();
}

Settings Settings::from_config(const Config& config) {
  Settings s;
  s.seed = std::uint64_t(config.get_int("run.seed"));
  s.out = resolve_out(config);
  s.layout = config.get_string("run.layout");
  s.task = parse_task(config.get_string("run.task"));
  s.observation = config.get_string("run.observation");
  s.episodes = int(config.get_int("run.episodes"));
  s.checkpoint_every = std::max<int>(1, int(config.get_int("run.checkpoint_every")));
  s.use_rem = config.get_bool("run.use_rem");
  s.use_cm = config.get_bool("run.use_cm");
  s.use_planner = config.get_bool("run.use_planner");
  s.t_max = int(config.get_int("env.t_max"));
  const auto n = config.get_int("planner.subgoals");
  s.subgoals = n >= 0 ? int(n) : registry_for(config).get(s.layout).default_subgoals;
  if (!s.use_planner) s.subgoals = 0;
  planner::subgoal_schedule(s.t_max, s.subgoals);
  s.warmup_steps = int(config.get_int("policy.warmup_steps"));
  s.random_eps = config.get_double("policy.random_eps");
  s.explore_noise = config.get_double("policy.explore_noise");
  s.updates_per_step = int(config.get_int("policy.updates_per_step"));
  s.threshold = config.get_double("eval.threshold");
  const auto model = config.get_string("run.drm_checkpoint");
  s.model_archive = model.empty() ? s.out / "drm.rpa" : std::filesystem::path(model);
  if (s.observation != "drm" && s.observation != "vae" && s.observation != "state")
    throw ConfigError("run.observation must be drm, vae or state, got '" + s.observation + "'");
  return s;
}

std::filesystem::path resolve_out(const Config& config) {
  if (config.is_set("run.out")) return config.get_string("run.out");
  const char* root = std::getenv("REPLAN_OUT");
  const std::filesystem::path base = (root && *root) ? root : "runs";
  return base / "default";
}

std::vector<env::Frame> exploration_frames(const Config& config, const env::PusherEnv& base_env) {
  const auto layouts = split_list(config.get_string("explore.layouts"));
  if (layouts.empty()) throw ConfigError("explore.layouts is empty");
  const int episodes = int(config.get_int("explore.episodes"));
  const int t_max = int(config.get_int("explore.t_max"));
  const auto seed = std::uint64_t(config.get_int("run.seed"));
  auto cfg = base_env.config();
  cfg.t_max = t_max;
  const env::PusherEnv env(cfg, base_env.layouts());
  std::vector<env::Frame> all;
  for (std::size_t l = 0; l < layouts.size(); ++l) {
    const int count = episodes / int(layouts.size()) + (int(l) < episodes % int(layouts.size()) ? 1 : 0);
    for (auto& traj : env.scripted_explore(layouts[l], count, derive_seed(seed, 0x6578000 + l), false))
      for (auto& f : traj.frames) all.push_back(std::move(f));
  }
  const auto wanted = std::min<std::size_t>(all.size(), std::size_t(config.get_int("drm.frames")));
  auto rng = make_rng(seed, 0x6672616dULL);
  for (std::size_t i = 0; i < wanted; ++i) {
    const auto j = std::size_t(uniform_int(rng, std::int64_t(i), std::int64_t(all.size()) - 1));
    std::swap(all[i], all[j]);
  }
  all.resize(wanted);
  for (auto& f : all) f.image = env.render(f.state, cfg.resolution);
  return all;
}

PretrainResult pretrain(const Config& config, const std::filesystem::path& out,
                        const std::function<void(const drm::LossRecord&)>& on_record) {
  std::filesystem::create_directories(out);
  const auto env = make_env(config);
  const auto frames = exploration_frames(config, *env);
  {
    JsonlWriter manifest(out / "dataset_manifest.jsonl", false);
    for (std::size_t i = 0; i < frames.size(); ++i)
      manifest.write({{"index", i},
                      {"layout_id", frames[i].state.layout_id},
                      {"step", frames[i].step},
                      {"robot_xy", {frames[i].state.robot.x, frames[i].state.robot.y}},
                      {"puck_xy", {frames[i].state.puck.x, frames[i].state.puck.y}},
                      {"image_fnv1a", fnv1a(frames[i].image.data)}});
  }
  PretrainResult result;
  result.frames = std::int64_t(frames.size());
  const auto kind = config.get_string("run.observation");
  const auto seed = std::uint64_t(config.get_int("run.seed"));
  std::unique_ptr<Observer> observer;
  if (kind == "state") {
    observer = std::make_unique<StateObserver>();
  } else {
    std::vector<const Image*> images;
    for (const auto& f : frames) images.push_back(&f.image);
    const auto batch = to_batch(images);
    auto train = drm::TrainConfig::from_config(config);
    Archive archive;
    if (kind == "drm") {
      torch::manual_seed(derive_seed(seed, 0x64726d00ULL));
      drm::DrmModel model(drm::DrmConfig::from_config(config));
      result.train = drm::train_drm(model, batch, train, out, on_record);
      drm::save_drm(archive, model);
      observer = std::make_unique<DrmObserver>(model);
    } else if (kind == "vae") {
      torch::manual_seed(derive_seed(seed, 0x76616500ULL));
      vae::VaeModel model(vae::VaeConfig::from_config(config));
      result.train = vae::train_vae(model, batch, train, out, on_record);
      vae::save_vae(archive, model);
      observer = std::make_unique<VaeObserver>(model);
    } else {
      throw ConfigError("run.observation must be drm, vae or state, got '" + kind + "'");
    }
    result.model_archive = out / "drm.rpa";
    archive.save(result.model_archive);
  }
  const auto latents = encode_frames(*observer, frames);
  result.distribution = planner::SamplingDistribution::fit(
      latents, config.get_double("planner.std_floor"), int(config.get_int("planner.min_latents")));
  Archive sampling;
  sampling.put_string("model/kind", "sampling");
  result.distribution.save(sampling, "sampling/");
  result.sampling_archive = out / "sampling.rpa";
  sampling.save(result.sampling_archive);
  return result;
}

// ---------------------------------------------------------------- agent

Agent::Agent(const Config& config, std::unique_ptr<Observer> observer,
             planner::SamplingDistribution distribution)
    : settings_(Settings::from_config(config)),
      observer_(std::move(observer)),
      distribution_(std::move(distribution)),
      cem_(planner::CemConfig::from_config(config)),
      curiosity_(curiosity::CuriosityConfig::from_config(config)),
      td3_(observer_->dim(), policy::Td3Config::from_config(config), derive_seed(settings_.seed, 0x706f6cULL)),
      rem_(observer_->dim(), rem::RemConfig::from_config(config, settings_.t_max),
           derive_seed(settings_.seed, 0x72656dULL)),
      memory_(curiosity_.capacity, derive_seed(settings_.seed, 0x6d656dULL)) {
  if (distribution_.dim() != observer_->dim())
    throw ShapeError("sampling distribution has " + std::to_string(distribution_.dim()) +
                     " dims, observer " + std::to_string(observer_->dim()));
  project_ = config.get_bool("planner.project");
}

rem::EdgeScorer Agent::edge_scorer() {
  return settings_.use_rem ? rem::rem_scorer(rem_.model()) : rem::negative_l2_scorer();
}

planner::PlanRequest Agent::plan_request(const rem::EdgeScorer& scorer) const {
  planner::PlanRequest req;
  req.scorer = &scorer;
  req.aggregator = rem_.config().aggregator;
  req.cem = cem_;
  req.distribution = &distribution_;
  if (project_) {
    const Observer* obs = observer_.get();
    req.project = [obs](const torch::Tensor& z) { return obs->project(z); };
  }
  return req;
}

torch::Tensor Agent::encode(const env::EnvState& state, const Image& image) {
  torch::NoGradGuard guard;
  if (!observer_->needs_images()) return observer_->encode({state}, {})[0];
  return observer_->encode_one(state, image);
}

EpisodeResult Agent::collect(const env::PusherEnv& env, std::uint64_t episode_seed,
                             std::int64_t total_steps) {
  const bool images = observer_->needs_images();
  const auto spec = make_episode(env, settings_.layout, settings_.task, episode_seed, images);
  auto rng = make_rng(episode_seed, 0x61637400ULL);
  const int N = settings_.subgoals;
  const int t_n = planner::subgoal_schedule(settings_.t_max, N);
  const auto scorer = edge_scorer();
  const auto request = plan_request(scorer);
  const auto reach = rem::rem_scorer(rem_.model());
  const bool bonus_active = curiosity_.alpha != 0.0 || curiosity_.beta != 0.0;
  curiosity::reset_memory(memory_, curiosity_.persistent);

  EpisodeResult result;
  auto z = encode(spec.start, spec.start_image);
  const auto z_goal = encode(spec.goal, spec.goal_image);
  policy::EpisodeBuilder builder;
  builder.start(z);
  env::EnvState state = spec.start;
  planner::SubgoalPlan plan;
  double bonus_sum = 0.0;
  int segment = -1;
  for (int t = 0; t < settings_.t_max; ++t) {
    const int seg = std::min(t / t_n, N);
    if (seg != segment) {
      segment = seg;
      const int remaining = N - seg;
      if (remaining > 0) {
        plan = planner::replan(request, z, z_goal, remaining, derive_seed(episode_seed, 0x706c00 + seg),
                               plan.count() ? &plan : nullptr);
        result.plans.push_back(plan);
      } else {
        plan = planner::SubgoalPlan{};
      }
    }
    const auto target = planner::policy_target(plan, z_goal);
    std::array<float, 2> action;
    if (total_steps + t < settings_.warmup_steps || uniform(rng) < settings_.random_eps)
      action = {float(uniform(rng, -1.0, 1.0)), float(uniform(rng, -1.0, 1.0))};
    else
      action = td3_.act(z, target, settings_.explore_noise, rng);
    state = env.advance(state, to_vec(action));
    const Image image = images ? env.render(state, env.config().resolution) : Image{};
    const auto z_next = encode(state, image);
    double b = 0.0;
    if (bonus_active) {
      b = curiosity::compute_bonus(reach, z_next, memory_, curiosity_.beta, curiosity_.alpha);
      if (memory_.update(z_next, b, curiosity_.replace_prob)) ++result.memory_inserts;
    }
    bonus_sum += b;
    builder.add(action, target, z_next, b);
    z = z_next;
  }
  result.steps = settings_.t_max;
  result.episode = builder.finish();
  result.final_distance = task_distance(settings_.task, state, spec.goal);
  result.success = result.final_distance < settings_.threshold;
  result.mean_bonus = bonus_sum / std::max(1, result.steps);
  return result;
}

void Agent::begin(const EpisodeSpec& spec, std::uint64_t seed) {
  current_ = spec;
  eval_seed_ = seed;
  eval_rng_ = make_rng(seed, 0x6576616cULL);
  goal_z_ = encode(spec.goal, spec.goal_image);
  step_in_episode_ = 0;
  segment_ = -1;
  segment_len_ = planner::subgoal_schedule(settings_.t_max, settings_.subgoals);
  plan_ = planner::SubgoalPlan{};
}

env::Vec2 Agent::act(const env::EnvState& state, const Image& image) {
  const auto z = encode(state, image);
  const int N = settings_.subgoals;
  const int seg = std::min(step_in_episode_ / segment_len_, N);
  if (seg != segment_) {
    segment_ = seg;
    const int remaining = N - seg;
    if (remaining > 0) {
      const auto scorer = edge_scorer();
      const auto request = plan_request(scorer);
      plan_ = planner::replan(request, z, goal_z_, remaining, derive_seed(eval_seed_, 0x706c00 + seg),
                              plan_.count() ? &plan_ : nullptr);
    } else {
      plan_ = planner::SubgoalPlan{};
    }
  }
  ++step_in_episode_;
  return to_vec(td3_.act(z, planner::policy_target(plan_, goal_z_), 0.0, eval_rng_));
}

// ---------------------------------------------------------------- run

Run::Run(const Config& config, std::unique_ptr<Observer> observer,
         planner::SamplingDistribution distribution)
    : config_(config),
      agent_(config, std::move(observer), std::move(distribution)),
      buffer_(config.get_int("policy.buffer_capacity")) {
  her_.strategy = policy::parse_her_strategy(config.get_string("policy.her_strategy"));
  her_.ratio = config.get_double("policy.her_ratio");
  her_.future_share = config.get_double("policy.her_future_share");
  her_.keep_bonus = config.get_bool("policy.her_keep_bonus");
  her_.distribution = &agent_.distribution();
}

nlohmann::json Run::train_episode(const env::PusherEnv& env) {
  const auto& s = agent_.settings();
  const auto episode_seed = derive_seed(s.seed, 0x100000 + std::uint64_t(episode_));
  auto result = agent_.collect(env, episode_seed, total_steps_);
  const int steps = result.steps;
  buffer_.add(std::move(result.episode));
  total_steps_ += steps;

  nlohmann::json record = {{"episode", episode_},
                           {"steps", steps},
                           {"total_steps", total_steps_},
                           {"final_distance", result.final_distance},
                           {"success", result.success},
                           {"mean_bonus", result.mean_bonus},
                           {"memory_inserts", result.memory_inserts},
                           {"memory_size", agent_.memory().size()},
                           {"replans", result.plans.size()}};
  if (!result.plans.empty()) record["first_plan_objective"] = result.plans.front().objective;

  if (s.use_rem || s.use_cm) {
    const auto m = agent_.rem().train(buffer_.trajectories(), derive_seed(episode_seed, 0x72656d74ULL));
    record["rem"] = {{"skipped", m.skipped}, {"first_loss", m.first_loss},
                     {"last_loss", m.last_loss}, {"accuracy", m.accuracy}};
  }

  const auto& td3 = agent_.policy();
  const int updates = steps * s.updates_per_step;
  double critic = 0.0, actor = 0.0, q = 0.0;
  int actor_updates = 0, done_updates = 0;
  std::int64_t relabeled = 0;
  if (buffer_.transitions() >= td3.config().batch_size) {
    auto rng = make_rng(episode_seed, 0x75706400ULL);
    for (int u = 0; u < updates; ++u) {
      const auto batch = buffer_.sample(td3.config().batch_size, her_, rng);
      const auto losses = agent_.policy().update(batch);
      critic += losses.critic;
      q += losses.q_mean;
      relabeled += batch.relabeled;
      if (losses.actor_updated) {
        actor += losses.actor;
        ++actor_updates;
      }
      ++done_updates;
    }
  }
  record["policy"] = {{"updates", done_updates},
                      {"critic_loss", done_updates ? critic / done_updates : 0.0},
                      {"actor_loss", actor_updates ? actor / actor_updates : 0.0},
                      {"q_mean", done_updates ? q / done_updates : 0.0},
                      {"relabeled_fraction",
                       done_updates ? double(relabeled) / (double(done_updates) * td3.config().batch_size) : 0.0}};
  if (!result.plans.empty() && episode_ % s.checkpoint_every == 0) {
    JsonlWriter plans(s.out / "plans" / ("episode_" + std::to_string(episode_) + ".jsonl"), false);
    for (const auto& p : result.plans) plans.write(planner::plan_to_json(p));
  }
  ++episode_;
  return record;
}

void Run::save(Archive& archive) const {
  archive.put_int("run/version", kRunStateVersion);
  archive.put_int("run/episode", episode_);
  archive.put_int("run/total_steps", total_steps_);
  archive.put_string("run/config", config_.to_text());
  archive.put_string("run/observation", const_cast<Agent&>(agent_).observer().kind());
  auto& agent = const_cast<Agent&>(agent_);
  agent.policy().save(archive, "policy/");
  agent.rem().save(archive, "rem/");
  agent.memory().save(archive, "memory/");
  agent.distribution().save(archive, "sampling/");
  buffer_.save(archive, "buffer/");
}

void Run::load(const Archive& archive) {
  if (!archive.contains("run/version")) throw ArchiveError("archive is not a run checkpoint");
  const auto version = archive.get_int("run/version");
  if (version != kRunStateVersion)
    throw VersionError("run checkpoint version " + std::to_string(version) + ", this build reads version " +
                       std::to_string(kRunStateVersion));
  if (archive.get_string("run/observation") != agent_.observer().kind())
    throw ArchiveError("checkpoint observation '" + archive.get_string("run/observation") +
                       "' differs from the configured '" + agent_.observer().kind() + "'");
  episode_ = int(archive.get_int("run/episode"));
  total_steps_ = archive.get_int("run/total_steps");
  agent_.policy().load(archive, "policy/");
  agent_.rem().load(archive, "rem/");
  agent_.memory().load(archive, "memory/");
  buffer_.load(archive, "buffer/");
}

void save_checkpoint(const Run& run, const std::filesystem::path& path) {
  Archive archive;
  run.save(archive);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  archive.save(tmp);
  std::filesystem::rename(tmp, path);
}

void load_checkpoint(Run& run, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint '" + path.string() + "' does not exist");
  run.load(Archive::load(path));
}

namespace {

struct Loaded {
  std::unique_ptr<Observer> observer;
  planner::SamplingDistribution distribution;
};

Loaded load_components(const Config& config, const Settings& s) {
  Loaded l;
  if (s.observation == "state") {
    l.observer = std::make_unique<StateObserver>();
  } else {
    if (!std::filesystem::exists(s.model_archive))
      throw ConfigError("missing representation archive '" + s.model_archive.string() +
                        "' (run train-drm first or set run.drm_checkpoint)");
    const auto archive = Archive::load(s.model_archive);
    l.observer = load_observer(s.observation, &archive);
  }
  auto sampling_path = s.out / "sampling.rpa";
  if (!std::filesystem::exists(sampling_path) && s.observation != "state")
    sampling_path = s.model_archive.parent_path() / "sampling.rpa";
  if (std::filesystem::exists(sampling_path)) {
    l.distribution = planner::SamplingDistribution::load(Archive::load(sampling_path), "sampling/");
  } else if (s.observation == "state") {
    const auto env = make_env(config);
    const auto frames = exploration_frames(config, *env);
    l.distribution = planner::SamplingDistribution::fit(
        encode_frames(*l.observer, frames), config.get_double("planner.std_floor"),
        int(config.get_int("planner.min_latents")));
    Archive sampling;
    sampling.put_string("model/kind", "sampling");
    l.distribution.save(sampling, "sampling/");
    std::filesystem::create_directories(s.out);
    sampling.save(s.out / "sampling.rpa");
  } else {
    throw ConfigError("missing sampling distribution '" + sampling_path.string() + "'");
  }
  return l;
}

void truncate_metrics(const std::filesystem::path& path, int episodes) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    try {
      if (nlohmann::json::parse(line).at("episode").get<int>() < episodes) keep.push_back(line);
    } catch (const std::exception&) {
    }
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace

RunResult run(const Config& config, bool resume,
              const std::function<void(const nlohmann::json&)>& on_episode) {
  const auto s = Settings::from_config(config);
  std::filesystem::create_directories(s.out / "checkpoints");
  std::filesystem::create_directories(s.out / "plans");
  std::filesystem::create_directories(s.out / "heatmaps");
  config.write(s.out / "config.toml");
  const auto env = make_env(config);
  auto parts = load_components(config, s);
  Run run(config, std::move(parts.observer), std::move(parts.distribution));
  const auto checkpoint = s.out / "checkpoints" / "state.rpa";
  const auto metrics_path = s.out / "metrics.jsonl";
  if (resume && std::filesystem::exists(checkpoint)) {
    load_checkpoint(run, checkpoint);
    truncate_metrics(metrics_path, run.episode());
  } else {
    std::ofstream(metrics_path, std::ios::trunc);
  }
  JsonlWriter metrics(metrics_path, true);
  while (run.episode() < s.episodes) {
    nlohmann::json record;
    try {
      record = run.train_episode(*env);
    } catch (const Error& e) {
      JsonlWriter failure(s.out / "checkpoints" / "failure.jsonl", true);
      failure.write({{"episode", run.episode()}, {"kind", e.kind()}, {"message", e.what()},
                     {"resume_from", checkpoint.string()}});
      throw;
    }
    metrics.write(record);
    if (on_episode) on_episode(record);
    if (run.episode() % s.checkpoint_every == 0 || run.episode() == s.episodes)
      save_checkpoint(run, checkpoint);
  }
  return {run.episode(), s.out, checkpoint};
}

std::unique_ptr<Run> load_run(const Config& config, const std::filesystem::path& checkpoint) {
  const auto s = Settings::from_config(config);
  auto parts = load_components(config, s);
  auto run = std::make_unique<Run>(config, std::move(parts.observer), std::move(parts.distribution));
  load_checkpoint(*run, checkpoint);
  return run;
}

}  // namespace replan::trainer
