#include "replan/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "replan/errors.hpp"

namespace replan {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

const ConfigKey* find_key(const std::string& key) {
  const auto& schema = config_schema();
  auto it = std::find_if(schema.begin(), schema.end(),
                         [&](const ConfigKey& k) { return k.key == key; });
  return it == schema.end() ? nullptr : &*it;
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      // run
      {"run.seed", "0", "Master seed; every module derives its seed from it."},
      {"run.out", "runs/default", "Output directory (REPLAN_OUT overrides the root of the default)."},
      {"run.layout", "pusher2", "Layout id the agent trains and evaluates on."},
      {"run.task", "push", "push: move the puck to the goal; reach: move the effector (no planning needed)."},
      {"run.observation", "drm", "Planner-latent source: drm, vae (w/o DRM ablation) or state (raw positions)."},
      {"run.episodes", "300", "Maximum training episodes E."},
      {"run.checkpoint_every", "25", "Episodes between checkpoints and metric flushes."},
      {"run.workers", "1", "Worker threads for data collection and evaluation."},
      {"run.drm_checkpoint", "", "Pretrained DRM/VAE archive; empty means <out>/drm.rpa."},
      {"run.use_rem", "true", "Score plan edges with REM; false swaps in negative latent L2 distance."},
      {"run.use_cm", "true", "Enable the curiosity bonus; false sets curiosity.alpha = 0 and beta = 0."},
      {"run.use_planner", "true", "Plan subgoals; false conditions the policy on the goal directly."},
      // env
      {"env.t_max", "200", "Episode horizon T_max."},
      {"env.resolution", "64", "Rendered image resolution (32, 64 or 128)."},
      {"env.max_step", "0.025", "Effector displacement per unit action, workspace units."},
      {"env.robot_radius", "0.04", "Effector disc radius."},
      {"env.puck_radius", "0.05", "Puck disc radius."},
      {"env.layouts_file", "", "Optional layouts JSON replacing the built-in registry."},
      {"env.oracle_grid_step", "0.05", "Cell size of the BFS evaluation oracle."},
      // scripted exploration
      {"explore.episodes", "200", "Random-exploration episodes used for DRM pretraining."},
      {"explore.layouts", "open,pusher1,pusher2", "Comma separated layouts mixed into the DRM dataset."},
      {"explore.t_max", "50", "Horizon of DRM pretraining trajectories."},
      // drm
      {"drm.encoder", "drm", "drm (disentangled) or vae (monolithic baseline)."},
      {"drm.grid", "4", "Object grid size H = W."},
      {"drm.glimpse", "16", "Glimpse resolution."},
      {"drm.z_what_dim", "16", "Object appearance latent size."},
      {"drm.z_bg_dim", "8", "Background latent size."},
      {"drm.z_ro_m_dim", "8", "Robot mask latent size."},
      {"drm.z_ro_rgb_dim", "16", "Robot appearance latent size."},
      {"drm.bg_templates", "4", "Learned background templates mixed by the background decoder."},
      {"drm.sigma_bg", "0.15", "Fixed std of the background RGB likelihood."},
      {"drm.sigma_ro", "0.10", "Fixed std of the robot RGB likelihood."},
      {"drm.sigma_obj", "0.10", "Fixed std of the object RGB likelihood."},
      {"drm.alpha_inter", "10", "Weight of the inter-branch entropy loss."},
      {"drm.alpha_intra", "1", "Weight of the intra-branch entropy loss."},
      {"drm.intra_mass_eps", "0.01", "Pixels whose total cell mass is below this are skipped by the intra loss."},
      {"drm.pres_prior", "0.01", "Bernoulli prior probability of object presence."},
      {"drm.tau_start", "2.0", "Initial Gumbel-Softmax temperature."},
      {"drm.tau_end", "0.5", "Final temperature, reached halfway through training."},
      {"drm.scale_min", "0.05", "Smallest glimpse scale, fraction of canvas."},
      {"drm.scale_max", "0.5", "Largest glimpse scale, fraction of canvas."},
      {"drm.frames", "2000", "Frames drawn from the exploration data for training."},
      {"drm.min_frames", "1000", "Smaller datasets are rejected."},
      {"drm.epochs", "30", "Training epochs."},
      {"drm.batch_size", "32", "Minibatch size."},
      {"drm.lr", "0.001", "Adam learning rate."},
      {"drm.log_every", "20", "Optimizer steps between loss-curve records."},
      {"drm.template_lr_scale", "0", "Learning-rate multiplier for the background templates (0 keeps the k-means initialisation)."},
      {"drm.kl_warmup", "0.2", "Fraction of training over which the KL weight ramps from 0 to 1."},
      {"drm.presence_warmup", "0.1", "Fraction of training during which every cell is forced present."},
      {"drm.entropy_warmup", "0.2", "Fraction of training over which the entropy loss weights ramp from 0."},
      {"drm.vae_dim", "16", "Latent size of the VAE baseline."},
      {"drm.vae_sigma", "0.1", "Fixed likelihood std of the VAE baseline."},
      // rem
      {"rem.k_ratio", "0.16", "Positive-pair threshold as a fraction of T_max (80/500)."},
      {"rem.k_threshold", "0", "Explicit threshold in steps; 0 derives it from rem.k_ratio."},
      {"rem.hidden", "128", "Width of the two hidden layers."},
      {"rem.lr", "0.001", "Adam learning rate."},
      {"rem.batch_size", "256", "Pairs per minibatch."},
      {"rem.steps", "100", "Minibatch steps per training call (once per episode)."},
      {"rem.pairs_per_traj", "64", "Balanced pairs drawn per sampled trajectory."},
      {"rem.trajectories", "32", "Trajectories sampled from the buffer per training call."},
      {"rem.min_trajectories", "4", "Training is skipped until the buffer holds this many episodes."},
      {"rem.aggregator", "sum", "Plan objective aggregator: sum, l2 or min."},
      // curiosity
      {"curiosity.beta", "0.2", "Bonus offset beta."},
      {"curiosity.alpha", "0.8", "Bonus reachability weight alpha."},
      {"curiosity.capacity", "64", "Episodic memory capacity M."},
      {"curiosity.replace_prob", "0.5", "Probability a novel state replaces a random slot when memory is full."},
      {"curiosity.persistent", "false", "Keep the memory across episodes."},
      // planner
      {"planner.subgoals", "-1", "Number of subgoals N; -1 uses the layout default."},
      {"planner.population", "256", "CEM population."},
      {"planner.elites", "32", "CEM elite count."},
      {"planner.iterations", "10", "CEM iterations."},
      {"planner.std_floor", "0.001", "Minimum std of the fitted sampling distribution."},
      {"planner.min_latents", "500", "Latents needed before the sampling distribution is fitted."},
      {"planner.warm_start", "false", "Initialise replanning from the previous plan."},
      {"planner.extra_noise", "0.2", "Decaying extra CEM std (fraction of the initial std) over the first half of the iterations."},
      {"planner.project", "true", "Snap candidate latents onto the one-object planner manifold."},
      // policy
      {"policy.hidden", "256", "Width of actor and critic hidden layers."},
      {"policy.gamma", "0.98", "Discount factor."},
      {"policy.tau", "0.005", "Polyak rate of target networks."},
      {"policy.delay", "2", "Critic updates per actor update."},
      {"policy.target_noise", "0.2", "Target-policy smoothing noise std."},
      {"policy.noise_clip", "0.5", "Target-policy smoothing noise clip."},
      {"policy.explore_noise", "0.2", "Gaussian exploration noise std during collection."},
      {"policy.random_eps", "0.1", "Probability of a uniformly random action during collection."},
      {"policy.actor_lr", "0.001", "Actor Adam learning rate."},
      {"policy.critic_lr", "0.001", "Critic Adam learning rate."},
      {"policy.batch_size", "256", "Transitions per TD3 update."},
      {"policy.updates_per_step", "1", "TD3 updates per collected environment step."},
      {"policy.buffer_capacity", "200000", "Replay capacity in transitions."},
      {"policy.her_strategy", "mixed", "HER relabeling: future, generated or mixed."},
      {"policy.her_ratio", "0.8", "Fraction of sampled transitions that are relabeled."},
      {"policy.her_future_share", "0.8", "Share of future goals within mixed relabeling."},
      {"policy.her_keep_bonus", "false", "Add the collection-time bonus to relabeled rewards instead of the bare extrinsic reward."},
      {"policy.warmup_steps", "1000", "Uniform random actions before the actor is used."},
      // eval
      {"eval.goals", "30", "Evaluation goals per agent."},
      {"eval.goal_seed", "1000", "First goal seed; goals use consecutive seeds."},
      {"eval.threshold", "0.03", "Success distance, fraction of workspace extent."},
      {"eval.sweep_points", "100", "Points in a consistency sweep."},
      {"eval.heatmap_grid", "20", "Heatmap probe grid size per axis."},
  };
  return schema;
}

Config Config::parse(std::string_view text, std::string_view origin) {
  Config config;
  std::istringstream in{std::string(text)};
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']')
        throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) +
                          ": malformed section header");
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) +
                        ": expected 'key = value'");
    std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    if (!section.empty()) key = section + "." + key;
    config.set(key, value);
  }
  return config;
}

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

void Config::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

void Config::merge(const Config& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

bool Config::is_set(const std::string& key) const { return values_.count(key) != 0; }

std::string Config::raw(const std::string& key) const {
  const ConfigKey* spec = find_key(key);
  if (!spec) throw ConfigError("unknown config key '" + key + "'");
  auto it = values_.find(key);
  return it == values_.end() ? spec->default_value : it->second;
}

std::string Config::get_string(const std::string& key) const { return raw(key); }

double Config::get_double(const std::string& key) const {
  const std::string v = raw(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::int64_t Config::get_int(const std::string& key) const {
  const std::string v = raw(key);
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

bool Config::get_bool(const std::string& key) const {
  const std::string v = raw(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::map<std::string, std::string> Config::resolved() const {
  std::map<std::string, std::string> out;
  for (const auto& k : config_schema()) out[k.key] = raw(k.key);
  return out;
}

std::string Config::to_text() const {
  std::ostringstream out;
  std::string section;
  for (const auto& [key, value] : resolved()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << "\n";
      out << "[" << sec << "]\n";
      section = sec;
    }
    out << key.substr(dot + 1) << " = \"" << value << "\"\n";
  }
  return out.str();
}

void Config::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << to_text();
}

}  // namespace replan
