// Command-line entry point: one subcommand per workflow, all sharing the flat
// configuration format.

#include <cstdlib>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "replan/config.hpp"
#include "replan/drm.hpp"
#include "replan/errors.hpp"
#include "replan/evalkit.hpp"
#include "replan/jsonl.hpp"
#include "replan/rng.hpp"
#include "replan/trainer.hpp"

namespace {

using namespace replan;

constexpr int kUsageError = 2;
constexpr int kConfigError = 3;

struct Common {
  std::string config_path;
  std::int64_t seed = -1;
  std::string out;
  std::vector<std::string> overrides;
  int workers = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Configuration file (key = value, [section] headers)");
  cmd->add_option("--seed", c.seed, "Overrides run.seed");
  cmd->add_option("--out", c.out, "Overrides run.out (output directory)");
  cmd->add_option("--set", c.overrides, "Extra key=value overrides, repeatable");
  cmd->add_option("--workers", c.workers, "Overrides run.workers");
}

// CLI flag > config file > documented default.
Config resolve(const Common& c) {
  Config config;
  if (!c.config_path.empty()) config = Config::from_file(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed >= 0) config.set("run.seed", std::to_string(c.seed));
  if (!c.out.empty()) config.set("run.out", c.out);
  if (c.workers != 1) config.set("run.workers", std::to_string(c.workers));
  return config;
}

std::filesystem::path prepare_out(const Config& config) {
  const auto out = trainer::resolve_out(config);
  std::filesystem::create_directories(out);
  config.write(out / "config.toml");
  return out;
}

std::string schema_help() {
  std::ostringstream s;
  s << "Configuration keys (default in brackets):\n";
  for (const auto& k : config_schema())
    s << "  " << k.key << " [" << k.default_value << "]\n      " << k.doc << "\n";
  s << "Environment: REPLAN_OUT replaces the default output root 'runs'.\n";
  return s.str();
}

void print_json(const nlohmann::json& j) { std::cout << j.dump() << std::endl; }

std::vector<std::uint64_t> seed_list(const std::vector<std::int64_t>& seeds) {
  std::vector<std::uint64_t> out;
  for (auto s : seeds) out.push_back(std::uint64_t(s));
  if (out.empty()) out.push_back(0);
  return out;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " path is required");
  if (!std::filesystem::exists(path)) throw ConfigError(std::string(what) + " '" + path + "' does not exist");
}

int cmd_gen_data(const Config& config) {
  const auto out = prepare_out(config);
  const auto env = trainer::make_env(config, int(config.get_int("explore.t_max")));
  std::vector<env::Trajectory> all;
  std::stringstream layouts(config.get_string("explore.layouts"));
  std::string layout;
  std::vector<std::string> ids;
  while (std::getline(layouts, layout, ',')) ids.push_back(layout);
  const int episodes = int(config.get_int("explore.episodes"));
  const auto seed = std::uint64_t(config.get_int("run.seed"));
  for (std::size_t l = 0; l < ids.size(); ++l) {
    const int count = episodes / int(ids.size()) + (int(l) < episodes % int(ids.size()) ? 1 : 0);
    for (auto& t : env->scripted_explore(ids[l], count, derive_seed(seed, 0x6578000 + l), true))
      all.push_back(std::move(t));
  }
  env::export_dataset(all, out / "dataset");
  print_json({{"trajectories", all.size()}, {"dir", (out / "dataset").string()}});
  return 0;
}

int cmd_train_drm(const Config& config) {
  const auto out = prepare_out(config);
  const auto result = trainer::pretrain(config, out, [](const drm::LossRecord& r) {
    print_json({{"epoch", r.epoch}, {"step", r.step}, {"total", r.total}});
  });
  print_json({{"frames", result.frames},
              {"model", result.model_archive.string()},
              {"sampling", result.sampling_archive.string()},
              {"initial_total", result.train.initial_total},
              {"final_total", result.train.final_total}});
  return 0;
}

int cmd_train_agent(const Config& config, bool fresh) {
  const auto result = trainer::run(config, !fresh, [](const nlohmann::json& r) { print_json(r); });
  print_json({{"episodes", result.episodes}, {"checkpoint", result.checkpoint.string()}});
  return 0;
}

int cmd_eval(const Config& config, const std::string& checkpoint, const std::vector<std::int64_t>& seeds) {
  require_file(checkpoint, "checkpoint");
  const auto out = prepare_out(config);
  auto run = trainer::load_run(config, checkpoint);
  const auto env = trainer::make_env(config);
  const auto& s = run->agent().settings();
  const auto goals = evalkit::goal_seed_range(std::uint64_t(config.get_int("eval.goal_seed")),
                                              int(config.get_int("eval.goals")));
  const auto report = evalkit::success_rate(run->agent(), *env, s.layout, s.task, goals, seed_list(seeds),
                                            s.threshold, s.t_max);
  const nlohmann::json j = {{"layout", s.layout},
                            {"success_rate", report.rate},
                            {"mean_final_distance", report.mean_distance},
                            {"episodes", report.distances.size()},
                            {"distances", report.distances}};
  std::ofstream(out / "eval.json") << j.dump(2) << '\n';
  print_json({{"success_rate", report.rate}, {"mean_final_distance", report.mean_distance}});
  return 0;
}

int cmd_heatmap(const Config& config, const std::string& checkpoint) {
  require_file(checkpoint, "checkpoint");
  const auto out = prepare_out(config);
  auto run = trainer::load_run(config, checkpoint);
  const auto env = trainer::make_env(config);
  const auto& s = run->agent().settings();
  const auto& layout = env->layout(s.layout);
  env::EnvState ref;
  ref.layout_id = s.layout;
  ref.puck = {0.5 * (layout.puck_start.x0 + layout.puck_start.x1), 0.5 * (layout.puck_start.y0 + layout.puck_start.y1)};
  ref.robot = env->canonical_robot(layout, ref.puck);
  const auto report = evalkit::obstacle_margin(run->agent().rem().model(), run->agent().observer(), *env, ref,
                                               int(config.get_int("eval.heatmap_grid")), 0.03,
                                               config.get_double("env.oracle_grid_step"));
  rem::export_heatmap(report.heatmap, out / "heatmaps" / "heatmap.png", out / "heatmaps" / "heatmap.csv");
  print_json({{"mean_margin", report.mean_margin},
              {"matched_pairs", report.matched_pairs},
              {"png", (out / "heatmaps" / "heatmap.png").string()}});
  return 0;
}

int cmd_consistency(const Config& config, const std::string& model_path) {
  require_file(model_path, "model archive");
  const auto out = prepare_out(config);
  const auto archive = Archive::load(model_path);
  const auto kind = archive.get_string("model/kind");
  auto observer = load_observer(kind, &archive);
  const auto env = trainer::make_env(config);
  const int n = int(config.get_int("eval.sweep_points"));
  nlohmann::json j;
  for (auto [name, sweep] : {std::pair{"object_position", evalkit::Sweep::kObjectPosition},
                             std::pair{"robot_pose", evalkit::Sweep::kRobotPose}}) {
    const auto r = evalkit::consistency_metric(*observer, *env, sweep, n);
    j[name] = {{"rho_x", r.rho_x}, {"rho_y", r.rho_y}, {"degenerate", r.degenerate},
               {"coordinate", r.coordinate}, {"points", r.points}};
  }
  if (auto* d = dynamic_cast<DrmObserver*>(observer.get()))
    j["robot_latent_drift"] = evalkit::robot_latent_drift(*d, *env, n);
  std::ofstream(out / "consistency.json") << j.dump(2) << '\n';
  print_json(j);
  return 0;
}

int cmd_ablate(const Config& config, const std::vector<std::int64_t>& seeds, bool evaluate_only) {
  const auto out = prepare_out(config);
  const auto env = trainer::make_env(config);
  const auto layout = config.get_string("run.layout");
  const auto goals = evalkit::goal_seed_range(std::uint64_t(config.get_int("eval.goal_seed")),
                                              int(config.get_int("eval.goals")));
  std::vector<evalkit::AblationRow> rows;
  for (const auto& variant : evalkit::ablation_variants()) {
    evalkit::AblationRow row{variant, {}};
    std::vector<bool> hits;
    bool missing = false;
    for (const auto seed : seed_list(seeds)) {
      Config c = config;
      for (const auto& [k, v] : evalkit::variant_overrides(variant)) c.set(k, v);
      c.set("run.seed", std::to_string(seed));
      const auto dir = out / variant / ("seed" + std::to_string(seed));
      c.set("run.out", dir.string());
      c.set("run.drm_checkpoint", "");
      const auto checkpoint = dir / "checkpoints" / "state.rpa";
      if (!evaluate_only) {
        if (c.get_string("run.observation") != "state" && !std::filesystem::exists(dir / "drm.rpa"))
          trainer::pretrain(c, dir);
        trainer::run(c, true);
      }
      if (!std::filesystem::exists(checkpoint)) {
        missing = true;
        continue;
      }
      auto run = trainer::load_run(c, checkpoint);
      const auto& s = run->agent().settings();
      const auto r = evalkit::success_rate(run->agent(), *env, layout, s.task, goals, {seed}, s.threshold, s.t_max);
      hits.insert(hits.end(), r.successes.begin(), r.successes.end());
      print_json({{"variant", variant}, {"seed", seed}, {"success_rate", r.rate}});
    }
    if (!hits.empty() && !missing)
      row.success[layout] = double(std::count(hits.begin(), hits.end(), true)) / double(hits.size());
    rows.push_back(row);
  }
  const auto table = evalkit::ablation_table(rows, {layout});
  evalkit::write_ablation_csv(table, out / "ablation.csv");
  print_json({{"csv", (out / "ablation.csv").string()}, {"ordering_holds", table.ordering_holds},
              {"gaps", table.gaps}});
  return 0;
}

int cmd_decode_subgoals(const Config& config, const std::string& checkpoint, std::int64_t goal_seed) {
  require_file(checkpoint, "checkpoint");
  const auto out = prepare_out(config);
  auto run = trainer::load_run(config, checkpoint);
  auto& agent = run->agent();
  const auto env = trainer::make_env(config);
  const auto& s = agent.settings();
  if (s.subgoals < 1) throw ConfigError("decode-subgoals needs planner.subgoals >= 1");
  const auto spec = trainer::make_episode(*env, s.layout, s.task, std::uint64_t(goal_seed), true);
  auto& obs = agent.observer();
  const auto z0 = obs.encode({spec.start}, {&spec.start_image})[0];
  const auto zg = obs.encode({spec.goal}, {&spec.goal_image})[0];
  const auto scorer = agent.edge_scorer();
  const auto plan = planner::plan_subgoals(agent.plan_request(scorer), z0, zg, s.subgoals,
                                           derive_seed(std::uint64_t(goal_seed), 7));
  std::vector<Image> strip{spec.start_image};
  for (int n = 0; n < plan.count(); ++n) {
    const auto decoded = obs.decode(plan.subgoals[n], spec.start_image);
    if (!decoded) throw ConfigError("observation '" + obs.kind() + "' cannot decode latents");
    strip.push_back(from_tensor(*decoded));
  }
  strip.push_back(spec.goal_image);
  write_png(out / "plans" / "subgoals.png", hstack(strip));
  JsonlWriter(out / "plans" / "subgoals.jsonl", false).write(planner::plan_to_json(plan));
  print_json({{"objective", plan.objective}, {"png", (out / "plans" / "subgoals.png").string()}});
  return 0;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& kind, const std::string& png) {
  std::vector<std::filesystem::path> paths(inputs.begin(), inputs.end());
  for (const auto& p : paths) require_file(p.string(), "input");
  const auto stats = evalkit::plot_emit(paths, evalkit::parse_plot_kind(kind), png);
  print_json({{"series", stats.series}, {"points", stats.points}, {"malformed", stats.malformed}, {"png", png}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  CLI::App app{"Subgoal planning over learned scene representations"};
  app.footer(schema_help());
  app.require_subcommand(1);

  Common common;
  std::string checkpoint, model_path, plot_kind = "distance", plot_png = "plot.png";
  std::vector<std::string> plot_inputs;
  std::vector<std::int64_t> seeds;
  std::int64_t goal_seed = 1000;
  bool fresh = false, evaluate_only = false;

  auto* gen = app.add_subcommand("gen-data", "Scripted exploration dataset (PNG frames + meta.jsonl)");
  auto* drm = app.add_subcommand("train-drm", "Representation pretraining and planner sampling distribution");
  auto* agent = app.add_subcommand("train-agent", "Training loop with planning, curiosity and TD3");
  agent->add_flag("--fresh", fresh, "Ignore an existing checkpoint in the output directory");
  auto* eval = app.add_subcommand("eval", "Success rate over eval.goals goals");
  eval->add_option("--checkpoint", checkpoint, "Run checkpoint (checkpoints/state.rpa)")->required();
  eval->add_option("--seeds", seeds, "Evaluation seeds");
  auto* heat = app.add_subcommand("heatmap", "Reachability heatmap and obstacle margin");
  heat->add_option("--checkpoint", checkpoint, "Run checkpoint")->required();
  auto* cons = app.add_subcommand("consistency", "Rank correlation of latents with controlled sweeps");
  cons->add_option("--model", model_path, "Representation archive (drm.rpa)")->required();
  auto* abl = app.add_subcommand("ablate", "Train and evaluate the four ablation variants");
  abl->add_option("--seeds", seeds, "Training seeds");
  abl->add_flag("--evaluate-only", evaluate_only, "Skip training; evaluate existing variant runs");
  auto* dec = app.add_subcommand("decode-subgoals", "Plan once and render the subgoal strip");
  dec->add_option("--checkpoint", checkpoint, "Run checkpoint")->required();
  dec->add_option("--goal-seed", goal_seed, "Episode seed of the start/goal pair");
  auto* plot = app.add_subcommand("plot", "Learning curves or heatmap images");
  plot->add_option("--input", plot_inputs, "metrics.jsonl files (one per seed) or a heatmap CSV")->required();
  plot->add_option("--kind", plot_kind, "distance, success or heatmap");
  plot->add_option("--png", plot_png, "Output image");
  for (auto* cmd : {gen, drm, agent, eval, heat, cons, abl, dec, plot}) add_common(cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error kind=usage message=\"" << e.what() << "\"" << std::endl;
    return kUsageError;
  }

  try {
    const Config config = resolve(common);
    if (*gen) return cmd_gen_data(config);
    if (*drm) return cmd_train_drm(config);
    if (*agent) return cmd_train_agent(config, fresh);
    if (*eval) return cmd_eval(config, checkpoint, seeds);
    if (*heat) return cmd_heatmap(config, checkpoint);
    if (*cons) return cmd_consistency(config, model_path);
    if (*abl) return cmd_ablate(config, seeds, evaluate_only);
    if (*dec) return cmd_decode_subgoals(config, checkpoint, goal_seed);
    if (*plot) return cmd_plot(plot_inputs, plot_kind, plot_png);
  } catch (const ConfigError& e) {
    std::cerr << "error kind=" << e.kind() << " message=\"" << e.what() << "\"" << std::endl;
    return kConfigError;
  } catch (const Error& e) {
    std::cerr << "error kind=" << e.kind() << " message=\"" << e.what() << "\"" << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error kind=internal message=\"" << e.what() << "\"" << std::endl;
    return 1;
  }
  return kUsageError;
}
