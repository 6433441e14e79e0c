#include "testing.hpp"

#include <cstdlib>
#include <fstream>

#include "replan/archive.hpp"
#include "replan/config.hpp"
#include "replan/errors.hpp"
#include "replan/observer.hpp"
#include "replan/trainer.hpp"
#include "replan/vae.hpp"

using namespace replan;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("replan_test_" + name);
  fs::remove_all(dir);
  return dir;
}

// State observer, tiny networks and short episodes.
Config tiny_run(const fs::path& out) {
  Config c;
  c.set("run.out", out.string());
  c.set("run.observation", "state");
  c.set("run.layout", "pusher1");
  c.set("run.episodes", "4");
  c.set("run.checkpoint_every", "2");
  c.set("run.seed", "3");
  c.set("env.t_max", "24");
  c.set("explore.episodes", "6");
  c.set("explore.t_max", "20");
  c.set("planner.subgoals", "2");
  c.set("planner.population", "16");
  c.set("planner.elites", "4");
  c.set("planner.iterations", "2");
  c.set("policy.hidden", "32");
  c.set("policy.batch_size", "16");
  c.set("policy.warmup_steps", "30");
  c.set("rem.hidden", "16");
  c.set("rem.steps", "4");
  c.set("rem.batch_size", "32");
  c.set("rem.min_trajectories", "2");
  return c;
}

std::vector<std::string> lines(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("settings resolve subgoals and validate names") {
  Config c;
  auto s = trainer::Settings::from_config(c);
  CHECK(s.layout == "pusher2");
  CHECK(s.subgoals == 4);
  CHECK(s.task == trainer::Task::kPush);
  c.set("run.layout", "pusher1");
  CHECK(trainer::Settings::from_config(c).subgoals == 3);
  c.set("run.use_planner", "false");
  CHECK(trainer::Settings::from_config(c).subgoals == 0);
  c.set("run.observation", "pixels");
  CHECK_THROWS_AS(trainer::Settings::from_config(c), ConfigError);
  CHECK_THROWS_AS(trainer::parse_task("throw"), ConfigError);
}

TEST_CASE("output root follows REPLAN_OUT unless run.out is set") {
  Config c;
  ::setenv("REPLAN_OUT", "/tmp/replan_root", 1);
  CHECK(trainer::resolve_out(c) == fs::path("/tmp/replan_root/default"));
  ::unsetenv("REPLAN_OUT");
  CHECK(trainer::resolve_out(c) == fs::path("runs/default"));
  c.set("run.out", "elsewhere");
  CHECK(trainer::resolve_out(c) == fs::path("elsewhere"));
}

TEST_CASE("episode specs") {
  Config c;
  const auto env = trainer::make_env(c);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto reach = trainer::make_episode(*env, "pusher2", trainer::Task::kReach, seed, false);
    CHECK(env->robot_free(env->layout("pusher2"), reach.goal.robot));
    CHECK(reach.goal.puck.x == reach.start.puck.x);
    CHECK(reach.goal.puck.y == reach.start.puck.y);
    const auto a = trainer::make_episode(*env, "pusher2", trainer::Task::kPush, seed, false);
    const auto b = trainer::make_episode(*env, "pusher2", trainer::Task::kPush, seed, true);
    CHECK(a.goal.puck.x == b.goal.puck.x);
    CHECK(a.start.robot.y == b.start.robot.y);
    CHECK(a.start_image.data.empty());
    CHECK(b.goal_image.height == env->config().resolution);
  }
  env::EnvState s, g;
  s.puck = {0.1, 0.1};
  g.puck = {0.4, 0.5};
  s.robot = {0.2, 0.2};
  g.robot = {0.2, 0.2};
  CHECK(trainer::task_distance(trainer::Task::kPush, s, g) == doctest::Approx(0.5));
  CHECK(trainer::task_distance(trainer::Task::kReach, s, g) == 0.0);
  CHECK(trainer::make_env(c, 17)->config().t_max == 17);
}

TEST_CASE("state observer") {
  StateObserver obs;
  env::EnvState s;
  s.robot = {0.25, 0.5};
  s.puck = {0.75, 0.125};
  const auto z = obs.encode({s}, {});
  REQUIRE(z.sizes() == torch::IntArrayRef{1, 4});
  CHECK(z[0][0].item<double>() == doctest::Approx(0.25));
  CHECK(z[0][3].item<double>() == doctest::Approx(0.125));
  CHECK(torch::equal(obs.project(torch::tensor({-1.0f, 0.5f, 2.0f, 1.0f})),
                     torch::tensor({0.0f, 0.5f, 1.0f, 1.0f})));
  CHECK(load_observer("state", nullptr)->dim() == 4);
  CHECK_THROWS_AS(load_observer("sonar", nullptr), ConfigError);
}

TEST_CASE("vae shapes, training and persistence") {
  torch::manual_seed(0);
  vae::VaeConfig cfg;
  cfg.resolution = 16;
  cfg.latent_dim = 4;
  cfg.channels = 8;
  vae::VaeModel model(cfg);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(1);
  const auto images = torch::rand({24, 3, 16, 16}, gen);
  const auto out = model->forward(images.slice(0, 0, 5), &gen);
  CHECK(out.mu.sizes() == torch::IntArrayRef{5, 4});
  CHECK(out.reconstruction.sizes() == torch::IntArrayRef{5, 3, 16, 16});
  CHECK(torch::equal(model->latents(images.slice(0, 0, 5)), model->forward(images.slice(0, 0, 5), nullptr).mu));

  drm::TrainConfig train;
  train.epochs = 6;
  train.batch_size = 8;
  train.min_frames = 8;
  const auto result = vae::train_vae(model, images, train);
  CHECK(result.final_total < result.initial_total);

  Archive archive;
  vae::save_vae(archive, model);
  auto loaded = vae::load_vae(archive);
  CHECK(torch::equal(loaded->latents(images), model->latents(images)));
  VaeObserver obs(loaded);
  CHECK(obs.dim() == 4);
  CHECK(obs.kind() == "vae");
}

TEST_CASE("drm observer exposes the planner latent") {
  drm::DrmConfig cfg;
  cfg.resolution = 32;
  cfg.grid = 2;
  cfg.glimpse = 8;
  cfg.z_what_dim = 4;
  cfg.z_bg_dim = 4;
  cfg.z_ro_m_dim = 4;
  cfg.z_ro_rgb_dim = 4;
  cfg.channels = 4;
  drm::DrmModel model(cfg);
  DrmObserver obs(model);
  CHECK(obs.dim() == cfg.planner_dim());
  const auto env = trainer::make_env(Config{});
  const auto s = env->reset("open", 0).first;
  const auto img = env->render(s, 32);
  const auto z = obs.encode_one(s, img);
  CHECK(z.numel() == cfg.planner_dim());
  const auto p = obs.project(z.unsqueeze(0));
  CHECK(torch::allclose(obs.project(p), p));
  CHECK(obs.decode(z, img).has_value());
}

TEST_CASE("training loop: segments, checkpoints and resume") {
  const auto dir_a = scratch_dir("loop_a");
  const auto dir_b = scratch_dir("loop_b");
  auto config_a = tiny_run(dir_a);
  int seen = 0;
  const auto result = trainer::run(config_a, false, [&](const nlohmann::json& r) {
    CHECK(r["replans"].get<int>() == 2);
    CHECK(r["steps"].get<int>() == 24);
    ++seen;
  });
  CHECK(seen == 4);
  CHECK(result.episodes == 4);
  CHECK(fs::exists(result.checkpoint));
  CHECK(fs::exists(dir_a / "config.toml"));
  CHECK(fs::exists(dir_a / "plans" / "episode_0.jsonl"));

  // Stop after two episodes, then resume to four.
  auto config_b = tiny_run(dir_b);
  config_b.set("run.episodes", "2");
  trainer::run(config_b);
  config_b.set("run.episodes", "4");
  trainer::run(config_b);
  CHECK(lines(dir_a / "metrics.jsonl") == lines(dir_b / "metrics.jsonl"));

  // A shared checkpoint evaluates identically twice.
  auto run1 = trainer::load_run(config_a, result.checkpoint);
  auto run2 = trainer::load_run(config_a, result.checkpoint);
  CHECK(run1->episode() == 4);
  CHECK(run1->buffer().transitions() == 4 * 24);
  const auto env = trainer::make_env(config_a);
  for (std::uint64_t g = 0; g < 2; ++g) {
    const auto spec = trainer::make_episode(*env, "pusher1", trainer::Task::kPush, g, false);
    run1->agent().begin(spec, g);
    run2->agent().begin(spec, g);
    for (int t = 0; t < 24; ++t) {
      const auto a = run1->agent().act(spec.start, Image{});
      const auto b = run2->agent().act(spec.start, Image{});
      CHECK(a.x == b.x);
      CHECK(a.y == b.y);
    }
  }

  Archive archive = Archive::load(result.checkpoint);
  archive.put_int("run/version", 99);
  const auto bad = dir_a / "bad.rpa";
  archive.save(bad);
  try {
    trainer::load_run(config_a, bad);
    FAIL("expected a version error");
  } catch (const VersionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("99") != std::string::npos);
    CHECK(msg.find("1") != std::string::npos);
  }
  CHECK_THROWS_AS(trainer::load_run(config_a, dir_a / "missing.rpa"), IoError);
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("missing representation archive names the path") {
  const auto dir = scratch_dir("no_drm");
  auto c = tiny_run(dir);
  c.set("run.observation", "drm");
  c.set("run.drm_checkpoint", (dir / "nowhere.rpa").string());
  try {
    trainer::run(c, false);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("nowhere.rpa") != std::string::npos);
  }
  fs::remove_all(dir);
}
