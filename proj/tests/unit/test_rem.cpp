#include "testing.hpp"

#include <cmath>
#include <filesystem>

#include "replan/env.hpp"
#include "replan/errors.hpp"
#include "replan/observer.hpp"
#include "replan/rem.hpp"

using namespace replan;
using namespace replan::rem;

namespace {

// Latent row t holds t itself, so pair deltas can be read back from latents.
LatentTrajectory counting_trajectory(int T) {
  LatentTrajectory t;
  t.latents = torch::arange(T, torch::kFloat32).unsqueeze(1);
  for (int i = 0; i < T; ++i) t.steps.push_back(i);
  return t;
}

std::vector<LatentTrajectory> scripted_state_trajectories(int count, std::uint64_t seed) {
  env::EnvConfig ec;
  ec.t_max = 200;
  env::PusherEnv env(ec);
  StateObserver observer;
  std::vector<LatentTrajectory> out;
  for (const auto& traj : env.scripted_explore("pusher2", count, seed, false)) {
    std::vector<env::EnvState> states;
    LatentTrajectory t;
    for (const auto& f : traj.frames) {
      states.push_back(f.state);
      t.steps.push_back(f.step);
    }
    t.latents = observer.encode(states, {});
    out.push_back(t);
  }
  return out;
}

}  // namespace

TEST_CASE("pair labels follow the step threshold") {
  CHECK(k_threshold(500) == 80);
  CHECK(k_threshold(200) == 32);
  CHECK(k_threshold(3) == 1);
  CHECK(pair_label(20 - 10, 80) == 1);
  CHECK(pair_label(210 - 10, 80) == 0);
  CHECK(pair_label(80, 80) == 0);
  CHECK(pair_label(79, 80) == 1);
  CHECK_THROWS_AS(k_threshold(0), ConfigError);
}

TEST_CASE("make_pairs: balanced, ordered, labelled by delta") {
  const int k = 10;
  const auto pairs = make_pairs({counting_trajectory(60), counting_trajectory(40)}, k, 50, 3);
  REQUIRE(pairs.size() == 100);
  CHECK(pairs.labels.sum().item<double>() == doctest::Approx(50));
  const auto d = (pairs.z_j - pairs.z_i).squeeze(1);
  for (std::int64_t n = 0; n < pairs.size(); ++n) {
    CHECK(d[n].item<float>() > 0.0f);
    CHECK(int(d[n].item<float>()) == pairs.deltas[n]);
    CHECK(pairs.labels[n].item<float>() == float(pair_label(pairs.deltas[n], k)));
  }
  CHECK(pairs.short_trajectories == 0);
  const auto again = make_pairs({counting_trajectory(60), counting_trajectory(40)}, k, 50, 3);
  CHECK(torch::equal(pairs.z_i, again.z_i));
}

TEST_CASE("make_pairs: short trajectories give positives only and are counted") {
  const auto pairs = make_pairs({counting_trajectory(8)}, 10, 20, 1);
  CHECK(pairs.short_trajectories == 1);
  CHECK(pairs.size() == 10);
  CHECK(pairs.labels.min().item<float>() == 1.0f);
  CHECK_THROWS_AS(make_pairs({counting_trajectory(8)}, 0, 20, 1), ParameterError);
}

TEST_CASE("make_pairs: deltas are uniform over admissible pairs") {
  // Admissible negative pairs with delta d number T - d, so small deltas
  // dominate; compare the empirical mean delta with the exact one.
  const int T = 50, k = 10;
  std::vector<LatentTrajectory> trajs(40, counting_trajectory(T));
  const auto pairs = make_pairs(trajs, k, 200, 9);
  double num = 0, den = 0;
  for (int d = k; d < T; ++d) {
    num += d * double(T - d);
    den += double(T - d);
  }
  double sum = 0;
  int count = 0;
  for (std::size_t n = 0; n < pairs.deltas.size(); ++n)
    if (pairs.deltas[n] >= k) {
      sum += pairs.deltas[n];
      ++count;
    }
  CHECK(sum / count == doctest::Approx(num / den).epsilon(0.02));
}

TEST_CASE("predict: range, determinism, shape errors, broadcasting") {
  torch::manual_seed(0);
  ReachModel model(3, 16);
  const auto a = torch::randn({64, 3}) * 50, b = torch::randn({64, 3}) * 50;
  const auto p = predict(model, a, b);
  CHECK(p.min().item<double>() >= 0.0);
  CHECK(p.max().item<double>() <= 1.0);
  CHECK(torch::equal(p, predict(model, a, b)));
  CHECK(predict(model, a[0], b).size(0) == 64);
  CHECK(predict(model, a[0], b[0]).dim() == 0);
  CHECK_THROWS_AS(predict(model, torch::zeros({2, 4}), torch::zeros({2, 4})), ShapeError);
}

TEST_CASE("bce loss: values and gradient") {
  const auto one = torch::tensor({1.0}, torch::kFloat64);
  CHECK(bce_loss(torch::tensor({1.0 - kBceEps}, torch::kFloat64), one).item<double>() < 1e-6);
  CHECK(bce_loss(torch::tensor({0.5}, torch::kFloat64), one).item<double>() == doctest::Approx(std::log(2.0)));
  CHECK(bce_loss(torch::tensor({0.5}, torch::kFloat64), torch::tensor({0.0}, torch::kFloat64)).item<double>() ==
        doctest::Approx(std::log(2.0)));
  CHECK(std::isfinite(bce_loss(torch::tensor({0.0}), torch::tensor({1.0})).item<double>()));

  for (double y : {0.0, 1.0}) {
    for (double x : {0.13, 0.5, 0.91}) {
      auto p = torch::tensor({x}, torch::kFloat64).requires_grad_(true);
      const auto label = torch::tensor({y}, torch::kFloat64);
      bce_loss(p, label).sum().backward();
      const double h = 1e-6;
      const double fd = (bce_loss(torch::tensor({x + h}, torch::kFloat64), label).item<double>() -
                         bce_loss(torch::tensor({x - h}, torch::kFloat64), label).item<double>()) / (2 * h);
      const double g = p.grad().item<double>();
      CHECK(std::abs(g - fd) / std::abs(fd) < 1e-5);
    }
  }
}

TEST_CASE("episodic reachability and plan objective with a constant scorer") {
  const auto scorer = constant_scorer(0.8);
  const auto z0 = torch::zeros({2}), zg = torch::ones({2});
  const auto r = episodic_reachability(scorer, z0, torch::rand({3, 2}), zg);
  CHECK(r.edges.size(0) == 4);
  CHECK(r.total == doctest::Approx(3.2));
  const auto none = episodic_reachability(scorer, z0, torch::zeros({0, 2}), zg);
  CHECK(none.edges.size(0) == 1);
  const auto edges = torch::full({4}, 0.8, torch::kFloat64);
  CHECK(plan_objective(edges, Aggregator::kSum).item<double>() == doctest::Approx(-3.2));
  CHECK(plan_objective(edges, Aggregator::kMin).item<double>() == doctest::Approx(-0.8));
  CHECK(plan_objective(edges, Aggregator::kL2).item<double>() == doctest::Approx(-1.6));
  CHECK(plan_objective(torch::zeros({4}), Aggregator::kSum).item<double>() == 0.0);
  CHECK(plan_objective(scorer, z0, torch::rand({3, 2}), zg) == doctest::Approx(-3.2));
  CHECK(parse_aggregator("l2") == Aggregator::kL2);
  CHECK(aggregator_name(Aggregator::kMin) == "min");
  CHECK_THROWS_AS(parse_aggregator("max"), ConfigError);
}

TEST_CASE("episodic reachability is order sensitive") {
  const EdgeScorer step = [](const torch::Tensor& a, const torch::Tensor& b) {
    return ((b - a).sum(-1).abs() <= 1.0).to(torch::kFloat64);
  };
  const auto z0 = torch::tensor({0.0f}), zg = torch::tensor({3.0f});
  const auto ordered = episodic_reachability(step, z0, torch::tensor({{1.0f}, {2.0f}}), zg);
  const auto swapped = episodic_reachability(step, z0, torch::tensor({{2.0f}, {1.0f}}), zg);
  CHECK(ordered.total == doctest::Approx(3.0));
  CHECK(swapped.total == doctest::Approx(1.0));
  const auto batch = plan_edges(step, z0, torch::tensor({{{1.0f}, {2.0f}}, {{2.0f}, {1.0f}}}), zg);
  CHECK(batch.size(0) == 2);
  CHECK(batch.size(1) == 3);
  CHECK(batch.sum(1)[0].item<double>() == doctest::Approx(3.0));
}

TEST_CASE("negative L2 scorer") {
  const auto s = negative_l2_scorer();
  CHECK(s(torch::tensor({{0.0f, 0.0f}}), torch::tensor({{3.0f, 4.0f}}))[0].item<double>() == doctest::Approx(-5.0));
}

TEST_CASE("REM learns linearly separable synthetic pairs") {
  torch::manual_seed(1);
  auto make = [](int n, std::uint64_t seed) {
    torch::manual_seed(seed);
    PairSet p;
    p.z_i = torch::rand({n, 2});
    p.z_j = torch::rand({n, 2});
    p.labels = ((p.z_j - p.z_i).select(1, 0) < 0.1).to(torch::kFloat32);
    for (int i = 0; i < n; ++i) p.deltas.push_back(p.labels[i].item<float>() > 0 ? 1 : 100);
    return p;
  };
  RemConfig cfg;
  cfg.k = 10;
  cfg.hidden = 32;
  RemTrainer trainer(2, cfg, 4);
  const auto m = trainer.fit(make(2000, 2), 1500, 5);
  CHECK(m.last_loss < m.first_loss);
  CHECK(evaluate_pairs(trainer.model(), make(1000, 3), 10).accuracy >= 0.95);
}

TEST_CASE("REM on scripted trajectories: loss falls, self pairs reachable, bins ordered") {
  const auto trajs = scripted_state_trajectories(30, 12);
  RemConfig cfg;
  cfg.k = k_threshold(200);
  cfg.steps = 100;
  RemTrainer trainer(4, cfg, 6);
  const auto first = trainer.train(trajs, 1);
  RemMetrics last;
  for (int i = 0; i < 100; ++i) last = trainer.train(trajs, 2 + i);
  CHECK(last.last_loss < first.first_loss);
  std::vector<torch::Tensor> rows;
  for (int i = 0; i < 100; ++i) rows.push_back(trajs[i % 30].latents[(i * 37) % 200]);
  const auto z = torch::stack(rows);
  CHECK(predict(trainer.model(), z, z).mean().item<double>() > 0.9);
  const auto acc = evaluate_pairs(trainer.model(), make_pairs(trajs, cfg.k, 64, 99), cfg.k);
  REQUIRE(acc.bin_means.size() == 5);
  CHECK(acc.bin_means.front() > acc.bin_means.back());
}

TEST_CASE("REM skips training until enough trajectories exist") {
  RemConfig cfg;
  cfg.min_trajectories = 4;
  RemTrainer trainer(1, cfg, 0);
  CHECK(trainer.train({counting_trajectory(50)}, 0).skipped);
}

TEST_CASE("heatmap values, invalid probes and export") {
  torch::manual_seed(2);
  ReachModel model(2, 8);
  const auto probes = torch::rand({9, 2});
  std::vector<bool> valid(9, true);
  valid[4] = false;
  const auto m = heatmap(model, torch::rand({2}), probes, valid);
  CHECK(m.size(0) == 3);
  CHECK(std::isnan(m[1][1].item<double>()));
  CHECK(m[0][0].item<double>() >= 0.0);
  CHECK(m[0][0].item<double>() <= 1.0);
  const auto dir = std::filesystem::temp_directory_path();
  export_heatmap(m, dir / "replan_heat.png", dir / "replan_heat.csv", 4);
  CHECK(read_png(dir / "replan_heat.png").width == 12);
  CHECK_THROWS_AS(heatmap(model, torch::rand({2}), torch::rand({8, 2}), std::vector<bool>(8, true)), ShapeError);
}

TEST_CASE("REM persistence round trip") {
  RemConfig cfg;
  cfg.hidden = 8;
  RemTrainer a(3, cfg, 1);
  Archive ar;
  a.save(ar, "rem/");
  RemTrainer b(3, cfg, 2);
  b.load(ar, "rem/");
  Archive br;
  b.save(br, "rem/");
  CHECK(ar == br);

  Archive m;
  save_rem(m, a.model());
  auto loaded = load_rem(m);
  CHECK(loaded->dim() == 3);
  CHECK(loaded->hidden() == 8);
  const auto z = torch::rand({5, 3});
  CHECK(torch::equal(predict(loaded, z, z), predict(a.model(), z, z)));
}
