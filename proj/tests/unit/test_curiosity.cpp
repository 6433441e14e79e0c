#include "testing.hpp"

#include "replan/config.hpp"
#include "replan/curiosity.hpp"
#include "replan/errors.hpp"

using namespace replan;
using namespace replan::curiosity;

TEST_CASE("bonus arithmetic with beta = 0.2, alpha = 0.8") {
  EpisodicMemory memory(4, 0);
  const auto z = torch::zeros({3});
  CHECK(compute_bonus(rem::constant_scorer(1.0), z, memory) == doctest::Approx(0.2));
  memory.update(torch::ones({3}), 0.1);
  CHECK(compute_bonus(rem::constant_scorer(1.0), z, memory) == doctest::Approx(-0.6));
  CHECK(compute_bonus(rem::constant_scorer(0.0), z, memory) == doctest::Approx(0.2));
}

TEST_CASE("bonus uses the maximum reachability over memory") {
  EpisodicMemory memory(8, 0);
  for (float v : {0.0f, 0.5f, 0.25f}) memory.update(torch::full({1}, v), 1.0);
  const rem::EdgeScorer identity = [](const torch::Tensor&, const torch::Tensor& m) {
    return m.squeeze(-1).to(torch::kFloat64);
  };
  CHECK(compute_bonus(identity, torch::zeros({1}), memory) == doctest::Approx(0.2 - 0.8 * 0.5));
}

TEST_CASE("property: bonus stays within [beta - alpha, beta]") {
  torch::manual_seed(0);
  EpisodicMemory memory(16, 1);
  const rem::EdgeScorer random_reach = [](const torch::Tensor& a, const torch::Tensor& m) {
    return torch::sigmoid((a * m).sum(-1) * 10).to(torch::kFloat64);
  };
  for (int i = 0; i < 200; ++i) {
    const auto z = torch::randn({5});
    const double b = compute_bonus(random_reach, z, memory);
    CHECK(b <= 0.2 + 1e-12);
    CHECK(b >= -0.6 - 1e-12);
    memory.update(z, b);
    CHECK(memory.size() <= 16);
  }
}

TEST_CASE("memory insertion threshold is strict") {
  EpisodicMemory memory(3, 0);
  CHECK_FALSE(memory.update(torch::zeros({2}), -0.1));
  CHECK(memory.size() == 0);
  CHECK_FALSE(memory.update(torch::zeros({2}), 0.0));
  CHECK(memory.size() == 0);
  CHECK(memory.update(torch::zeros({2}), 0.1));
  CHECK(memory.size() == 1);
}

TEST_CASE("full memory replaces a random slot about half the time") {
  int replaced = 0;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    EpisodicMemory memory(2, seed);
    memory.update(torch::zeros({1}), 1.0);
    memory.update(torch::zeros({1}), 1.0);
    CHECK(memory.full());
    if (memory.update(torch::ones({1}), 1.0)) ++replaced;
    CHECK(memory.size() == 2);
  }
  CHECK(replaced > 160);
  CHECK(replaced < 240);
  EpisodicMemory never(1, 0);
  never.update(torch::zeros({1}), 1.0);
  CHECK_FALSE(never.update(torch::ones({1}), 1.0, 0.0));
  CHECK_THROWS_AS(EpisodicMemory(0, 0), ParameterError);
}

TEST_CASE("extrinsic reward is the negative L1 distance") {
  CHECK(extrinsic_reward(torch::tensor({0.5, 0.2}), torch::tensor({0.5, 0.2})) == 0.0);
  CHECK(extrinsic_reward(torch::tensor({0.3, -0.1}, torch::kFloat64), torch::zeros({2}, torch::kFloat64)) ==
        doctest::Approx(-0.4));
  const auto a = torch::randn({6}, torch::kFloat64), b = torch::randn({6}, torch::kFloat64);
  const auto perm = torch::randperm(6);
  CHECK(extrinsic_reward(a.index_select(0, perm), b.index_select(0, perm)) ==
        doctest::Approx(extrinsic_reward(a, b)).epsilon(1e-12));
  const auto za = torch::randn({10, 6}), zb = torch::randn({10, 6});
  const auto batch = extrinsic_reward_batch(za, zb);
  for (int i = 0; i < 10; ++i) CHECK(batch[i].item<double>() == extrinsic_reward(za[i], zb[i]));
  CHECK_THROWS_AS(extrinsic_reward(torch::zeros({2}), torch::zeros({3})), ShapeError);
}

TEST_CASE("augmented reward and the alpha = 0 ablation") {
  CHECK(augment_reward(-0.4, 0.2) == doctest::Approx(-0.2));
  CHECK(augment_reward(-0.7, 0.0) == -0.7);
  Config c;
  c.set("run.use_cm", "false");
  const auto cfg = CuriosityConfig::from_config(c);
  CHECK(cfg.alpha == 0.0);
  CHECK(cfg.beta == 0.0);
  EpisodicMemory memory(4, 0);
  memory.update(torch::zeros({1}), 1.0);
  const double b = compute_bonus(rem::constant_scorer(0.9), torch::zeros({1}), memory, cfg.beta, cfg.alpha);
  CHECK(augment_reward(-1.25, b) == -1.25);
  const auto defaults = CuriosityConfig::from_config(Config{});
  CHECK(defaults.beta == doctest::Approx(0.2));
  CHECK(defaults.alpha == doctest::Approx(0.8));
}

TEST_CASE("episode reset and persistent memory") {
  EpisodicMemory memory(4, 0);
  memory.update(torch::zeros({1}), 1.0);
  reset_memory(memory, true);
  CHECK(memory.size() == 1);
  reset_memory(memory, false);
  CHECK(memory.size() == 0);
  CHECK(compute_bonus(rem::constant_scorer(1.0), torch::zeros({1}), memory) == doctest::Approx(0.2));
}

TEST_CASE("memory persistence round trip") {
  EpisodicMemory memory(4, 3);
  for (int i = 0; i < 3; ++i) memory.update(torch::full({2}, float(i)), 1.0);
  Archive a;
  memory.save(a, "mem/");
  EpisodicMemory back(4, 9);
  back.load(a, "mem/");
  REQUIRE(back.size() == 3);
  CHECK(torch::equal(back.stacked(), memory.stacked()));
  Archive b;
  back.save(b, "mem/");
  CHECK(a == b);
}
