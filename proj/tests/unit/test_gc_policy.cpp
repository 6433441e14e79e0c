#include "testing.hpp"

#include "replan/archive.hpp"
#include "replan/curiosity.hpp"
#include "replan/errors.hpp"
#include "replan/gc_policy.hpp"
#include "replan/planner.hpp"
#include "replan/rng.hpp"

using namespace replan;
using namespace replan::policy;

namespace {

Episode random_episode(int length, int dim, std::uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  EpisodeBuilder builder;
  builder.start(torch::randn({dim}, gen));
  const auto goal = torch::randn({dim}, gen);
  for (int t = 0; t < length; ++t) {
    const auto a = torch::rand({2}, gen) * 2 - 1;
    builder.add({a[0].item<float>(), a[1].item<float>()}, goal, torch::randn({dim}, gen), -0.1 * t,
                t + 1 == length);
  }
  return builder.finish();
}

Td3Config small_config() {
  Td3Config c;
  c.hidden = 64;
  c.batch_size = 64;
  return c;
}

Batch bandit_batch(int n, int dim, std::mt19937_64& rng, const std::array<float, 2>& best) {
  Batch b;
  b.z = torch::zeros({n, dim});
  b.z_next = torch::zeros({n, dim});
  b.goal = torch::zeros({n, dim});
  b.action = torch::empty({n, 2});
  b.reward = torch::empty({n});
  b.done = torch::ones({n});
  for (int i = 0; i < n; ++i) {
    const double ax = uniform(rng) * 2 - 1, ay = uniform(rng) * 2 - 1;
    b.action[i][0] = ax;
    b.action[i][1] = ay;
    b.reward[i] = -std::hypot(ax - best[0], ay - best[1]);
  }
  return b;
}

std::vector<torch::Tensor> snapshot(torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  return out;
}

bool same(const std::vector<torch::Tensor>& a, torch::nn::Module& m) {
  const auto params = m.parameters();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!torch::equal(a[i], params[i].detach())) return false;
  return true;
}

}  // namespace

TEST_CASE("episode builder logs extrinsic plus bonus") {
  const auto ep = random_episode(6, 5, 1);
  REQUIRE(ep.length() == 6);
  CHECK(ep.latents.size(0) == 7);
  for (int t = 0; t < ep.length(); ++t) {
    const auto tr = ep.transition(t);
    const double r_e = curiosity::extrinsic_reward(tr.z_next, tr.goal);
    CHECK(tr.extrinsic == doctest::Approx(r_e));
    CHECK(tr.reward == doctest::Approx(r_e + tr.bonus));
    CHECK(torch::equal(tr.z_next, ep.latents[t + 1]));
  }
  CHECK(ep.transition(5).done);
  EpisodeBuilder unstarted;
  CHECK_THROWS_AS(unstarted.add({0, 0}, torch::zeros({5}), torch::zeros({5}), 0.0), ParameterError);
}

TEST_CASE("her strategy names") {
  CHECK(parse_her_strategy("mixed") == HerStrategy::kMixed);
  CHECK(parse_her_strategy("future") == HerStrategy::kFuture);
  CHECK(parse_her_strategy("none") == HerStrategy::kNone);
  CHECK_THROWS_AS(parse_her_strategy("past"), ConfigError);
}

TEST_CASE("future relabeling never looks back") {
  HerConfig her;
  her.strategy = HerStrategy::kFuture;
  her.ratio = 1.0;
  auto rng = make_rng(3, 0);
  for (int trial = 0; trial < 2000; ++trial) {
    const int length = 1 + int(trial % 17);
    const int t = int(trial % length);
    const auto r = draw_relabel(her, t, length, rng);
    REQUIRE(r.relabeled);
    CHECK_FALSE(r.generated);
    CHECK(r.goal_index >= t + 1);
    CHECK(r.goal_index <= length);
  }
}

TEST_CASE("mixed relabeling at ratio 0.8 over 1000 transitions") {
  const auto ep = random_episode(1000, 4, 2);
  auto dist = planner::SamplingDistribution::unit(4);
  HerConfig her;
  her.strategy = HerStrategy::kMixed;
  her.ratio = 0.8;
  her.distribution = &dist;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const auto out = her_relabel(ep, her, seed);
    REQUIRE(out.size() == 1000);
    int changed = 0;
    for (std::size_t t = 0; t < out.size(); ++t)
      if (!torch::equal(out[t].goal, ep.goals[std::int64_t(t)])) ++changed;
    CHECK(changed >= 760);
    CHECK(changed <= 840);
  }
}

TEST_CASE("relabeled rewards are recomputed against the new goal") {
  const auto ep = random_episode(50, 6, 4);
  auto dist = planner::SamplingDistribution::unit(6);
  HerConfig her;
  her.ratio = 1.0;
  her.distribution = &dist;
  for (auto s : {HerStrategy::kFuture, HerStrategy::kGenerated, HerStrategy::kMixed}) {
    her.strategy = s;
    for (const auto& tr : her_relabel(ep, her, 9)) {
      CHECK(tr.reward == doctest::Approx(curiosity::extrinsic_reward(tr.z_next, tr.goal)));
      CHECK(tr.extrinsic == tr.reward);
    }
  }
  her.strategy = HerStrategy::kFuture;
  her.keep_bonus = true;
  for (const auto& tr : her_relabel(ep, her, 9))
    CHECK(tr.reward == doctest::Approx(curiosity::extrinsic_reward(tr.z_next, tr.goal) + tr.bonus));
}

TEST_CASE("final transition relabeled with its own latent earns zero") {
  const auto ep = random_episode(8, 3, 5);
  HerConfig her;
  her.strategy = HerStrategy::kFuture;
  her.ratio = 1.0;
  const auto out = her_relabel(ep, her, 0);
  const auto& last = out.back();
  CHECK(torch::equal(last.goal, ep.latents[8]));
  CHECK(last.reward == 0.0);
  CHECK(her_relabel(Episode{}, her, 0).empty());
}

TEST_CASE("generated relabeling needs a distribution") {
  HerConfig her;
  her.strategy = HerStrategy::kGenerated;
  her.ratio = 1.0;
  auto rng = make_rng(0, 0);
  CHECK_THROWS_AS(draw_relabel(her, 0, 5, rng), ParameterError);
}

TEST_CASE("replay buffer capacity and sampling") {
  ReplayBuffer buffer(25);
  for (int e = 0; e < 5; ++e) buffer.add(random_episode(10, 4, 10 + e));
  CHECK(buffer.transitions() <= 25);
  CHECK(buffer.episodes() == 2);
  CHECK(torch::equal(buffer.episode(1).latents, random_episode(10, 4, 14).latents));
  CHECK(buffer.all_latents().size(0) == 22);
  const auto traj = buffer.trajectories();
  REQUIRE(traj.size() == 2);
  CHECK(traj[0].steps.back() == 10);

  HerConfig none;
  none.strategy = HerStrategy::kNone;
  auto rng = make_rng(1, 0);
  const auto b = buffer.sample(64, none, rng);
  CHECK(b.relabeled == 0);
  CHECK(b.z.sizes() == torch::IntArrayRef{64, 4});
  CHECK(b.action.sizes() == torch::IntArrayRef{64, 2});
  const auto expected = curiosity::extrinsic_reward_batch(b.z_next, b.goal);
  CHECK_FALSE(torch::allclose(b.reward.to(torch::kFloat64), expected));  // logged rewards carry the bonus

  HerConfig future;
  future.strategy = HerStrategy::kFuture;
  future.ratio = 1.0;
  const auto rb = buffer.sample(64, future, rng);
  CHECK(rb.relabeled == 64);
  CHECK(torch::allclose(rb.reward.to(torch::kFloat64), curiosity::extrinsic_reward_batch(rb.z_next, rb.goal),
                        1e-5, 1e-5));

  ReplayBuffer empty(10);
  CHECK_THROWS_AS(empty.sample(4, none, rng), ParameterError);
  CHECK_THROWS_AS(ReplayBuffer(0), ConfigError);
  CHECK_THROWS_AS(buffer.add(random_episode(3, 5, 0)), ShapeError);
}

TEST_CASE("replay buffer round trip") {
  ReplayBuffer buffer(100);
  for (int e = 0; e < 3; ++e) buffer.add(random_episode(7, 3, 20 + e));
  Archive archive;
  buffer.save(archive, "rb/");
  ReplayBuffer loaded(1);
  loaded.load(archive, "rb/");
  CHECK(loaded.capacity() == 100);
  CHECK(loaded.transitions() == buffer.transitions());
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(torch::equal(loaded.episode(e).latents, buffer.episode(e).latents));
    CHECK(loaded.episode(e).reward == buffer.episode(e).reward);
    CHECK(loaded.episode(e).done == buffer.episode(e).done);
  }
}

TEST_CASE("act respects bounds and noise") {
  Td3 td3(4, small_config(), 0);
  const auto z = torch::randn({4});
  const auto g = torch::randn({4});
  auto r1 = make_rng(1, 0), r2 = make_rng(2, 0);
  CHECK(td3.act(z, g, 0.0, r1) == td3.act(z, g, 0.0, r2));
  auto r3 = make_rng(1, 0), r4 = make_rng(2, 0);
  CHECK(td3.act(z, g, 0.3, r3) != td3.act(z, g, 0.3, r4));
  auto rng = make_rng(5, 0);
  for (int i = 0; i < 200; ++i) {
    const auto a = td3.act(torch::randn({4}) * 10, g, 5.0, rng);
    for (float v : a) {
      CHECK(v >= -1.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("terminal transitions do not bootstrap") {
  Td3 td3(3, small_config(), 0);
  Batch b;
  b.z = torch::randn({16, 3});
  b.z_next = torch::randn({16, 3}) * 100;
  b.goal = torch::randn({16, 3});
  b.action = torch::zeros({16, 2});
  b.reward = torch::zeros({16});
  b.done = torch::ones({16});
  CHECK(torch::equal(td3.critic_target(b), torch::zeros({16})));
  b.done = torch::zeros({16});
  CHECK_FALSE(torch::equal(td3.critic_target(b), torch::zeros({16})));
}

TEST_CASE("actor updates only every second call") {
  auto cfg = small_config();
  cfg.delay = 2;
  Td3 td3(3, cfg, 0);
  auto rng = make_rng(0, 0);
  for (int call = 1; call <= 6; ++call) {
    const auto before = snapshot(*td3.actor());
    const auto target_before = snapshot(*td3.critic1_target());
    const auto losses = td3.update(bandit_batch(32, 3, rng, {0.f, 0.f}));
    const bool even = call % 2 == 0;
    CHECK(losses.actor_updated == even);
    CHECK(same(before, *td3.actor()) == !even);
    CHECK(same(target_before, *td3.critic1_target()) == !even);
  }
  CHECK(td3.updates() == 6);
}

TEST_CASE("polyak update interpolates") {
  torch::nn::Linear a(2, 2), b(2, 2);
  torch::NoGradGuard guard;
  for (auto& p : a->parameters()) p.fill_(0.0);
  for (auto& p : b->parameters()) p.fill_(1.0);
  polyak_update(*a, *b, 0.25);
  for (const auto& p : a->parameters()) CHECK(torch::allclose(p, torch::full_like(p, 0.25)));
}

TEST_CASE("bandit toy: actor converges to the optimum") {
  torch::manual_seed(0);
  auto cfg = small_config();
  cfg.actor_lr = 3e-3;
  cfg.critic_lr = 3e-3;
  Td3 td3(2, cfg, 7);
  const std::array<float, 2> best{0.4f, -0.6f};
  auto rng = make_rng(11, 0);
  for (int i = 0; i < 2000; ++i) td3.update(bandit_batch(128, 2, rng, best));
  auto act_rng = make_rng(0, 0);
  const auto a = td3.act(torch::zeros({2}), torch::zeros({2}), 0.0, act_rng);
  MESSAGE("actor output " << a[0] << ", " << a[1]);
  CHECK(std::abs(a[0] - best[0]) < 0.05);
  CHECK(std::abs(a[1] - best[1]) < 0.05);
}

TEST_CASE("td3 round trip") {
  Td3 td3(3, small_config(), 1);
  auto rng = make_rng(0, 0);
  for (int i = 0; i < 4; ++i) td3.update(bandit_batch(16, 3, rng, {0.f, 0.f}));
  Archive archive;
  td3.save(archive, "td3/");
  Td3 other(3, small_config(), 99);
  other.load(archive, "td3/");
  CHECK(other.updates() == 4);
  const auto z = torch::randn({5, 3}), g = torch::randn({5, 3});
  CHECK(torch::equal(td3.act_batch(z, g), other.act_batch(z, g)));
  CHECK(torch::equal(td3.critic1_target()->forward(z, g, torch::zeros({5, 2})),
                     other.critic1_target()->forward(z, g, torch::zeros({5, 2}))));
}
