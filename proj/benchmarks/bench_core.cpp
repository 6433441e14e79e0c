#include <benchmark/benchmark.h>

#include "replan/curiosity.hpp"
#include "replan/drm.hpp"
#include "replan/env.hpp"
#include "replan/gc_policy.hpp"
#include "replan/planner.hpp"
#include "replan/rem.hpp"
#include "replan/rng.hpp"

using namespace replan;

namespace {

struct SingleThread {
  SingleThread() { torch::set_num_threads(1); }
} single_thread;

void BM_EnvAdvance(benchmark::State& state) {
  env::PusherEnv env{env::EnvConfig{}};
  auto s = env.reset("pusher2", 0).first;
  auto rng = make_rng(0, 0);
  for (auto _ : state) {
    s = env.advance(s, {uniform(rng, -1, 1), uniform(rng, -1, 1)});
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_EnvAdvance);

void BM_EnvRender(benchmark::State& state) {
  env::PusherEnv env{env::EnvConfig{}};
  const auto s = env.reset("pusher2", 0).first;
  for (auto _ : state) benchmark::DoNotOptimize(env.render(s, int(state.range(0))));
}
BENCHMARK(BM_EnvRender)->Arg(32)->Arg(64)->Arg(128);

void BM_DrmEncode(benchmark::State& state) {
  torch::manual_seed(0);
  drm::DrmModel model(drm::DrmConfig{});
  model->eval();
  const auto images = torch::rand({state.range(0), 3, 64, 64});
  torch::NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(model->planner_latent(model->encode(images, {false})));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DrmEncode)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_DrmTrainStep(benchmark::State& state) {
  torch::manual_seed(0);
  drm::DrmModel model(drm::DrmConfig{});
  torch::optim::Adam opt(model->parameters(), 1e-3);
  const auto images = torch::rand({32, 3, 64, 64});
  at::Generator gen = at::detail::createCPUGenerator(1);
  for (auto _ : state) {
    opt.zero_grad();
    model->total_loss(images, {true, 1.0, &gen}).total.backward();
    opt.step();
  }
}
BENCHMARK(BM_DrmTrainStep)->Unit(benchmark::kMillisecond);

void BM_RemPredict(benchmark::State& state) {
  torch::manual_seed(0);
  rem::ReachModel model(72);
  const auto a = torch::randn({state.range(0), 72}), b = torch::randn({state.range(0), 72});
  for (auto _ : state) benchmark::DoNotOptimize(rem::predict(model, a, b));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RemPredict)->Arg(1)->Arg(256)->Arg(1280);

void BM_PlanSubgoals(benchmark::State& state) {
  torch::manual_seed(0);
  rem::ReachModel model(72);
  const auto scorer = rem::rem_scorer(model);
  auto dist = planner::SamplingDistribution::unit(72);
  planner::PlanRequest request;
  request.scorer = &scorer;
  request.distribution = &dist;
  const auto z0 = torch::randn({72}), zg = torch::randn({72});
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(planner::plan_subgoals(request, z0, zg, int(state.range(0)), seed++));
}
BENCHMARK(BM_PlanSubgoals)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_ExtrinsicRewardBatch(benchmark::State& state) {
  const auto a = torch::randn({256, 72}), b = torch::randn({256, 72});
  for (auto _ : state) benchmark::DoNotOptimize(curiosity::extrinsic_reward_batch(a, b));
}
BENCHMARK(BM_ExtrinsicRewardBatch);

policy::ReplayBuffer filled_buffer(int dim) {
  policy::ReplayBuffer buffer(200000);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(0);
  for (int e = 0; e < 50; ++e) {
    policy::EpisodeBuilder builder;
    builder.start(torch::randn({dim}, gen));
    const auto goal = torch::randn({dim}, gen);
    for (int t = 0; t < 200; ++t) builder.add({0.f, 0.f}, goal, torch::randn({dim}, gen), 0.0);
    buffer.add(builder.finish());
  }
  return buffer;
}

void BM_ReplaySampleHer(benchmark::State& state) {
  const auto buffer = filled_buffer(72);
  auto dist = planner::SamplingDistribution::unit(72);
  policy::HerConfig her;
  her.distribution = &dist;
  auto rng = make_rng(0, 0);
  for (auto _ : state) benchmark::DoNotOptimize(buffer.sample(256, her, rng));
}
BENCHMARK(BM_ReplaySampleHer)->Unit(benchmark::kMicrosecond);

void BM_Td3Update(benchmark::State& state) {
  const auto buffer = filled_buffer(72);
  auto dist = planner::SamplingDistribution::unit(72);
  policy::HerConfig her;
  her.distribution = &dist;
  auto rng = make_rng(0, 0);
  policy::Td3 td3(72, policy::Td3Config{}, 0);
  const auto batch = buffer.sample(256, her, rng);
  for (auto _ : state) benchmark::DoNotOptimize(td3.update(batch));
}
BENCHMARK(BM_Td3Update)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
