#include "replan/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "replan/errors.hpp"
#include "replan/rng.hpp"

namespace replan::planner {
namespace {

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
  const auto c = t.to(torch::kFloat64).contiguous().reshape({t.size(0), -1});
  Eigen::MatrixXd m(c.size(0), c.size(1));
  const double* p = c.data_ptr<double>();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index k = 0; k < m.cols(); ++k) m(r, k) = p[r * m.cols() + k];
  return m;
}

torch::Tensor to_torch(const Eigen::MatrixXd& m) {
  auto t = torch::empty({m.rows(), m.cols()}, torch::kFloat64);
  double* p = t.data_ptr<double>();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index k = 0; k < m.cols(); ++k) p[r * m.cols() + k] = m(r, k);
  return t.to(torch::kFloat32);
}

}  // namespace

SamplingDistribution SamplingDistribution::fit(const torch::Tensor& latents, double std_floor,
                                               int min_latents) {
  if (latents.dim() != 2) throw ShapeError("sampling distribution expects [n, D] latents");
  const int D = int(latents.size(1));
  if (latents.size(0) < min_latents || latents.size(0) < 1) return unit(D);
  const auto x = latents.to(torch::kFloat64);
  const auto mean = x.mean(0);
  const auto std = x.std(0, /*unbiased=*/false).clamp_min(std_floor);
  SamplingDistribution d;
  d.mean = to_eigen(mean.unsqueeze(0)).row(0).transpose();
  d.std = to_eigen(std.unsqueeze(0)).row(0).transpose();
  return d;
}

SamplingDistribution SamplingDistribution::unit(int dim) {
  SamplingDistribution d;
  d.mean = Eigen::VectorXd::Zero(dim);
  d.std = Eigen::VectorXd::Ones(dim);
  d.fallback = true;
  return d;
}

torch::Tensor SamplingDistribution::sample(int count, std::uint64_t seed) const {
  auto rng = make_rng(seed, 0x73616d70ULL);
  Eigen::MatrixXd m(count, dim());
  for (int r = 0; r < count; ++r)
    for (int k = 0; k < dim(); ++k) m(r, k) = mean(k) + std(k) * normal(rng);
  return to_torch(m);
}

void SamplingDistribution::save(Archive& archive, const std::string& prefix) const {
  archive.put_doubles(prefix + "mean", std::vector<double>(mean.data(), mean.data() + mean.size()));
  archive.put_doubles(prefix + "std", std::vector<double>(std.data(), std.data() + std.size()));
  archive.put_int(prefix + "fallback", fallback ? 1 : 0);
}

SamplingDistribution SamplingDistribution::load(const Archive& archive, const std::string& prefix) {
  const auto m = archive.get_doubles(prefix + "mean");
  const auto s = archive.get_doubles(prefix + "std");
  if (m.size() != s.size()) throw ArchiveError("sampling distribution mean/std sizes differ");
  SamplingDistribution d;
  d.mean = Eigen::Map<const Eigen::VectorXd>(m.data(), Eigen::Index(m.size()));
  d.std = Eigen::Map<const Eigen::VectorXd>(s.data(), Eigen::Index(s.size()));
  d.fallback = archive.get_int(prefix + "fallback") != 0;
  return d;
}

CemConfig CemConfig::from_config(const Config& config) {
  CemConfig c;
  c.population = int(config.get_int("planner.population"));
  c.elites = int(config.get_int("planner.elites"));
  c.iterations = int(config.get_int("planner.iterations"));
  c.warm_start = config.get_bool("planner.warm_start");
  c.extra_noise = config.get_double("planner.extra_noise");
  c.validate();
  return c;
}

void CemConfig::validate() const {
  if (elites < 1 || elites > population)
    throw ConfigError("CEM needs 0 < elites <= population, got elites=" + std::to_string(elites) +
                      " population=" + std::to_string(population));
  if (iterations < 1) throw ConfigError("CEM needs at least one iteration");
  if (!(extra_noise >= 0.0)) throw ConfigError("CEM extra_noise must be >= 0");
}

CemResult cem_optimize(const BatchObjective& objective, const Eigen::VectorXd& init_mean,
                       const Eigen::VectorXd& init_std, const CemConfig& config,
                       std::uint64_t seed, const Projection& project) {
  config.validate();
  const Eigen::Index D = init_mean.size();
  if (init_std.size() != D) throw ShapeError("CEM mean and std sizes differ");
  auto rng = make_rng(seed, 0x63656d00ULL);
  Eigen::VectorXd mean = init_mean;
  Eigen::VectorXd std = init_std;
  Eigen::MatrixXd elites;  // rows carried into the next population
  Eigen::VectorXd elite_values;
  CemResult result;
  result.best_value = std::numeric_limits<double>::infinity();
  result.best = init_mean;

  for (int it = 0; it < config.iterations; ++it) {
    const Eigen::Index carried = elites.rows();
    const Eigen::Index fresh = config.population - carried;
    Eigen::MatrixXd samples(fresh, D);
    for (Eigen::Index r = 0; r < fresh; ++r)
      for (Eigen::Index k = 0; k < D; ++k) samples(r, k) = mean(k) + std(k) * normal(rng);
    if (project) project(samples);
    const Eigen::VectorXd fresh_values = fresh > 0 ? objective(samples) : Eigen::VectorXd();
    if (fresh_values.size() != fresh) throw ShapeError("CEM objective returned the wrong count");

    Eigen::MatrixXd all(carried + fresh, D);
    Eigen::VectorXd values(carried + fresh);
    if (carried > 0) {
      all.topRows(carried) = elites;
      values.head(carried) = elite_values;
    }
    all.bottomRows(fresh) = samples;
    values.tail(fresh) = fresh_values;

    std::vector<Eigen::Index> order;
    for (Eigen::Index r = 0; r < values.size(); ++r) {
      if (std::isfinite(values(r)))
        order.push_back(r);
      else if (r >= carried)
        ++result.history.discarded;
    }
    // Stable sort keeps ties in sample order, which makes runs reproducible.
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return values(a) < values(b); });
    const Eigen::Index n_elite = std::min<Eigen::Index>(config.elites, Eigen::Index(order.size()));
    if (n_elite == 0) {
      result.history.best.push_back(result.best_value);
      result.history.elite_mean.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    elites.resize(n_elite, D);
    elite_values.resize(n_elite);
    for (Eigen::Index e = 0; e < n_elite; ++e) {
      elites.row(e) = all.row(order[std::size_t(e)]);
      elite_values(e) = values(order[std::size_t(e)]);
    }
    if (elite_values(0) < result.best_value) {
      result.best_value = elite_values(0);
      result.best = elites.row(0).transpose();
    }
    mean = elites.colwise().mean().transpose();
    std = ((elites.rowwise() - mean.transpose()).array().square().colwise().sum() / double(n_elite))
              .sqrt()
              .transpose();
    const double decay = std::max(0.0, 1.0 - double(it + 1) / (0.5 * config.iterations));
    if (decay > 0.0 && config.extra_noise > 0.0)
      std = (std.array().square() + (config.extra_noise * decay * init_std.array()).square()).sqrt().matrix();
    result.history.best.push_back(result.best_value);
    result.history.elite_mean.push_back(elite_values.mean());
  }
  return result;
}

CemResult cem_optimize(const Objective& objective, int dimension, const CemConfig& config,
                       std::uint64_t seed) {
  const BatchObjective batch = [&](const Eigen::MatrixXd& x) {
    Eigen::VectorXd v(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) v(r) = objective(x.row(r).transpose());
    return v;
  };
  return cem_optimize(batch, Eigen::VectorXd::Zero(dimension), Eigen::VectorXd::Ones(dimension),
                      config, seed);
}

int subgoal_schedule(int t_max, int N) {
  if (N < 0) throw ConfigError("number of subgoals must be >= 0");
  const int t = t_max / (N + 1);
  if (t < 1)
    throw ConfigError("T_max " + std::to_string(t_max) + " is too short for " + std::to_string(N) +
                      " subgoals");
  return t;
}

SubgoalPlan plan_subgoals(const PlanRequest& request, const torch::Tensor& z_s0,
                          const torch::Tensor& z_g, int N, std::uint64_t seed,
                          const SubgoalPlan* warm) {
  if (N < 1) throw ParameterError("plan_subgoals needs N >= 1");
  if (request.scorer == nullptr || request.distribution == nullptr)
    throw ParameterError("plan request needs a scorer and a sampling distribution");
  const auto& dist = *request.distribution;
  const int D = dist.dim();
  if (z_s0.numel() != D || z_g.numel() != D)
    throw ShapeError("plan endpoints have " + std::to_string(z_s0.numel()) +
                     " dims, sampling distribution " + std::to_string(D));
  const auto start = z_s0.reshape({D}).to(torch::kFloat32);
  const auto goal = z_g.reshape({D}).to(torch::kFloat32);

  Eigen::VectorXd mean(N * D), std(N * D);
  for (int n = 0; n < N; ++n) {
    mean.segment(n * D, D) = dist.mean;
    std.segment(n * D, D) = dist.std;
  }
  if (warm != nullptr && request.cem.warm_start && warm->count() > 0) {
    // Previous subgoals shifted forward; the freed tail starts at the goal.
    const auto prev = to_eigen(warm->subgoals);
    for (int n = 0; n < N; ++n) {
      const int src = n + (warm->count() - N);
      mean.segment(n * D, D) = src >= 0 && src < prev.rows() ? Eigen::VectorXd(prev.row(src).transpose())
                                                              : to_eigen(goal.unsqueeze(0)).row(0).transpose();
    }
  }

  const Projection project = [&](Eigen::MatrixXd& x) {
    if (!request.project) return;
    const auto rows = to_torch(x).reshape({x.rows() * N, D});
    x = to_eigen(request.project(rows).reshape({x.rows(), N * D}));
  };
  const BatchObjective objective = [&](const Eigen::MatrixXd& x) {
    const auto sg = to_torch(x).reshape({x.rows(), N, D});
    const auto edges = rem::plan_edges(*request.scorer, start, sg, goal);
    const auto loss = rem::plan_objective(edges.to(torch::kFloat64), request.aggregator).contiguous();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(loss.data_ptr<double>(), x.rows()));
  };
  const auto cem = cem_optimize(objective, mean, std, request.cem, seed,
                                request.project ? project : Projection{});

  SubgoalPlan plan;
  plan.subgoals = to_torch(cem.best.transpose()).reshape({N, D});
  const auto er = rem::episodic_reachability(*request.scorer, start, plan.subgoals, goal);
  plan.edge_scores = er.edges;
  plan.objective = rem::plan_objective(*request.scorer, start, plan.subgoals, goal, request.aggregator);
  plan.history = cem.history;
  return plan;
}

SubgoalPlan replan(const PlanRequest& request, const torch::Tensor& current_z,
                   const torch::Tensor& z_g, int remaining_N, std::uint64_t seed,
                   const SubgoalPlan* previous) {
  if (remaining_N < 0) throw ParameterError("remaining subgoal count must be >= 0");
  if (remaining_N > 0) return plan_subgoals(request, current_z, z_g, remaining_N, seed, previous);
  if (request.scorer == nullptr) throw ParameterError("plan request needs a scorer");
  const auto D = current_z.numel();
  SubgoalPlan plan;
  plan.subgoals = torch::zeros({0, D});
  const auto start = current_z.reshape({D}).to(torch::kFloat32);
  const auto goal = z_g.reshape({D}).to(torch::kFloat32);
  plan.edge_scores = rem::episodic_reachability(*request.scorer, start, plan.subgoals, goal).edges;
  plan.objective = rem::plan_objective(*request.scorer, start, plan.subgoals, goal, request.aggregator);
  return plan;
}

torch::Tensor policy_target(const SubgoalPlan& plan, const torch::Tensor& z_g) {
  return plan.count() > 0 ? plan.subgoals[0] : z_g.reshape({-1});
}

nlohmann::json plan_to_json(const SubgoalPlan& plan) {
  auto tensor_rows = [](const torch::Tensor& t) {
    nlohmann::json rows = nlohmann::json::array();
    const auto c = t.to(torch::kFloat64).contiguous();
    for (std::int64_t r = 0; r < c.size(0); ++r) {
      const auto row = c[r];
      rows.push_back(std::vector<double>(row.data_ptr<double>(), row.data_ptr<double>() + row.numel()));
    }
    return rows;
  };
  const auto e = plan.edge_scores.to(torch::kFloat64).contiguous();
  return {{"subgoals", tensor_rows(plan.subgoals)},
          {"edge_scores", std::vector<double>(e.data_ptr<double>(), e.data_ptr<double>() + e.numel())},
          {"objective", plan.objective}};
}

}  // namespace replan::planner
