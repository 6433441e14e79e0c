#include "replan/rem.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "replan/errors.hpp"
#include "replan/image.hpp"
#include "replan/rng.hpp"

namespace replan::rem {
namespace {

// Draws delta in [lo, hi] with weight (T - delta), i.e. uniformly over the
// ordered pairs with that gap, then the start row uniformly.
std::pair<int, int> sample_pair(std::mt19937_64& rng, int T, int lo, int hi) {
  double total = 0.0;
  for (int d = lo; d <= hi; ++d) total += T - d;
  double u = uniform(rng) * total;
  int delta = hi;
  for (int d = lo; d <= hi; ++d) {
    u -= T - d;
    if (u < 0) {
      delta = d;
      break;
    }
  }
  const int i = int(uniform_int(rng, 0, T - 1 - delta));
  return {i, i + delta};
}

void check_dim(const torch::Tensor& z, int dim, const char* what) {
  if (z.dim() < 1 || z.size(-1) != dim)
    throw ShapeError(std::string(what) + " must have trailing dimension " + std::to_string(dim) +
                     ", got " + std::to_string(z.dim() ? z.size(-1) : 0));
}

// Viridis anchors, linearly interpolated.
std::array<double, 3> colormap(double v) {
  static const double anchors[5][3] = {{0.267, 0.005, 0.329},
                                       {0.229, 0.322, 0.546},
                                       {0.128, 0.567, 0.551},
                                       {0.369, 0.789, 0.383},
                                       {0.993, 0.906, 0.144}};
  v = std::clamp(v, 0.0, 1.0) * 4.0;
  const int a = std::min(3, int(v));
  const double f = v - a;
  return {anchors[a][0] + f * (anchors[a + 1][0] - anchors[a][0]),
          anchors[a][1] + f * (anchors[a + 1][1] - anchors[a][1]),
          anchors[a][2] + f * (anchors[a + 1][2] - anchors[a][2])};
}

}  // namespace

int k_threshold(int t_max, double ratio) {
  if (t_max < 1 || ratio <= 0) throw ConfigError("k threshold needs t_max >= 1 and ratio > 0");
  return std::max(1, int(std::lround(ratio * t_max)));
}

PairSet make_pairs(const std::vector<LatentTrajectory>& trajectories, int k, int pairs_per_traj,
                   std::uint64_t seed) {
  if (k < 1) throw ParameterError("k_threshold must be >= 1");
  if (pairs_per_traj < 1) throw ParameterError("pairs_per_traj must be >= 1");
  auto rng = make_rng(seed, 0x70616972ULL);
  std::vector<torch::Tensor> zi, zj;
  std::vector<float> labels;
  PairSet out;
  for (const auto& traj : trajectories) {
    const int T = int(traj.latents.size(0));
    if (int(traj.steps.size()) != T) throw ShapeError("trajectory steps and latents differ in length");
    if (T < 2) continue;
    std::vector<std::int64_t> rows_i, rows_j;
    const int positives_wanted = pairs_per_traj - pairs_per_traj / 2;
    const int negatives_wanted = pairs_per_traj / 2;
    const int pos_hi = std::min(k - 1, T - 1);
    const bool has_negatives = T - 1 >= k;
    if (!has_negatives) ++out.short_trajectories;
    if (pos_hi >= 1)
      for (int n = 0; n < positives_wanted; ++n) {
        const auto [i, j] = sample_pair(rng, T, 1, pos_hi);
        rows_i.push_back(i);
        rows_j.push_back(j);
      }
    if (has_negatives)
      for (int n = 0; n < negatives_wanted; ++n) {
        const auto [i, j] = sample_pair(rng, T, k, T - 1);
        rows_i.push_back(i);
        rows_j.push_back(j);
      }
    if (rows_i.empty()) continue;
    for (std::size_t n = 0; n < rows_i.size(); ++n) {
      const int delta = traj.steps[rows_j[n]] - traj.steps[rows_i[n]];
      out.deltas.push_back(delta);
      labels.push_back(float(pair_label(delta, k)));
    }
    zi.push_back(traj.latents.index_select(0, torch::tensor(rows_i)));
    zj.push_back(traj.latents.index_select(0, torch::tensor(rows_j)));
  }
  if (!labels.empty()) {
    out.z_i = torch::cat(zi).to(torch::kFloat32);
    out.z_j = torch::cat(zj).to(torch::kFloat32);
    out.labels = torch::tensor(labels);
  }
  return out;
}

ReachModelImpl::ReachModelImpl(int dim, int hidden) : dim_(dim), hidden_(hidden) {
  if (dim < 1 || hidden < 1) throw ParameterError("reach model needs positive sizes");
  net_ = register_module("net", torch::nn::Sequential(torch::nn::Linear(2 * dim, hidden),
                                                      torch::nn::ReLU(),
                                                      torch::nn::Linear(hidden, hidden),
                                                      torch::nn::ReLU(),
                                                      torch::nn::Linear(hidden, 1)));
}

torch::Tensor ReachModelImpl::logits(const torch::Tensor& z_i, const torch::Tensor& z_j) {
  check_dim(z_i, dim_, "z_i");
  check_dim(z_j, dim_, "z_j");
  auto a = z_i.to(torch::kFloat32);
  auto b = z_j.to(torch::kFloat32);
  const bool scalar = a.dim() == 1 && b.dim() == 1;
  if (a.dim() == 1) a = a.unsqueeze(0);
  if (b.dim() == 1) b = b.unsqueeze(0);
  if (a.size(0) != b.size(0)) {
    if (a.size(0) == 1)
      a = a.expand({b.size(0), dim_});
    else if (b.size(0) == 1)
      b = b.expand({a.size(0), dim_});
    else
      throw ShapeError("reach model batch sizes differ");
  }
  auto out = net_->forward(torch::cat({a, b}, 1)).squeeze(1);
  return scalar ? out.squeeze(0) : out;
}

torch::Tensor ReachModelImpl::forward(const torch::Tensor& z_i, const torch::Tensor& z_j) {
  return torch::sigmoid(logits(z_i, z_j));
}

torch::Tensor predict(ReachModel& model, const torch::Tensor& z_i, const torch::Tensor& z_j) {
  torch::NoGradGuard guard;
  return model->forward(z_i.detach(), z_j.detach());
}

torch::Tensor bce_loss(const torch::Tensor& prediction, const torch::Tensor& label) {
  const auto p = prediction.clamp(kBceEps, 1.0 - kBceEps);
  return -(label * torch::log(p) + (1.0 - label) * torch::log(1.0 - p));
}

EdgeScorer rem_scorer(ReachModel model) {
  return [model](const torch::Tensor& a, const torch::Tensor& b) mutable {
    return predict(model, a, b);
  };
}

EdgeScorer negative_l2_scorer() {
  return [](const torch::Tensor& a, const torch::Tensor& b) { return -(a - b).norm(2, -1); };
}

EdgeScorer constant_scorer(double value) {
  return [value](const torch::Tensor& a, const torch::Tensor&) {
    return torch::full({a.size(0)}, value, a.options());
  };
}

torch::Tensor plan_edges(const EdgeScorer& scorer, const torch::Tensor& z_s0,
                         const torch::Tensor& subgoals, const torch::Tensor& z_g) {
  if (subgoals.dim() != 3) throw ShapeError("plan_edges expects subgoals [P, N, D]");
  const auto P = subgoals.size(0);
  const auto N = subgoals.size(1);
  const auto D = subgoals.size(2);
  if (z_s0.numel() != D || z_g.numel() != D) throw ShapeError("plan endpoints must match subgoal dimension");
  const auto start = z_s0.reshape({1, 1, D}).to(subgoals.dtype()).expand({P, 1, D});
  const auto goal = z_g.reshape({1, 1, D}).to(subgoals.dtype()).expand({P, 1, D});
  const auto chain = torch::cat({start, subgoals, goal}, 1);  // [P, N+2, D]
  using torch::indexing::Slice;
  const auto from = chain.index({Slice(), Slice(0, N + 1)}).reshape({P * (N + 1), D});
  const auto to = chain.index({Slice(), Slice(1, N + 2)}).reshape({P * (N + 1), D});
  return scorer(from, to).reshape({P, N + 1});
}

EpisodicReachability episodic_reachability(const EdgeScorer& scorer, const torch::Tensor& z_s0,
                                           const torch::Tensor& subgoals, const torch::Tensor& z_g) {
  const auto D = z_s0.numel();
  const auto sg = subgoals.numel() == 0 ? torch::zeros({1, 0, D}, z_s0.options())
                                        : subgoals.reshape({1, -1, D});
  EpisodicReachability out;
  out.edges = plan_edges(scorer, z_s0, sg, z_g)[0];
  out.total = out.edges.to(torch::kFloat64).sum().item<double>();
  return out;
}

Aggregator parse_aggregator(const std::string& name) {
  if (name == "sum") return Aggregator::kSum;
  if (name == "l2") return Aggregator::kL2;
  if (name == "min") return Aggregator::kMin;
  throw ConfigError("rem.aggregator must be sum, l2 or min, got '" + name + "'");
}

std::string aggregator_name(Aggregator aggregator) {
  switch (aggregator) {
    case Aggregator::kSum: return "sum";
    case Aggregator::kL2: return "l2";
    case Aggregator::kMin: return "min";
  }
  return "sum";
}

torch::Tensor plan_objective(const torch::Tensor& edges, Aggregator aggregator) {
  switch (aggregator) {
    case Aggregator::kSum: return -edges.sum(-1);
    case Aggregator::kL2: return -edges.norm(2, -1);
    case Aggregator::kMin: return -std::get<0>(edges.min(-1));
  }
  return -edges.sum(-1);
}

double plan_objective(const EdgeScorer& scorer, const torch::Tensor& z_s0,
                      const torch::Tensor& subgoals, const torch::Tensor& z_g,
                      Aggregator aggregator) {
  const auto er = episodic_reachability(scorer, z_s0, subgoals, z_g);
  if (aggregator == Aggregator::kSum) return -er.total;
  return plan_objective(er.edges.to(torch::kFloat64), aggregator).item<double>();
}

RemConfig RemConfig::from_config(const Config& config, int t_max) {
  RemConfig c;
  c.hidden = int(config.get_int("rem.hidden"));
  c.lr = config.get_double("rem.lr");
  c.batch_size = int(config.get_int("rem.batch_size"));
  c.steps = int(config.get_int("rem.steps"));
  c.pairs_per_traj = int(config.get_int("rem.pairs_per_traj"));
  c.trajectories = int(config.get_int("rem.trajectories"));
  c.min_trajectories = int(config.get_int("rem.min_trajectories"));
  const auto explicit_k = config.get_int("rem.k_threshold");
  c.k = explicit_k > 0 ? int(explicit_k) : k_threshold(t_max, config.get_double("rem.k_ratio"));
  c.aggregator = parse_aggregator(config.get_string("rem.aggregator"));
  if (c.batch_size < 1 || c.steps < 0 || c.trajectories < 1)
    throw ConfigError("rem batch_size and trajectories must be positive");
  return c;
}

RemTrainer::RemTrainer(int dim, RemConfig config, std::uint64_t seed)
    : config_(config),
      model_([&] {
        torch::manual_seed(derive_seed(seed, 0x72656d69ULL));
        return ReachModel(dim, config.hidden);
      }()),
      optimizer_(model_->parameters(), torch::optim::AdamOptions(config.lr)) {}

RemMetrics RemTrainer::train(const std::vector<LatentTrajectory>& pool, std::uint64_t seed) {
  RemMetrics metrics;
  if (int(pool.size()) < config_.min_trajectories) {
    metrics.skipped = true;
    return metrics;
  }
  auto rng = make_rng(seed, 0x74726a73ULL);
  std::vector<LatentTrajectory> chosen;
  for (int n = 0; n < config_.trajectories; ++n)
    chosen.push_back(pool[std::size_t(uniform_int(rng, 0, std::int64_t(pool.size()) - 1))]);
  const auto pairs = make_pairs(chosen, config_.k, config_.pairs_per_traj, derive_seed(seed, 1));
  if (pairs.size() == 0) {
    metrics.skipped = true;
    return metrics;
  }
  metrics = fit(pairs, config_.steps, derive_seed(seed, 2));
  metrics.short_trajectories = pairs.short_trajectories;
  return metrics;
}

RemMetrics RemTrainer::fit(const PairSet& pairs, int steps, std::uint64_t seed) {
  RemMetrics metrics;
  metrics.steps = steps;
  if (pairs.size() == 0) {
    metrics.skipped = true;
    return metrics;
  }
  auto rng = make_rng(seed, 0x6d696e69ULL);
  const auto P = pairs.size();
  model_->train();
  for (int s = 0; s < steps; ++s) {
    std::vector<std::int64_t> idx(std::size_t(std::min<std::int64_t>(config_.batch_size, P)));
    for (auto& i : idx) i = uniform_int(rng, 0, P - 1);
    const auto rows = torch::tensor(idx);
    const auto pred = model_->forward(pairs.z_i.index_select(0, rows), pairs.z_j.index_select(0, rows));
    const auto loss = bce_loss(pred, pairs.labels.index_select(0, rows)).mean();
    optimizer_.zero_grad();
    loss.backward();
    optimizer_.step();
    const double value = loss.item<double>();
    if (!std::isfinite(value)) throw NumericalError("REM loss is not finite at step " + std::to_string(s));
    if (s == 0) metrics.first_loss = value;
    metrics.last_loss = value;
  }
  model_->eval();
  const auto pred = predict(model_, pairs.z_i, pairs.z_j);
  metrics.accuracy = ((pred > 0.5).to(torch::kFloat32) == pairs.labels).to(torch::kFloat64).mean().item<double>();
  return metrics;
}

void RemTrainer::save(Archive& archive, const std::string& prefix) const {
  archive.put_ints(prefix + "config/ints", {model_->dim(), model_->hidden()});
  archive.put_module(prefix + "param/", *model_);
  archive.put_adam(prefix + "adam/", const_cast<torch::optim::Adam&>(optimizer_));
}

void RemTrainer::load(const Archive& archive, const std::string& prefix) {
  const auto ints = archive.get_ints(prefix + "config/ints");
  if (ints.size() != 2 || ints[0] != model_->dim() || ints[1] != model_->hidden())
    throw ArchiveError("REM archive sizes do not match the configured model");
  archive.get_module(prefix + "param/", *model_);
  archive.get_adam(prefix + "adam/", optimizer_);
}

Accuracy evaluate_pairs(ReachModel& model, const PairSet& pairs, int k) {
  Accuracy out;
  out.bin_means.assign(5, 0.0);
  out.bin_counts.assign(5, 0);
  if (pairs.size() == 0) return out;
  const auto pred = predict(model, pairs.z_i, pairs.z_j).to(torch::kFloat64).contiguous();
  const auto labels = pairs.labels.to(torch::kFloat64).contiguous();
  const double* p = pred.data_ptr<double>();
  const double* y = labels.data_ptr<double>();
  std::int64_t correct = 0;
  for (std::int64_t n = 0; n < pairs.size(); ++n) {
    correct += ((p[n] > 0.5) == (y[n] > 0.5));
    const double d = pairs.deltas[std::size_t(n)];
    const int bin = d < k / 4.0 ? 0 : d < k / 2.0 ? 1 : d < k ? 2 : d < 2.0 * k ? 3 : 4;
    out.bin_means[bin] += p[n];
    ++out.bin_counts[bin];
  }
  for (int b = 0; b < 5; ++b)
    if (out.bin_counts[b] > 0) out.bin_means[b] /= double(out.bin_counts[b]);
  out.accuracy = double(correct) / double(pairs.size());
  return out;
}

torch::Tensor heatmap(ReachModel& model, const torch::Tensor& z_ref, const torch::Tensor& probes,
                      const std::vector<bool>& valid) {
  const auto n = probes.size(0);
  const auto G = std::int64_t(std::lround(std::sqrt(double(n))));
  if (G * G != n) throw ShapeError("heatmap probes must form a square grid");
  if (std::int64_t(valid.size()) != n) throw ShapeError("heatmap validity flags must match probes");
  auto values = predict(model, z_ref.reshape({1, -1}), probes).to(torch::kFloat64).clone();
  for (std::int64_t i = 0; i < n; ++i)
    if (!valid[std::size_t(i)]) values[i] = std::nan("");
  return values.reshape({G, G});
}

void export_heatmap(const torch::Tensor& matrix, const std::filesystem::path& png,
                    const std::filesystem::path& csv, int pixels_per_cell) {
  const auto m = matrix.to(torch::kFloat64).contiguous();
  const int rows = int(m.size(0)), cols = int(m.size(1));
  const auto a = m.accessor<double, 2>();
  if (!csv.empty()) {
    if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
    std::ofstream out(csv);
    if (!out) throw IoError("cannot write '" + csv.string() + "'");
    out << std::setprecision(6);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        if (c) out << ',';
        if (std::isnan(a[r][c]))
          out << "nan";
        else
          out << a[r][c];
      }
      out << '\n';
    }
  }
  if (!png.empty()) {
    Image img(3, rows * pixels_per_cell, cols * pixels_per_cell);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const double v = a[y / pixels_per_cell][x / pixels_per_cell];
        const auto rgb = std::isnan(v) ? std::array<double, 3>{0.5, 0.5, 0.5} : colormap(v);
        for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = quantize_unit(rgb[ch]);
      }
    write_png(png, img);
  }
}

void save_rem(Archive& archive, const ReachModel& model) {
  archive.put_string("model/kind", "rem");
  archive.put_ints("rem/config/ints", {model->dim(), model->hidden()});
  archive.put_module("rem/param/", *model);
}

ReachModel load_rem(const Archive& archive) {
  if (!archive.contains("model/kind") || archive.get_string("model/kind") != "rem")
    throw ArchiveError("archive does not hold a REM model");
  const auto ints = archive.get_ints("rem/config/ints");
  if (ints.size() != 2) throw ArchiveError("malformed REM config");
  ReachModel model(static_cast<int>(ints[0]), static_cast<int>(ints[1]));
  archive.get_module("rem/param/", *model);
  model->eval();
  return model;
}

}  // namespace replan::rem
