#include "replan/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "replan/errors.hpp"
#include "replan/image.hpp"
#include "replan/jsonl.hpp"
#include "replan/rng.hpp"

namespace replan::evalkit {
namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

std::vector<double> column(const torch::Tensor& t, std::int64_t c) {
  const auto col = t.index({torch::indexing::Slice(), c}).to(torch::kFloat64).contiguous();
  return std::vector<double>(col.data_ptr<double>(), col.data_ptr<double>() + col.numel());
}

double total_variance(const torch::Tensor& x) {
  return x.to(torch::kFloat64).var(0, /*unbiased=*/false).sum().item<double>();
}

// Projections of the rows of x on its first k principal directions.
torch::Tensor principal_projections(const torch::Tensor& x, int k) {
  const auto c = x.to(torch::kFloat64) - x.to(torch::kFloat64).mean(0, true);
  const auto svd = torch::linalg_svd(c, /*full_matrices=*/false);
  const auto v = std::get<2>(svd);  // [r, D]
  const auto kk = std::min<std::int64_t>(k, v.size(0));
  return c.matmul(v.index({torch::indexing::Slice(0, kk)}).transpose(0, 1));
}

std::vector<env::Vec2> grid_points(int n_points, double lo, double hi) {
  const int g = std::max(2, int(std::ceil(std::sqrt(double(n_points)))));
  std::vector<env::Vec2> pts;
  for (int j = 0; j < g && int(pts.size()) < n_points; ++j)
    for (int i = 0; i < g && int(pts.size()) < n_points; ++i)
      pts.push_back({lo + (hi - lo) * i / (g - 1), lo + (hi - lo) * j / (g - 1)});
  return pts;
}

torch::Tensor encode_states(Observer& observer, const env::PusherEnv& env,
                            const std::vector<env::EnvState>& states) {
  torch::NoGradGuard guard;
  if (!observer.needs_images()) return observer.encode(states, {});
  std::vector<Image> images;
  images.reserve(states.size());
  for (const auto& s : states) images.push_back(env.render(s, env.config().resolution));
  std::vector<torch::Tensor> parts;
  for (std::size_t i = 0; i < states.size(); i += 128) {
    const auto end = std::min(states.size(), i + 128);
    std::vector<env::EnvState> st(states.begin() + std::ptrdiff_t(i), states.begin() + std::ptrdiff_t(end));
    std::vector<const Image*> im;
    for (std::size_t j = i; j < end; ++j) im.push_back(&images[j]);
    parts.push_back(observer.encode(st, im));
  }
  return torch::cat(parts);
}

void draw_line(Image& img, double x0, double y0, double x1, double y1, std::array<double, 3> rgb) {
  const int steps = int(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
  for (int s = 0; s <= steps; ++s) {
    const double t = double(s) / steps;
    const int x = int(std::lround(x0 + t * (x1 - x0)));
    const int y = int(std::lround(y0 + t * (y1 - y0)));
    for (int dy = 0; dy < 2; ++dy)
      if (x >= 0 && x < img.width && y + dy >= 0 && y + dy < img.height)
        for (int c = 0; c < 3; ++c) img.at(c, y + dy, x) = quantize_unit(rgb[std::size_t(c)]);
  }
}

}  // namespace

// ---------------------------------------------------------------- success

std::vector<std::uint64_t> goal_seed_range(std::uint64_t first, int count) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < count; ++i) out.push_back(first + std::uint64_t(i));
  return out;
}

SuccessReport success_rate(trainer::Controller& controller, const env::PusherEnv& env,
                           const std::string& layout, trainer::Task task,
                           const std::vector<std::uint64_t>& goal_seeds,
                           const std::vector<std::uint64_t>& seeds, double threshold, int t_max) {
  SuccessReport report;
  const bool images = controller.needs_images();
  for (const auto goal_seed : goal_seeds) {
    const auto spec = trainer::make_episode(env, layout, task, goal_seed, images);
    for (const auto seed : seeds) {
      controller.begin(spec, derive_seed(goal_seed, seed));
      env::EnvState state = spec.start;
      Image image = spec.start_image;
      for (int t = 0; t < t_max; ++t) {
        state = env.advance(state, controller.act(state, image));
        if (images) image = env.render(state, env.config().resolution);
      }
      const double d = trainer::task_distance(task, state, spec.goal);
      report.distances.push_back(d);
      report.successes.push_back(d < threshold);
    }
  }
  if (!report.distances.empty()) {
    report.rate = double(std::count(report.successes.begin(), report.successes.end(), true)) /
                  double(report.successes.size());
    report.mean_distance = std::accumulate(report.distances.begin(), report.distances.end(), 0.0) /
                           double(report.distances.size());
  }
  return report;
}

void ScriptedOracle::begin(const trainer::EpisodeSpec& spec, std::uint64_t) { goal_ = spec.goal; }

env::Vec2 ScriptedOracle::act(const env::EnvState& state, const Image&) {
  const double step = env_.config().max_step;
  auto towards = [&](env::Vec2 target) {
    const env::Vec2 d = (target - state.robot) * (1.0 / step);
    return env::Vec2{std::clamp(d.x, -1.0, 1.0), std::clamp(d.y, -1.0, 1.0)};
  };
  if (task_ == trainer::Task::kReach) return towards(goal_.robot);
  const env::Vec2 to_goal = goal_.puck - state.puck;
  const double dist = to_goal.norm();
  if (dist < 0.004) return {0, 0};
  const env::Vec2 u = to_goal * (1.0 / dist);
  const double contact = env_.config().robot_radius + env_.config().puck_radius;
  const env::Vec2 rel = state.robot - state.puck;
  const double along = rel.x * u.x + rel.y * u.y;
  const double lateral = rel.x * -u.y + rel.y * u.x;
  if (along < -0.8 * contact && std::abs(lateral) < 0.25 * contact) {
    // Behind the puck: drive the contact point so the normal points at the goal.
    const double push = std::min(dist, step);
    return towards(state.puck - u * contact + u * push);
  }
  // Otherwise orbit the puck towards the approach side.
  const double radius = contact + 0.03;
  const double r = rel.norm();
  const double here = std::atan2(rel.y, rel.x);
  const double wanted = std::atan2(-u.y, -u.x);
  const double diff = std::remainder(wanted - here, 2.0 * std::numbers::pi);
  if (std::abs(diff) < 0.3) return towards(state.puck - u * (contact + 0.01));
  const double next = here + std::clamp(diff, -0.6, 0.6);
  return towards(state.puck + env::Vec2{std::cos(next), std::sin(next)} * std::max(radius, std::min(r, radius + 0.05)));
}

void RandomController::begin(const trainer::EpisodeSpec&, std::uint64_t seed) {
  rng_ = make_rng(seed, 0x726e6400ULL);
}

env::Vec2 RandomController::act(const env::EnvState&, const Image&) {
  return {uniform(rng_, -1.0, 1.0), uniform(rng_, -1.0, 1.0)};
}

// ---------------------------------------------------------------- consistency

double spearman(const std::vector<double>& a, const std::vector<double>& b, bool* degenerate) {
  if (a.size() != b.size()) throw ShapeError("spearman inputs differ in length");
  if (degenerate) *degenerate = false;
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = double(a.size());
  if (n < 2) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return sab / std::sqrt(saa * sbb);
}

ReconstructionReport reconstruction_quality(drm::DrmModel& model, const env::PusherEnv& env,
                                            const std::vector<env::EnvState>& states) {
  ReconstructionReport report;
  if (states.empty()) throw ParameterError("reconstruction_quality needs at least one frame");
  torch::NoGradGuard guard;
  const bool was_training = model->is_training();
  model->eval();
  const int res = model->config().resolution;
  auto iou = [res](const torch::Tensor& pred, const Mask& truth) {
    const auto gt = torch::from_blob(const_cast<std::uint8_t*>(truth.data.data()), {res, res}, torch::kUInt8)
                        .to(torch::kBool);
    const auto p = pred > 0.5;
    const double uni = (p | gt).sum().item<double>();
    return uni == 0 ? 1.0 : (p & gt).sum().item<double>() / uni;
  };
  for (std::size_t begin = 0; begin < states.size(); begin += 64) {
    const auto end = std::min(states.size(), begin + 64);
    std::vector<Image> images;
    for (std::size_t i = begin; i < end; ++i) images.push_back(env.render(states[i], res));
    std::vector<const Image*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);
    const auto batch = to_batch(ptrs);
    const auto scene = model->encode(batch, {false, 1.0, nullptr});
    const auto d = model->decode(scene);
    const auto mse = (d.reconstruction - batch).pow(2).flatten(1).mean(1).clamp_min(1e-10);
    report.psnr += (-10.0 * torch::log10(mse)).sum().item<double>();
    for (std::size_t i = begin; i < end; ++i) {
      const auto truth = env.ground_truth(states[i], res);
      const auto row = std::int64_t(i - begin);
      report.iou_object += iou(d.m_obj[row][0], truth.puck_mask);
      report.iou_robot += iou(d.m_ro[row][0], truth.robot_mask);
    }
  }
  model->train(was_training);
  const double n = double(states.size());
  report.frames = int(states.size());
  report.psnr /= n;
  report.iou_object /= n;
  report.iou_robot /= n;
  return report;
}

SweepData run_sweep(Observer& observer, const env::PusherEnv& env, Sweep kind, int n_points) {
  SweepData data;
  if (kind == Sweep::kObjectPosition) {
    for (const auto p : grid_points(n_points, 0.3, 0.85)) {
      env::EnvState s;
      s.layout_id = "open";
      s.robot = {0.1, 0.1};
      s.puck = p;
      data.states.push_back(s);
    }
  } else {
    for (const auto p : grid_points(n_points, 0.1, 0.7)) {
      env::EnvState s;
      s.layout_id = "open";
      s.robot = p;
      s.puck = {0.88, 0.88};
      data.states.push_back(s);
    }
  }
  data.latents = encode_states(observer, env, data.states);
  return data;
}

ConsistencyReport consistency_metric(Observer& observer, const env::PusherEnv& env, Sweep kind,
                                     int n_points) {
  const auto data = run_sweep(observer, env, kind, n_points);
  ConsistencyReport report;
  report.points = int(data.states.size());
  std::vector<double> gx, gy;
  for (const auto& s : data.states) {
    const auto p = kind == Sweep::kObjectPosition ? s.puck : s.robot;
    gx.push_back(p.x);
    gy.push_back(p.y);
  }
  auto best_over = [&](const torch::Tensor& coords, const std::vector<double>& truth, bool& degenerate) {
    double best = 0.0;
    bool all_degenerate = true;
    for (std::int64_t c = 0; c < coords.size(1); ++c) {
      bool deg = false;
      const double rho = spearman(column(coords, c), truth, &deg);
      if (!deg) all_degenerate = false;
      if (std::abs(rho) > std::abs(best)) best = rho;
    }
    degenerate = all_degenerate;
    return std::abs(best);
  };
  bool dx = false, dy = false;
  auto* drm_obs = dynamic_cast<DrmObserver*>(&observer);
  if (kind == Sweep::kObjectPosition && drm_obs != nullptr) {
    const auto& c = drm_obs->model()->config();
    const auto B = data.latents.size(0);
    const auto blocks = data.latents.index({torch::indexing::Slice(), torch::indexing::Slice(c.z_ro_m_dim, torch::indexing::None)})
                            .reshape({B, c.cells(), 4});
    const auto best = (blocks.index({"...", 0}) + blocks.index({"...", 1})).argmax(1);
    const auto chosen = blocks.index({torch::arange(B), best});
    report.undetected = int((blocks.index({"...", 0}) > 0).any(1).logical_not().sum().item<std::int64_t>());
    report.rho_x = spearman(column(chosen, 2), gx, &dx);
    report.rho_y = spearman(column(chosen, 3), gy, &dy);
    report.coordinate = "z_where centre of the strongest cell";
  } else if (kind == Sweep::kRobotPose) {
    torch::Tensor source = data.latents;
    if (drm_obs != nullptr)
      source = data.latents.index({torch::indexing::Slice(), torch::indexing::Slice(0, drm_obs->model()->config().z_ro_m_dim)});
    const auto pcs = principal_projections(source, 2);
    report.rho_x = best_over(pcs, gx, dx);
    report.rho_y = best_over(pcs, gy, dy);
    report.coordinate = drm_obs ? "first two principal directions of z_ro_m" : "first two principal directions";
  } else {
    report.rho_x = best_over(data.latents, gx, dx);
    report.rho_y = best_over(data.latents, gy, dy);
    report.coordinate = "best single latent dimension per axis";
  }
  report.degenerate = dx || dy;
  return report;
}

double robot_latent_drift(DrmObserver& observer, const env::PusherEnv& env, int n_points) {
  const int dm = observer.model()->config().z_ro_m_dim;
  using torch::indexing::Slice;
  const auto objects = run_sweep(observer, env, Sweep::kObjectPosition, n_points);
  const auto poses = run_sweep(observer, env, Sweep::kRobotPose, n_points);
  const double pose_var = total_variance(poses.latents.index({Slice(), Slice(0, dm)}));
  const double drift = total_variance(objects.latents.index({Slice(), Slice(0, dm)}));
  return pose_var > 0 ? drift / pose_var : std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------- obstacles

HeatmapProbes heatmap_probes(Observer& observer, const env::PusherEnv& env, const std::string& layout,
                             int grid) {
  HeatmapProbes probes;
  const auto& l = env.layout(layout);
  for (int j = 0; j < grid; ++j)
    for (int i = 0; i < grid; ++i) {
      env::EnvState s;
      s.layout_id = layout;
      s.puck = {(i + 0.5) / grid, (j + 0.5) / grid};
      const bool ok = env.puck_free(l, s.puck);
      s.robot = ok ? env.canonical_robot(l, s.puck) : env::Vec2{0.1, 0.1};
      if (!ok) s.puck = {0.5, 0.5};
      probes.states.push_back(s);
      probes.valid.push_back(ok && env.robot_free(l, s.robot));
    }
  probes.latents = encode_states(observer, env, probes.states);
  return probes;
}

ObstacleReport obstacle_margin(rem::ReachModel& model, Observer& observer, const env::PusherEnv& env,
                               const env::EnvState& reference, int grid, double match_tol,
                               double oracle_step) {
  ObstacleReport report;
  const auto probes = heatmap_probes(observer, env, reference.layout_id, grid);
  const auto z_ref = encode_states(observer, env, {reference})[0];
  report.heatmap = rem::heatmap(model, z_ref, probes.latents, probes.valid);
  report.valid = probes.valid;
  const auto flat = report.heatmap.reshape({-1}).contiguous();
  const double* r = flat.data_ptr<double>();
  struct Probe {
    double euclid;
    double value;
  };
  std::vector<Probe> free, across;
  report.across.assign(probes.states.size(), false);
  for (std::size_t i = 0; i < probes.states.size(); ++i) {
    if (!probes.valid[i]) continue;
    const double euclid = (probes.states[i].puck - reference.puck).norm();
    if (euclid < 0.1) continue;
    const auto bfs = env.oracle_distance(reference, probes.states[i], oracle_step);
    const double path = bfs ? *bfs * oracle_step : std::numeric_limits<double>::infinity();
    if (path > 2.0 * euclid) {
      across.push_back({euclid, r[i]});
      report.across[i] = true;
    } else if (path <= 1.25 * euclid + oracle_step) {
      free.push_back({euclid, r[i]});
    }
  }
  double margin = 0, sf = 0, sa = 0;
  for (const auto& a : across) {
    const Probe* best = nullptr;
    for (const auto& f : free)
      if (std::abs(f.euclid - a.euclid) <= match_tol &&
          (!best || std::abs(f.euclid - a.euclid) < std::abs(best->euclid - a.euclid)))
        best = &f;
    if (!best) continue;
    margin += best->value - a.value;
    sf += best->value;
    sa += a.value;
    ++report.matched_pairs;
  }
  if (report.matched_pairs > 0) {
    report.mean_margin = margin / report.matched_pairs;
    report.mean_free = sf / report.matched_pairs;
    report.mean_across = sa / report.matched_pairs;
  }
  return report;
}

// ---------------------------------------------------------------- ablations

std::map<std::string, std::string> variant_overrides(const std::string& variant) {
  if (variant == "full") return {};
  if (variant == "wo_cm") return {{"run.use_cm", "false"}};
  if (variant == "wo_rem_cm") return {{"run.use_rem", "false"}, {"run.use_cm", "false"}};
  if (variant == "wo_drm") return {{"run.observation", "vae"}};
  throw ConfigError("unknown ablation variant '" + variant + "'");
}

AblationTable ablation_table(const std::vector<AblationRow>& rows, const std::vector<std::string>& layouts) {
  AblationTable table;
  table.rows = rows;
  table.layouts = layouts;
  std::map<std::string, double> mean;
  for (const auto& name : ablation_variants()) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const AblationRow& r) { return r.variant == name; });
    if (it == rows.end()) {
      table.gaps.push_back(name);
      continue;
    }
    double sum = 0;
    int n = 0;
    for (const auto& l : layouts) {
      auto s = it->success.find(l);
      if (s == it->success.end()) {
        table.gaps.push_back(name + "/" + l);
        continue;
      }
      sum += s->second;
      ++n;
    }
    if (n > 0) mean[name] = sum / n;
  }
  if (mean.size() == ablation_variants().size())
    table.ordering_holds = mean["full"] > mean["wo_cm"] && mean["wo_cm"] > mean["wo_rem_cm"] &&
                           mean["full"] > mean["wo_drm"];
  return table;
}

void write_ablation_csv(const AblationTable& table, const std::filesystem::path& path) {
  // Success rates (%) reported for the UR-Pusher-1/2 scenes.
  static const std::map<std::string, std::pair<double, double>> reference = {
      {"full", {90.0, 93.3}}, {"wo_cm", {56.7, 36.7}}, {"wo_rem_cm", {0.0, 0.0}}, {"wo_drm", {66.7, 60.0}}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "variant";
  for (const auto& l : table.layouts) out << ',' << l;
  out << ",reference_pusher1,reference_pusher2\n";
  for (const auto& name : ablation_variants()) {
    out << name;
    auto it = std::find_if(table.rows.begin(), table.rows.end(),
                           [&](const AblationRow& r) { return r.variant == name; });
    for (const auto& l : table.layouts) {
      out << ',';
      if (it != table.rows.end() && it->success.count(l)) out << 100.0 * it->success.at(l);
    }
    const auto ref = reference.at(name);
    out << ',' << ref.first << ',' << ref.second << '\n';
  }
  out << "# ordering " << (table.ordering_holds ? "holds" : "violated");
  if (!table.gaps.empty()) {
    out << "; gaps:";
    for (const auto& g : table.gaps) out << ' ' << g;
  }
  out << '\n';
}

// ---------------------------------------------------------------- plots

PlotKind parse_plot_kind(const std::string& name) {
  if (name == "curve" || name == "distance") return PlotKind::kLearningCurve;
  if (name == "success") return PlotKind::kSuccessCurve;
  if (name == "heatmap") return PlotKind::kHeatmap;
  throw ConfigError("plot kind must be distance, success or heatmap, got '" + name + "'");
}

PlotStats plot_emit(const std::vector<std::filesystem::path>& inputs, PlotKind kind,
                    const std::filesystem::path& png, int smooth) {
  PlotStats stats;
  if (inputs.empty()) throw ParameterError("plot needs at least one input file");
  if (kind == PlotKind::kHeatmap) {
    std::ifstream in(inputs.front());
    if (!in) throw IoError("cannot read '" + inputs.front().string() + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) row.push_back(cell == "nan" ? std::nan("") : std::stod(cell));
      rows.push_back(row);
    }
    if (rows.empty()) throw ParameterError("heatmap CSV is empty");
    auto m = torch::full({std::int64_t(rows.size()), std::int64_t(rows[0].size())}, std::nan(""), torch::kFloat64);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < rows[r].size() && c < rows[0].size(); ++c)
        m[std::int64_t(r)][std::int64_t(c)] = rows[r][c];
    rem::export_heatmap(m, png, {}, 8);
    stats.series = 1;
    stats.points = int(m.numel());
    return stats;
  }
  const char* field = kind == PlotKind::kSuccessCurve ? "success" : "final_distance";
  std::vector<std::vector<double>> series;
  for (const auto& path : inputs) {
    int malformed = 0;
    std::vector<double> values;
    for (const auto& rec : read_jsonl(path, &malformed)) {
      if (!rec.contains(field) || !rec.contains("episode")) {
        ++malformed;
        continue;
      }
      values.push_back(rec[field].is_boolean() ? double(rec[field].get<bool>()) : rec[field].get<double>());
    }
    stats.malformed += malformed;
    if (!values.empty()) series.push_back(values);
  }
  if (series.empty()) throw ParameterError("no plottable metrics in the given files");
  std::size_t len = series.front().size();
  for (const auto& s : series) len = std::min(len, s.size());
  std::vector<double> mean(len), sd(len);
  const int w = std::max(1, smooth);
  for (std::size_t t = 0; t < len; ++t) {
    std::vector<double> per_seed;
    for (const auto& s : series) {
      double acc = 0;
      int n = 0;
      for (std::size_t k = t + 1 >= std::size_t(w) ? t + 1 - w : 0; k <= t; ++k, ++n) acc += s[k];
      per_seed.push_back(acc / n);
    }
    const double m = std::accumulate(per_seed.begin(), per_seed.end(), 0.0) / double(per_seed.size());
    double v = 0;
    for (double x : per_seed) v += (x - m) * (x - m);
    mean[t] = m;
    sd[t] = std::sqrt(v / double(per_seed.size()));
  }
  stats.series = int(series.size());
  stats.points = int(len);

  const int W = 640, H = 400, margin = 30;
  Image img(3, H, W);
  std::fill(img.data.begin(), img.data.end(), 255);
  double lo = 1e300, hi = -1e300;
  for (std::size_t t = 0; t < len; ++t) {
    lo = std::min(lo, mean[t] - sd[t]);
    hi = std::max(hi, mean[t] + sd[t]);
  }
  if (kind == PlotKind::kSuccessCurve) lo = 0, hi = 1;
  if (hi - lo < 1e-9) hi = lo + 1.0;
  auto px = [&](double t) { return margin + (W - 2 * margin) * (len > 1 ? t / double(len - 1) : 0.5); };
  auto py = [&](double v) { return H - margin - (H - 2 * margin) * (v - lo) / (hi - lo); };
  for (std::size_t t = 0; t < len; ++t) {
    const int x = int(std::lround(px(double(t))));
    const int y0 = int(std::lround(py(mean[t] + sd[t])));
    const int y1 = int(std::lround(py(mean[t] - sd[t])));
    for (int y = std::max(0, y0); y <= std::min(H - 1, y1); ++y)
      for (int dx = 0; dx < std::max(1, (W - 2 * margin) / int(std::max<std::size_t>(len, 1))); ++dx)
        if (x + dx < W) {
          img.at(0, y, x + dx) = 190;
          img.at(1, y, x + dx) = 210;
          img.at(2, y, x + dx) = 240;
        }
  }
  draw_line(img, margin, H - margin, W - margin, H - margin, {0, 0, 0});
  draw_line(img, margin, margin, margin, H - margin, {0, 0, 0});
  for (std::size_t t = 1; t < len; ++t)
    draw_line(img, px(double(t - 1)), py(mean[t - 1]), px(double(t)), py(mean[t]), {0.1, 0.25, 0.7});
  write_png(png, img);

  auto csv = png;
  csv.replace_extension(".csv");
  std::ofstream out(csv);
  out << "episode,mean,std\n";
  for (std::size_t t = 0; t < len; ++t) out << t << ',' << mean[t] << ',' << sd[t] << '\n';
  return stats;
}

}  // namespace replan::evalkit
