#include "replan/drm.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "replan/errors.hpp"
#include "replan/jsonl.hpp"
#include "replan/rng.hpp"
#include "nets.hpp"

namespace replan::drm {
namespace {

namespace nn = torch::nn;
using torch::indexing::Slice;
using nets::conv_down;
using nets::conv_up;
using nets::ilog2;
using nets::widths_down;
using nets::widths_up;

std::atomic<std::int64_t> g_clamped_scales{0};
constexpr double kMinScale = 1e-3;

// Tent-kernel interpolation matrix: weights[n, i, k] = max(0, 1 - |coord[n,i] - k|).
torch::Tensor tent_weights(const torch::Tensor& coord, int size) {
  auto k = torch::arange(size, coord.options());
  return torch::relu(1.0 - (coord.unsqueeze(-1) - k).abs());
}

// Normalised centres of `n` pixels: (2i + 1) / n - 1.
torch::Tensor pixel_centres(int n, const torch::TensorOptions& options) {
  return (2.0 * torch::arange(n, options) + 1.0) / double(n) - 1.0;
}

torch::Tensor safe_scale(const torch::Tensor& scale) {
  if ((scale <= 0).any().item<bool>()) {
    g_clamped_scales.fetch_add((scale <= 0).sum().item<std::int64_t>());
  }
  return scale.clamp_min(kMinScale);
}

}  // namespace

DrmConfig DrmConfig::from_config(const Config& config) {
  DrmConfig c;
  c.resolution = int(config.get_int("env.resolution"));
  c.grid = int(config.get_int("drm.grid"));
  c.glimpse = int(config.get_int("drm.glimpse"));
  c.z_what_dim = int(config.get_int("drm.z_what_dim"));
  c.z_bg_dim = int(config.get_int("drm.z_bg_dim"));
  c.z_ro_m_dim = int(config.get_int("drm.z_ro_m_dim"));
  c.z_ro_rgb_dim = int(config.get_int("drm.z_ro_rgb_dim"));
  c.bg_templates = int(config.get_int("drm.bg_templates"));
  c.sigma_bg = config.get_double("drm.sigma_bg");
  c.sigma_ro = config.get_double("drm.sigma_ro");
  c.sigma_obj = config.get_double("drm.sigma_obj");
  c.alpha_inter = config.get_double("drm.alpha_inter");
  c.alpha_intra = config.get_double("drm.alpha_intra");
  c.intra_mass_eps = config.get_double("drm.intra_mass_eps");
  c.pres_prior = config.get_double("drm.pres_prior");
  c.tau_start = config.get_double("drm.tau_start");
  c.tau_end = config.get_double("drm.tau_end");
  c.scale_min = config.get_double("drm.scale_min");
  c.scale_max = config.get_double("drm.scale_max");
  if (c.grid < 1 || c.resolution % c.grid != 0)
    throw ConfigError("drm.grid must divide env.resolution");
  if (c.pres_prior <= 0 || c.pres_prior >= 1) throw ConfigError("drm.pres_prior must be in (0,1)");
  if (!(c.scale_min > 0 && c.scale_min < c.scale_max && c.scale_max <= 1))
    throw ConfigError("drm.scale_min/scale_max must satisfy 0 < min < max <= 1");
  return c;
}

// ------------------------------------------------------------ custom ops

std::int64_t clamped_scale_count() { return g_clamped_scales.load(); }

torch::Tensor spatial_transform(const torch::Tensor& src, const torch::Tensor& where, int out_h,
                                int out_w) {
  if (src.dim() != 4 || where.dim() != 2 || where.size(1) != 4 || where.size(0) != src.size(0))
    throw ShapeError("spatial_transform expects src [N,C,h,w] and where [N,4]");
  const int h = int(src.size(2));
  const int w = int(src.size(3));
  const auto scale = safe_scale(where.index({Slice(), Slice(0, 2)}));
  const auto shift = where.index({Slice(), Slice(2, 4)});
  const auto cx = pixel_centres(out_w, src.options());
  const auto cy = pixel_centres(out_h, src.options());
  // Canvas coordinate -> glimpse pixel coordinate.
  const auto gx = (cx.unsqueeze(0) - shift.index({Slice(), Slice(0, 1)})) / scale.index({Slice(), Slice(0, 1)});
  const auto gy = (cy.unsqueeze(0) - shift.index({Slice(), Slice(1, 2)})) / scale.index({Slice(), Slice(1, 2)});
  const auto ux = ((gx + 1.0) * w - 1.0) * 0.5;  // [N, out_w]
  const auto uy = ((gy + 1.0) * h - 1.0) * 0.5;  // [N, out_h]
  const auto wx = tent_weights(ux, w);            // [N, out_w, w]
  const auto wy = tent_weights(uy, h);            // [N, out_h, h]
  return torch::matmul(torch::matmul(wy.unsqueeze(1), src), wx.transpose(1, 2).unsqueeze(1));
}

torch::Tensor extract_glimpse(const torch::Tensor& image, const torch::Tensor& where, int out_h,
                              int out_w) {
  if (image.dim() != 4 || where.dim() != 2 || where.size(1) != 4 || where.size(0) != image.size(0))
    throw ShapeError("extract_glimpse expects image [N,C,H,W] and where [N,4]");
  const int H = int(image.size(2));
  const int W = int(image.size(3));
  const auto scale = safe_scale(where.index({Slice(), Slice(0, 2)}));
  const auto shift = where.index({Slice(), Slice(2, 4)});
  const auto gx = pixel_centres(out_w, image.options());
  const auto gy = pixel_centres(out_h, image.options());
  const auto cx = shift.index({Slice(), Slice(0, 1)}) + scale.index({Slice(), Slice(0, 1)}) * gx.unsqueeze(0);
  const auto cy = shift.index({Slice(), Slice(1, 2)}) + scale.index({Slice(), Slice(1, 2)}) * gy.unsqueeze(0);
  const auto px = ((cx + 1.0) * W - 1.0) * 0.5;
  const auto py = ((cy + 1.0) * H - 1.0) * 0.5;
  const auto ax = tent_weights(px, W);  // [N, out_w, W]
  const auto ay = tent_weights(py, H);  // [N, out_h, H]
  return torch::matmul(torch::matmul(ay.unsqueeze(1), image), ax.transpose(1, 2).unsqueeze(1));
}

Placed place_glimpse(const torch::Tensor& glimpse_rgba, const torch::Tensor& where, int out_h,
                     int out_w) {
  if (glimpse_rgba.size(1) != 4) throw ShapeError("place_glimpse expects 4 channels (RGB + alpha)");
  const auto placed = spatial_transform(glimpse_rgba, where, out_h, out_w);
  return {placed.index({Slice(), Slice(0, 3)}), placed.index({Slice(), Slice(3, 4)})};
}

torch::Tensor gumbel_sample_with_noise(const torch::Tensor& logit, double temperature,
                                       const torch::Tensor& uniforms) {
  if (!(temperature > 0)) throw ParameterError("gumbel_sample: temperature must be > 0");
  const auto u = uniforms.clamp(1e-6, 1.0 - 1e-6);
  return torch::sigmoid((logit + torch::log(u) - torch::log1p(-u)) / temperature);
}

torch::Tensor gumbel_sample(const torch::Tensor& logit, double temperature,
                            at::Generator& generator) {
  if (!(temperature > 0)) throw ParameterError("gumbel_sample: temperature must be > 0");
  const auto u = torch::rand(logit.sizes(), generator, logit.options().requires_grad(false));
  return gumbel_sample_with_noise(logit, temperature, u);
}

torch::Tensor gaussian_kl(const torch::Tensor& mu, const torch::Tensor& logvar) {
  return 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).sum(-1);
}

torch::Tensor bernoulli_kl(const torch::Tensor& logit, double prior) {
  const auto q = torch::sigmoid(logit);
  const auto log_q = torch::nn::functional::logsigmoid(logit);
  const auto log_1mq = torch::nn::functional::logsigmoid(-logit);
  return q * (log_q - std::log(prior)) + (1.0 - q) * (log_1mq - std::log1p(-prior));
}

// ------------------------------------------------------------ losses

torch::Tensor mixture_log_likelihood(const torch::Tensor& image, const MixtureDecode& decode,
                                     const MixtureSigmas& sigmas) {
  constexpr double kLogTwoPi = 1.8378770664093453;
  auto branch = [&](const torch::Tensor& mu, const torch::Tensor& weight, double sigma) {
    const auto log_norm =
        (-(image - mu).pow(2) / (2.0 * sigma * sigma) - std::log(sigma) - 0.5 * kLogTwoPi).sum(1);
    return torch::log(weight.squeeze(1).clamp_min(1e-12)) + log_norm;  // [B, H, W]
  };
  const auto stacked = torch::stack({branch(decode.mu_ro, decode.m_ro, sigmas.ro),
                                     branch(decode.mu_obj, decode.m_obj, sigmas.obj),
                                     branch(decode.mu_bg, decode.m_bg, sigmas.bg)},
                                    0);
  return torch::logsumexp(stacked, 0).flatten(1).sum(1);
}

ElboTerms elbo_loss(const torch::Tensor& image, const LatentScene& scene,
                    const MixtureDecode& decode, const DrmConfig& config) {
  const auto& q = scene.posterior;
  ElboTerms t;
  t.nll = -mixture_log_likelihood(image, decode, {config.sigma_bg, config.sigma_ro, config.sigma_obj})
               .mean();
  t.kl_bg = gaussian_kl(q.bg_mu, q.bg_logvar).mean();
  t.kl_ro = (gaussian_kl(q.ro_m_mu, q.ro_m_logvar) + gaussian_kl(q.ro_rgb_mu, q.ro_rgb_logvar)).mean();
  t.kl_pres = bernoulli_kl(q.pres_logit, config.pres_prior).sum(1).mean();
  const auto pres = scene.cells.pres;
  t.kl_where = (pres * gaussian_kl(q.where_mu, q.where_logvar)).sum(1).mean();
  t.kl_what = (pres * gaussian_kl(q.what_mu, q.what_logvar)).sum(1).mean();
  t.loss = t.nll + t.kl_bg + t.kl_ro + t.kl_pres + t.kl_where + t.kl_what;
  if (!std::isfinite(t.loss.item<double>())) {
    std::ostringstream msg;
    msg << "DRM ELBO is not finite: nll=" << t.nll.item<double>()
        << " kl_bg=" << t.kl_bg.item<double>() << " kl_ro=" << t.kl_ro.item<double>()
        << " kl_pres=" << t.kl_pres.item<double>() << " kl_where=" << t.kl_where.item<double>()
        << " kl_what=" << t.kl_what.item<double>();
    throw NumericalError(msg.str());
  }
  return t;
}

torch::Tensor inter_entropy_loss(const torch::Tensor& m_ro, const torch::Tensor& cell_masks) {
  // cell_masks [B,K,1,H,W], m_ro [B,1,H,W]
  const auto overlap = cell_masks.sum(1) * m_ro;
  return overlap.abs().flatten(1).sum(1).mean();
}

torch::Tensor intra_entropy_loss(const torch::Tensor& cell_masks, double mass_eps) {
  const auto total = cell_masks.sum(1, true);                   // [B,1,1,H,W]
  const auto active = (total > mass_eps).to(cell_masks.dtype());
  const auto p = cell_masks / total.clamp_min(mass_eps);
  const auto plogp = torch::where(p > 0, p * torch::log(p.clamp_min(1e-30)), torch::zeros_like(p));
  const auto entropy = -(plogp.sum(1, true) * active);
  return entropy.flatten(1).sum(1).mean();
}

torch::Tensor weighted_total(const torch::Tensor& elbo, const torch::Tensor& inter,
                             const torch::Tensor& intra, const LossWeights& weights) {
  return weights.elbo * elbo + weights.inter * inter + weights.intra * intra;
}

// ------------------------------------------------------------ model

DrmModelImpl::DrmModelImpl(DrmConfig config) : config_(config) {
  const int R = config_.resolution;
  const int G = config_.grid;
  const int K = config_.cells();
  const int c = config_.channels;
  if (R % G != 0 || (R / G) & (R / G - 1)) throw ConfigError("resolution / grid must be a power of two");
  trunk_depth_ = ilog2(R / G);
  base_ = std::min(4, R);
  small_depth_ = ilog2(R / base_);

  grid_trunk_ = register_module("grid_trunk", conv_down(3, widths_down(trunk_depth_, c)));
  const int grid_feat = trunk_depth_ == 0 ? 3 : widths_down(trunk_depth_, c).back();
  grid_head_ = register_module("grid_head", nn::Conv2d(nn::Conv2dOptions(grid_feat, 9, 1)));

  const int small_feat = small_depth_ == 0 ? 3 : widths_down(small_depth_, c).back();
  const int flat = small_feat * base_ * base_;
  robot_trunk_ = register_module("robot_trunk", conv_down(3, widths_down(small_depth_, c)));
  robot_head_ = register_module(
      "robot_head", nn::Linear(flat, 2 * (config_.z_ro_m_dim + config_.z_ro_rgb_dim)));
  bg_trunk_ = register_module("bg_trunk", conv_down(3, widths_down(small_depth_, c / 2)));
  const int bg_feat = small_depth_ == 0 ? 3 : widths_down(small_depth_, c / 2).back();
  bg_head_ = register_module("bg_head", nn::Linear(bg_feat * base_ * base_, 2 * config_.z_bg_dim));

  const int g = config_.glimpse;
  const int g_base = std::min(4, g);
  const int g_depth = ilog2(g / g_base);
  glimpse_encoder_ = register_module("glimpse_encoder", conv_down(3, widths_down(g_depth, 16)));
  const int g_feat = g_depth == 0 ? 3 : widths_down(g_depth, 16).back();
  glimpse_head_ = register_module("glimpse_head", nn::Linear(g_feat * g_base * g_base, 2 * config_.z_what_dim));
  glimpse_fc_ = register_module("glimpse_fc", nn::Linear(config_.z_what_dim, 32 * g_base * g_base));
  glimpse_decoder_ = register_module("glimpse_decoder", conv_up(32, widths_up(g_depth, 16), 4));

  // Spatial broadcast decoder at low resolution, then learned upsampling.
  broadcast_res_ = std::min(16, R);
  const int up_depth = ilog2(R / broadcast_res_);
  nn::Sequential broadcast;
  int in = config_.z_ro_m_dim + 2;
  for (int i = 0; i < 3; ++i) {
    broadcast->push_back(nn::Conv2d(nn::Conv2dOptions(in, c, 3).padding(1)));
    broadcast->push_back(nn::CELU());
    in = c;
  }
  robot_mask_broadcast_ = register_module("robot_mask_broadcast", broadcast);
  robot_mask_decoder_ = register_module("robot_mask_decoder", conv_up(c, widths_up(up_depth, c / 2), 1));
  const auto lin = pixel_centres(broadcast_res_, torch::TensorOptions().dtype(torch::kFloat32));
  auto mesh = torch::meshgrid({lin, lin}, "ij");
  broadcast_coords_ = register_buffer("broadcast_coords", torch::stack({mesh[1], mesh[0]}, 0).unsqueeze(0));
  robot_rgb_decoder_ = register_module(
      "robot_rgb_decoder",
      nn::Sequential(nn::Linear(config_.z_ro_rgb_dim, 64), nn::CELU(), nn::Linear(64, 3)));

  bg_select_ = register_module("bg_select", nn::Linear(config_.z_bg_dim, config_.bg_templates));
  bg_templates_ = register_parameter("bg_templates", 0.1 * torch::randn({config_.bg_templates, 3, R, R}));

  auto offsets = torch::empty({K, 2});
  for (int j = 0; j < G; ++j)
    for (int i = 0; i < G; ++i) {
      offsets[j * G + i][0] = std::atanh(-1.0 + (2.0 * i + 1.0) / G);
      offsets[j * G + i][1] = std::atanh(-1.0 + (2.0 * j + 1.0) / G);
    }
  cell_offsets_ = register_buffer("cell_offsets", offsets);

  // Start with boxes of roughly one cell and even presence odds.
  torch::NoGradGuard guard;
  const double target = (1.0 / G - config_.scale_min) / (config_.scale_max - config_.scale_min);
  const double scale_bias = std::log(std::clamp(target, 0.05, 0.95) / (1.0 - std::clamp(target, 0.05, 0.95)));
  grid_head_->bias.zero_();
  grid_head_->bias.index_put_({Slice(1, 3)}, scale_bias);
  grid_head_->bias.index_put_({Slice(5, 9)}, -6.0);
  auto set_logvar_bias = [](nn::Linear& head, int dim) {
    head->bias.index_put_({Slice(dim, 2 * dim)}, -4.0);
  };
  set_logvar_bias(bg_head_, config_.z_bg_dim);
  set_logvar_bias(glimpse_head_, config_.z_what_dim);
  robot_head_->bias.index_put_({Slice(config_.z_ro_m_dim, 2 * config_.z_ro_m_dim)}, -8.0);
  robot_head_->bias.index_put_(
      {Slice(2 * config_.z_ro_m_dim + config_.z_ro_rgb_dim, 2 * (config_.z_ro_m_dim + config_.z_ro_rgb_dim))}, -4.0);
  // Masks start nearly empty so the background explains the image first.
  auto last_bias = [](nn::Sequential& seq) {
    return seq->ptr(seq->size() - 1)->as<nn::Conv2d>()->bias;
  };
  last_bias(glimpse_decoder_).index_put_({3}, -2.0);
  last_bias(robot_mask_decoder_).fill_(-2.0);
}

torch::Tensor DrmModelImpl::where_from_raw(const torch::Tensor& raw) const {
  const auto scale = config_.scale_min +
                     (config_.scale_max - config_.scale_min) * torch::sigmoid(raw.index({"...", Slice(0, 2)}));
  const auto shift = torch::tanh(raw.index({"...", Slice(2, 4)}) + cell_offsets_.to(raw.dtype()));
  return torch::cat({scale, shift}, -1);
}

LatentScene DrmModelImpl::encode(const torch::Tensor& images, const SamplingMode& mode) {
  const int R = config_.resolution;
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != R || images.size(3) != R)
    throw ShapeError("DRM expects images [B,3," + std::to_string(R) + "," + std::to_string(R) + "]");
  if (mode.stochastic && mode.generator == nullptr)
    throw ParameterError("stochastic encoding needs a generator");
  const auto B = images.size(0);
  const int K = config_.cells();
  auto sample = [&](const torch::Tensor& mu, const torch::Tensor& logvar) {
    if (!mode.stochastic) return mu;
    const auto eps = torch::randn(mu.sizes(), *mode.generator, mu.options().requires_grad(false));
    return mu + eps * torch::exp(0.5 * logvar);
  };

  LatentScene s;
  auto& q = s.posterior;

  const auto centred = images * 2.0 - 1.0;
  const auto grid = grid_head_->forward(grid_trunk_->forward(centred));  // [B,9,G,G]
  const auto cells = grid.flatten(2).transpose(1, 2);                    // [B,K,9]
  q.pres_logit = cells.index({"...", 0});
  q.where_mu = cells.index({"...", Slice(1, 5)});
  q.where_logvar = cells.index({"...", Slice(5, 9)}).clamp(-10.0, 4.0);

  const auto where_raw = sample(q.where_mu, q.where_logvar);
  s.cells.where = where_from_raw(where_raw);
  if (mode.force_present)
    s.cells.pres = torch::ones_like(q.pres_logit).detach();
  else if (mode.stochastic)
    s.cells.pres = gumbel_sample(q.pres_logit, mode.temperature, *mode.generator);
  else
    s.cells.pres = (q.pres_logit > 0).to(images.dtype());

  const int g = config_.glimpse;
  const auto flat_where = s.cells.where.reshape({B * K, 4});
  const auto repeated = images.unsqueeze(1).expand({B, K, 3, R, R}).reshape({B * K, 3, R, R});
  const auto glimpses = extract_glimpse(repeated, flat_where, g, g);
  const auto what_params = glimpse_head_->forward(glimpse_encoder_->forward(glimpses * 2.0 - 1.0).flatten(1));
  const int Dw = config_.z_what_dim;
  q.what_mu = what_params.index({Slice(), Slice(0, Dw)}).reshape({B, K, Dw});
  q.what_logvar = what_params.index({Slice(), Slice(Dw, 2 * Dw)}).clamp(-10.0, 4.0).reshape({B, K, Dw});
  s.cells.what = sample(q.what_mu, q.what_logvar);

  const int Dm = config_.z_ro_m_dim;
  const int Dr = config_.z_ro_rgb_dim;
  const auto robot = robot_head_->forward(robot_trunk_->forward(centred).flatten(1));
  q.ro_m_mu = robot.index({Slice(), Slice(0, Dm)});
  q.ro_m_logvar = robot.index({Slice(), Slice(Dm, 2 * Dm)}).clamp(-10.0, 4.0);
  q.ro_rgb_mu = robot.index({Slice(), Slice(2 * Dm, 2 * Dm + Dr)});
  q.ro_rgb_logvar = robot.index({Slice(), Slice(2 * Dm + Dr, 2 * Dm + 2 * Dr)}).clamp(-10.0, 4.0);
  s.z_ro_m = sample(q.ro_m_mu, q.ro_m_logvar);
  s.z_ro_rgb = sample(q.ro_rgb_mu, q.ro_rgb_logvar);

  const int Db = config_.z_bg_dim;
  const auto bg = bg_head_->forward(bg_trunk_->forward(centred).flatten(1));
  q.bg_mu = bg.index({Slice(), Slice(0, Db)});
  q.bg_logvar = bg.index({Slice(), Slice(Db, 2 * Db)}).clamp(-10.0, 4.0);
  s.z_bg = sample(q.bg_mu, q.bg_logvar);
  return s;
}

torch::Tensor DrmModelImpl::decode_robot_mask(const torch::Tensor& z) {
  const auto B = z.size(0);
  const int b = broadcast_res_;
  const auto tiled = z.view({B, -1, 1, 1}).expand({B, z.size(1), b, b});
  const auto coords = broadcast_coords_.to(z.dtype()).expand({B, 2, b, b});
  const auto h = robot_mask_broadcast_->forward(torch::cat({tiled, coords}, 1));
  return torch::sigmoid(robot_mask_decoder_->forward(h));
}

// One colour per image: the robot branch cannot paint textures or other objects.
torch::Tensor DrmModelImpl::decode_robot_rgb(const torch::Tensor& z) {
  const auto B = z.size(0);
  const int R = config_.resolution;
  return torch::sigmoid(robot_rgb_decoder_->forward(z)).view({B, 3, 1, 1}).expand({B, 3, R, R});
}

torch::Tensor DrmModelImpl::decode_background(const torch::Tensor& z) {
  const auto w = torch::softmax(bg_select_->forward(z), -1);                // [B,T]
  const auto templates = torch::sigmoid(bg_templates_).to(z.dtype());      // [T,3,R,R]
  return torch::einsum("bt,tchw->bchw", {w, templates});
}

MixtureDecode DrmModelImpl::decode(const LatentScene& scene) {
  const int R = config_.resolution;
  const int K = config_.cells();
  const int g = config_.glimpse;
  const auto B = scene.batch();
  const int g_base = std::min(4, g);
  MixtureDecode d;

  const auto what = scene.cells.what.reshape({B * K, config_.z_what_dim});
  const auto glimpse = torch::sigmoid(
      glimpse_decoder_->forward(glimpse_fc_->forward(what).view({B * K, 32, g_base, g_base})));
  d.glimpses = glimpse.view({B, K, 4, g, g});
  const auto placed = place_glimpse(glimpse, scene.cells.where.reshape({B * K, 4}), R, R);
  const auto pres = scene.cells.pres.reshape({B, K, 1, 1, 1});
  d.cell_masks = placed.mask.view({B, K, 1, R, R}) * pres;
  d.cell_rgb = placed.rgb.view({B, K, 3, R, R});

  const auto mass = d.cell_masks.sum(1);                                      // [B,1,R,R]
  d.mu_obj = (d.cell_masks * d.cell_rgb).sum(1) / (mass + 1e-8);
  const auto m_obj_raw = 1.0 - torch::prod(1.0 - d.cell_masks, 1);           // [B,1,R,R]

  d.m_ro = decode_robot_mask(scene.z_ro_m);
  d.mu_ro = decode_robot_rgb(scene.z_ro_rgb);
  d.mu_bg = decode_background(scene.z_bg);

  // The robot is composited in front of the objects.
  d.m_obj = m_obj_raw * (1.0 - d.m_ro);
  d.m_bg = (1.0 - d.m_ro) * (1.0 - m_obj_raw);
  d.reconstruction = d.m_ro * d.mu_ro + d.m_obj * d.mu_obj + d.m_bg * d.mu_bg;
  return d;
}

LossBreakdown DrmModelImpl::total_loss(const torch::Tensor& images, const SamplingMode& mode) {
  return total_loss(images, mode, {1.0, config_.alpha_inter, config_.alpha_intra});
}

LossBreakdown DrmModelImpl::total_loss(const torch::Tensor& images, const SamplingMode& mode,
                                       const LossWeights& weights) {
  const auto scene = encode(images, mode);
  const auto decoded = decode(scene);
  LossBreakdown out;
  out.terms = elbo_loss(images, scene, decoded, config_);
  out.elbo = weights.kl == 1.0 ? out.terms.loss
                                : out.terms.nll + weights.kl * (out.terms.loss - out.terms.nll);
  out.inter = inter_entropy_loss(decoded.m_ro, decoded.cell_masks);
  out.intra = intra_entropy_loss(decoded.cell_masks, config_.intra_mass_eps);
  out.total = weighted_total(out.elbo, out.inter, out.intra, weights);
  return out;
}

namespace {

// k-means++ seeding followed by Lloyd iterations; rows of x are points.
torch::Tensor kmeans(const torch::Tensor& x, int k, std::mt19937_64& rng, bool median) {
  const auto N = x.size(0);
  std::vector<std::int64_t> picks{std::int64_t(uniform_int(rng, 0, N - 1))};
  auto d2 = (x - x[picks[0]]).pow(2).sum(1);
  while (int(picks.size()) < k) {
    const auto cdf = torch::cumsum(d2.to(torch::kFloat64), 0);
    const double r = uniform(rng) * cdf[N - 1].item<double>();
    auto idx = torch::searchsorted(cdf, torch::tensor({r}, torch::kFloat64)).item<std::int64_t>();
    idx = std::min<std::int64_t>(idx, N - 1);
    picks.push_back(idx);
    d2 = torch::minimum(d2, (x - x[idx]).pow(2).sum(1));
  }
  auto centroids = x.index_select(0, torch::tensor(picks, torch::kInt64)).clone();
  for (int it = 0; it < 10; ++it) {
    const auto assign = torch::cdist(x, centroids).argmin(1);
    for (int t = 0; t < k; ++t) {
      const auto members = x.index_select(0, (assign == t).nonzero().squeeze(1));
      if (members.size(0) == 0) continue;
      centroids[t] = median ? std::get<0>(members.median(0)) : members.mean(0);
    }
  }
  return centroids;
}

}  // namespace

void DrmModelImpl::init_from_data(const torch::Tensor& images, std::uint64_t seed) {
  torch::NoGradGuard guard;
  const int T = config_.bg_templates;
  const int R = config_.resolution;
  if (images.size(0) < T) throw ConfigError("init_from_data needs at least one image per template");
  const auto x = images.flatten(1).to(torch::kFloat32);
  auto rng = make_rng(seed, 0x6b6d65616eULL);
  // The per-pixel median is robust to the moving robot and objects.
  const auto centroids = kmeans(x, T, rng, true);
  bg_templates_.copy_(torch::logit(centroids.view({T, 3, R, R}).clamp(0.02, 0.98)));

  const auto nearest = torch::cdist(x, centroids).argmin(1);
  const auto residual = (x - centroids.index_select(0, nearest)).view({-1, 3, R * R});
  const auto outlier = residual.pow(2).sum(1) > 0.09;  // [N, R*R]
  const auto colours = images.to(torch::kFloat32).view({-1, 3, R * R}).transpose(1, 2).reshape({-1, 3});
  const auto fg = colours.index_select(0, outlier.flatten().nonzero().squeeze(1));
  if (fg.size(0) < 2) return;
  const auto clusters = kmeans(fg, 2, rng, false);
  const auto assign = torch::cdist(fg, clusters).argmin(1);
  const bool first_larger = (assign == 0).sum().item<std::int64_t>() >= (assign == 1).sum().item<std::int64_t>();
  const auto robot = torch::logit(clusters[first_larger ? 0 : 1].clamp(0.02, 0.98));
  const auto object = torch::logit(clusters[first_larger ? 1 : 0].clamp(0.02, 0.98));
  robot_rgb_decoder_->ptr(robot_rgb_decoder_->size() - 1)->as<nn::Linear>()->bias.copy_(robot);
  auto glimpse_bias = glimpse_decoder_->ptr(glimpse_decoder_->size() - 1)->as<nn::Conv2d>()->bias;
  glimpse_bias.index_put_({Slice(0, 3)}, object);
}

torch::Tensor DrmModelImpl::planner_latent(const LatentScene& scene) const {
  const auto& q = scene.posterior;
  const auto B = q.pres_logit.size(0);
  const auto present = (q.pres_logit > 0).to(q.where_mu.dtype()).unsqueeze(-1);
  const auto where = where_from_raw(q.where_mu) * present;  // sentinel: zeros
  return torch::cat({q.ro_m_mu, where.reshape({B, -1})}, 1);
}

torch::Tensor DrmModelImpl::planner_latents(const torch::Tensor& images) {
  torch::NoGradGuard guard;
  return planner_latent(encode(images, {false, 1.0, nullptr}));
}

torch::Tensor DrmModelImpl::decode_planner_latent(const torch::Tensor& planner_latent,
                                                  const LatentScene& reference) {
  torch::NoGradGuard guard;
  const auto B = planner_latent.size(0);
  const int K = config_.cells();
  const int Dm = config_.z_ro_m_dim;
  if (planner_latent.dim() != 2 || planner_latent.size(1) != config_.planner_dim())
    throw ShapeError("decode_planner_latent: expected [B," + std::to_string(config_.planner_dim()) + "]");
  auto expand = [&](const torch::Tensor& t) {
    return t.index({Slice(0, 1)}).expand({B, t.size(1)}).contiguous();
  };
  LatentScene s;
  s.z_ro_m = planner_latent.index({Slice(), Slice(0, Dm)});
  s.z_bg = expand(reference.posterior.bg_mu);
  s.z_ro_rgb = expand(reference.posterior.ro_rgb_mu);
  const auto where = planner_latent.index({Slice(), Slice(Dm, torch::indexing::None)}).reshape({B, K, 4});
  s.cells.where = where;
  s.cells.pres = (where.index({"...", 0}) > 0.5 * config_.scale_min).to(where.dtype());
  const auto ref_best = reference.posterior.pres_logit.index({0}).argmax().item<std::int64_t>();
  const auto what = reference.posterior.what_mu.index({0, ref_best});
  s.cells.what = what.view({1, 1, -1}).expand({B, K, what.size(0)}).contiguous();
  return decode(s).reconstruction;
}

// ------------------------------------------------------------ training

TrainConfig TrainConfig::from_config(const Config& config) {
  TrainConfig t;
  t.epochs = int(config.get_int("drm.epochs"));
  t.batch_size = int(config.get_int("drm.batch_size"));
  t.lr = config.get_double("drm.lr");
  t.min_frames = int(config.get_int("drm.min_frames"));
  t.log_every = int(config.get_int("drm.log_every"));
  t.seed = std::uint64_t(config.get_int("run.seed"));
  t.template_lr_scale = config.get_double("drm.template_lr_scale");
  t.entropy_warmup = config.get_double("drm.entropy_warmup");
  t.kl_warmup = config.get_double("drm.kl_warmup");
  t.presence_warmup = config.get_double("drm.presence_warmup");
  return t;
}

double annealed_temperature(const DrmConfig& config, double progress) {
  const double f = std::clamp(progress / 0.5, 0.0, 1.0);
  return config.tau_start + (config.tau_end - config.tau_start) * f;
}

namespace {

LossRecord record_from(const LossBreakdown& l, int epoch, int step, double tau) {
  LossRecord r;
  r.epoch = epoch;
  r.step = step;
  r.temperature = tau;
  r.total = l.total.item<double>();
  r.elbo = l.elbo.item<double>();
  r.inter = l.inter.item<double>();
  r.intra = l.intra.item<double>();
  r.nll = l.terms.nll.item<double>();
  r.kl = r.elbo - r.nll;
  return r;
}

nlohmann::json to_json(const LossRecord& r) {
  return {{"epoch", r.epoch}, {"step", r.step}, {"temperature", r.temperature},
          {"total", r.total}, {"elbo", r.elbo}, {"inter", r.inter},
          {"intra", r.intra}, {"nll", r.nll},   {"kl", r.kl}};
}

double probe_loss(DrmModel& model, const torch::Tensor& probe, double tau, std::uint64_t seed) {
  torch::NoGradGuard guard;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return model->total_loss(probe, {true, tau, &gen}).total.item<double>();
}

}  // namespace

TrainResult train_drm(DrmModel& model, const torch::Tensor& images, const TrainConfig& train,
                      const std::filesystem::path& out_dir,
                      const std::function<void(const LossRecord&)>& on_record) {
  const auto N = images.size(0);
  if (N < train.min_frames)
    throw ConfigError("DRM dataset has " + std::to_string(N) + " frames; at least " +
                      std::to_string(train.min_frames) + " are required");
  if (train.batch_size < 1 || train.epochs < 1) throw ConfigError("drm.batch_size and drm.epochs must be >= 1");

  const DrmConfig& cfg = model->config();
  model->init_from_data(images, derive_seed(train.seed, 0x62676e64ULL));
  std::vector<torch::Tensor> body;
  for (auto& p : model->named_parameters())
    if (p.key() != "bg_templates") body.push_back(p.value());
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(body, std::make_unique<torch::optim::AdamOptions>(train.lr));
  if (train.template_lr_scale > 0)
    groups.emplace_back(std::vector<torch::Tensor>{model->background_templates()},
                        std::make_unique<torch::optim::AdamOptions>(train.lr * train.template_lr_scale));
  else
    model->background_templates().set_requires_grad(false);
  torch::optim::Adam optimizer(groups, torch::optim::AdamOptions(train.lr));
  auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(train.seed, 0x67756d62ULL));
  auto rng = make_rng(train.seed, 0x73687566ULL);

  JsonlWriter log;
  if (!out_dir.empty()) log = JsonlWriter(out_dir / "drm_loss.jsonl", false);

  const auto probe = images.index({Slice(0, std::min<std::int64_t>(N, 64))});
  const std::uint64_t probe_seed = derive_seed(train.seed, 0x70726f62ULL);
  TrainResult result;
  result.initial_total = probe_loss(model, probe, cfg.tau_end, probe_seed);

  const std::int64_t steps_per_epoch = (N + train.batch_size - 1) / train.batch_size;
  const std::int64_t total_steps = steps_per_epoch * train.epochs;
  std::vector<std::int64_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  Archive last_good;
  save_drm(last_good, model);

  int step = 0;
  model->train();
  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::int64_t b = 0; b < steps_per_epoch; ++b) {
      const auto begin = b * train.batch_size;
      const auto end = std::min<std::int64_t>(N, begin + train.batch_size);
      const auto idx = torch::from_blob(order.data() + begin, {end - begin}, torch::kInt64).clone();
      const auto batch = images.index_select(0, idx);
      const double progress = double(step) / double(total_steps);
      const double tau = annealed_temperature(cfg, progress);
      LossBreakdown loss;
      try {
        auto ramp = [&](double fraction) {
          return fraction > 0 ? std::min(1.0, progress / fraction) : 1.0;
        };
        const double e = ramp(train.entropy_warmup);
        loss = model->total_loss(batch, {true, tau, &gen, progress < train.presence_warmup},
                                 {1.0, e * cfg.alpha_inter, e * cfg.alpha_intra, ramp(train.kl_warmup)});
      } catch (const NumericalError&) {
        last_good.get_module("drm/param/", *model);
        if (!out_dir.empty()) last_good.save(out_dir / "drm_last_good.rpa");
        throw;
      }
      if (!std::isfinite(loss.total.item<double>())) {
        last_good.get_module("drm/param/", *model);
        if (!out_dir.empty()) last_good.save(out_dir / "drm_last_good.rpa");
        throw NumericalError("DRM total loss diverged at step " + std::to_string(step));
      }
      optimizer.zero_grad();
      loss.total.backward();
      torch::nn::utils::clip_grad_norm_(model->parameters(), 100.0);
      optimizer.step();
      if (step % train.log_every == 0) {
        const auto rec = record_from(loss, epoch, step, tau);
        result.curve.push_back(rec);
        if (log.is_open()) log.write(to_json(rec));
        if (on_record) on_record(rec);
      }
      ++step;
    }
    last_good = Archive();
    save_drm(last_good, model);
    if (!out_dir.empty()) last_good.save(out_dir / "drm_last.rpa");
  }
  model->eval();
  result.final_total = probe_loss(model, probe, cfg.tau_end, probe_seed);
  if (log.is_open())
    log.write({{"summary", true}, {"initial_total", result.initial_total}, {"final_total", result.final_total}});
  return result;
}

// ------------------------------------------------------------ persistence

void save_drm_config(Archive& archive, const DrmConfig& c) {
  archive.put_ints("drm/config/ints", {c.resolution, c.grid, c.glimpse, c.z_what_dim, c.z_bg_dim,
                                       c.z_ro_m_dim, c.z_ro_rgb_dim, c.bg_templates, c.channels});
  archive.put_doubles("drm/config/doubles",
                      {c.sigma_bg, c.sigma_ro, c.sigma_obj, c.alpha_inter, c.alpha_intra,
                       c.intra_mass_eps, c.pres_prior, c.tau_start, c.tau_end, c.scale_min,
                       c.scale_max});
}

DrmConfig load_drm_config(const Archive& archive) {
  const auto i = archive.get_ints("drm/config/ints");
  const auto d = archive.get_doubles("drm/config/doubles");
  if (i.size() != 9 || d.size() != 11) throw ArchiveError("DRM config entry has unexpected size");
  DrmConfig c;
  c.resolution = int(i[0]);
  c.grid = int(i[1]);
  c.glimpse = int(i[2]);
  c.z_what_dim = int(i[3]);
  c.z_bg_dim = int(i[4]);
  c.z_ro_m_dim = int(i[5]);
  c.z_ro_rgb_dim = int(i[6]);
  c.bg_templates = int(i[7]);
  c.channels = int(i[8]);
  c.sigma_bg = d[0];
  c.sigma_ro = d[1];
  c.sigma_obj = d[2];
  c.alpha_inter = d[3];
  c.alpha_intra = d[4];
  c.intra_mass_eps = d[5];
  c.pres_prior = d[6];
  c.tau_start = d[7];
  c.tau_end = d[8];
  c.scale_min = d[9];
  c.scale_max = d[10];
  return c;
}

void save_drm(Archive& archive, const DrmModel& model) {
  archive.put_string("model/kind", "drm");
  save_drm_config(archive, model->config());
  archive.put_module("drm/param/", *model);
}

DrmModel load_drm(const Archive& archive) {
  if (archive.contains("model/kind") && archive.get_string("model/kind") != "drm")
    throw ArchiveError("archive holds a '" + archive.get_string("model/kind") + "' model, not a DRM");
  DrmModel model(load_drm_config(archive));
  archive.get_module("drm/param/", *model);
  model->eval();
  return model;
}

}  // namespace replan::drm
