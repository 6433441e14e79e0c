#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <torch/torch.h>

#include "replan/archive.hpp"
#include "replan/config.hpp"

namespace replan::drm {

struct DrmConfig {
  int resolution = 64;
  int grid = 4;
  int glimpse = 16;
  int z_what_dim = 16;
  int z_bg_dim = 8;
  int z_ro_m_dim = 8;
  int z_ro_rgb_dim = 16;
  int bg_templates = 4;
  double sigma_bg = 0.15;
  double sigma_ro = 0.10;
  double sigma_obj = 0.10;
  double alpha_inter = 10.0;
  double alpha_intra = 1.0;
  double intra_mass_eps = 0.01;
  double pres_prior = 0.01;
  double tau_start = 2.0;
  double tau_end = 0.5;
  double scale_min = 0.05;
  double scale_max = 0.5;
  int channels = 32;  // width of the convolutional trunks

  int cells() const { return grid * grid; }
  // Planner latent: robot mask latent followed by one z_where block per cell.
  int planner_dim() const { return z_ro_m_dim + 4 * cells(); }

  static DrmConfig from_config(const Config& config);
};

// ------------------------------------------------------------ custom ops

// Number of times a non-positive glimpse scale was clamped.
std::int64_t clamped_scale_count();

// Places (or extracts) patches under the axis-aligned map
//   canvas = shift + scale * glimpse   (both in normalised [-1,1] coordinates)
// with bilinear interpolation and zero padding. The map is separable, so the
// resampling is two batched matrix products with tent-kernel weights; it is
// differentiable in the source pixels and in `where`.
//   src:   [N, C, h, w]
//   where: [N, 4] = (scale_x, scale_y, shift_x, shift_y)
// Returns [N, C, out_h, out_w].
torch::Tensor spatial_transform(const torch::Tensor& src, const torch::Tensor& where, int out_h,
                                int out_w);
// Inverse direction: reads a glimpse of size out_h x out_w from `image`.
torch::Tensor extract_glimpse(const torch::Tensor& image, const torch::Tensor& where, int out_h,
                              int out_w);

struct Placed {
  torch::Tensor rgb;   // [N, 3, H, W]
  torch::Tensor mask;  // [N, 1, H, W]
};
// Glimpse with an alpha channel ([N, 4, g, g]) placed on the canvas.
Placed place_glimpse(const torch::Tensor& glimpse_rgba, const torch::Tensor& where, int out_h,
                     int out_w);

// Relaxed Bernoulli (binary Gumbel-Softmax) sample, differentiable in `logit`.
torch::Tensor gumbel_sample(const torch::Tensor& logit, double temperature,
                            at::Generator& generator);
// Same, with caller supplied uniforms in (0,1).
torch::Tensor gumbel_sample_with_noise(const torch::Tensor& logit, double temperature,
                                       const torch::Tensor& uniforms);

// KL(N(mu, exp(logvar)) || N(0, 1)) summed over the last dimension.
torch::Tensor gaussian_kl(const torch::Tensor& mu, const torch::Tensor& logvar);
// KL(Bernoulli(sigmoid(logit)) || Bernoulli(prior)), elementwise.
torch::Tensor bernoulli_kl(const torch::Tensor& logit, double prior);

// ------------------------------------------------------------ data types

struct Posterior {
  torch::Tensor bg_mu, bg_logvar;          // [B, Dbg]
  torch::Tensor ro_m_mu, ro_m_logvar;      // [B, Dm]
  torch::Tensor ro_rgb_mu, ro_rgb_logvar;  // [B, Drgb]
  torch::Tensor pres_logit;                // [B, K]
  torch::Tensor where_mu, where_logvar;    // [B, K, 4], pre-activation
  torch::Tensor what_mu, what_logvar;      // [B, K, Dw]
};

struct ObjectCells {
  torch::Tensor pres;   // [B, K] in [0,1]; hard 0/1 in deterministic mode
  torch::Tensor where;  // [B, K, 4] (scale_x, scale_y, shift_x, shift_y)
  torch::Tensor what;   // [B, K, Dw]
};

struct LatentScene {
  torch::Tensor z_bg;      // [B, Dbg]
  torch::Tensor z_ro_m;    // [B, Dm]
  torch::Tensor z_ro_rgb;  // [B, Drgb]
  ObjectCells cells;
  Posterior posterior;

  std::int64_t batch() const { return z_bg.size(0); }
};

struct MixtureDecode {
  torch::Tensor mu_bg, mu_ro, mu_obj;  // [B, 3, H, W]
  torch::Tensor m_ro, m_obj, m_bg;     // [B, 1, H, W]; m_ro + m_obj + m_bg = 1
  torch::Tensor cell_masks;            // [B, K, 1, H, W], presence applied
  torch::Tensor cell_rgb;              // [B, K, 3, H, W]
  torch::Tensor glimpses;              // [B, K, 4, g, g]
  torch::Tensor reconstruction;        // [B, 3, H, W]
};

// Sampling behaviour of `encode`.
struct SamplingMode {
  bool stochastic = true;  // false: posterior means and hard presence
  double temperature = 1.0;
  at::Generator* generator = nullptr;  // required when stochastic
  bool force_present = false;          // every cell present, no gradient to presence
};

struct MixtureSigmas {
  double bg = 0.15, ro = 0.10, obj = 0.10;
};

// log p(image | mixture) per image, [B]. Pixels are mixtures of three
// diagonal Gaussians with fixed std.
torch::Tensor mixture_log_likelihood(const torch::Tensor& image, const MixtureDecode& decode,
                                     const MixtureSigmas& sigmas);

struct ElboTerms {
  torch::Tensor nll, kl_bg, kl_ro, kl_pres, kl_where, kl_what;  // batch means
  torch::Tensor loss;  // nll + all KL terms (negative ELBO)
};

ElboTerms elbo_loss(const torch::Tensor& image, const LatentScene& scene,
                    const MixtureDecode& decode, const DrmConfig& config);


// || sum_i m_obj_i * m_ro ||_1 per image, averaged over the batch.
torch::Tensor inter_entropy_loss(const torch::Tensor& m_ro, const torch::Tensor& cell_masks);
// Pixel-wise entropy of cell ownership (masks renormalised across cells where
// their total exceeds mass_eps), summed over pixels, averaged over the batch.
torch::Tensor intra_entropy_loss(const torch::Tensor& cell_masks, double mass_eps = 0.01);

struct LossWeights {
  double elbo = 1.0;
  double inter = 10.0;
  double intra = 1.0;
  double kl = 1.0;  // multiplies every KL term inside the ELBO
};

struct LossBreakdown {
  torch::Tensor elbo, inter, intra, total;
  ElboTerms terms;
};

torch::Tensor weighted_total(const torch::Tensor& elbo, const torch::Tensor& inter,
                             const torch::Tensor& intra, const LossWeights& weights);

// ------------------------------------------------------------ model

class DrmModelImpl : public torch::nn::Module {
 public:
  explicit DrmModelImpl(DrmConfig config);

  LatentScene encode(const torch::Tensor& images, const SamplingMode& mode);
  MixtureDecode decode(const LatentScene& scene);

  // Loss of one batch; `mode` controls the posterior samples.
  LossBreakdown total_loss(const torch::Tensor& images, const SamplingMode& mode);
  LossBreakdown total_loss(const torch::Tensor& images, const SamplingMode& mode,
                           const LossWeights& weights);


  // [B, planner_dim]; present cells contribute their z_where, absent cells
  // the sentinel (all zeros). Uses the posterior means.
  torch::Tensor planner_latent(const LatentScene& scene) const;
  torch::Tensor planner_latents(const torch::Tensor& images);

  // Renders a planner latent with appearance latents taken from `reference`
  // (background, robot colour and the glimpse of its strongest cell).
  torch::Tensor decode_planner_latent(const torch::Tensor& planner_latent,
                                      const LatentScene& reference);

  const DrmConfig& config() const { return config_; }

  torch::Tensor where_from_raw(const torch::Tensor& raw) const;

  // Data-driven start: background templates become per-pixel medians of
  // k-means clusters of `images`; the colours of pixels the templates cannot
  // explain are split in two, the larger cluster seeding the robot colour and
  // the other the glimpse colour.
  void init_from_data(const torch::Tensor& images, std::uint64_t seed);
  torch::Tensor& background_templates() { return bg_templates_; }

 private:
  torch::Tensor decode_robot_mask(const torch::Tensor& z);
  torch::Tensor decode_robot_rgb(const torch::Tensor& z);
  torch::Tensor decode_background(const torch::Tensor& z);

  DrmConfig config_;
  int trunk_depth_ = 0;
  int small_depth_ = 0;
  int base_ = 4;

  torch::nn::Sequential grid_trunk_{nullptr};
  torch::nn::Conv2d grid_head_{nullptr};
  torch::nn::Sequential robot_trunk_{nullptr};
  torch::nn::Linear robot_head_{nullptr};
  torch::nn::Sequential bg_trunk_{nullptr};
  torch::nn::Linear bg_head_{nullptr};
  torch::nn::Sequential glimpse_encoder_{nullptr};
  torch::nn::Linear glimpse_head_{nullptr};
  torch::nn::Linear glimpse_fc_{nullptr};
  torch::nn::Sequential glimpse_decoder_{nullptr};
  torch::nn::Sequential robot_mask_broadcast_{nullptr};
  torch::nn::Sequential robot_mask_decoder_{nullptr};
  torch::Tensor broadcast_coords_;  // [1, 2, b, b]
  int broadcast_res_ = 16;
  torch::nn::Sequential robot_rgb_decoder_{nullptr};
  torch::nn::Linear bg_select_{nullptr};
  torch::Tensor bg_templates_;
  torch::Tensor cell_offsets_;  // [K, 2] atanh of cell centres
};
TORCH_MODULE(DrmModel);

// ------------------------------------------------------------ training

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  int min_frames = 1000;
  int log_every = 20;
  double template_lr_scale = 0.0;
  double entropy_warmup = 0.2;
  double kl_warmup = 0.2;
  double presence_warmup = 0.1;  // fraction of training with every cell forced present
  std::uint64_t seed = 0;

  static TrainConfig from_config(const Config& config);
};

struct LossRecord {
  int epoch = 0;
  int step = 0;
  double temperature = 0;
  double total = 0, elbo = 0, inter = 0, intra = 0, nll = 0, kl = 0;
};

struct TrainResult {
  std::vector<LossRecord> curve;
  double initial_total = 0;
  double final_total = 0;
};

// Gumbel temperature at a training progress fraction in [0,1].
double annealed_temperature(const DrmConfig& config, double progress);


// Minibatch Adam on the total loss. `images` is [N,3,H,W]. When `out_dir` is
// non-empty, per-epoch checkpoints and `drm_loss.jsonl` are written there.
// A non-finite loss restores the last good parameters, saves them and throws
// NumericalError.
TrainResult train_drm(DrmModel& model, const torch::Tensor& images, const TrainConfig& train,
                      const std::filesystem::path& out_dir = {},
                      const std::function<void(const LossRecord&)>& on_record = {});

void save_drm(Archive& archive, const DrmModel& model);
DrmModel load_drm(const Archive& archive);
void save_drm_config(Archive& archive, const DrmConfig& config);
DrmConfig load_drm_config(const Archive& archive);

}  // namespace replan::drm
