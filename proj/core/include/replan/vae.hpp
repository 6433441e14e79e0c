#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>

#include <torch/torch.h>

#include "replan/archive.hpp"
#include "replan/config.hpp"
#include "replan/drm.hpp"

namespace replan::vae {

// Monolithic convolutional VAE: one latent vector per image, Gaussian
// likelihood with fixed std. Baseline encoder for the w/o-DRM ablation.
struct VaeConfig {
  int resolution = 64;
  int latent_dim = 16;
  int channels = 32;
  double sigma = 0.1;

  static VaeConfig from_config(const Config& config);
};

struct VaeOutput {
  torch::Tensor mu, logvar, z;   // [B, D]
  torch::Tensor reconstruction;  // [B, 3, H, W]
};

class VaeModelImpl : public torch::nn::Module {
 public:
  explicit VaeModelImpl(VaeConfig config);

  // generator == nullptr: posterior mean, no sampling.
  VaeOutput forward(const torch::Tensor& images, at::Generator* generator);
  torch::Tensor decode(const torch::Tensor& z);
  torch::Tensor latents(const torch::Tensor& images);
  // Negative ELBO per batch with the KL term scaled by kl_weight.
  torch::Tensor loss(const torch::Tensor& images, at::Generator* generator, double kl_weight = 1.0);

  const VaeConfig& config() const { return config_; }

 private:
  VaeConfig config_;
  int depth_ = 0;
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::Linear head_{nullptr};
  torch::nn::Linear fc_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
};
TORCH_MODULE(VaeModel);

// Same optimiser, schedule and logging as the DRM trainer (no entropy terms).
drm::TrainResult train_vae(VaeModel& model, const torch::Tensor& images,
                           const drm::TrainConfig& train,
                           const std::filesystem::path& out_dir = {},
                           const std::function<void(const drm::LossRecord&)>& on_record = {});

void save_vae(Archive& archive, const VaeModel& model);
VaeModel load_vae(const Archive& archive);

}  // namespace replan::vae
