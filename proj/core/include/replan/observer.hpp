#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "replan/archive.hpp"
#include "replan/drm.hpp"
#include "replan/env.hpp"
#include "replan/vae.hpp"

namespace replan {

// Maps environment observations to the planning space shared by the planner,
// the reachability model and the policy.
class Observer {
 public:
  virtual ~Observer() = default;

  virtual std::string kind() const = 0;
  virtual int dim() const = 0;
  virtual bool needs_images() const { return true; }

  // [B, dim]; `images` may be empty when needs_images() is false.
  virtual torch::Tensor encode(const std::vector<env::EnvState>& states,
                               const std::vector<const Image*>& images) = 0;
  torch::Tensor encode_one(const env::EnvState& state, const Image& image) {
    return encode({state}, {&image})[0];
  }

  // Snaps arbitrary vectors onto latents the encoder can produce.
  virtual torch::Tensor project(const torch::Tensor& z) const { return z; }

  // Renders latents for inspection; `reference` supplies appearance.
  virtual std::optional<torch::Tensor> decode(const torch::Tensor& z, const Image& reference) {
    (void)z;
    (void)reference;
    return std::nullopt;
  }
};

// Planner latent of the disentangled model.
class DrmObserver : public Observer {
 public:
  explicit DrmObserver(drm::DrmModel model);
  std::string kind() const override { return "drm"; }
  int dim() const override { return model_->config().planner_dim(); }
  torch::Tensor encode(const std::vector<env::EnvState>& states,
                       const std::vector<const Image*>& images) override;
  // Keeps the robot block, moves the strongest object block into the cell
  // containing its centre, clamps it to the valid scale range and zeroes the
  // other cells.
  torch::Tensor project(const torch::Tensor& z) const override;
  std::optional<torch::Tensor> decode(const torch::Tensor& z, const Image& reference) override;
  drm::DrmModel& model() { return model_; }

 private:
  drm::DrmModel model_;
};

// Posterior mean of the monolithic VAE.
class VaeObserver : public Observer {
 public:
  explicit VaeObserver(vae::VaeModel model);
  std::string kind() const override { return "vae"; }
  int dim() const override { return model_->config().latent_dim; }
  torch::Tensor encode(const std::vector<env::EnvState>& states,
                       const std::vector<const Image*>& images) override;
  std::optional<torch::Tensor> decode(const torch::Tensor& z, const Image& reference) override;

 private:
  vae::VaeModel model_;
};

// Raw positions (robot_x, robot_y, puck_x, puck_y) in workspace units.
class StateObserver : public Observer {
 public:
  std::string kind() const override { return "state"; }
  int dim() const override { return 4; }
  bool needs_images() const override { return false; }
  torch::Tensor encode(const std::vector<env::EnvState>& states,
                       const std::vector<const Image*>& images) override;
  torch::Tensor project(const torch::Tensor& z) const override { return z.clamp(0.0, 1.0); }
};

// Builds the observer named by `kind` from a model archive (ignored for "state").
std::unique_ptr<Observer> load_observer(const std::string& kind, const Archive* archive);

}  // namespace replan
