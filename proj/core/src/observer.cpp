#include "replan/observer.hpp"

#include "replan/errors.hpp"

namespace replan {
namespace {

using torch::indexing::Slice;

torch::Tensor stack_images(const std::vector<const Image*>& images, std::size_t expected) {
  if (images.size() != expected) throw ShapeError("observer needs one image per state");
  return to_batch(images);
}

}  // namespace

DrmObserver::DrmObserver(drm::DrmModel model) : model_(std::move(model)) { model_->eval(); }

torch::Tensor DrmObserver::encode(const std::vector<env::EnvState>& states,
                                  const std::vector<const Image*>& images) {
  return model_->planner_latents(stack_images(images, states.size()));
}

torch::Tensor DrmObserver::project(const torch::Tensor& z) const {
  const auto& c = model_->config();
  const int G = c.grid;
  const int K = c.cells();
  const int Dm = c.z_ro_m_dim;
  if (z.dim() != 2 || z.size(1) != c.planner_dim())
    throw ShapeError("project expects [B," + std::to_string(c.planner_dim()) + "]");
  const auto B = z.size(0);
  const auto blocks = z.index({Slice(), Slice(Dm, torch::indexing::None)}).reshape({B, K, 4});
  const auto strength = blocks.index({"...", 0}) + blocks.index({"...", 1});
  const auto best = strength.argmax(1);
  const auto rows = torch::arange(B, torch::kInt64);
  auto block = blocks.index({rows, best});  // [B, 4]
  const auto scale = block.index({Slice(), Slice(0, 2)}).clamp(c.scale_min, c.scale_max);
  const auto shift = block.index({Slice(), Slice(2, 4)}).clamp(-0.999, 0.999);
  const auto cell = ((shift + 1.0) * 0.5 * G).floor().clamp(0, G - 1).to(torch::kInt64);
  const auto index = cell.index({Slice(), 1}) * G + cell.index({Slice(), 0});
  auto out_blocks = torch::zeros({B, K, 4}, z.options());
  out_blocks.index_put_({rows, index}, torch::cat({scale, shift}, 1));
  return torch::cat({z.index({Slice(), Slice(0, Dm)}), out_blocks.reshape({B, K * 4})}, 1);
}

std::optional<torch::Tensor> DrmObserver::decode(const torch::Tensor& z, const Image& reference) {
  torch::NoGradGuard guard;
  const auto scene = model_->encode(to_batch({&reference}), {false, 1.0, nullptr});
  return model_->decode_planner_latent(z.dim() == 1 ? z.unsqueeze(0) : z, scene);
}

VaeObserver::VaeObserver(vae::VaeModel model) : model_(std::move(model)) { model_->eval(); }

torch::Tensor VaeObserver::encode(const std::vector<env::EnvState>& states,
                                  const std::vector<const Image*>& images) {
  return model_->latents(stack_images(images, states.size()));
}

std::optional<torch::Tensor> VaeObserver::decode(const torch::Tensor& z, const Image& reference) {
  (void)reference;
  torch::NoGradGuard guard;
  return model_->decode(z.dim() == 1 ? z.unsqueeze(0) : z);
}

torch::Tensor StateObserver::encode(const std::vector<env::EnvState>& states,
                                    const std::vector<const Image*>& images) {
  (void)images;
  auto out = torch::empty({std::int64_t(states.size()), 4});
  auto a = out.accessor<float, 2>();
  for (std::size_t i = 0; i < states.size(); ++i) {
    a[i][0] = float(states[i].robot.x);
    a[i][1] = float(states[i].robot.y);
    a[i][2] = float(states[i].puck.x);
    a[i][3] = float(states[i].puck.y);
  }
  return out;
}

std::unique_ptr<Observer> load_observer(const std::string& kind, const Archive* archive) {
  if (kind == "state") return std::make_unique<StateObserver>();
  if (kind != "drm" && kind != "vae")
    throw ConfigError("run.observation must be drm, vae or state, got '" + kind + "'");
  if (archive == nullptr) throw ConfigError("observation '" + kind + "' needs a trained model archive");
  if (kind == "drm") return std::make_unique<DrmObserver>(drm::load_drm(*archive));
  return std::make_unique<VaeObserver>(vae::load_vae(*archive));
}

}  // namespace replan
