#include "replan/vae.hpp"

#include <cmath>
#include <numeric>

#include "replan/errors.hpp"
#include "replan/jsonl.hpp"
#include "replan/rng.hpp"
#include "nets.hpp"

namespace replan::vae {
namespace {

namespace nn = torch::nn;
using torch::indexing::Slice;

constexpr int kBase = 4;

}  // namespace

VaeConfig VaeConfig::from_config(const Config& config) {
  VaeConfig c;
  c.resolution = int(config.get_int("env.resolution"));
  c.latent_dim = int(config.get_int("drm.vae_dim"));
  c.sigma = config.get_double("drm.vae_sigma");
  if (c.latent_dim < 1) throw ConfigError("drm.vae_dim must be >= 1");
  if (!(c.sigma > 0)) throw ConfigError("drm.vae_sigma must be > 0");
  return c;
}

VaeModelImpl::VaeModelImpl(VaeConfig config) : config_(config) {
  const int R = config_.resolution;
  if (R < kBase || (R & (R - 1))) throw ConfigError("VAE resolution must be a power of two >= 4");
  depth_ = nets::ilog2(R / kBase);
  const auto widths = nets::widths_down(depth_, config_.channels);
  const int feat = depth_ == 0 ? 3 : widths.back();
  encoder_ = register_module("encoder", nets::conv_down(3, widths));
  head_ = register_module("head", nn::Linear(feat * kBase * kBase, 2 * config_.latent_dim));
  fc_ = register_module("fc", nn::Linear(config_.latent_dim, feat * kBase * kBase));
  decoder_ = register_module("decoder", nets::conv_up(feat, nets::widths_up(depth_, config_.channels), 3));
  torch::NoGradGuard guard;
  head_->bias.index_put_({Slice(config_.latent_dim, 2 * config_.latent_dim)}, -4.0);
}

torch::Tensor VaeModelImpl::decode(const torch::Tensor& z) {
  const auto h = fc_->forward(z).view({z.size(0), -1, kBase, kBase});
  return torch::sigmoid(decoder_->forward(h));
}

VaeOutput VaeModelImpl::forward(const torch::Tensor& images, at::Generator* generator) {
  const int R = config_.resolution;
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != R || images.size(3) != R)
    throw ShapeError("VAE expects images [B,3," + std::to_string(R) + "," + std::to_string(R) + "]");
  const int D = config_.latent_dim;
  const auto params = head_->forward(encoder_->forward(images * 2.0 - 1.0).flatten(1));
  VaeOutput out;
  out.mu = params.index({Slice(), Slice(0, D)});
  out.logvar = params.index({Slice(), Slice(D, 2 * D)}).clamp(-10.0, 4.0);
  if (generator != nullptr) {
    const auto eps = torch::randn(out.mu.sizes(), *generator, out.mu.options().requires_grad(false));
    out.z = out.mu + eps * torch::exp(0.5 * out.logvar);
  } else {
    out.z = out.mu;
  }
  out.reconstruction = decode(out.z);
  return out;
}

torch::Tensor VaeModelImpl::latents(const torch::Tensor& images) {
  torch::NoGradGuard guard;
  return forward(images, nullptr).mu;
}

torch::Tensor VaeModelImpl::loss(const torch::Tensor& images, at::Generator* generator, double kl_weight) {
  const auto out = forward(images, generator);
  constexpr double kLogTwoPi = 1.8378770664093453;
  const double s = config_.sigma;
  const auto nll = ((images - out.reconstruction).pow(2) / (2.0 * s * s) + std::log(s) + 0.5 * kLogTwoPi)
                       .flatten(1)
                       .sum(1)
                       .mean();
  const auto kl = drm::gaussian_kl(out.mu, out.logvar).mean();
  const auto total = nll + kl_weight * kl;
  if (!std::isfinite(total.item<double>()))
    throw NumericalError("VAE loss is not finite: nll=" + std::to_string(nll.item<double>()) +
                         " kl=" + std::to_string(kl.item<double>()));
  return total;
}

drm::TrainResult train_vae(VaeModel& model, const torch::Tensor& images, const drm::TrainConfig& train,
                           const std::filesystem::path& out_dir,
                           const std::function<void(const drm::LossRecord&)>& on_record) {
  const auto N = images.size(0);
  if (N < train.min_frames)
    throw ConfigError("VAE dataset has " + std::to_string(N) + " frames; at least " +
                      std::to_string(train.min_frames) + " are required");
  if (train.batch_size < 1 || train.epochs < 1) throw ConfigError("drm.batch_size and drm.epochs must be >= 1");

  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(train.lr));
  auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(train.seed, 0x67756d62ULL));
  auto rng = make_rng(train.seed, 0x73687566ULL);
  JsonlWriter log;
  if (!out_dir.empty()) log = JsonlWriter(out_dir / "vae_loss.jsonl", false);

  const auto probe = images.index({Slice(0, std::min<std::int64_t>(N, 64))});
  auto probe_loss = [&] {
    torch::NoGradGuard guard;
    auto g = at::make_generator<at::CPUGeneratorImpl>(derive_seed(train.seed, 0x70726f62ULL));
    return model->loss(probe, &g).item<double>();
  };
  drm::TrainResult result;
  result.initial_total = probe_loss();

  const std::int64_t steps_per_epoch = (N + train.batch_size - 1) / train.batch_size;
  const std::int64_t total_steps = steps_per_epoch * train.epochs;
  std::vector<std::int64_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  Archive last_good;
  save_vae(last_good, model);
  int step = 0;
  model->train();
  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::int64_t b = 0; b < steps_per_epoch; ++b) {
      const auto begin = b * train.batch_size;
      const auto end = std::min<std::int64_t>(N, begin + train.batch_size);
      const auto idx = torch::from_blob(order.data() + begin, {end - begin}, torch::kInt64).clone();
      const double progress = double(step) / double(total_steps);
      const double kl_weight = train.kl_warmup > 0 ? std::min(1.0, progress / train.kl_warmup) : 1.0;
      torch::Tensor loss;
      try {
        loss = model->loss(images.index_select(0, idx), &gen, kl_weight);
      } catch (const NumericalError&) {
        last_good.get_module("vae/param/", *model);
        if (!out_dir.empty()) last_good.save(out_dir / "vae_last_good.rpa");
        throw;
      }
      optimizer.zero_grad();
      loss.backward();
      torch::nn::utils::clip_grad_norm_(model->parameters(), 100.0);
      optimizer.step();
      if (step % train.log_every == 0) {
        drm::LossRecord rec;
        rec.epoch = epoch;
        rec.step = step;
        rec.total = rec.elbo = loss.item<double>();
        result.curve.push_back(rec);
        if (log.is_open())
          log.write({{"epoch", rec.epoch}, {"step", rec.step}, {"total", rec.total}, {"kl_weight", kl_weight}});
        if (on_record) on_record(rec);
      }
      ++step;
    }
    last_good = Archive();
    save_vae(last_good, model);
    if (!out_dir.empty()) last_good.save(out_dir / "vae_last.rpa");
  }
  model->eval();
  result.final_total = probe_loss();
  if (log.is_open())
    log.write({{"summary", true}, {"initial_total", result.initial_total}, {"final_total", result.final_total}});
  return result;
}

void save_vae(Archive& archive, const VaeModel& model) {
  const auto& c = model->config();
  archive.put_string("model/kind", "vae");
  archive.put_ints("vae/config/ints", {c.resolution, c.latent_dim, c.channels});
  archive.put_doubles("vae/config/doubles", {c.sigma});
  archive.put_module("vae/param/", *model);
}

VaeModel load_vae(const Archive& archive) {
  if (archive.get_string("model/kind") != "vae")
    throw ArchiveError("archive holds a '" + archive.get_string("model/kind") + "' model, not a VAE");
  const auto i = archive.get_ints("vae/config/ints");
  const auto d = archive.get_doubles("vae/config/doubles");
  if (i.size() != 3 || d.size() != 1) throw ArchiveError("VAE config entry has unexpected size");
  VaeConfig c;
  c.resolution = int(i[0]);
  c.latent_dim = int(i[1]);
  c.channels = int(i[2]);
  c.sigma = d[0];
  VaeModel model(c);
  archive.get_module("vae/param/", *model);
  model->eval();
  return model;
}

}  // namespace replan::vae
