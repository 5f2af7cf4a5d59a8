#include "dcbd/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "dcbd/error.hpp"
#include "dcbd/image_io.hpp"
#include "dcbd/metrics.hpp"

namespace dcbd::train {
namespace {

// Activations are multi-megabyte blocks freed and reallocated every
// iteration; keeping them on the heap avoids a page-fault storm from mmap.
void retain_large_blocks() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  });
#endif
}

}  // namespace

std::string LogRecord::str() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "iter=%llu lr=%.6g loss=%.8g",
                static_cast<unsigned long long>(iter), lr, loss);
  std::string s = buf;
  if (val_psnr) {
    std::snprintf(buf, sizeof buf, " val_psnr=%.4f", *val_psnr);
    s += buf;
  }
  return s;
}

std::vector<NamedImage> load_images(const std::filesystem::path& manifest,
                                    int channels) {
  std::vector<NamedImage> out;
  for (const auto& p : data::read_manifest(manifest))
    out.push_back({p.filename().string(),
                   io::match_channels(io::read_image(p), channels)});
  return out;
}

model::ModelOutput<Tensor> infer_padded(const model::Model& model,
                                        const Tensor& noisy,
                                        Precision precision) {
  const Shape s = noisy.shape();
  const int ph = (4 - s.h % 4) % 4, pw = (4 - s.w % 4) % 4;
  if (ph == 0 && pw == 0) return model.infer(noisy, precision);
  const int top = ph / 2, left = pw / 2;
  Tensor padded = io::pad_reflect(noisy, top, ph - top, left, pw - left);
  auto out = model.infer(padded, precision);
  return {io::crop(out.denoised, top, left, s.h, s.w),
          io::crop(out.sigma_map, top, left, s.h, s.w)};
}

Denoiser model_denoiser(const model::Model& model, Precision precision) {
  return [&model, precision](const Tensor& noisy) {
    return infer_padded(model, noisy, precision).denoised;
  };
}

metrics::MetricReport evaluate(const Denoiser& denoiser,
                               std::span<const NamedImage> images,
                               const noise::NoiseSpec& spec, bool quantize) {
  spec.validate();
  metrics::MetricReport report;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor& clean = images[i].pixels;
    noise::NoiseSpec per_image = spec;
    per_image.seed = split_seed(spec.seed, i);
    Tensor noisy = noise::synthesize(clean, per_image).noisy;
    Tensor denoised = denoiser(noisy);
    if (quantize) {
      noisy = metrics::quantize_8bit(noisy);
      denoised = metrics::quantize_8bit(denoised);
    }
    metrics::ImageScore score;
    score.name = images[i].name;
    score.noisy_psnr = metrics::psnr(noisy, clean, 1.0);
    score.noisy_ssim = metrics::ssim(noisy, clean, 1.0);
    score.denoised_psnr = metrics::psnr(denoised, clean, 1.0);
    score.denoised_ssim = metrics::ssim(denoised, clean, 1.0);
    report.images.push_back(std::move(score));
  }
  report.summarize();
  return report;
}

Trainer::Trainer(TrainConfig config, data::Dataset data)
    : config_(std::move(config)),
      data_(std::move(data)),
      model_(config_.model),
      adam_(optim::AdamState::for_parameters(model_.parameters(),
                                             optim::lr_at(config_.schedule, 0))),
      rng_(config_.data.seed) {
  retain_large_blocks();
  config_.weights.validate();
  if (data_.config().channels != config_.model.input_channels)
    fail(ErrorKind::config, "train.channels",
         "dataset and model channel counts differ");
}

void Trainer::restore(const ckpt::Checkpoint& checkpoint) {
  if (checkpoint.model.config().serialize() != model_.config().serialize())
    fail(ErrorKind::config, "train.resume",
         "checkpoint model configuration differs from the run configuration");
  if (!checkpoint.training)
    fail(ErrorKind::format, "ckpt.missing", "checkpoint has no training state");
  model_ = checkpoint.model;
  adam_ = checkpoint.training->adam;
  iteration_ = checkpoint.training->iteration;
  rng_ = checkpoint.training->rng;
}

void Trainer::set_validation(std::vector<NamedImage> images) {
  validation_ = std::move(images);
}

double Trainer::step() {
  adam_.lr = optim::lr_at(config_.schedule, iteration_);
  const data::Batch batch = data_.batch_at(iteration_);

  Tape tape;
  const std::vector<Var> params = model_.bind(tape);
  Var noisy = tape.constant(batch.noisy);
  Var clean = tape.constant(batch.clean);
  auto out = model_.forward(params, noisy, nn::NormMode::train);
  Var loss = config_.loss == LossMode::mse
                 ? loss::mse_loss(out.denoised, clean)
                 : loss::total_loss(out.denoised, clean, out.sigma_map,
                                    config_.weights, config_.reduction);
  const double value = loss.value().item();
  if (!std::isfinite(value))
    fail(ErrorKind::numeric, "train.loss",
         "loss is not finite at iteration " + std::to_string(iteration_));

  Gradients grads = tape.backward(loss);
  std::vector<Tensor*> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) g[i] = grads.find(params[i]);
  if (config_.grad_clip > 0.0) optim::clip_global_norm(g, config_.grad_clip);
  std::vector<const Tensor*> cg(g.begin(), g.end());
  optim::adam_step(model_.parameters(), cg, adam_);

  ++iteration_;
  last_loss_ = value;
  return value;
}

double Trainer::validate() const {
  noise::NoiseSpec spec;
  spec.kind = noise::NoiseSpec::Kind::uniform;
  spec.sigma = config_.val_sigma;
  spec.seed = config_.val_seed;
  return evaluate(model_denoiser(model_), validation_, spec).psnr_db;
}

void Trainer::save(const std::filesystem::path& path) const {
  ckpt::TrainingState state{iteration_, adam_, rng_};
  ckpt::save_checkpoint(path, model_, &state);
}

void Trainer::run(const std::function<void(const LogRecord&)>& sink,
                  const std::filesystem::path& checkpoint_dir) {
  while (iteration_ < config_.iterations) {
    const double lr = optim::lr_at(config_.schedule, iteration_);
    const double loss = step();
    const bool last = iteration_ == config_.iterations;
    const bool want_val = config_.val_every > 0 && !validation_.empty() &&
                          (iteration_ % config_.val_every == 0 || last);
    const bool want_log = want_val || last ||
                          (config_.log_every > 0 && iteration_ % config_.log_every == 0);
    if (want_log && sink) {
      LogRecord rec{iteration_, lr, loss, std::nullopt};
      if (want_val) rec.val_psnr = validate();
      sink(rec);
    }
    if (!checkpoint_dir.empty() && config_.checkpoint_every > 0 &&
        iteration_ % config_.checkpoint_every == 0) {
      save(checkpoint_dir / ("ckpt_" + std::to_string(iteration_) + ".dcbd"));
      save(checkpoint_dir / "latest.dcbd");
    }
  }
}

TrainResult train(const TrainConfig& config, const std::filesystem::path& manifest,
                  const std::filesystem::path& out_dir,
                  const std::filesystem::path& val_manifest,
                  const std::function<void(const LogRecord&)>& echo) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::io, "io.mkdir", "cannot create " + out_dir.string());

  Trainer trainer(config, data::Dataset::from_manifest(manifest, config.data));
  if (!val_manifest.empty())
    trainer.set_validation(load_images(val_manifest, config.model.input_channels));
  const auto latest = out_dir / "latest.dcbd";
  if (config.resume && std::filesystem::exists(latest))
    trainer.restore(ckpt::load_checkpoint(latest));

  std::ofstream log(out_dir / "train.log",
                    config.resume ? std::ios::app : std::ios::trunc);
  if (!log) fail(ErrorKind::io, "io.open", "cannot open training log");
  TrainResult result;
  auto sink = [&](const LogRecord& rec) {
    log << rec.str() << '\n';
    log.flush();
    result.log.push_back(rec);
    if (echo) echo(rec);
  };
  try {
    trainer.run(sink, out_dir);
    result.final_checkpoint = out_dir / "final.dcbd";
    trainer.save(result.final_checkpoint);
    trainer.save(latest);
  } catch (...) {
    log.flush();
    throw;
  }
  result.iterations = trainer.iteration();
  result.final_loss = trainer.last_loss();
  return result;
}

}  // namespace dcbd::train
