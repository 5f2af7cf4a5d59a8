#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcbd/checkpoint.hpp"
#include "dcbd/dataset.hpp"
#include "dcbd/losses.hpp"
#include "dcbd/metrics.hpp"
#include "dcbd/model.hpp"
#include "dcbd/noise.hpp"
#include "dcbd/optim.hpp"

namespace dcbd::train {

/// mse supervises only the denoised output; composite adds the edge term
/// and total-variation smoothing of the estimated sigma map.
enum class LossMode { mse, composite };

struct TrainConfig {
  model::ModelConfig model = model::ModelConfig::standard();
  data::DatasetConfig data;
  std::uint64_t iterations = 700000;
  optim::Schedule schedule;
  LossMode loss = LossMode::mse;
  loss::LossWeights weights;
  loss::Reduction reduction = loss::Reduction::global;
  double grad_clip = 0.0;  // 0 disables global-norm clipping
  std::uint64_t log_every = 100;
  std::uint64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::uint64_t val_every = 0;         // 0 disables periodic validation
  double val_sigma = 25.0;
  std::uint64_t val_seed = 0;
  bool resume = false;  // continue from out_dir/latest.dcbd when present
};

struct LogRecord {
  std::uint64_t iter = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> val_psnr;

  /// `iter=<n> lr=<f> loss=<f> [val_psnr=<f>]`
  std::string str() const;
};

struct NamedImage {
  std::string name;
  Tensor pixels;
};

std::vector<NamedImage> load_images(const std::filesystem::path& manifest,
                                    int channels);

/// Maps a 1 x C x H x W noisy image to its estimate.
using Denoiser = std::function<Tensor(const Tensor&)>;

/// Eval-mode model inference. Sizes that are not multiples of 4 are
/// reflect-padded (split evenly, extra row/column at the bottom/right) and
/// cropped back.
Denoiser model_denoiser(const model::Model& model,
                        Precision precision = Precision::f64);
model::ModelOutput<Tensor> infer_padded(const model::Model& model,
                                        const Tensor& noisy,
                                        Precision precision = Precision::f64);

/// Adds noise to every image (image i uses seed split_seed(spec.seed, i)),
/// denoises it and scores noisy and denoised against clean. With
/// `quantize`, images are clipped and snapped to 8 bits before scoring.
metrics::MetricReport evaluate(const Denoiser& denoiser,
                               std::span<const NamedImage> images,
                               const noise::NoiseSpec& spec,
                               bool quantize = true);

class Trainer {
 public:
  Trainer(TrainConfig config, data::Dataset data);

  /// Continues from a checkpoint written by a trainer with the same model
  /// configuration.
  void restore(const ckpt::Checkpoint& checkpoint);
  void set_validation(std::vector<NamedImage> images);

  /// One optimizer iteration; returns the batch loss.
  double step();

  /// Runs until `config.iterations`, emitting log records through `sink`.
  /// Periodic checkpoints go to `checkpoint_dir` when it is non-empty.
  void run(const std::function<void(const LogRecord&)>& sink,
           const std::filesystem::path& checkpoint_dir = {});

  double validate() const;
  void save(const std::filesystem::path& path) const;

  const model::Model& model() const { return model_; }
  model::Model& model() { return model_; }
  const TrainConfig& config() const { return config_; }
  std::uint64_t iteration() const { return iteration_; }
  const optim::AdamState& adam() const { return adam_; }
  double last_loss() const { return last_loss_; }

 private:
  TrainConfig config_;
  data::Dataset data_;
  model::Model model_;
  optim::AdamState adam_;
  Rng rng_;
  std::uint64_t iteration_ = 0;
  double last_loss_ = 0.0;
  std::vector<NamedImage> validation_;
};

struct TrainResult {
  std::uint64_t iterations = 0;
  double final_loss = 0.0;
  std::vector<LogRecord> log;
  std::filesystem::path final_checkpoint;
};

/// Full training run: reads the manifests, writes `train.log`,
/// periodic checkpoints, `latest.dcbd` and `final.dcbd` into `out_dir`.
TrainResult train(const TrainConfig& config,
                  const std::filesystem::path& manifest,
                  const std::filesystem::path& out_dir,
                  const std::filesystem::path& val_manifest = {},
                  const std::function<void(const LogRecord&)>& echo = {});

}  // namespace dcbd::train
