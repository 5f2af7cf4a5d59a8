#include "dcbd/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>

#include "dcbd/config.hpp"
#include "dcbd/error.hpp"
#include "dcbd/image_io.hpp"
#include "dcbd/noise.hpp"
#include "dcbd/trainer.hpp"

namespace dcbd::cli {
namespace {

namespace fs = std::filesystem;

std::pair<std::string, std::string> split_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0)
    fail(ErrorKind::config, "config.syntax",
         "override '" + s + "' is not key=value");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

void check_sigma(double sigma, const char* flag) {
  if (!(sigma >= 0.0 && sigma <= noise::kMaxSigma))
    fail(ErrorKind::config, "config.range",
         std::string(flag) + ": noise level must lie in [0, 75]");
}

noise::NoiseSpec noise_from_flags(std::optional<double> sigma, bool variant,
                                  std::optional<double> lambda,
                                  std::uint64_t seed) {
  noise::NoiseSpec spec;
  spec.seed = seed;
  if (variant) {
    if (sigma)
      fail(ErrorKind::config, "cli.noise", "--sigma and --variant are exclusive");
    if (!lambda) fail(ErrorKind::config, "cli.noise", "--variant needs --lambda");
    check_sigma(*lambda, "--lambda");
    spec.kind = noise::NoiseSpec::Kind::variant;
    spec.lambda = *lambda;
  } else {
    if (!sigma) fail(ErrorKind::config, "cli.noise", "one of --sigma or --variant is required");
    if (lambda) fail(ErrorKind::config, "cli.noise", "--lambda needs --variant");
    check_sigma(*sigma, "--sigma");
    spec.kind = noise::NoiseSpec::Kind::uniform;
    spec.sigma = *sigma;
  }
  return spec;
}

std::string format_row(const std::string& label, const std::vector<int>& values) {
  char buf[32];
  std::string line;
  std::snprintf(buf, sizeof buf, "%-12s", label.c_str());
  line += buf;
  for (int v : values) {
    std::snprintf(buf, sizeof buf, "%5d", v);
    line += buf;
  }
  return line + "\n";
}

}  // namespace

std::string rf_table() {
  const auto cfg = model::ModelConfig::standard();
  const auto est_steps = model::rf_schedule(cfg.estimator);
  const auto est = rf::trace(est_steps, 1, 1);

  std::string out;
  char buf[96];
  std::snprintf(buf, sizeof buf, "estimator   rf=%d jump=%d\n", est.final_rf,
                est.final_jump);
  out += buf;
  std::vector<int> layers(12);
  for (int i = 0; i < 12; ++i) layers[i] = i + 1;
  out += format_row("layer", layers);

  auto emit = [&](const std::string& name, const std::vector<model::LayerSpec>& spec,
                  const auto& reference) {
    const auto steps = model::rf_schedule(spec);
    const auto row = rf::receptive_field(steps, est.final_rf, est.final_jump);
    std::vector<int> ref(reference.begin(), reference.end());
    std::vector<int> diff(row.size());
    for (std::size_t i = 0; i < row.size() && i < ref.size(); ++i)
      diff[i] = row[i] - ref[i];
    out += format_row(name, row);
    out += format_row(name + "_ref", ref);
    out += format_row(name + "_diff", diff);
  };
  emit("upper", cfg.upper, rf::kReferenceUpper);
  emit("lower", cfg.lower, rf::kReferenceLower);
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Dual-branch convolutional denoiser"};
  app.require_subcommand(1);

  // train
  std::string config_file;
  std::optional<std::uint64_t> train_seed;
  std::vector<std::string> sets;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", config_file, "key=value config file");
  train_cmd->add_option("--seed", train_seed, "overrides the config seed");
  train_cmd->add_option("--set", sets, "key=value override (repeatable)");
  train_cmd->add_option("--out", train_out, "overrides out_dir");

  // denoise
  std::string ckpt, in_path, out_path, map_path;
  bool use_f32 = false;
  auto* denoise_cmd = app.add_subcommand("denoise", "denoise one image");
  denoise_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  denoise_cmd->add_option("--in", in_path, "noisy PGM/PPM")->required();
  denoise_cmd->add_option("--out", out_path, "denoised PGM/PPM")->required();
  denoise_cmd->add_option("--sigma-map", map_path, "16-bit estimated noise map");
  denoise_cmd->add_flag("--f32", use_f32, "round activations to float32");

  // eval
  std::string manifest;
  std::optional<double> sigma, lambda;
  bool variant = false, records = false, raw = false;
  std::uint64_t seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on clean images");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval_cmd->add_option("--manifest", manifest, "clean image list")->required();
  eval_cmd->add_option("--sigma", sigma, "uniform noise level");
  eval_cmd->add_flag("--variant", variant, "spatially variant noise");
  eval_cmd->add_option("--lambda", lambda, "variant peak level");
  eval_cmd->add_option("--seed", seed, "noise seed");
  eval_cmd->add_flag("--records", records, "line-delimited key=value output");
  eval_cmd->add_flag("--no-quantize", raw, "score unquantized outputs");

  // synth-noise
  std::string noise_map_path;
  auto* synth_cmd = app.add_subcommand("synth-noise", "add synthetic noise to an image");
  synth_cmd->add_option("--in", in_path, "clean PGM/PPM")->required();
  synth_cmd->add_option("--out", out_path, "noisy PGM/PPM")->required();
  synth_cmd->add_option("--sigma", sigma, "uniform noise level");
  synth_cmd->add_flag("--variant", variant, "spatially variant noise");
  synth_cmd->add_option("--lambda", lambda, "variant peak level");
  synth_cmd->add_option("--map", noise_map_path, "16-bit noise level map");
  synth_cmd->add_option("--seed", seed, "noise seed");

  auto* rf_cmd = app.add_subcommand("rf-table", "print per-layer receptive fields");

  auto report = [&](const std::string& category, const std::string& code,
                    const std::string& message, int status) {
    std::string line = message;
    for (char& c : line)
      if (c == '\n' || c == '\r') c = ' ';
    err << "error: category=" << category << " code=" << code
        << " message=" << line << "\n";
    return status;
  };

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    return report("usage", "cli.parse", e.what(), 2);
  }

  try {
    if (*train_cmd) {
      std::vector<std::pair<std::string, std::string>> overrides;
      for (const auto& s : sets) overrides.push_back(split_assignment(s));
      if (train_seed) overrides.emplace_back("seed", std::to_string(*train_seed));
      if (!train_out.empty()) overrides.emplace_back("out_dir", train_out);
      const RunConfig cfg = load_config(Command::train, config_file, overrides);
      cfg.require("manifest");
      const fs::path dir = cfg.get("out_dir");
      fs::create_directories(dir);
      const std::string resolved = cfg.serialize();
      io::write_file(dir / "config.resolved",
                     {reinterpret_cast<const std::uint8_t*>(resolved.data()),
                      resolved.size()});
      const auto result = train::train(
          cfg.train_config(), cfg.get("manifest"), dir, cfg.get("val_manifest"),
          [&](const train::LogRecord& r) { out << r.str() << "\n"; });
      out << "final=" << result.final_checkpoint.string() << "\n";
    } else if (*denoise_cmd) {
      const auto checkpoint = ckpt::load_checkpoint(ckpt);
      const auto& model = checkpoint.model;
      const Tensor noisy =
          io::match_channels(io::read_image(in_path), model.config().input_channels);
      const auto result = train::infer_padded(
          model, noisy, use_f32 ? Precision::f32 : Precision::f64);
      io::write_image(out_path, result.denoised);
      if (!map_path.empty()) io::write_map16(map_path, result.sigma_map);
    } else if (*eval_cmd) {
      const auto spec = noise_from_flags(sigma, variant, lambda, seed);
      const auto checkpoint = ckpt::load_checkpoint(ckpt);
      const auto images =
          train::load_images(manifest, checkpoint.model.config().input_channels);
      const auto report_data = train::evaluate(
          train::model_denoiser(checkpoint.model), images, spec, !raw);
      out << (records ? metrics::format_records(report_data)
                      : metrics::format_table(report_data));
    } else if (*synth_cmd) {
      const auto spec = noise_from_flags(sigma, variant, lambda, seed);
      const Tensor clean = io::read_image(in_path);
      const auto noisy = noise::synthesize(clean, spec);
      io::write_image(out_path, noisy.noisy);
      if (!noise_map_path.empty()) {
        Tensor level = noisy.sigma_map;
        level.scale_inplace(1.0 / noise::kMaxSigma);
        io::write_map16(noise_map_path, level);
      }
    } else if (*rf_cmd) {
      out << rf_table();
    }
  } catch (const Error& e) {
    return report(std::string(to_string(e.kind())), e.code(), e.what(), exit_code(e.kind()));
  } catch (const fs::filesystem_error& e) {
    return report("io", "io.filesystem", e.what(), 5);
  } catch (const std::bad_alloc&) {
    return report("numeric", "alloc", "out of memory", 4);
  }
  return 0;
}

}  // namespace dcbd::cli
