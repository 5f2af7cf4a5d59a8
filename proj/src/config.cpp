#include "dcbd/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "dcbd/error.hpp"
#include "dcbd/noise.hpp"

namespace dcbd::cli {
namespace {

const KeySpec* find_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (name == k.name) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
bool parse_exact(const std::string& v, T& out) {
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  return ec == std::errc() && ptr == v.data() + v.size() && !v.empty();
}

bool parse_real(const std::string& v, double& out) {
  if (v.empty()) return false;
  std::istringstream is(v);
  is >> out;
  return is && is.peek() == std::char_traits<char>::eof();
}

void check_value(const KeySpec& k, const std::string& v) {
  auto bad = [&](const std::string& why) {
    fail(ErrorKind::config, "config.type",
         std::string("key '") + k.name + "': " + why + " (got '" + v + "')");
  };
  switch (k.type) {
    case KeyType::integer: {
      long long x;
      if (!parse_exact(v, x)) bad("expected an integer");
      break;
    }
    case KeyType::unsigned_integer: {
      std::uint64_t x;
      if (!parse_exact(v, x)) bad("expected a non-negative integer");
      break;
    }
    case KeyType::real: {
      double x;
      if (std::string(k.name) == "lr" && v == "auto") break;
      if (!parse_real(v, x)) bad("expected a number");
      break;
    }
    case KeyType::boolean:
      if (v != "true" && v != "false" && v != "1" && v != "0")
        bad("expected true or false");
      break;
    case KeyType::text:
      break;
    case KeyType::choice:
      if (std::find(k.choices.begin(), k.choices.end(), v) == k.choices.end())
        bad("unknown choice");
      break;
  }
}

void check_ranges(const std::map<std::string, std::string>& values) {
  for (const char* key : {"sigma", "sigma_min", "sigma_max", "val_sigma"}) {
    double v = 0.0;
    parse_real(values.at(key), v);
    if (!(v >= 0.0 && v <= noise::kMaxSigma))
      fail(ErrorKind::config, "config.range",
           std::string("key '") + key + "': noise level must lie in [0, 75]");
  }
  double lo = 0, hi = 0;
  parse_real(values.at("sigma_min"), lo);
  parse_real(values.at("sigma_max"), hi);
  if (lo > hi)
    fail(ErrorKind::config, "config.range",
         "key 'sigma_min': must not exceed sigma_max");
  for (const char* key : {"channels", "patch", "batch", "patches_per_image"}) {
    long long v = 0;
    parse_exact(values.at(key), v);
    if (v < 1)
      fail(ErrorKind::config, "config.range",
           std::string("key '") + key + "': must be >= 1");
  }
  long long ic = 0;
  parse_exact(values.at("input_channels"), ic);
  if (ic != 1 && ic != 3)
    fail(ErrorKind::config, "config.range",
         "key 'input_channels': must be 1 or 3");
  long long patch = 0;
  parse_exact(values.at("patch"), patch);
  if (patch % 4 != 0)
    fail(ErrorKind::config, "config.range",
         "key 'patch': must be a multiple of 4");
}

}  // namespace

const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys = {
      {"channels", KeyType::integer, "64", "feature width of every conv"},
      {"input_channels", KeyType::integer, "1", "1 for grayscale, 3 for color"},
      {"use_skip", KeyType::boolean, "true", "enable skip connections"},
      {"use_bn", KeyType::boolean, "true", "enable batch normalization"},
      {"use_bias", KeyType::boolean, "true", "conv layers carry biases"},
      {"init_gain", KeyType::real, "1", "orthogonal init gain"},
      {"seed", KeyType::unsigned_integer, "0", "model and data seed"},
      {"patch", KeyType::integer, "180", "training patch size"},
      {"patches_per_image", KeyType::integer, "1", "patches per image per epoch"},
      {"batch", KeyType::integer, "16", "batch size"},
      {"augment", KeyType::boolean, "true", "random rotations and flips"},
      {"noise", KeyType::choice, "uniform", "training noise policy",
       {"uniform", "fixed", "variant"}},
      {"sigma_min", KeyType::real, "0", "lower noise level (uniform)"},
      {"sigma_max", KeyType::real, "75", "upper noise level (uniform)"},
      {"sigma", KeyType::real, "25", "noise level (fixed)"},
      {"lambda", KeyType::real, "50", "peak noise level (variant)"},
      {"iterations", KeyType::unsigned_integer, "700000", "training iterations"},
      {"schedule", KeyType::choice, "step", "learning-rate schedule",
       {"step", "cosine"}},
      {"lr", KeyType::real, "auto", "initial learning rate (auto: 1e-4 step, 2e-4 cosine)"},
      {"lr_min", KeyType::real, "1e-06", "cosine floor"},
      {"lr_decay_every", KeyType::unsigned_integer, "100000", "step-decay period"},
      {"loss", KeyType::choice, "mse", "training objective", {"mse", "composite"}},
      {"lambda_edge", KeyType::real, "0.1", "edge loss weight"},
      {"lambda_tv", KeyType::real, "0.05", "TV loss weight"},
      {"epsilon", KeyType::real, "0.001", "Charbonnier epsilon"},
      {"reduction", KeyType::choice, "global", "Charbonnier norm scope",
       {"global", "per_sample"}},
      {"grad_clip", KeyType::real, "0", "global gradient norm limit (0 = off)"},
      {"log_every", KeyType::unsigned_integer, "100", "log interval"},
      {"checkpoint_every", KeyType::unsigned_integer, "10000", "checkpoint interval"},
      {"val_every", KeyType::unsigned_integer, "0", "validation interval"},
      {"val_sigma", KeyType::real, "25", "validation noise level"},
      {"val_seed", KeyType::unsigned_integer, "0", "validation noise seed"},
      {"manifest", KeyType::text, "", "training image manifest"},
      {"val_manifest", KeyType::text, "", "validation image manifest"},
      {"out_dir", KeyType::text, "runs/dcbd", "output directory"},
      {"resume", KeyType::boolean, "false", "continue from out_dir/latest.dcbd"},
  };
  return keys;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    fail(ErrorKind::config, "config.unknown", "unknown key '" + key + "'");
  return it->second;
}

long long RunConfig::get_int(const std::string& key) const {
  long long v = 0;
  parse_exact(get(key), v);
  return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  std::uint64_t v = 0;
  parse_exact(get(key), v);
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  double v = 0;
  parse_real(get(key), v);
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  return v == "true" || v == "1";
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

void RunConfig::require(const std::string& key) const {
  if (get(key).empty())
    fail(ErrorKind::config, "config.missing",
         "missing required key '" + key + "'");
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t;
  t.model = model::ModelConfig::standard(static_cast<int>(get_int("input_channels")),
                                         static_cast<int>(get_int("channels")));
  t.model.use_skip = get_bool("use_skip");
  t.model.use_bn = get_bool("use_bn");
  t.model.use_bias = get_bool("use_bias");
  t.model.init_gain = get_double("init_gain");
  t.model.seed = get_u64("seed");

  t.data.patch_size = static_cast<int>(get_int("patch"));
  t.data.patches_per_image = static_cast<int>(get_int("patches_per_image"));
  t.data.batch = static_cast<int>(get_int("batch"));
  t.data.channels = t.model.input_channels;
  t.data.augment = get_bool("augment");
  t.data.seed = get_u64("seed");
  const auto& kind = get("noise");
  t.data.noise.kind = kind == "uniform" ? data::NoisePolicy::Kind::uniform_range
                      : kind == "fixed" ? data::NoisePolicy::Kind::fixed
                                        : data::NoisePolicy::Kind::variant;
  t.data.noise.sigma_min = get_double("sigma_min");
  t.data.noise.sigma_max = get_double("sigma_max");
  t.data.noise.sigma = get_double("sigma");
  t.data.noise.lambda = get_double("lambda");

  t.iterations = get_u64("iterations");
  if (get("schedule") == "cosine") {
    t.schedule = optim::Schedule::cosine(t.iterations);
  } else {
    t.schedule = optim::Schedule::step_decay();
    t.schedule.decay_every = get_u64("lr_decay_every");
  }
  if (get("lr") != "auto") t.schedule.initial = get_double("lr");
  t.schedule.minimum = get_double("lr_min");

  t.loss = get("loss") == "mse" ? train::LossMode::mse : train::LossMode::composite;
  t.weights.lambda_edge = get_double("lambda_edge");
  t.weights.lambda_tv = get_double("lambda_tv");
  t.weights.epsilon = get_double("epsilon");
  t.reduction = get("reduction") == "global" ? loss::Reduction::global
                                             : loss::Reduction::per_sample;
  t.grad_clip = get_double("grad_clip");
  t.log_every = get_u64("log_every");
  t.checkpoint_every = get_u64("checkpoint_every");
  t.val_every = get_u64("val_every");
  t.val_sigma = get_double("val_sigma");
  t.val_seed = get_u64("val_seed");
  t.resume = get_bool("resume");
  return t;
}

RunConfig parse_config(
    Command command, const std::string& text,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  cfg.command = command;
  for (const auto& k : config_keys()) cfg.values_[k.name] = k.default_value;

  auto assign = [&](const std::string& key, const std::string& value) {
    const KeySpec* spec = find_key(key);
    if (spec == nullptr)
      fail(ErrorKind::config, "config.unknown", "unknown key '" + key + "'");
    check_value(*spec, value);
    cfg.values_[key] = value;
  };

  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::config, "config.syntax",
           "line " + std::to_string(line_no) + ": expected key=value");
    assign(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  for (const auto& [k, v] : overrides) assign(k, v);
  check_ranges(cfg.values_);
  return cfg;
}

RunConfig load_config(
    Command command, const std::filesystem::path& file,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::string text;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) fail(ErrorKind::io, "io.open", "cannot open config " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  return parse_config(command, text, overrides);
}

}  // namespace dcbd::cli
