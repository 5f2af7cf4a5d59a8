#include "dcbd/model.hpp"

#include <Eigen/Dense>
#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>

#include "dcbd/error.hpp"

namespace dcbd {

std::size_t ParameterStore::add(std::string name, Tensor value) {
  entries_.push_back({std::move(name), std::move(value)});
  return entries_.size() - 1;
}

std::size_t ParameterStore::index(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  fail(ErrorKind::contract, "params.unknown", "no parameter named " + name);
}

std::size_t ParameterStore::element_count() const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += e.value.size();
  return total;
}

}  // namespace dcbd

namespace dcbd::model {
namespace {

LayerSpec conv_layer(int channels, int dilation = 1) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.channels = channels;
  l.dilation = dilation;
  return l;
}

LayerSpec simple(LayerKind kind) {
  LayerSpec l;
  l.kind = kind;
  return l;
}

LayerSpec act_layer(nn::Activation a) {
  LayerSpec l;
  l.kind = LayerKind::activation;
  l.activation = a;
  return l;
}

class LayoutBuilder {
 public:
  explicit LayoutBuilder(int channels) : channels_(channels) {}

  // conv -> bn -> relu
  LayoutBuilder& block(int dilation = 1) {
    layers_.push_back(conv_layer(channels_, dilation));
    layers_.push_back(simple(LayerKind::bn));
    layers_.push_back(act_layer(nn::Activation::relu));
    return *this;
  }
  LayoutBuilder& conv(int out_channels, int dilation = 1) {
    layers_.push_back(conv_layer(out_channels, dilation));
    return *this;
  }
  LayoutBuilder& then(LayerKind kind) {
    layers_.push_back(simple(kind));
    return *this;
  }
  LayoutBuilder& activation(nn::Activation a) {
    layers_.push_back(act_layer(a));
    return *this;
  }
  /// Marks the current feature as skip source number `id`.
  LayoutBuilder& source(int id) {
    sources_[id] = static_cast<int>(layers_.size());
    return then(LayerKind::skip_source);
  }
  LayoutBuilder& join(int id) {
    LayerSpec l = simple(LayerKind::skip_join);
    l.skip_partner = sources_.at(id);
    layers_.push_back(l);
    return *this;
  }
  std::vector<LayerSpec> build() { return std::move(layers_); }

 private:
  int channels_;
  std::vector<LayerSpec> layers_;
  std::map<int, int> sources_;
};

int count_convs(const std::vector<LayerSpec>& layers) {
  int n = 0;
  for (const auto& l : layers) n += l.kind == LayerKind::conv;
  return n;
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  fail(ErrorKind::format, "model_config.value", "bad boolean '" + v + "'");
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    fail(ErrorKind::format, "model_config.value",
         "bad value '" + v + "' for " + key);
  return out;
}

// Shared layer interpreter over tape variables or plain tensors.
template <class Backend>
typename Backend::Value run_steps(const std::vector<Model::Step>& steps,
                                  typename Backend::Value x, Backend& be) {
  std::vector<typename Backend::Value> slots;
  for (const auto& s : steps) {
    switch (s.kind) {
      case LayerKind::conv: x = be.conv(x, s); break;
      case LayerKind::bn: x = be.norm(x, s); break;
      case LayerKind::activation: x = be.activate(x, s.activation); break;
      case LayerKind::pool: x = be.pool(x); break;
      case LayerKind::upsample: x = be.upsample(x); break;
      case LayerKind::skip_source:
        if (static_cast<int>(slots.size()) <= s.slot) slots.resize(s.slot + 1);
        slots[s.slot] = x;
        break;
      case LayerKind::skip_join: x = be.add(x, slots.at(s.slot)); break;
    }
  }
  return x;
}

struct TapeBackend {
  using Value = Var;
  std::span<const Var> params;
  std::vector<nn::BatchNormState>& norms;
  nn::NormMode mode;

  Var conv(Var x, const Model::Step& s) {
    std::optional<Var> bias;
    if (s.bias != Model::Step::npos) bias = params[s.bias];
    return nn::conv2d(x, params[s.weight], bias, s.geometry);
  }
  Var norm(Var x, const Model::Step& s) {
    return nn::batch_norm(x, params[s.gamma], params[s.beta], norms[s.norm], mode);
  }
  Var activate(Var x, nn::Activation a) { return nn::activation(x, a); }
  Var pool(Var x) { return nn::maxpool2x2(x); }
  Var upsample(Var x) { return nn::upsample_bilinear2x(x); }
  Var add(Var a, Var b) { return nn::add(a, b); }
};

struct TensorBackend {
  using Value = Tensor;
  const ParameterStore& params;
  const std::vector<nn::BatchNormState>& norms;
  bool round;

  Tensor finish(Tensor t) const {
    if (round) t.round_to_f32();
    return t;
  }
  Tensor conv(const Tensor& x, const Model::Step& s) {
    nn::ConvParams p{params[s.weight].value,
                     s.bias != Model::Step::npos ? params[s.bias].value : Tensor(),
                     s.geometry};
    return finish(nn::conv2d(x, p));
  }
  Tensor norm(const Tensor& x, const Model::Step& s) {
    return finish(nn::batch_norm_eval(x, params[s.gamma].value,
                                      params[s.beta].value, norms[s.norm]));
  }
  Tensor activate(const Tensor& x, nn::Activation a) {
    return finish(nn::activation(x, a));
  }
  Tensor pool(const Tensor& x) { return finish(nn::maxpool2x2(x)); }
  Tensor upsample(const Tensor& x) { return finish(nn::upsample_bilinear2x(x)); }
  Tensor add(const Tensor& a, const Tensor& b) { return finish(nn::add(a, b)); }
};

}  // namespace

ModelConfig ModelConfig::standard(int input_channels, int channels) {
  ModelConfig cfg;
  cfg.channels = channels;
  cfg.input_channels = input_channels;
  const int c = channels;

  cfg.estimator = LayoutBuilder(c)
                      .block().block().source(0)
                      .then(LayerKind::pool)
                      .block().block()
                      .then(LayerKind::upsample)
                      .block().block().join(0)
                      .conv(input_channels)
                      .activation(nn::Activation::tanh)
                      .build();

  cfg.upper = LayoutBuilder(c)
                  .block().block().block().source(0)
                  .then(LayerKind::pool)
                  .block().block().source(1)
                  .then(LayerKind::pool)
                  .block().block()
                  .then(LayerKind::upsample)
                  .block().block().join(1)
                  .then(LayerKind::upsample)
                  .block().block().conv(c).join(0)
                  .build();

  LayoutBuilder lower(c);
  lower.block(1).source(1).block(2).source(2).block(3).source(3)
      .block(4).source(4).block(5).source(5).block(6)
      .block(5)
      .block(4).join(5)
      .block(3).join(4)
      .block(2).join(3)
      .block(1).join(2)
      .conv(c, 1).join(1);
  cfg.lower = lower.build();
  return cfg;
}

void ModelConfig::validate() const {
  if (channels < 1)
    fail(ErrorKind::config, "model.channels", "channels must be >= 1");
  if (input_channels != 1 && input_channels != 3)
    fail(ErrorKind::config, "model.input_channels",
         "input_channels must be 1 or 3");
  if (count_convs(estimator) != 7)
    fail(ErrorKind::config, "model.layout", "estimator must have 7 convs");
  if (count_convs(upper) != 12 || count_convs(lower) != 12)
    fail(ErrorKind::config, "model.layout", "each branch must have 12 convs");
  std::vector<int> dilations;
  for (const auto& l : lower)
    if (l.kind == LayerKind::conv) dilations.push_back(l.dilation);
  if (dilations != std::vector<int>{1, 2, 3, 4, 5, 6, 5, 4, 3, 2, 1, 1})
    fail(ErrorKind::config, "model.layout",
         "lower branch dilations must be 1,2,3,4,5,6,5,4,3,2,1,1");
  for (const auto* list : {&estimator, &upper, &lower}) {
    for (std::size_t i = 0; i < list->size(); ++i) {
      const auto& l = (*list)[i];
      if (l.kind != LayerKind::skip_join) continue;
      if (!l.skip_partner || *l.skip_partner < 0 ||
          *l.skip_partner >= static_cast<int>(i) ||
          (*list)[*l.skip_partner].kind != LayerKind::skip_source)
        fail(ErrorKind::config, "model.layout",
             "skip join " + std::to_string(i) + " has no earlier source");
    }
  }
}

std::string ModelConfig::serialize() const {
  char gain[64];
  std::snprintf(gain, sizeof gain, "%.17g", init_gain);
  std::ostringstream os;
  os << "channels=" << channels << "\n"
     << "input_channels=" << input_channels << "\n"
     << "use_skip=" << (use_skip ? 1 : 0) << "\n"
     << "use_bn=" << (use_bn ? 1 : 0) << "\n"
     << "use_bias=" << (use_bias ? 1 : 0) << "\n"
     << "init_gain=" << gain << "\n"
     << "seed=" << seed << "\n";
  return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::format, "model_config.line", "malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end())
      fail(ErrorKind::format, "model_config.missing",
           std::string("model config lacks ") + key);
    return it->second;
  };
  ModelConfig cfg = standard(parse_number<int>("input_channels", get("input_channels")),
                             parse_number<int>("channels", get("channels")));
  cfg.use_skip = parse_bool(get("use_skip"));
  cfg.use_bn = parse_bool(get("use_bn"));
  cfg.use_bias = parse_bool(get("use_bias"));
  cfg.init_gain = std::stod(get("init_gain"));
  cfg.seed = parse_number<std::uint64_t>("seed", get("seed"));
  return cfg;
}

std::vector<rf::RfStep> rf_schedule(const std::vector<LayerSpec>& layers) {
  std::vector<rf::RfStep> out;
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::conv:
        out.push_back({rf::RfStep::Kind::conv, l.kernel, l.dilation, 1});
        break;
      case LayerKind::pool: out.push_back(rf::RfStep::pool()); break;
      case LayerKind::upsample: out.push_back(rf::RfStep::upsample()); break;
      default: break;
    }
  }
  return out;
}

Tensor orthogonal_init(const Shape& shape, double gain, Rng& rng) {
  const Eigen::Index rows = shape.n;
  const Eigen::Index cols = static_cast<Eigen::Index>(shape.c) * shape.h * shape.w;
  if (rows < 1 || cols < 1)
    fail(ErrorKind::shape, "init.empty", "cannot initialize empty shape " + shape.str());
  const Eigen::Index big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (Eigen::Index i = 0; i < big; ++i)
    for (Eigen::Index j = 0; j < small; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < small; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  Tensor out(shape);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      out[static_cast<std::size_t>(i * cols + j)] =
          gain * (rows >= cols ? q(i, j) : q(j, i));
  return out;
}

void require_model_size(const Shape& s) {
  if (s.h < 4 || s.w < 4 || s.h % 4 != 0 || s.w % 4 != 0)
    fail(ErrorKind::shape, "model.size",
         "spatial size must be a multiple of 4, got " + s.str());
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  compile();
}

void Model::compile() {
  Rng rng(config_.seed);
  auto compile_list = [&](const std::string& prefix,
                          const std::vector<LayerSpec>& layers, int in_channels,
                          std::vector<Step>& steps) {
    int c = in_channels, conv_index = 0, bn_index = 0;
    std::map<int, int> slot_of;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& l = layers[i];
      Step s;
      s.kind = l.kind;
      switch (l.kind) {
        case LayerKind::conv: {
          const std::string name = prefix + ".conv" + std::to_string(++conv_index);
          s.weight = params_.add(name + ".weight",
                                 orthogonal_init({l.channels, c, l.kernel, l.kernel},
                                                 config_.init_gain, rng));
          if (config_.use_bias)
            s.bias = params_.add(name + ".bias", Tensor({1, l.channels, 1, 1}));
          s.geometry = nn::ConvGeometry{l.dilation, 1, l.dilation * (l.kernel / 2)};
          c = l.channels;
          break;
        }
        case LayerKind::bn: {
          ++bn_index;
          if (!config_.use_bn) continue;
          const std::string name = prefix + ".bn" + std::to_string(bn_index);
          s.gamma = params_.add(name + ".gamma", Tensor({1, c, 1, 1}, 1.0));
          s.beta = params_.add(name + ".beta", Tensor({1, c, 1, 1}, 0.0));
          s.norm = norms_.size();
          norms_.push_back(nn::BatchNormState::fresh(c));
          norm_names_.push_back(name);
          break;
        }
        case LayerKind::activation:
          s.activation = l.activation;
          break;
        case LayerKind::pool:
        case LayerKind::upsample:
          break;
        case LayerKind::skip_source:
          if (!config_.use_skip) continue;
          s.slot = static_cast<int>(slot_of.size());
          slot_of[static_cast<int>(i)] = s.slot;
          break;
        case LayerKind::skip_join:
          if (!config_.use_skip) continue;
          s.slot = slot_of.at(*l.skip_partner);
          break;
      }
      steps.push_back(s);
    }
    return c;
  };

  const int c_in = config_.input_channels;
  compile_list("estimator", config_.estimator, c_in, estimator_);
  const int upper_out = compile_list("upper", config_.upper, 2 * c_in, upper_);
  const int lower_out = compile_list("lower", config_.lower, 2 * c_in, lower_);
  fuse_weight_ = params_.add(
      "fuse.weight",
      orthogonal_init({c_in, upper_out + lower_out, 3, 3}, config_.init_gain, rng));
  fuse_bias_ = config_.use_bias ? params_.add("fuse.bias", Tensor({1, c_in, 1, 1}))
                                : Step::npos;
}

std::vector<Var> Model::bind(Tape& tape, bool requires_grad) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(tape.leaf(p.value, requires_grad));
  return vars;
}

ModelOutput<Var> Model::forward(std::span<const Var> params, Var noisy,
                                nn::NormMode mode) {
  if (params.size() != params_.size())
    fail(ErrorKind::contract, "model.bind", "parameter list does not match model");
  require_model_size(noisy.shape());
  if (noisy.shape().c != config_.input_channels)
    fail(ErrorKind::shape, "model.channels",
         "model expects " + std::to_string(config_.input_channels) + " channels");
  TapeBackend be{params, norms_, mode};
  Var t = run_steps(estimator_, noisy, be);
  Var sigma = nn::affine(t, 0.5, 0.5);
  Var z = nn::concat_channels(noisy, sigma);
  Var u = run_steps(upper_, z, be);
  Var l = run_steps(lower_, z, be);
  std::optional<Var> bias;
  if (fuse_bias_ != Step::npos) bias = params[fuse_bias_];
  Var out = nn::conv2d(nn::concat_channels(u, l), params[fuse_weight_], bias,
                       nn::ConvGeometry{1, 1, 1});
  return {out, sigma};
}

ModelOutput<Tensor> Model::infer(const Tensor& noisy, Precision precision) const {
  require_model_size(noisy.shape());
  if (noisy.shape().c != config_.input_channels)
    fail(ErrorKind::shape, "model.channels",
         "model expects " + std::to_string(config_.input_channels) + " channels");
  const bool round = precision == Precision::f32;
  ParameterStore rounded;
  if (round) {
    rounded = params_;
    for (auto& p : rounded) p.value.round_to_f32();
  }
  TensorBackend be{round ? rounded : params_, norms_, round};
  Tensor input = noisy;
  if (round) input.round_to_f32();
  Tensor t = run_steps(estimator_, input, be);
  Tensor sigma = be.finish(nn::affine(t, 0.5, 0.5));
  Tensor z = nn::concat_channels(input, sigma);
  Tensor u = run_steps(upper_, z, be);
  Tensor l = run_steps(lower_, z, be);
  const auto& fw = be.params[fuse_weight_].value;
  nn::ConvParams fuse{fw,
                      fuse_bias_ != Step::npos ? be.params[fuse_bias_].value : Tensor(),
                      nn::ConvGeometry{1, 1, 1}};
  Tensor out = be.finish(nn::conv2d(nn::concat_channels(u, l), fuse));
  return {std::move(out), std::move(sigma)};
}

}  // namespace dcbd::model
