#include <doctest.h>

#include <Eigen/Core>
#include <cmath>
#include <filesystem>

#include "dcbd/checkpoint.hpp"
#include "dcbd/image_io.hpp"
#include "dcbd/losses.hpp"
#include "dcbd/model.hpp"
#include "oracles.hpp"

using namespace dcbd;
namespace fs = std::filesystem;

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Gram matrix of the smaller dimension of a weight viewed as out x (in*k*k).
Mat small_gram(const Tensor& w) {
  const Shape s = w.shape();
  Eigen::Map<const Mat> m(w.raw(), s.n, static_cast<Eigen::Index>(s.c) * s.h * s.w);
  if (m.rows() <= m.cols()) return m * m.transpose();
  return m.transpose() * m;
}

std::size_t bn_parameter_count(const model::Model& m) {
  std::size_t n = 0;
  for (const auto& p : m.parameters())
    if (p.name.find(".bn") != std::string::npos) n += p.value.size();
  return n;
}

model::ModelConfig variant(int width, bool skip, bool bn, std::uint64_t seed = 0) {
  auto cfg = model::ModelConfig::standard(1, width);
  cfg.use_skip = skip;
  cfg.use_bn = bn;
  cfg.seed = seed;
  return cfg;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dcbd_test_model";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("orthogonal init: 4x4 orthogonality, gain and determinism") {
  Rng a(1), b(1);
  const Tensor m = model::orthogonal_init({4, 4, 1, 1}, 1.0, a);
  const Tensor m2 = model::orthogonal_init({4, 4, 1, 1}, 1.0, b);
  CHECK(max_abs_diff(m, m2) == 0.0);
  CHECK((small_gram(m) - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
  Rng c(2);
  const Tensor g = model::orthogonal_init({4, 4, 1, 1}, 2.0, c);
  CHECK((small_gram(g) - 4.0 * Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("every conv weight of the default model is orthogonal along its smaller side") {
  const model::Model m(model::ModelConfig::standard());
  int checked = 0;
  for (const auto& p : m.parameters()) {
    if (p.name.find(".weight") == std::string::npos) continue;
    const Mat gram = small_gram(p.value);
    CHECK_MESSAGE((gram - Mat::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() < 1e-8, p.name);
    ++checked;
  }
  CHECK(checked == 7 + 12 + 12 + 1);
}

TEST_CASE("grayscale model preserves the input size") {
  model::Model m(model::ModelConfig::standard());
  Rng rng(3);
  const Tensor x = oracle::random_tensor({1, 1, 64, 64}, rng, 0, 1);
  const auto out = m.infer(x);
  CHECK(out.denoised.shape() == x.shape());
  CHECK(out.sigma_map.shape() == x.shape());
}

TEST_CASE("output shape equals input shape for sizes divisible by 4") {
  model::Model m(model::ModelConfig::standard(3, 8));
  Rng rng(4);
  for (auto [h, w] : {std::pair{4, 4}, {8, 12}, {20, 16}, {12, 28}}) {
    const Tensor x = oracle::random_tensor({2, 3, h, w}, rng, 0, 1);
    const auto out = m.infer(x);
    CHECK(out.denoised.shape() == x.shape());
    CHECK(out.sigma_map.shape() == Shape{2, 3, h, w});
  }
  CHECK(oracle::error_code_of([&] { m.infer(Tensor({1, 3, 10, 8})); }) == "model.size");
  CHECK(oracle::error_code_of([&] { m.infer(Tensor({1, 1, 8, 8})); }) == "model.channels");
}

TEST_CASE("zero input gives a finite, deterministic forward") {
  const Tensor zero({1, 1, 16, 16}, 0.0);
  const auto a = model::Model(variant(16, true, true, 7)).infer(zero);
  const auto b = model::Model(variant(16, true, true, 7)).infer(zero);
  CHECK(a.denoised.all_finite());
  CHECK(max_abs_diff(a.denoised, b.denoised) == 0.0);
  CHECK(max_abs_diff(a.sigma_map, b.sigma_map) == 0.0);
}

TEST_CASE("sigma map stays in [0, 1]") {
  model::Model m(variant(8, true, true, 1));
  Rng rng(5);
  for (double scale : {1.0, 100.0, 1e6}) {
    const Tensor x = oracle::random_tensor({1, 1, 16, 16}, rng, -scale, scale);
    Tape tape;
    const auto out = m.forward(m.bind(tape), tape.constant(x), nn::NormMode::train);
    for (double v : out.sigma_map.value().data()) CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("parameter counts") {
  ParameterStore conv;
  conv.add("w", Tensor({64, 1, 3, 3}));
  conv.add("b", Tensor({1, 64, 1, 1}));
  CHECK(conv.element_count() == 640);

  const model::Model gray(model::ModelConfig::standard(1, 64));
  const model::Model color(model::ModelConfig::standard(3, 64));
  CHECK(gray.parameter_count() == 1005442);
  CHECK(color.parameter_count() == 1014662);
  CHECK(std::abs(static_cast<double>(gray.parameter_count()) / 1004e3 - 1.0) < 0.10);
  CHECK(std::abs(static_cast<double>(color.parameter_count()) / 1013e3 - 1.0) < 0.10);
  // 6 + 11 + 11 conv-BN blocks, gamma plus beta per channel
  CHECK(bn_parameter_count(gray) == 28 * 128);
}

TEST_CASE("ablation variants run and differ only by batch-norm parameters") {
  Rng rng(6);
  const Tensor x = oracle::random_tensor({2, 1, 8, 8}, rng, 0, 1);
  const std::size_t full = model::Model(variant(8, true, true)).parameter_count();
  const std::size_t bn_terms = bn_parameter_count(model::Model(variant(8, true, true)));
  for (bool skip : {true, false})
    for (bool bn : {true, false}) {
      model::Model m(variant(8, skip, bn));
      CHECK(m.parameter_count() == (bn ? full : full - bn_terms));
      CHECK(m.norm_states().size() == (bn ? 28u : 0u));
      Tape tape;
      auto params = m.bind(tape);
      const auto out = m.forward(params, tape.constant(x), nn::NormMode::train);
      CHECK(out.denoised.shape() == x.shape());
      Gradients g = tape.backward(loss::mse_loss(out.denoised, tape.constant(x)));
      for (const Var& p : params) {
        const Tensor* gp = g.find(p);
        REQUIRE(gp != nullptr);
        CHECK(gp->all_finite());
      }
    }
}

TEST_CASE("skip toggling changes the function but not the parameters") {
  const auto with = model::Model(variant(8, true, true, 3));
  const auto without = model::Model(variant(8, false, true, 3));
  REQUIRE(with.parameter_count() == without.parameter_count());
  for (std::size_t i = 0; i < with.parameters().size(); ++i)
    CHECK(max_abs_diff(with.parameters()[i].value, without.parameters()[i].value) == 0.0);
  Rng rng(7);
  const Tensor x = oracle::random_tensor({1, 1, 8, 8}, rng, 0, 1);
  CHECK(max_abs_diff(with.infer(x).denoised, without.infer(x).denoised) > 0.0);
}

TEST_CASE("end-to-end gradient of the composite loss on a width-8 model") {
  model::Model m(variant(8, true, true, 11));
  Rng rng(8);
  const Tensor noisy = oracle::random_tensor({1, 1, 8, 8}, rng, 0, 1);
  const Tensor clean = oracle::random_tensor({1, 1, 8, 8}, rng, 0, 1);
  auto loss_of = [&](Tape& tape, std::vector<Var>& params) {
    params = m.bind(tape);
    const auto out = m.forward(params, tape.constant(noisy), nn::NormMode::train);
    return loss::total_loss(out.denoised, tape.constant(clean), out.sigma_map, {});
  };
  Tape tape;
  std::vector<Var> params;
  Gradients g = tape.backward(loss_of(tape, params));

  // one coordinate of every tensor plus a random 1% of all coordinates
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < m.parameters().size(); ++p) {
    const std::size_t n = m.parameters()[p].value.size();
    coords.emplace_back(p, rng.below(n));
    for (std::size_t k = 0; k < n / 100; ++k) coords.emplace_back(p, rng.below(n));
  }
  const double h = 1e-5;
  double worst = 0.0;
  for (auto [p, j] : coords) {
    double& w = m.parameters()[p].value[j];
    const double saved = w;
    w = saved + h;
    Tape tp;
    std::vector<Var> pp;
    const double up = loss_of(tp, pp).value().item();
    w = saved - h;
    Tape tm;
    const double down = loss_of(tm, pp).value().item();
    w = saved;
    const double numeric = (up - down) / (2 * h);
    const double analytic = g.at(params[p])[j];
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
  }
  CHECK(coords.size() > 100);
  CHECK(worst < 1e-4);
}

TEST_CASE("receptive field recurrence") {
  const rf::RfStep one[] = {rf::RfStep::conv()};
  CHECK(rf::receptive_field(one, 1, 1) == std::vector<int>{3});
  const rf::RfStep two[] = {rf::RfStep::conv(), rf::RfStep::conv()};
  CHECK(rf::receptive_field(two, 1, 1) == std::vector<int>{3, 5});

  std::vector<rf::RfStep> lower;
  for (int d : {1, 2, 3, 4, 5, 6, 5, 4, 3, 2, 1, 1}) lower.push_back(rf::RfStep::conv(d));
  const auto row = rf::receptive_field(lower, 26, 2);
  CHECK(std::equal(row.begin(), row.end(), rf::kReferenceLower.begin(), rf::kReferenceLower.end()));
}

TEST_CASE("the standard layout reproduces the reference receptive fields") {
  const auto cfg = model::ModelConfig::standard();
  const auto est = rf::trace(model::rf_schedule(cfg.estimator), 1, 1);
  CHECK(est.final_rf == 26);
  CHECK(est.final_jump == 2);
  const auto lower = rf::receptive_field(model::rf_schedule(cfg.lower), 26, 2);
  CHECK(std::equal(lower.begin(), lower.end(), rf::kReferenceLower.begin(), rf::kReferenceLower.end()));
  const auto upper = rf::receptive_field(model::rf_schedule(cfg.upper), 26, 2);
  REQUIRE(upper.size() == 12);
  for (int i = 0; i < 5; ++i) CHECK(upper[i] == rf::kReferenceUpper[i]);
  for (int i = 5; i < 12; ++i) CHECK(std::abs(upper[i] - rf::kReferenceUpper[i]) <= 2);
}

TEST_CASE("model configuration validation and round trip") {
  auto cfg = model::ModelConfig::standard(3, 32);
  cfg.use_bn = false;
  cfg.init_gain = 0.5;
  cfg.seed = 99;
  const auto back = model::ModelConfig::parse(cfg.serialize());
  CHECK(back.serialize() == cfg.serialize());
  CHECK(back.input_channels == 3);
  CHECK_FALSE(back.use_bn);

  auto bad = model::ModelConfig::standard();
  bad.lower[0].dilation = 2;
  CHECK(oracle::error_kind_of([&] { bad.validate(); }) == ErrorKind::config);
  auto bad_skip = model::ModelConfig::standard();
  for (auto& l : bad_skip.upper)
    if (l.skip_partner) l.skip_partner = static_cast<int>(bad_skip.upper.size());
  CHECK(oracle::error_kind_of([&] { bad_skip.validate(); }) == ErrorKind::config);
  auto bad_width = model::ModelConfig::standard(2, 64);
  CHECK(oracle::error_kind_of([&] { bad_width.validate(); }) == ErrorKind::config);
}

TEST_CASE("f32 inference stays close to f64") {
  model::Model m(variant(8, true, true, 2));
  Rng rng(9);
  const Tensor x = oracle::random_tensor({1, 1, 16, 16}, rng, 0, 1);
  const auto a = m.infer(x, Precision::f64);
  const auto b = m.infer(x, Precision::f32);
  CHECK(max_abs_diff(a.denoised, b.denoised) < 1e-4);
  CHECK(max_abs_diff(a.denoised, b.denoised) > 0.0);
}

TEST_CASE("checkpoint save, load and forward are bit-exact") {
  model::Model m(variant(8, true, true, 4));
  Rng rng(10);
  // move the running statistics away from their initial values
  for (int i = 0; i < 3; ++i) {
    Tape tape;
    m.forward(m.bind(tape), tape.constant(oracle::random_tensor({2, 1, 8, 8}, rng, 0, 1)), nn::NormMode::train);
  }
  const Tensor x = oracle::random_tensor({1, 1, 12, 12}, rng, 0, 1);
  const fs::path p = scratch("roundtrip.dcbd");
  ckpt::save_checkpoint(p, m);
  const auto loaded = ckpt::load_checkpoint(p);
  CHECK_FALSE(loaded.training.has_value());
  CHECK(loaded.model.config().serialize() == m.config().serialize());
  CHECK(max_abs_diff(loaded.model.infer(x).denoised, m.infer(x).denoised) == 0.0);
  CHECK(ckpt::to_archive(loaded.model, nullptr).encode() == ckpt::to_archive(m, nullptr).encode());
}

TEST_CASE("archive codec round trip and corruption") {
  Rng rng(11);
  ckpt::Archive a;
  a.put_tensor("t", oracle::random_tensor({2, 3, 4, 5}, rng));
  a.put_u64("u", {1, 2, 0xffffffffffffffffull});
  a.put_text("s", std::string("k=v\n\0x", 6));
  const auto bytes = a.encode();
  const auto back = ckpt::Archive::decode(bytes);
  CHECK(back.encode() == bytes);
  CHECK(back.u64("u")[2] == 0xffffffffffffffffull);
  CHECK(back.text("s").size() == 6);
  CHECK(max_abs_diff(back.tensor("t"), a.tensor("t")) == 0.0);
  CHECK(oracle::error_code_of([&] { back.tensor("u"); }) == "ckpt.dtype");
  CHECK(oracle::error_code_of([&] { back.tensor("nope"); }) == "ckpt.missing");

  auto magic = bytes;
  magic[0] = 'X';
  CHECK(oracle::error_code_of([&] { ckpt::Archive::decode(magic); }) == "ckpt.magic");
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  CHECK(oracle::error_code_of([&] { ckpt::Archive::decode(flipped); }) == "ckpt.checksum");
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + bytes.size() / 2);
  CHECK(oracle::error_kind_of([&] { ckpt::Archive::decode(cut); }) == ErrorKind::format);
  auto version = bytes;
  version[4] = 9;
  CHECK(oracle::error_code_of([&] { ckpt::Archive::decode(version); }) == "ckpt.version");
}

TEST_CASE("a corrupted checkpoint file is a format error") {
  model::Model m(variant(8, true, true));
  const fs::path p = scratch("corrupt.dcbd");
  ckpt::save_checkpoint(p, m);
  auto bytes = io::read_file(p);
  bytes[0] = 'Z';
  io::write_file(p, bytes);
  CHECK(oracle::error_kind_of([&] { ckpt::load_checkpoint(p); }) == ErrorKind::format);
  CHECK(oracle::error_kind_of([&] { ckpt::load_checkpoint(scratch("missing.dcbd")); }) == ErrorKind::io);
}
