#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcbd/cli.hpp"
#include "dcbd/config.hpp"
#include "dcbd/image_io.hpp"
#include "dcbd/trainer.hpp"
#include "oracles.hpp"

using namespace dcbd;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int status = cli::run_cli(args, out, err);
  return {status, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dcbd_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::vector<std::uint8_t> bytes_of(const fs::path& p) { return io::read_file(p); }

// A small grayscale image set with its manifest.
fs::path image_set(const fs::path& dir, int count, int h, int w) {
  Rng rng(21);
  std::string manifest;
  for (int i = 0; i < count; ++i) {
    const std::string name = "img" + std::to_string(i) + ".pgm";
    io::write_image(dir / name, data::synthetic_texture(h, w, 1, rng));
    manifest += name + "\n";
  }
  write_text(dir / "list.txt", manifest);
  return dir / "list.txt";
}

// An untrained width-8 checkpoint is enough to exercise the commands.
fs::path tiny_checkpoint(const fs::path& dir) {
  auto cfg = model::ModelConfig::standard(1, 8);
  cfg.seed = 2;
  const fs::path p = dir / "tiny.dcbd";
  ckpt::save_checkpoint(p, model::Model(cfg));
  return p;
}

std::string error_code(const std::string& err) {
  const auto at = err.find("code=");
  if (at == std::string::npos) return {};
  return err.substr(at + 5, err.find(' ', at) - at - 5);
}

}  // namespace

TEST_CASE("an empty config resolves to the defaults") {
  const auto cfg = cli::parse_config(cli::Command::train, "");
  CHECK(cfg.get_int("channels") == 64);
  CHECK(cfg.get_int("patch") == 180);
  CHECK(cfg.get_int("batch") == 16);
  CHECK(cfg.get_int("iterations") == 700000);
  const auto tc = cfg.train_config();
  CHECK(tc.model.serialize() == model::ModelConfig::standard().serialize());
  CHECK(tc.data.patch_size == 180);
  CHECK(tc.schedule.initial == 1e-4);
}

TEST_CASE("config values are validated") {
  using cli::Command;
  CHECK(oracle::error_code_of([] { cli::parse_config(Command::train, "sigma = 80"); }) == "config.range");
  CHECK(oracle::error_code_of([] { cli::parse_config(Command::train, "sigma_min=50\nsigma_max=10"); }) ==
        "config.range");
  CHECK(oracle::error_code_of([] { cli::parse_config(Command::train, "patch=18"); }) == "config.range");
  CHECK(oracle::error_code_of([] { cli::parse_config(Command::train, "colour=1"); }) == "config.unknown");
  CHECK(oracle::error_code_of([] { cli::parse_config(Command::train, "batch=many"); }) == "config.type");
  CHECK(oracle::error_code_of([] { cli::parse_config(Command::train, "schedule=linear"); }) == "config.type");
  CHECK(oracle::error_code_of([] { cli::parse_config(Command::train, "just words"); }) == "config.syntax");
  CHECK(oracle::error_code_of([] { cli::parse_config(Command::train, "").require("manifest"); }) ==
        "config.missing");
  CHECK(oracle::error_kind_of([] { cli::parse_config(Command::train, "sigma=80"); }) == ErrorKind::config);
}

TEST_CASE("overrides win over the file and comments are ignored") {
  const auto cfg = cli::parse_config(cli::Command::train, "# setup\nbatch = 4  # small\nseed=3\n",
                                     {{"batch", "2"}});
  CHECK(cfg.get_int("batch") == 2);
  CHECK(cfg.get_u64("seed") == 3);
  const auto again = cli::parse_config(cli::Command::train, cfg.serialize());
  CHECK(again.serialize() == cfg.serialize());
}

TEST_CASE("rf-table prints the reference lower row") {
  const Run r = run({"rf-table"});
  REQUIRE(r.status == 0);
  CHECK(r.out.rfind("estimator   rf=26 jump=2", 0) == 0);
  std::istringstream lines(r.out);
  std::string line;
  bool found = false;
  while (std::getline(lines, line)) {
    if (line.rfind("lower ", 0) != 0) continue;
    std::istringstream fields(line.substr(12));
    std::vector<int> row;
    for (int v; fields >> v;) row.push_back(v);
    CHECK(row == std::vector<int>{30, 38, 50, 66, 86, 110, 130, 146, 158, 166, 170, 174});
    found = true;
  }
  CHECK(found);
}

TEST_CASE("usage errors exit with status 2") {
  CHECK(run({}).status == 2);
  CHECK(run({"frobnicate"}).status == 2);
  const Run r = run({"synth-noise", "--in", "a.pgm"});
  CHECK(r.status == 2);
  CHECK(r.err.find("category=usage") != std::string::npos);
  CHECK(run({"--help"}).status == 0);
}

TEST_CASE("synth-noise is deterministic given the seed") {
  const fs::path dir = scratch("synth");
  image_set(dir, 1, 20, 24);
  const std::string in = (dir / "img0.pgm").string();
  auto synth = [&](const std::string& out, const std::string& seed) {
    return run({"synth-noise", "--in", in, "--out", (dir / out).string(), "--sigma", "25", "--seed",
                seed, "--map", (dir / (out + ".map.pgm")).string()});
  };
  REQUIRE(synth("a.pgm", "5").status == 0);
  REQUIRE(synth("b.pgm", "5").status == 0);
  REQUIRE(synth("c.pgm", "6").status == 0);
  CHECK(bytes_of(dir / "a.pgm") == bytes_of(dir / "b.pgm"));
  CHECK(bytes_of(dir / "a.pgm") != bytes_of(dir / "c.pgm"));
  CHECK(io::read_image(dir / "a.pgm").shape() == Shape{1, 1, 20, 24});

  const Run variant = run({"synth-noise", "--in", in, "--out", (dir / "v.pgm").string(), "--variant",
                           "--lambda", "40", "--seed", "1"});
  CHECK(variant.status == 0);
  const Run both = run({"synth-noise", "--in", in, "--out", (dir / "x.pgm").string(), "--sigma", "10",
                        "--variant"});
  CHECK(both.status == 2);
  CHECK(error_code(both.err) == "cli.noise");
  const Run high = run({"synth-noise", "--in", in, "--out", (dir / "x.pgm").string(), "--sigma", "90"});
  CHECK(high.status == 2);
  CHECK(error_code(high.err) == "config.range");
  const Run missing = run({"synth-noise", "--in", (dir / "none.pgm").string(), "--out",
                           (dir / "x.pgm").string(), "--sigma", "10"});
  CHECK(missing.status == 5);
}

TEST_CASE("denoise keeps the shape of sizes that are not multiples of 4") {
  const fs::path dir = scratch("denoise");
  image_set(dir, 1, 18, 21);
  const auto ckpt = tiny_checkpoint(dir);
  auto denoise = [&](const std::string& out) {
    return run({"denoise", "--ckpt", ckpt.string(), "--in", (dir / "img0.pgm").string(), "--out",
                (dir / out).string(), "--sigma-map", (dir / (out + ".map.pgm")).string()});
  };
  REQUIRE(denoise("a.pgm").status == 0);
  REQUIRE(denoise("b.pgm").status == 0);
  CHECK(io::read_image(dir / "a.pgm").shape() == Shape{1, 1, 18, 21});
  const auto map = bytes_of(dir / "a.pgm.map.pgm");
  const std::string header = "P5\n21 18\n65535\n";
  CHECK(std::string(map.begin(), map.begin() + header.size()) == header);
  CHECK(map.size() == header.size() + 2 * 18 * 21);
  CHECK(bytes_of(dir / "a.pgm") == bytes_of(dir / "b.pgm"));
}

TEST_CASE("a corrupt checkpoint exits with the format status") {
  const fs::path dir = scratch("corrupt");
  image_set(dir, 1, 8, 8);
  const auto ckpt = tiny_checkpoint(dir);
  auto bytes = bytes_of(ckpt);
  bytes.resize(bytes.size() - 7);
  io::write_file(ckpt, bytes);
  const Run r = run({"denoise", "--ckpt", ckpt.string(), "--in", (dir / "img0.pgm").string(), "--out",
                     (dir / "o.pgm").string()});
  CHECK(r.status == 3);
  CHECK(r.err.find("category=format") != std::string::npos);
}

TEST_CASE("eval reports deterministic records") {
  const fs::path dir = scratch("eval");
  const auto manifest = image_set(dir, 2, 16, 16);
  const auto ckpt = tiny_checkpoint(dir);
  auto eval = [&](const std::string& seed) {
    return run({"eval", "--ckpt", ckpt.string(), "--manifest", manifest.string(), "--sigma", "25",
                "--seed", seed, "--records"});
  };
  const Run a = eval("1"), b = eval("1"), c = eval("2");
  REQUIRE(a.status == 0);
  CHECK(a.out == b.out);
  CHECK(a.out != c.out);
  CHECK(a.out.find("img0.pgm") != std::string::npos);
  CHECK(a.out.find("mean") != std::string::npos);
  CHECK(run({"eval", "--ckpt", ckpt.string(), "--manifest", manifest.string()}).status == 2);
}

TEST_CASE("train runs end to end and is deterministic given the seed") {
  const fs::path dir = scratch("train");
  const auto manifest = image_set(dir, 3, 32, 32);
  write_text(dir / "run.cfg",
             "manifest = " + manifest.string() +
                 "\nchannels = 8\npatch = 16\nbatch = 2\npatches_per_image = 2\niterations = 3\nlog_every = 1\n"
                 "checkpoint_every = 0\nseed = 9\n");
  auto train = [&](const std::string& out, const std::string& seed) {
    return run({"train", "--config", (dir / "run.cfg").string(), "--seed", seed, "--out",
                (dir / out).string(), "--set", "lr=0.001"});
  };
  const Run a = train("a", "4"), b = train("b", "4"), c = train("c", "5");
  REQUIRE(a.status == 0);
  CHECK(a.out.find("iter=3 ") != std::string::npos);
  CHECK(a.out.find("final=") != std::string::npos);
  CHECK(bytes_of(dir / "a" / "final.dcbd") == bytes_of(dir / "b" / "final.dcbd"));
  CHECK(bytes_of(dir / "a" / "final.dcbd") != bytes_of(dir / "c" / "final.dcbd"));
  std::ifstream resolved(dir / "a" / "config.resolved");
  std::stringstream text;
  text << resolved.rdbuf();
  CHECK(text.str().find("seed=4\n") != std::string::npos);
  CHECK(text.str().find("lr=0.001\n") != std::string::npos);

  const Run no_manifest = run({"train", "--out", (dir / "d").string()});
  CHECK(no_manifest.status == 2);
  CHECK(error_code(no_manifest.err) == "config.missing");
  const Run unknown = run({"train", "--config", (dir / "run.cfg").string(), "--set", "depth=3"});
  CHECK(unknown.status == 2);
  CHECK(error_code(unknown.err) == "config.unknown");
  const Run typed = run({"train", "--config", (dir / "run.cfg").string(), "--set", "batch=x"});
  CHECK(error_code(typed.err) == "config.type");
}

TEST_CASE("the installed binary reports exit statuses") {
  const char* bin = std::getenv("DCBD_CLI");
  if (bin == nullptr) {
    MESSAGE("DCBD_CLI not set; skipping binary checks");
    return;
  }
  const fs::path dir = scratch("binary");
  auto status = [&](const std::string& args) {
    const int raw = std::system((std::string(bin) + " " + args + " > " + (dir / "out.txt").string() +
                                 " 2> " + (dir / "err.txt").string())
                                    .c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status("rf-table") == 0);
  CHECK(status("bogus") == 2);
  image_set(dir, 1, 8, 8);
  const auto ckpt = tiny_checkpoint(dir);
  auto bytes = bytes_of(ckpt);
  bytes[0] ^= 0xff;
  io::write_file(ckpt, bytes);
  CHECK(status("denoise --ckpt " + ckpt.string() + " --in " + (dir / "img0.pgm").string() +
               " --out " + (dir / "o.pgm").string()) == 3);
}
