#include "dcbd/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "dcbd/error.hpp"
#include "dcbd/image_io.hpp"

namespace dcbd::ckpt {
namespace {

constexpr std::uint8_t kF64 = 0, kU64 = 1, kBytes = 2;
constexpr char kMagic[4] = {'D', 'C', 'B', 'D'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
      out_.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
  }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n)
      fail(ErrorKind::format, "ckpt.truncated", "checkpoint is truncated");
  }
  template <class T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void Archive::put_tensor(std::string name, const Tensor& t) {
  entries_.push_back({std::move(name), kF64, t, {}, {}});
}

void Archive::put_u64(std::string name, std::vector<std::uint64_t> values) {
  entries_.push_back({std::move(name), kU64, {}, std::move(values), {}});
}

void Archive::put_text(std::string name, std::string text) {
  entries_.push_back({std::move(name), kBytes, {}, {}, std::move(text)});
}

bool Archive::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const Archive::Entry& Archive::find(const std::string& name,
                                    std::uint8_t dtype) const {
  for (const auto& e : entries_) {
    if (e.name != name) continue;
    if (e.dtype != dtype)
      fail(ErrorKind::format, "ckpt.dtype", "entry " + name + " has wrong type");
    return e;
  }
  fail(ErrorKind::format, "ckpt.missing", "checkpoint lacks entry " + name);
}

const Tensor& Archive::tensor(const std::string& name) const {
  return find(name, kF64).f64;
}
const std::vector<std::uint64_t>& Archive::u64(const std::string& name) const {
  return find(name, kU64).u64;
}
const std::string& Archive::text(const std::string& name) const {
  return find(name, kBytes).bytes;
}

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

std::vector<std::uint8_t> Archive::encode() const {
  Writer w;
  w.raw(kMagic, 4);
  w.le<std::uint16_t>(kFormatVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    w.le<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.raw(e.name.data(), e.name.size());
    w.le<std::uint8_t>(e.dtype);
    if (e.dtype == kF64) {
      const Shape s = e.f64.shape();
      w.le<std::uint8_t>(4);
      for (int d : {s.n, s.c, s.h, s.w}) w.le<std::uint64_t>(static_cast<std::uint64_t>(d));
      for (double v : e.f64.data()) w.le<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
    } else if (e.dtype == kU64) {
      w.le<std::uint8_t>(1);
      w.le<std::uint64_t>(e.u64.size());
      for (std::uint64_t v : e.u64) w.le<std::uint64_t>(v);
    } else {
      w.le<std::uint8_t>(1);
      w.le<std::uint64_t>(e.bytes.size());
      w.raw(e.bytes.data(), e.bytes.size());
    }
  }
  w.le<std::uint64_t>(fnv1a64(w.bytes()));
  return std::move(w.bytes());
}

Archive Archive::decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorKind::format, "ckpt.magic", "not a checkpoint (bad magic)");
  Reader r(bytes);
  r.str(4);
  const auto version = r.le<std::uint16_t>();
  if (version != kFormatVersion)
    fail(ErrorKind::format, "ckpt.version",
         "unsupported checkpoint version " + std::to_string(version));
  const auto count = r.le<std::uint32_t>();
  Archive a;
  for (std::uint32_t k = 0; k < count; ++k) {
    Entry e;
    e.name = r.str(r.le<std::uint16_t>());
    e.dtype = r.le<std::uint8_t>();
    const auto rank = r.le<std::uint8_t>();
    std::vector<std::uint64_t> dims(rank);
    for (auto& d : dims) d = r.le<std::uint64_t>();
    if (e.dtype == kF64) {
      if (rank != 4)
        fail(ErrorKind::format, "ckpt.rank", "tensor entry must have rank 4");
      for (auto d : dims)
        if (d > (1u << 30))
          fail(ErrorKind::format, "ckpt.shape", "tensor extent out of range");
      const Shape s{static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                    static_cast<int>(dims[2]), static_cast<int>(dims[3])};
      r.need(s.numel() * 8);
      std::vector<double> values(s.numel());
      for (double& v : values) v = std::bit_cast<double>(r.le<std::uint64_t>());
      e.f64 = Tensor(s, std::move(values));
    } else if (e.dtype == kU64 || e.dtype == kBytes) {
      if (rank != 1)
        fail(ErrorKind::format, "ckpt.rank", "vector entry must have rank 1");
      if (e.dtype == kU64) {
        r.need(dims[0] * 8);
        e.u64.resize(dims[0]);
        for (auto& v : e.u64) v = r.le<std::uint64_t>();
      } else {
        e.bytes = r.str(dims[0]);
      }
    } else {
      fail(ErrorKind::format, "ckpt.dtype",
           "unknown dtype tag " + std::to_string(e.dtype));
    }
    a.entries_.push_back(std::move(e));
  }
  if (r.remaining() < 8)
    fail(ErrorKind::format, "ckpt.truncated", "checkpoint is truncated");
  if (r.remaining() > 8)
    fail(ErrorKind::format, "ckpt.trailing", "unexpected bytes after entries");
  const std::size_t body = r.pos();
  const auto stored = r.le<std::uint64_t>();
  if (stored != fnv1a64(bytes.first(body)))
    fail(ErrorKind::format, "ckpt.checksum", "checkpoint checksum mismatch");
  return a;
}

Archive to_archive(const model::Model& model, const TrainingState* training) {
  Archive a;
  a.put_text("model.config", model.config().serialize());
  for (const auto& p : model.parameters()) a.put_tensor("param." + p.name, p.value);
  const auto& names = model.norm_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    a.put_tensor("buffer." + names[i] + ".running_mean",
                 model.norm_states()[i].running_mean);
    a.put_tensor("buffer." + names[i] + ".running_var",
                 model.norm_states()[i].running_var);
  }
  if (training != nullptr) {
    const auto& adam = training->adam;
    a.put_u64("train.iteration", {training->iteration});
    a.put_u64("adam.step", {adam.step});
    a.put_u64("adam.hyper", {std::bit_cast<std::uint64_t>(adam.lr),
                             std::bit_cast<std::uint64_t>(adam.beta1),
                             std::bit_cast<std::uint64_t>(adam.beta2),
                             std::bit_cast<std::uint64_t>(adam.eps)});
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
      const std::string& n = model.parameters()[i].name;
      a.put_tensor("adam.m." + n, adam.first.at(i));
      a.put_tensor("adam.v." + n, adam.second.at(i));
    }
    a.put_text("train.rng", training->rng.serialize());
  }
  return a;
}

Checkpoint from_archive(const Archive& archive) {
  model::Model m(model::ModelConfig::parse(archive.text("model.config")));
  for (auto& p : m.parameters()) {
    const Tensor& t = archive.tensor("param." + p.name);
    if (t.shape() != p.value.shape())
      fail(ErrorKind::format, "ckpt.shape", "parameter " + p.name + " has wrong shape");
    p.value = t;
  }
  for (std::size_t i = 0; i < m.norm_names().size(); ++i) {
    const std::string& n = m.norm_names()[i];
    auto& st = m.norm_states()[i];
    const Tensor& mean = archive.tensor("buffer." + n + ".running_mean");
    const Tensor& var = archive.tensor("buffer." + n + ".running_var");
    if (mean.shape() != st.running_mean.shape() || var.shape() != st.running_var.shape())
      fail(ErrorKind::format, "ckpt.shape", "buffer " + n + " has wrong shape");
    st.running_mean = mean;
    st.running_var = var;
  }
  Checkpoint c{std::move(m), std::nullopt};
  if (archive.contains("train.iteration")) {
    TrainingState ts;
    ts.iteration = archive.u64("train.iteration").at(0);
    ts.adam.step = archive.u64("adam.step").at(0);
    const auto& hyper = archive.u64("adam.hyper");
    if (hyper.size() != 4)
      fail(ErrorKind::format, "ckpt.shape", "adam.hyper must hold 4 values");
    ts.adam.lr = std::bit_cast<double>(hyper[0]);
    ts.adam.beta1 = std::bit_cast<double>(hyper[1]);
    ts.adam.beta2 = std::bit_cast<double>(hyper[2]);
    ts.adam.eps = std::bit_cast<double>(hyper[3]);
    for (const auto& p : c.model.parameters()) {
      ts.adam.first.push_back(archive.tensor("adam.m." + p.name));
      ts.adam.second.push_back(archive.tensor("adam.v." + p.name));
      if (ts.adam.first.back().shape() != p.value.shape() ||
          ts.adam.second.back().shape() != p.value.shape())
        fail(ErrorKind::format, "ckpt.shape", "moments of " + p.name + " have wrong shape");
    }
    ts.rng = Rng::deserialize(archive.text("train.rng"));
    c.training = std::move(ts);
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const model::Model& model,
                     const TrainingState* training) {
  const auto bytes = to_archive(model, training).encode();
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  io::write_file(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "io.rename", "cannot move checkpoint into " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return from_archive(Archive::decode(bytes));
}

}  // namespace dcbd::ckpt
