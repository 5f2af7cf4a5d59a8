#include "dcbd/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "dcbd/error.hpp"

namespace dcbd::io {
namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  long number(const char* field) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size())
      fail(ErrorKind::format, "pnm.truncated",
           std::string("file ends before ") + field);
    if (!std::isdigit(bytes_[pos_]))
      fail(ErrorKind::format, "pnm.header",
           std::string("expected a number for ") + field);
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000)
        fail(ErrorKind::format, "pnm.header",
             std::string(field) + " is out of range");
      ++pos_;
    }
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void raster_separator() {
    if (pos_ >= bytes_.size())
      fail(ErrorKind::format, "pnm.truncated", "file ends before raster");
    if (!std::isspace(bytes_[pos_]))
      fail(ErrorKind::format, "pnm.header", "missing whitespace before raster");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 2;
};

std::uint8_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

}  // namespace

Tensor decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    fail(ErrorKind::format, "pnm.magic", "not a binary PGM/PPM file");
  const int channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader r(bytes);
  const long w = r.number("width");
  const long h = r.number("height");
  const long maxval = r.number("maxval");
  if (w < 1 || h < 1)
    fail(ErrorKind::format, "pnm.header", "image dimensions must be positive");
  if (maxval != 255)
    fail(ErrorKind::format, "pnm.maxval",
         "unsupported maxval " + std::to_string(maxval) + " (only 255)");
  r.raster_separator();
  const std::size_t count = static_cast<std::size_t>(w) * h * channels;
  if (bytes.size() - r.pos() < count)
    fail(ErrorKind::format, "pnm.truncated",
         "raster has " + std::to_string(bytes.size() - r.pos()) +
             " bytes, expected " + std::to_string(count));
  Tensor img({1, channels, static_cast<int>(h), static_cast<int>(w)});
  const std::uint8_t* src = bytes.data() + r.pos();
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(0, c, static_cast<int>(y), static_cast<int>(x)) =
            *src++ / 255.0;
  return img;
}

std::vector<std::uint8_t> encode_pnm(const Tensor& image) {
  const Shape s = image.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3))
    fail(ErrorKind::shape, "pnm.channels",
         "can only encode 1x1xHxW or 1x3xHxW images, got " + s.str());
  const std::string header = std::string(s.c == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(s.w) + " " + std::to_string(s.h) +
                             "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.size());
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < s.c; ++c) out.push_back(quantize(image.at(0, c, y, x)));
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "io.open", "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "io.open", "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "io.write", "write failed for " + path.string());
}

Tensor read_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_pnm(bytes);
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  write_file(path, encode_pnm(image));
}

void write_map16(const std::filesystem::path& path, const Tensor& map) {
  const Shape s = map.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3))
    fail(ErrorKind::shape, "pnm.channels", "16-bit maps must be 1x1xHxW or 1x3xHxW");
  const std::string header = std::string(s.c == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(s.w) + " " + std::to_string(s.h) + "\n65535\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + 2 * map.size());
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < s.c; ++c) {
        const auto q = static_cast<std::uint16_t>(
            std::floor(std::clamp(map.at(0, c, y, x), 0.0, 1.0) * 65535.0 + 0.5));
        out.push_back(static_cast<std::uint8_t>(q >> 8));
        out.push_back(static_cast<std::uint8_t>(q & 0xFF));
      }
  write_file(path, out);
}

Tensor to_grayscale(const Tensor& image) {
  const Shape s = image.shape();
  if (s.c == 1) return image;
  if (s.c != 3)
    fail(ErrorKind::shape, "gray.channels", "expected 1 or 3 channels");
  Tensor out({s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < s.plane(); ++i)
      out[n * s.plane() + i] = 0.299 * image[image.offset(n, 0, 0, 0) + i] +
                               0.587 * image[image.offset(n, 1, 0, 0) + i] +
                               0.114 * image[image.offset(n, 2, 0, 0) + i];
  return out;
}

Tensor match_channels(const Tensor& image, int channels) {
  const Shape s = image.shape();
  if (s.c == channels) return image;
  if (channels == 1) return to_grayscale(image);
  if (s.c == 1) {
    Tensor out({s.n, channels, s.h, s.w});
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < channels; ++c)
        std::copy_n(image.raw() + n * s.plane(), s.plane(),
                    out.raw() + out.offset(n, c, 0, 0));
    return out;
  }
  fail(ErrorKind::shape, "image.channels",
       "cannot convert " + std::to_string(s.c) + " channels to " +
           std::to_string(channels));
}

Tensor pad_reflect(const Tensor& image, int top, int bottom, int left,
                   int right) {
  const Shape s = image.shape();
  if (top >= s.h || bottom >= s.h || left >= s.w || right >= s.w ||
      std::min({top, bottom, left, right}) < 0)
    fail(ErrorKind::shape, "pad.reflect",
         "reflect padding must be smaller than the image");
  auto reflect = [](int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  Tensor out({s.n, s.c, s.h + top + bottom, s.w + left + right});
  const Shape o = out.shape();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < o.h; ++y)
        for (int x = 0; x < o.w; ++x)
          out.at(n, c, y, x) =
              image.at(n, c, reflect(y - top, s.h), reflect(x - left, s.w));
  return out;
}

Tensor crop(const Tensor& image, int top, int left, int h, int w) {
  const Shape s = image.shape();
  if (top < 0 || left < 0 || h < 1 || w < 1 || top + h > s.h || left + w > s.w)
    fail(ErrorKind::shape, "crop.range", "crop window outside image " + s.str());
  Tensor out({s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y)
        std::copy_n(image.raw() + image.offset(n, c, top + y, left), w,
                    out.raw() + out.offset(n, c, y, 0));
  return out;
}

}  // namespace dcbd::io
