#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dcbd {

/// Extent of a dense NCHW tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Storage precision. Training and gradient checks always use f64; f32 is an
/// inference-only mode that rounds every stored activation to float.
enum class Precision { f64, f32 };

/// Dense row-major 4-D array of doubles (batch, channel, height, width).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w + w;
  }
  double& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const {
    return data_[offset(n, c, h, w)];
  }

  /// Value of a 1x1x1x1 tensor.
  double item() const;

  void fill(double v);
  /// this += other (same shape).
  void add_inplace(const Tensor& other);
  void scale_inplace(double s);

  /// Rounds every entry through float storage.
  void round_to_f32();

  bool all_finite() const;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

/// Throws a shape error unless the two shapes match.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace dcbd
