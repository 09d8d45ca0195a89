#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace amine {

// Raised whenever operand shapes do not line up. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape4 {
  std::size_t n = 1;  // batch
  std::size_t w = 1;  // width (x)
  std::size_t h = 1;  // height (y)
  std::size_t d = 1;  // channels

  std::size_t size() const { return n * w * h * d; }
  std::size_t spatial() const { return w * h; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Rank-4 activation tensor laid out as (n, x, y, d) with channels innermost.
class FeatureMap {
 public:
  FeatureMap() = default;
  explicit FeatureMap(Shape4 shape, double fill = 0.0);
  FeatureMap(Shape4 shape, std::vector<double> values);

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }

  std::size_t index(std::size_t n, std::size_t x, std::size_t y,
                    std::size_t d) const {
    return ((n * shape_.w + x) * shape_.h + y) * shape_.d + d;
  }
  double& at(std::size_t n, std::size_t x, std::size_t y, std::size_t d) {
    return values_[index(n, x, y, d)];
  }
  double at(std::size_t n, std::size_t x, std::size_t y, std::size_t d) const {
    return values_[index(n, x, y, d)];
  }

  double* ptr(std::size_t n, std::size_t x, std::size_t y) {
    return values_.data() + index(n, x, y, 0);
  }
  const double* ptr(std::size_t n, std::size_t x, std::size_t y) const {
    return values_.data() + index(n, x, y, 0);
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }

  // Copies of the samples [first, first + count).
  FeatureMap slice_batch(std::size_t first, std::size_t count) const;
  // Single-sample view as its own map (copy).
  FeatureMap sample(std::size_t n) const { return slice_batch(n, 1); }

  bool all_finite() const;

 private:
  Shape4 shape_{};
  std::vector<double> values_;
};

// Concatenates along the channel axis: [a, b].
FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b);
// Inverse of concat_channels; `first` is the channel count of the left part.
std::pair<FeatureMap, FeatureMap> split_channels(const FeatureMap& x,
                                                 std::size_t first);
FeatureMap concat_batch(const FeatureMap& a, const FeatureMap& b);

// Convolution weights indexed (kx, ky, d_in, d_out).
struct ConvKernel {
  std::size_t kw = 1;
  std::size_t kh = 1;
  std::size_t d_in = 1;
  std::size_t d_out = 1;
  std::vector<double> weights;

  ConvKernel() = default;
  ConvKernel(std::size_t kw, std::size_t kh, std::size_t d_in,
             std::size_t d_out, double fill = 0.0)
      : kw(kw), kh(kh), d_in(d_in), d_out(d_out),
        weights(kw * kh * d_in * d_out, fill) {}

  std::size_t index(std::size_t kx, std::size_t ky, std::size_t i,
                    std::size_t o) const {
    return ((kx * kh + ky) * d_in + i) * d_out + o;
  }
  double& at(std::size_t kx, std::size_t ky, std::size_t i, std::size_t o) {
    return weights[index(kx, ky, i, o)];
  }
  double at(std::size_t kx, std::size_t ky, std::size_t i,
            std::size_t o) const {
    return weights[index(kx, ky, i, o)];
  }
  std::string str() const;
};

}  // namespace amine
