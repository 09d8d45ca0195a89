#include "amine/feature_map.hpp"

#include <algorithm>
#include <cmath>

namespace amine {

std::string Shape4::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(w) + ", " +
         std::to_string(h) + ", " + std::to_string(d) + ")";
}

std::string ConvKernel::str() const {
  return "kernel(" + std::to_string(kw) + ", " + std::to_string(kh) + ", " +
         std::to_string(d_in) + ", " + std::to_string(d_out) + ")";
}

FeatureMap::FeatureMap(Shape4 shape, double fill)
    : shape_(shape), values_(shape.size(), fill) {
  if (shape.n == 0 || shape.w == 0 || shape.h == 0 || shape.d == 0) {
    throw ShapeError("feature map dims must be >= 1, got " + shape.str());
  }
}

FeatureMap::FeatureMap(Shape4 shape, std::vector<double> values)
    : shape_(shape), values_(std::move(values)) {
  if (shape.n == 0 || shape.w == 0 || shape.h == 0 || shape.d == 0) {
    throw ShapeError("feature map dims must be >= 1, got " + shape.str());
  }
  if (values_.size() != shape.size()) {
    throw ShapeError("value count " + std::to_string(values_.size()) +
                     " does not match shape " + shape.str());
  }
}

FeatureMap FeatureMap::slice_batch(std::size_t first, std::size_t count) const {
  if (count == 0 || first + count > shape_.n) {
    throw ShapeError("batch slice [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") out of range for " +
                     shape_.str());
  }
  Shape4 s = shape_;
  s.n = count;
  const std::size_t stride = shape_.w * shape_.h * shape_.d;
  std::vector<double> v(values_.begin() + first * stride,
                        values_.begin() + (first + count) * stride);
  return FeatureMap(s, std::move(v));
}

bool FeatureMap::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
  const Shape4& sa = a.shape();
  const Shape4& sb = b.shape();
  if (sa.n != sb.n || sa.w != sb.w || sa.h != sb.h) {
    throw ShapeError("channel concat needs equal (n, w, h): " + sa.str() +
                     " vs " + sb.str());
  }
  FeatureMap out({sa.n, sa.w, sa.h, sa.d + sb.d});
  const std::size_t cells = sa.n * sa.w * sa.h;
  auto src_a = a.values();
  auto src_b = b.values();
  auto dst = out.values();
  for (std::size_t p = 0; p < cells; ++p) {
    std::copy_n(src_a.begin() + p * sa.d, sa.d, dst.begin() + p * (sa.d + sb.d));
    std::copy_n(src_b.begin() + p * sb.d, sb.d,
                dst.begin() + p * (sa.d + sb.d) + sa.d);
  }
  return out;
}

std::pair<FeatureMap, FeatureMap> split_channels(const FeatureMap& x,
                                                 std::size_t first) {
  const Shape4& s = x.shape();
  if (first == 0 || first >= s.d) {
    throw ShapeError("cannot split " + std::to_string(first) +
                     " channels from " + s.str());
  }
  const std::size_t second = s.d - first;
  FeatureMap a({s.n, s.w, s.h, first});
  FeatureMap b({s.n, s.w, s.h, second});
  const std::size_t cells = s.n * s.w * s.h;
  auto src = x.values();
  for (std::size_t p = 0; p < cells; ++p) {
    std::copy_n(src.begin() + p * s.d, first, a.values().begin() + p * first);
    std::copy_n(src.begin() + p * s.d + first, second,
                b.values().begin() + p * second);
  }
  return {std::move(a), std::move(b)};
}

FeatureMap concat_batch(const FeatureMap& a, const FeatureMap& b) {
  Shape4 sa = a.shape();
  const Shape4& sb = b.shape();
  if (sa.w != sb.w || sa.h != sb.h || sa.d != sb.d) {
    throw ShapeError("batch concat needs equal (w, h, d): " + sa.str() +
                     " vs " + sb.str());
  }
  std::vector<double> v(a.values().begin(), a.values().end());
  v.insert(v.end(), b.values().begin(), b.values().end());
  sa.n += sb.n;
  return FeatureMap(sa, std::move(v));
}

}  // namespace amine
