#include "amine/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace amine {
namespace {

void check_kernel(const FeatureMap& input, const ConvKernel& kernel,
                  std::size_t stride) {
  const Shape4& s = input.shape();
  if (stride == 0) throw ShapeError("convolution stride must be >= 1");
  if (kernel.d_in != s.d) {
    throw ShapeError("input " + s.str() + " has " + std::to_string(s.d) +
                     " channels but " + kernel.str() + " expects " +
                     std::to_string(kernel.d_in));
  }
  if (kernel.kw % 2 == 0 || kernel.kh % 2 == 0) {
    throw ShapeError("same padding needs odd kernel extents, got " +
                     kernel.str());
  }
  if (kernel.weights.size() != kernel.kw * kernel.kh * kernel.d_in * kernel.d_out) {
    throw ShapeError(kernel.str() + " has inconsistent weight count");
  }
}

// Per-axis sampling table for the 2x bilinear map.
struct Tap {
  std::size_t i0;
  std::size_t i1;
  double frac;
};

std::vector<Tap> upsample_taps(std::size_t extent) {
  std::vector<Tap> taps(2 * extent);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    src = std::max(src, 0.0);
    auto i0 = static_cast<std::size_t>(std::floor(src));
    i0 = std::min(i0, extent - 1);
    const std::size_t i1 = std::min(i0 + 1, extent - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

double tap_weight(const Tap& t, std::size_t i) {
  double w = 0.0;
  if (t.i0 == i) w += 1.0 - t.frac;
  if (t.i1 == i) w += t.frac;
  return w;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t stride) {
  return (in + stride - 1) / stride;
}

FeatureMap convolve(const FeatureMap& input, const ConvKernel& kernel,
                    std::size_t stride, std::span<const double> bias) {
  check_kernel(input, kernel, stride);
  if (!bias.empty() && bias.size() != kernel.d_out) {
    throw ShapeError("bias of length " + std::to_string(bias.size()) +
                     " does not match " + kernel.str());
  }
  const Shape4& s = input.shape();
  const Shape4 os{s.n, conv_output_extent(s.w, stride),
                  conv_output_extent(s.h, stride), kernel.d_out};
  FeatureMap out(os);
  const long px = static_cast<long>((kernel.kw - 1) / 2);
  const long py = static_cast<long>((kernel.kh - 1) / 2);
  const std::size_t d_out = kernel.d_out;
  const double* in = input.values().data();
  const double* k = kernel.weights.data();
  double* dst = out.values().data();
  const long rows = static_cast<long>(os.n * os.w);

#pragma omp parallel for schedule(static)
  for (long row = 0; row < rows; ++row) {
    const std::size_t n = static_cast<std::size_t>(row) / os.w;
    const std::size_t ox = static_cast<std::size_t>(row) % os.w;
    for (std::size_t oy = 0; oy < os.h; ++oy) {
      double* acc = dst + out.index(n, ox, oy, 0);
      for (std::size_t o = 0; o < d_out; ++o) acc[o] = bias.empty() ? 0.0 : bias[o];
      for (std::size_t kx = 0; kx < kernel.kw; ++kx) {
        const long ix = static_cast<long>(ox * stride + kx) - px;
        if (ix < 0 || ix >= static_cast<long>(s.w)) continue;
        for (std::size_t ky = 0; ky < kernel.kh; ++ky) {
          const long iy = static_cast<long>(oy * stride + ky) - py;
          if (iy < 0 || iy >= static_cast<long>(s.h)) continue;
          const double* src = in + input.index(n, ix, iy, 0);
          const double* kk = k + kernel.index(kx, ky, 0, 0);
          for (std::size_t i = 0; i < s.d; ++i) {
            const double v = src[i];
            const double* kr = kk + i * d_out;
            for (std::size_t o = 0; o < d_out; ++o) acc[o] += v * kr[o];
          }
        }
      }
    }
  }
  return out;
}

ConvGrads convolve_backward(const FeatureMap& input, const ConvKernel& kernel,
                            std::size_t stride, const FeatureMap& d_output,
                            bool need_input_grad) {
  check_kernel(input, kernel, stride);
  const Shape4& s = input.shape();
  const Shape4 os{s.n, conv_output_extent(s.w, stride),
                  conv_output_extent(s.h, stride), kernel.d_out};
  if (d_output.shape() != os) {
    throw ShapeError("output gradient " + d_output.shape().str() +
                     " does not match convolution output " + os.str());
  }
  const long px = static_cast<long>((kernel.kw - 1) / 2);
  const long py = static_cast<long>((kernel.kh - 1) / 2);
  const std::size_t d_out = kernel.d_out;
  const double* in = input.values().data();
  const double* g = d_output.values().data();
  const double* k = kernel.weights.data();

  ConvGrads grads;
  grads.d_kernel = ConvKernel(kernel.kw, kernel.kh, kernel.d_in, kernel.d_out);
  grads.d_bias.assign(d_out, 0.0);

  // Kernel gradient: one thread owns each (kx, ky, i) row of d_out values.
  const long kernel_rows = static_cast<long>(kernel.kw * kernel.kh * s.d);
  double* dk = grads.d_kernel.weights.data();
#pragma omp parallel for schedule(static)
  for (long r = 0; r < kernel_rows; ++r) {
    const std::size_t i = static_cast<std::size_t>(r) % s.d;
    const std::size_t kxy = static_cast<std::size_t>(r) / s.d;
    const std::size_t kx = kxy / kernel.kh;
    const std::size_t ky = kxy % kernel.kh;
    double* acc = dk + kernel.index(kx, ky, i, 0);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t ox = 0; ox < os.w; ++ox) {
        const long ix = static_cast<long>(ox * stride + kx) - px;
        if (ix < 0 || ix >= static_cast<long>(s.w)) continue;
        for (std::size_t oy = 0; oy < os.h; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - py;
          if (iy < 0 || iy >= static_cast<long>(s.h)) continue;
          const double v = in[input.index(n, ix, iy, i)];
          const double* gr = g + d_output.index(n, ox, oy, 0);
          for (std::size_t o = 0; o < d_out; ++o) acc[o] += v * gr[o];
        }
      }
    }
  }

  for (std::size_t p = 0; p < os.n * os.w * os.h; ++p) {
    for (std::size_t o = 0; o < d_out; ++o) grads.d_bias[o] += g[p * d_out + o];
  }

  if (!need_input_grad) return grads;

  grads.d_input = FeatureMap(s);
  double* di = grads.d_input.values().data();
  const long rows = static_cast<long>(s.n * s.w);
#pragma omp parallel for schedule(static)
  for (long row = 0; row < rows; ++row) {
    const std::size_t n = static_cast<std::size_t>(row) / s.w;
    const std::size_t ix = static_cast<std::size_t>(row) % s.w;
    for (std::size_t iy = 0; iy < s.h; ++iy) {
      double* acc = di + grads.d_input.index(n, ix, iy, 0);
      for (std::size_t kx = 0; kx < kernel.kw; ++kx) {
        const long num_x = static_cast<long>(ix) + px - static_cast<long>(kx);
        if (num_x < 0 || num_x % static_cast<long>(stride) != 0) continue;
        const std::size_t ox = static_cast<std::size_t>(num_x) / stride;
        if (ox >= os.w) continue;
        for (std::size_t ky = 0; ky < kernel.kh; ++ky) {
          const long num_y = static_cast<long>(iy) + py - static_cast<long>(ky);
          if (num_y < 0 || num_y % static_cast<long>(stride) != 0) continue;
          const std::size_t oy = static_cast<std::size_t>(num_y) / stride;
          if (oy >= os.h) continue;
          const double* gr = g + d_output.index(n, ox, oy, 0);
          const double* kk = k + kernel.index(kx, ky, 0, 0);
          for (std::size_t i = 0; i < s.d; ++i) {
            const double* kr = kk + i * d_out;
            double sum = 0.0;
            for (std::size_t o = 0; o < d_out; ++o) sum += gr[o] * kr[o];
            acc[i] += sum;
          }
        }
      }
    }
  }
  return grads;
}

FeatureMap gap(const FeatureMap& x) {
  const Shape4& s = x.shape();
  FeatureMap out({s.n, 1, 1, s.d});
  const double scale = 1.0 / static_cast<double>(s.spatial());
  const double* src = x.values().data();
  double* dst = out.values().data();
#pragma omp parallel for schedule(static)
  for (long n = 0; n < static_cast<long>(s.n); ++n) {
    double* acc = dst + n * s.d;
    const double* base = src + static_cast<std::size_t>(n) * s.spatial() * s.d;
    for (std::size_t p = 0; p < s.spatial(); ++p) {
      for (std::size_t d = 0; d < s.d; ++d) acc[d] += base[p * s.d + d];
    }
    for (std::size_t d = 0; d < s.d; ++d) acc[d] *= scale;
  }
  return out;
}

FeatureMap gap_backward(const Shape4& input_shape, const FeatureMap& d_output) {
  const Shape4 expect{input_shape.n, 1, 1, input_shape.d};
  if (d_output.shape() != expect) {
    throw ShapeError("GAP gradient " + d_output.shape().str() +
                     " does not match " + expect.str());
  }
  FeatureMap out(input_shape);
  const double scale = 1.0 / static_cast<double>(input_shape.spatial());
  const double* g = d_output.values().data();
  double* dst = out.values().data();
  const std::size_t per_sample = input_shape.spatial() * input_shape.d;
#pragma omp parallel for schedule(static)
  for (long n = 0; n < static_cast<long>(input_shape.n); ++n) {
    for (std::size_t p = 0; p < input_shape.spatial(); ++p) {
      for (std::size_t d = 0; d < input_shape.d; ++d) {
        dst[n * per_sample + p * input_shape.d + d] = g[n * input_shape.d + d] * scale;
      }
    }
  }
  return out;
}

FeatureMap bilinear_upsample2x(const FeatureMap& x) {
  const Shape4& s = x.shape();
  const Shape4 os{s.n, 2 * s.w, 2 * s.h, s.d};
  FeatureMap out(os);
  const auto tx = upsample_taps(s.w);
  const auto ty = upsample_taps(s.h);
  const long rows = static_cast<long>(os.n * os.w);
#pragma omp parallel for schedule(static)
  for (long row = 0; row < rows; ++row) {
    const std::size_t n = static_cast<std::size_t>(row) / os.w;
    const std::size_t ox = static_cast<std::size_t>(row) % os.w;
    const Tap& a = tx[ox];
    for (std::size_t oy = 0; oy < os.h; ++oy) {
      const Tap& b = ty[oy];
      const double w00 = (1.0 - a.frac) * (1.0 - b.frac);
      const double w01 = (1.0 - a.frac) * b.frac;
      const double w10 = a.frac * (1.0 - b.frac);
      const double w11 = a.frac * b.frac;
      for (std::size_t d = 0; d < s.d; ++d) {
        out.at(n, ox, oy, d) =
            w00 * x.at(n, a.i0, b.i0, d) + w01 * x.at(n, a.i0, b.i1, d) +
            w10 * x.at(n, a.i1, b.i0, d) + w11 * x.at(n, a.i1, b.i1, d);
      }
    }
  }
  return out;
}

FeatureMap bilinear_upsample2x_backward(const Shape4& input_shape,
                                        const FeatureMap& d_output) {
  const Shape4 os{input_shape.n, 2 * input_shape.w, 2 * input_shape.h,
                  input_shape.d};
  if (d_output.shape() != os) {
    throw ShapeError("upsample gradient " + d_output.shape().str() +
                     " does not match " + os.str());
  }
  FeatureMap out(input_shape);
  const auto tx = upsample_taps(input_shape.w);
  const auto ty = upsample_taps(input_shape.h);
  // Output o only reads inputs floor(o/2 - 0.25) and one above, so input i is
  // touched by outputs in [2i - 2, 2i + 2].
  auto window = [](std::size_t i, std::size_t out_extent) {
    const std::size_t lo = i >= 1 ? 2 * i - 2 : 0;
    const std::size_t hi = std::min(2 * i + 3, out_extent);
    return std::pair{lo, hi};
  };
  const long rows = static_cast<long>(input_shape.n * input_shape.w);
#pragma omp parallel for schedule(static)
  for (long row = 0; row < rows; ++row) {
    const std::size_t n = static_cast<std::size_t>(row) / input_shape.w;
    const std::size_t ix = static_cast<std::size_t>(row) % input_shape.w;
    const auto [x_lo, x_hi] = window(ix, os.w);
    for (std::size_t iy = 0; iy < input_shape.h; ++iy) {
      const auto [y_lo, y_hi] = window(iy, os.h);
      double* acc = &out.at(n, ix, iy, 0);
      for (std::size_t ox = x_lo; ox < x_hi; ++ox) {
        const double wx = tap_weight(tx[ox], ix);
        if (wx == 0.0) continue;
        for (std::size_t oy = y_lo; oy < y_hi; ++oy) {
          const double wy = tap_weight(ty[oy], iy);
          if (wy == 0.0) continue;
          const double w = wx * wy;
          const double* g = d_output.values().data() + d_output.index(n, ox, oy, 0);
          for (std::size_t d = 0; d < input_shape.d; ++d) acc[d] += w * g[d];
        }
      }
    }
  }
  return out;
}

FeatureMap relu(const FeatureMap& x) {
  FeatureMap out(x.shape());
  auto src = x.values();
  auto dst = out.values();
  const long count = static_cast<long>(src.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < count; ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
  return out;
}

FeatureMap relu_backward(const FeatureMap& activated,
                         const FeatureMap& d_output) {
  if (activated.shape() != d_output.shape()) {
    throw ShapeError("relu gradient " + d_output.shape().str() +
                     " does not match activation " + activated.shape().str());
  }
  FeatureMap out(activated.shape());
  auto a = activated.values();
  auto g = d_output.values();
  auto dst = out.values();
  const long count = static_cast<long>(a.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < count; ++i) dst[i] = a[i] > 0.0 ? g[i] : 0.0;
  return out;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

BceResult sigmoid_bce(double logit, int label) {
  if (!std::isfinite(logit)) {
    throw std::invalid_argument("sigmoid_bce: non-finite logit");
  }
  if (label != 0 && label != 1) {
    throw std::invalid_argument("sigmoid_bce: label must be 0 or 1, got " +
                                std::to_string(label));
  }
  const double y = static_cast<double>(label);
  BceResult r;
  r.loss = std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::abs(logit)));
  r.d_logit = sigmoid(logit) - y;
  return r;
}

void sgd_step(std::span<double> params, std::span<const double> grads,
              double lr) {
  if (params.size() != grads.size()) {
    throw ShapeError("sgd_step: " + std::to_string(params.size()) +
                     " parameters vs " + std::to_string(grads.size()) +
                     " gradients");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be > 0");
  const long count = static_cast<long>(params.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < count; ++i) params[i] -= lr * grads[i];
}

}  // namespace amine
