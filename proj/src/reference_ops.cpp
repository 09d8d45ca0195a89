#include "amine/reference_ops.hpp"

#include <algorithm>
#include <cmath>

namespace amine::reference {
namespace {

// Source index pair and weight for output coordinate o of a 2x upsample.
void source_of(std::size_t o, std::size_t extent, std::size_t& i0,
               std::size_t& i1, double& frac) {
  const double src = std::max(0.5 * static_cast<double>(o) - 0.25, 0.0);
  i0 = std::min(static_cast<std::size_t>(src), extent - 1);
  i1 = std::min(i0 + 1, extent - 1);
  frac = src - static_cast<double>(i0);
}

}  // namespace

FeatureMap convolve(const FeatureMap& input, const ConvKernel& kernel,
                    std::size_t stride, std::span<const double> bias) {
  const Shape4& s = input.shape();
  if (kernel.d_in != s.d) {
    throw ShapeError("input " + s.str() + " vs " + kernel.str());
  }
  const Shape4 os{s.n, (s.w + stride - 1) / stride, (s.h + stride - 1) / stride,
                  kernel.d_out};
  FeatureMap out(os);
  const long px = static_cast<long>(kernel.kw / 2);
  const long py = static_cast<long>(kernel.kh / 2);
  for (std::size_t o = 0; o < kernel.d_out; ++o) {
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t ox = 0; ox < os.w; ++ox) {
        for (std::size_t oy = 0; oy < os.h; ++oy) {
          double sum = bias.empty() ? 0.0 : bias[o];
          for (std::size_t i = 0; i < s.d; ++i) {
            for (std::size_t kx = 0; kx < kernel.kw; ++kx) {
              for (std::size_t ky = 0; ky < kernel.kh; ++ky) {
                const long ix = static_cast<long>(ox * stride + kx) - px;
                const long iy = static_cast<long>(oy * stride + ky) - py;
                if (ix < 0 || iy < 0 || ix >= static_cast<long>(s.w) ||
                    iy >= static_cast<long>(s.h)) {
                  continue;
                }
                sum += input.at(n, ix, iy, i) * kernel.at(kx, ky, i, o);
              }
            }
          }
          out.at(n, ox, oy, o) = sum;
        }
      }
    }
  }
  return out;
}

ConvGrads convolve_backward(const FeatureMap& input, const ConvKernel& kernel,
                            std::size_t stride, const FeatureMap& d_output) {
  const Shape4& s = input.shape();
  ConvGrads g;
  g.d_input = FeatureMap(s);
  g.d_kernel = ConvKernel(kernel.kw, kernel.kh, kernel.d_in, kernel.d_out);
  g.d_bias.assign(kernel.d_out, 0.0);
  const Shape4& os = d_output.shape();
  const long px = static_cast<long>(kernel.kw / 2);
  const long py = static_cast<long>(kernel.kh / 2);
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t ox = 0; ox < os.w; ++ox) {
      for (std::size_t oy = 0; oy < os.h; ++oy) {
        for (std::size_t o = 0; o < os.d; ++o) {
          const double go = d_output.at(n, ox, oy, o);
          g.d_bias[o] += go;
          for (std::size_t kx = 0; kx < kernel.kw; ++kx) {
            for (std::size_t ky = 0; ky < kernel.kh; ++ky) {
              const long ix = static_cast<long>(ox * stride + kx) - px;
              const long iy = static_cast<long>(oy * stride + ky) - py;
              if (ix < 0 || iy < 0 || ix >= static_cast<long>(s.w) ||
                  iy >= static_cast<long>(s.h)) {
                continue;
              }
              for (std::size_t i = 0; i < s.d; ++i) {
                g.d_kernel.at(kx, ky, i, o) += go * input.at(n, ix, iy, i);
                g.d_input.at(n, ix, iy, i) += go * kernel.at(kx, ky, i, o);
              }
            }
          }
        }
      }
    }
  }
  return g;
}

FeatureMap gap(const FeatureMap& x) {
  const Shape4& s = x.shape();
  FeatureMap out({s.n, 1, 1, s.d});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t d = 0; d < s.d; ++d) {
      double sum = 0.0;
      for (std::size_t px = 0; px < s.w; ++px) {
        for (std::size_t py = 0; py < s.h; ++py) sum += x.at(n, px, py, d);
      }
      out.at(n, 0, 0, d) = sum / static_cast<double>(s.w * s.h);
    }
  }
  return out;
}

FeatureMap bilinear_upsample2x(const FeatureMap& x) {
  const Shape4& s = x.shape();
  FeatureMap out({s.n, 2 * s.w, 2 * s.h, s.d});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t ox = 0; ox < 2 * s.w; ++ox) {
      std::size_t x0, x1;
      double fx;
      source_of(ox, s.w, x0, x1, fx);
      for (std::size_t oy = 0; oy < 2 * s.h; ++oy) {
        std::size_t y0, y1;
        double fy;
        source_of(oy, s.h, y0, y1, fy);
        for (std::size_t d = 0; d < s.d; ++d) {
          const double top = (1 - fy) * x.at(n, x0, y0, d) + fy * x.at(n, x0, y1, d);
          const double bot = (1 - fy) * x.at(n, x1, y0, d) + fy * x.at(n, x1, y1, d);
          out.at(n, ox, oy, d) = (1 - fx) * top + fx * bot;
        }
      }
    }
  }
  return out;
}

FeatureMap bilinear_upsample2x_backward(const Shape4& input_shape,
                                        const FeatureMap& d_output) {
  FeatureMap out(input_shape);
  const Shape4& os = d_output.shape();
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t ox = 0; ox < os.w; ++ox) {
      std::size_t x0, x1;
      double fx;
      source_of(ox, input_shape.w, x0, x1, fx);
      for (std::size_t oy = 0; oy < os.h; ++oy) {
        std::size_t y0, y1;
        double fy;
        source_of(oy, input_shape.h, y0, y1, fy);
        for (std::size_t d = 0; d < os.d; ++d) {
          const double g = d_output.at(n, ox, oy, d);
          out.at(n, x0, y0, d) += (1 - fx) * (1 - fy) * g;
          out.at(n, x0, y1, d) += (1 - fx) * fy * g;
          out.at(n, x1, y0, d) += fx * (1 - fy) * g;
          out.at(n, x1, y1, d) += fx * fy * g;
        }
      }
    }
  }
  return out;
}

}  // namespace amine::reference
