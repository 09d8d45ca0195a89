#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "amine/feature_map.hpp"

// Differentiable building blocks. Every kernel here is OpenMP-parallel in
// gather form: each output element is produced by exactly one thread with a
// fixed summation order, so results are bit-identical for any thread count.
// Serial scatter-form counterparts live in reference_ops.hpp.

namespace amine {

// Zero "same" padding: the low-side pad is (k - 1) / 2 and the output extent
// is ceil(in / stride).
std::size_t conv_output_extent(std::size_t in, std::size_t stride);

FeatureMap convolve(const FeatureMap& input, const ConvKernel& kernel,
                    std::size_t stride, std::span<const double> bias = {});

struct ConvGrads {
  FeatureMap d_input;  // empty (size 0) when not requested
  ConvKernel d_kernel;
  std::vector<double> d_bias;
};

ConvGrads convolve_backward(const FeatureMap& input, const ConvKernel& kernel,
                            std::size_t stride, const FeatureMap& d_output,
                            bool need_input_grad = true);

// Global average pooling over (x, y); result has shape (N, 1, 1, D).
FeatureMap gap(const FeatureMap& x);
FeatureMap gap_backward(const Shape4& input_shape, const FeatureMap& d_output);

// 2x bilinear upsampling with half-pixel source centres and edge clamping:
//   src(o) = max((o + 0.5) / 2 - 0.5, 0),  i0 = floor(src),
//   i1 = min(i0 + 1, extent - 1),  out = (1 - frac) * in[i0] + frac * in[i1]
// applied separably along x and y.
FeatureMap bilinear_upsample2x(const FeatureMap& x);
FeatureMap bilinear_upsample2x_backward(const Shape4& input_shape,
                                        const FeatureMap& d_output);

FeatureMap relu(const FeatureMap& x);
// `activated` is the relu output; the derivative is taken as 0 at 0.
FeatureMap relu_backward(const FeatureMap& activated,
                         const FeatureMap& d_output);

struct BceResult {
  double loss = 0.0;
  double d_logit = 0.0;  // sigma(z) - y
};

double sigmoid(double z);
// Binary cross-entropy on a logit in the log-sum-exp stable form.
BceResult sigmoid_bce(double logit, int label);

// p <- p - lr * g
void sgd_step(std::span<double> params, std::span<const double> grads,
              double lr);

}  // namespace amine
