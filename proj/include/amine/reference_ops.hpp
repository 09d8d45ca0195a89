#pragma once

#include <span>

#include "amine/feature_map.hpp"
#include "amine/ops.hpp"

// Serial reference implementations of the parallel kernels in ops.hpp.
// Written in the direct scatter form of each definition; used by the tests
// and the kernel benchmark, never on the training path.

namespace amine::reference {

FeatureMap convolve(const FeatureMap& input, const ConvKernel& kernel,
                    std::size_t stride, std::span<const double> bias = {});
ConvGrads convolve_backward(const FeatureMap& input, const ConvKernel& kernel,
                            std::size_t stride, const FeatureMap& d_output);

FeatureMap gap(const FeatureMap& x);

FeatureMap bilinear_upsample2x(const FeatureMap& x);
FeatureMap bilinear_upsample2x_backward(const Shape4& input_shape,
                                        const FeatureMap& d_output);

}  // namespace amine::reference
