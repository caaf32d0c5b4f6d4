#pragma once

#include <array>
#include <span>

#include "frmlp/tensor.hpp"

namespace frmlp::ops {

// ---- elementwise ----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
/// scale_factor * x + shift, elementwise with constants.
Tensor affine(const Tensor& x, double scale_factor, double shift);
Tensor scale(const Tensor& x, double s);
Tensor neg(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);  // requires x >= 0
Tensor log(const Tensor& x);   // requires x > 0
Tensor clamp(const Tensor& x, double lo, double hi);
/// x^p for constant p; requires x > 0 unless p is a non-negative integer.
Tensor pow_const(const Tensor& x, double p);

// ---- reductions ------------------------------------------------------------
Tensor sum(const Tensor& x);   // -> scalar [1]
Tensor mean(const Tensor& x);  // -> scalar [1]

// ---- shape -----------------------------------------------------------------
Tensor reshape(const Tensor& x, Shape dims);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);  // materializes
Tensor narrow(const Tensor& x, std::size_t axis, std::int64_t start, std::int64_t len);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor cast(const Tensor& x, DType dt);  // differentiable dtype conversion

// 4D feature maps are [C, H, W, D] row-major throughout.
Tensor pad_spatial(const Tensor& x, std::array<std::int64_t, 3> lo, std::array<std::int64_t, 3> hi);
Tensor crop_spatial(const Tensor& x, std::array<std::int64_t, 3> start,
                    std::array<std::int64_t, 3> size);
/// Circular shift along one axis (positive shift moves content to higher indices).
Tensor roll(const Tensor& x, std::size_t axis, std::int64_t shift);
/// Folds every 2x2x2 spatial neighborhood into channels: [C,H,W,D] -> [8C,H/2,W/2,D/2].
/// Output channel o*C + c holds offset o = ((dy*2)+dx)*2 + dz of input channel c.
Tensor space_to_depth2(const Tensor& x);
/// Factor-2 trilinear upsampling (half-voxel aligned, border-clamped).
Tensor upsample_trilinear2(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);                     // [C,H,W,D] -> [C]
Tensor scale_channels(const Tensor& x, const Tensor& gate);  // gate [C]
/// Sliding-window sum over a (2r+1)^3 neighborhood, zero outside the volume.
Tensor box_sum3(const Tensor& x, int radius);

// ---- linear algebra --------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
/// x [N,K] * w [K,M] + b [M]; pass an undefined Tensor to skip the bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// Cross-correlation, zero padding. x [Cin,H,W,D], w [Cout,Cin,k,k,k], b [Cout] or undefined.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);
/// Transposed conv, no padding: output extent = (in-1)*stride + k. w [Cin,Cout,k,k,k].
Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride);
/// Normalizes the last axis to zero mean / unit variance, then gamma*xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Per-channel spatial normalization of [C,H,W,D] (batch-statistics free).
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// BLAS-backed when built with OpenBLAS; deterministic single-threaded either way.
// C [m,n] = op(A) * op(B) (+ C when accumulate), all row-major contiguous.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
          const T* b, T* c, bool accumulate);

}  // namespace frmlp::ops
