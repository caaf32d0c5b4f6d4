#pragma once

#include <cstdint>
#include <vector>

#include "frmlp/ops.hpp"
#include "frmlp/tensor.hpp"

namespace frmlp {

/// Integer segmentation mask over an [H,W,D] grid; values are structure ids.
struct LabelMap {
    Shape dims;  // [H, W, D]
    std::vector<std::uint16_t> values;

    std::int64_t numel() const { return dims.empty() ? 0 : dims[0] * dims[1] * dims[2]; }
    std::uint16_t at(std::int64_t h, std::int64_t w, std::int64_t d) const {
        return values[static_cast<std::size_t>((h * dims[1] + w) * dims[2] + d)];
    }
    std::uint16_t& at(std::int64_t h, std::int64_t w, std::int64_t d) {
        return values[static_cast<std::size_t>((h * dims[1] + w) * dims[2] + d)];
    }
};

/// Samples m at p + u(p) by trilinear interpolation with border-clamped
/// coordinates; differentiable in both the volume and the field.
/// m [C,H,W,D], u [3,H,W,D] in voxel units (component order H, W, D).
Tensor warp_trilinear(const Tensor& m, const Tensor& u);

/// Nearest-neighbor label warping: output values are a subset of the input's.
LabelMap warp_nearest(const LabelMap& s, const Tensor& u);

/// Per-voxel det(I + grad u), central differences in the interior and
/// one-sided differences on the faces. Returns a plain [H,W,D] tensor.
Tensor jacobian_determinants(const Tensor& u);

/// Gaussian-smoothed random field, rescaled so max |u| == amplitude, then
/// rescaled/retried until it is folding-free (no non-positive Jacobian
/// determinants). Throws GenerationError when that cannot be reached.
Tensor synth_smooth_field(std::array<std::int64_t, 3> dims, double amplitude,
                          double smoothness_sigma, std::uint64_t seed);

}  // namespace frmlp
