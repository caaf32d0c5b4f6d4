#pragma once

#include <array>

#include "frmlp/spatial.hpp"

namespace frmlp::data {

struct Phantom {
    Tensor volume;   // [1,H,W,D], intensities in [0,1]
    LabelMap labels; // dominant blob thresholded at half its peak
};

/// Sum of random anisotropic Gaussian blobs, max-normalized to [0,1].
Phantom synth_phantom(std::array<std::int64_t, 3> dims, int n_blobs, std::uint64_t seed);

/// Scaled-Poisson dose model: noisy = Poisson(clean * s) / s with
/// s = counts_at_full_dose / drf. Zeros stay zero; higher DRF is noisier.
Tensor synth_low_dose(const Tensor& clean, double drf, std::uint64_t seed,
                      double counts_at_full_dose = 1e4);

struct RegistrationPair {
    Tensor fixed, moving;  // [1,H,W,D]
    LabelMap fixed_mask, moving_mask;
    Tensor u_true;  // [3,H,W,D]; fixed == warp(moving, u_true)
};

RegistrationPair synth_registration_pair(std::array<std::int64_t, 3> dims, double amplitude,
                                         std::uint64_t seed, int n_blobs = 5,
                                         double smoothness_sigma = 4.0);

}  // namespace frmlp::data
