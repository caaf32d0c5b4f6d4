#pragma once

#include "frmlp/ops.hpp"

namespace frmlp {

/// Stabilizer used in NCC denominators, Dice denominators and probability
/// clamps; degenerate (zero-variance) NCC windows contribute 0.
constexpr double kLossEps = 1e-5;

struct LossWeights {
    double lambda1 = 300.0;   // restoration content weight
    double lambda2 = 1.0;     // restoration adversarial weight
    double lambda_reg = 1.0;  // registration smoothness weight
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    int ncc_window = 9;

    void validate() const;
};

/// Mean absolute error (per-voxel mean, so lambda values stay comparable
/// across volume sizes).
Tensor content_loss(const Tensor& pred, const Tensor& target);

/// Least-squares GAN discriminator objective:
/// mean[(d_real - 1)^2] + mean[d_fake^2]. The caller feeds the discriminator
/// a detached candidate for this loss so no gradient reaches the generator.
Tensor lsgan_d_loss(const Tensor& d_real, const Tensor& d_fake);
/// Generator adversarial term: mean[(d_fake - 1)^2].
Tensor lsgan_g_loss(const Tensor& d_fake);

Tensor restoration_loss(const Tensor& pred, const Tensor& target, const Tensor& d_fake,
                        const LossWeights& w);

/// Negative squared local normalized cross-correlation, summed over all
/// voxels. Windows are clipped at the volume boundary and normalized by the
/// actual member count, so an affine intensity relation scores 1 everywhere.
Tensor local_ncc_loss(const Tensor& fixed, const Tensor& warped, int n);

/// Sum of squared forward differences of the displacement components.
Tensor diffusion_regularizer(const Tensor& u);

/// local_ncc + lambda * diffusion, differentiable through the warp.
Tensor registration_loss(const Tensor& fixed, const Tensor& moving, const Tensor& u,
                         const LossWeights& w);

/// 1 - mean soft Dice coefficient; probabilities via per-channel sigmoid,
/// labels are one-hot [N,H,W,D].
Tensor dice_loss(const Tensor& logits, const Tensor& labels);

Tensor focal_loss(const Tensor& logits, const Tensor& labels, double alpha, double gamma);

Tensor segmentation_loss(const Tensor& logits, const Tensor& labels, const LossWeights& w);

}  // namespace frmlp
