#include "frmlp/objectives.hpp"

#include <limits>

#include "frmlp/spatial.hpp"

namespace frmlp {

void LossWeights::validate() const {
    if (lambda1 <= 0 || lambda2 <= 0 || lambda_reg <= 0 || focal_alpha <= 0 || focal_gamma < 0)
        throw ConfigError("loss weights must be positive");
    if (ncc_window < 1 || ncc_window % 2 == 0) throw ConfigError("ncc window must be odd");
}

Tensor content_loss(const Tensor& pred, const Tensor& target) {
    if (pred.dims() != target.dims())
        throw ShapeError("content_loss: shape mismatch " + shape_str(pred.dims()) + " vs " +
                         shape_str(target.dims()));
    return ops::mean(ops::abs(ops::sub(pred, target)));
}

Tensor lsgan_d_loss(const Tensor& d_real, const Tensor& d_fake) {
    Tensor real_term = ops::mean(ops::square(ops::affine(d_real, 1.0, -1.0)));
    Tensor fake_term = ops::mean(ops::square(d_fake));
    return ops::add(real_term, fake_term);
}

Tensor lsgan_g_loss(const Tensor& d_fake) {
    return ops::mean(ops::square(ops::affine(d_fake, 1.0, -1.0)));
}

Tensor restoration_loss(const Tensor& pred, const Tensor& target, const Tensor& d_fake,
                        const LossWeights& w) {
    w.validate();
    return ops::add(ops::scale(content_loss(pred, target), w.lambda1),
                    ops::scale(lsgan_g_loss(d_fake), w.lambda2));
}

Tensor local_ncc_loss(const Tensor& fixed, const Tensor& warped, int n) {
    if (fixed.rank() != 4 || fixed.dim(0) != 1 || warped.rank() != 4 || warped.dim(0) != 1)
        throw UsageError("local_ncc_loss: single-channel [1,H,W,D] volumes required");
    if (fixed.dims() != warped.dims())
        throw ShapeError("local_ncc_loss: shape mismatch");
    if (n < 1 || n % 2 == 0) throw UsageError("local_ncc_loss: window must be odd");
    const int r = n / 2;

    // Per-voxel window member count (windows clipped at the boundary).
    Tensor count_inv = Tensor::zeros(fixed.dims(), fixed.dtype());
    {
        NoGradGuard ng;
        Tensor ones = Tensor::full(fixed.dims(), 1.0, fixed.dtype());
        Tensor count = ops::box_sum3(ones, r);
        dispatch_dtype(fixed.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto src = count.data<T>();
            auto dst = count_inv.data<T>();
            for (std::int64_t i = 0; i < count.numel(); ++i) dst[i] = T(1) / src[i];
        });
    }

    Tensor i_sum = ops::box_sum3(fixed, r);
    Tensor j_sum = ops::box_sum3(warped, r);
    Tensor i2_sum = ops::box_sum3(ops::square(fixed), r);
    Tensor j2_sum = ops::box_sum3(ops::square(warped), r);
    Tensor ij_sum = ops::box_sum3(ops::mul(fixed, warped), r);

    Tensor u_i = ops::mul(i_sum, count_inv);
    Tensor u_j = ops::mul(j_sum, count_inv);
    Tensor cross = ops::sub(ij_sum, ops::mul(u_j, i_sum));
    const double inf = std::numeric_limits<double>::infinity();
    Tensor var_i = ops::clamp(ops::sub(i2_sum, ops::mul(u_i, i_sum)), 0.0, inf);
    Tensor var_j = ops::clamp(ops::sub(j2_sum, ops::mul(u_j, j_sum)), 0.0, inf);
    Tensor cc = ops::div(ops::square(cross), ops::affine(ops::mul(var_i, var_j), 1.0, kLossEps));
    return ops::neg(ops::sum(cc));
}

Tensor diffusion_regularizer(const Tensor& u) {
    if (u.rank() != 4 || u.dim(0) != 3)
        throw ShapeError("diffusion_regularizer: field must be [3,H,W,D]");
    Tensor total;
    for (std::size_t axis = 1; axis <= 3; ++axis) {
        const std::int64_t e = u.dim(axis);
        if (e < 2) throw UsageError("diffusion_regularizer: extents must be >= 2");
        Tensor hi = ops::narrow(u, axis, 1, e - 1);
        Tensor lo = ops::narrow(u, axis, 0, e - 1);
        Tensor term = ops::sum(ops::square(ops::sub(hi, lo)));
        total = total.defined() ? ops::add(total, term) : term;
    }
    return total;
}

Tensor registration_loss(const Tensor& fixed, const Tensor& moving, const Tensor& u,
                         const LossWeights& w) {
    w.validate();
    Tensor warped = warp_trilinear(moving, u);
    Tensor similarity = local_ncc_loss(fixed, warped, w.ncc_window);
    return ops::add(similarity, ops::scale(diffusion_regularizer(u), w.lambda_reg));
}

namespace {

void check_seg_inputs(const Tensor& logits, const Tensor& labels, const char* who) {
    if (logits.rank() != 4 || labels.rank() != 4)
        throw ShapeError(std::string(who) + ": logits and labels must be [N,H,W,D]");
    if (logits.dims() != labels.dims())
        throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(logits.dims()) +
                         " vs " + shape_str(labels.dims()));
}

}  // namespace

Tensor dice_loss(const Tensor& logits, const Tensor& labels) {
    check_seg_inputs(logits, labels, "dice_loss");
    const std::int64_t classes = logits.dim(0);
    Tensor p = ops::sigmoid(logits);
    Tensor acc;
    for (std::int64_t i = 0; i < classes; ++i) {
        Tensor pi = ops::narrow(p, 0, i, 1);
        Tensor gi = ops::narrow(labels, 0, i, 1);
        Tensor numer = ops::scale(ops::sum(ops::mul(pi, gi)), 2.0);
        Tensor denom = ops::affine(ops::add(ops::sum(ops::square(pi)), ops::sum(ops::square(gi))),
                                   1.0, kLossEps);
        Tensor dice = ops::div(numer, denom);
        acc = acc.defined() ? ops::add(acc, dice) : dice;
    }
    Tensor mean_dice = ops::scale(acc, 1.0 / static_cast<double>(classes));
    return ops::affine(mean_dice, -1.0, 1.0);  // 1 - coefficient
}

Tensor focal_loss(const Tensor& logits, const Tensor& labels, double alpha, double gamma) {
    check_seg_inputs(logits, labels, "focal_loss");
    if (alpha <= 0 || gamma < 0) throw ConfigError("focal_loss: invalid alpha/gamma");
    Tensor p = ops::clamp(ops::sigmoid(logits), kLossEps, 1.0 - kLossEps);
    Tensor one_minus_p = ops::affine(p, -1.0, 1.0);
    Tensor pos = ops::mul(labels, ops::mul(ops::pow_const(one_minus_p, gamma), ops::log(p)));
    Tensor neg_term = ops::mul(ops::affine(labels, -1.0, 1.0),
                               ops::mul(ops::pow_const(p, gamma), ops::log(one_minus_p)));
    Tensor combined = ops::add(ops::scale(pos, alpha), neg_term);
    return ops::neg(ops::mean(combined));
}

Tensor segmentation_loss(const Tensor& logits, const Tensor& labels, const LossWeights& w) {
    w.validate();
    return ops::add(dice_loss(logits, labels),
                    focal_loss(logits, labels, w.focal_alpha, w.focal_gamma));
}

}  // namespace frmlp
