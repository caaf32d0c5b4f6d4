#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "frmlp/gradcheck.hpp"
#include "frmlp/objectives.hpp"
#include "frmlp/spatial.hpp"

using namespace frmlp;

namespace {

// Independent sliding-window oracle for the squared local NCC: windows are
// clipped at the boundary and normalized by the actual member count.
double ncc_oracle(const Tensor& fixed, const Tensor& warped, int n) {
    const std::int64_t H = fixed.dim(1), W = fixed.dim(2), D = fixed.dim(3);
    const int r = n / 2;
    double total = 0.0;
    for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x)
            for (std::int64_t z = 0; z < D; ++z) {
                double si = 0, sj = 0;
                std::int64_t count = 0;
                for (std::int64_t dy = -r; dy <= r; ++dy)
                    for (std::int64_t dx = -r; dx <= r; ++dx)
                        for (std::int64_t dz = -r; dz <= r; ++dz) {
                            const std::int64_t iy = y + dy, ix = x + dx, iz = z + dz;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W || iz < 0 || iz >= D)
                                continue;
                            si += fixed.value_at((iy * W + ix) * D + iz);
                            sj += warped.value_at((iy * W + ix) * D + iz);
                            ++count;
                        }
                const double ui = si / count, uj = sj / count;
                double cross = 0, vi = 0, vj = 0;
                for (std::int64_t dy = -r; dy <= r; ++dy)
                    for (std::int64_t dx = -r; dx <= r; ++dx)
                        for (std::int64_t dz = -r; dz <= r; ++dz) {
                            const std::int64_t iy = y + dy, ix = x + dx, iz = z + dz;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W || iz < 0 || iz >= D)
                                continue;
                            const double a = fixed.value_at((iy * W + ix) * D + iz) - ui;
                            const double b = warped.value_at((iy * W + ix) * D + iz) - uj;
                            cross += a * b;
                            vi += a * a;
                            vj += b * b;
                        }
                total += cross * cross / (vi * vj + kLossEps);
            }
    return -total;
}

}  // namespace

TEST_CASE("default loss weights match the reference settings") {
    LossWeights w;
    CHECK(w.lambda1 == 300.0);
    CHECK(w.lambda2 == 1.0);
    CHECK(w.lambda_reg == 1.0);
    CHECK(w.focal_alpha == 0.25);
    CHECK(w.focal_gamma == 2.0);
    CHECK(w.ncc_window == 9);
}

TEST_CASE("content loss") {
    Rng rng = make_rng(1);
    Tensor a = Tensor::randn({1, 4, 4, 4}, rng, 1.0, DType::F64);
    CHECK(content_loss(a, a).item() == 0.0);

    Tensor shifted = ops::affine(a, 1.0, 0.37).detach();
    CHECK(content_loss(shifted, a).item() == doctest::Approx(0.37).epsilon(1e-9));

    Tensor b = Tensor::randn({1, 4, 4, 4}, rng, 1.0, DType::F64);
    double oracle = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        oracle += std::fabs(a.value_at(i) - b.value_at(i));
    oracle /= static_cast<double>(a.numel());
    CHECK(content_loss(a, b).item() == doctest::Approx(oracle).epsilon(1e-12));
    CHECK_THROWS_AS(content_loss(a, Tensor::zeros({1, 2, 2, 2}, DType::F64)), ShapeError);
}

TEST_CASE("least-squares GAN losses") {
    Tensor ones = Tensor::full({1, 2, 2, 2}, 1.0, DType::F64);
    Tensor zeros = Tensor::zeros({1, 2, 2, 2}, DType::F64);
    Tensor halves = Tensor::full({1, 2, 2, 2}, 0.5, DType::F64);
    CHECK(lsgan_d_loss(ones, zeros).item() == doctest::Approx(0.0));
    CHECK(lsgan_g_loss(ones).item() == doctest::Approx(0.0));
    CHECK(lsgan_d_loss(halves, halves).item() == doctest::Approx(0.5));
}

TEST_CASE("restoration loss applies the default weights and decomposes") {
    Rng rng = make_rng(2);
    LossWeights w;
    Tensor pred = Tensor::randn({1, 3, 3, 3}, rng, 1.0, DType::F64);
    Tensor target = Tensor::randn({1, 3, 3, 3}, rng, 1.0, DType::F64);
    Tensor fake = Tensor::rand_uniform({1, 2, 2, 2}, rng, 0.1, 0.9, DType::F64);
    const double total = restoration_loss(pred, target, fake, w).item();
    const double c = content_loss(pred, target).item();
    const double a = lsgan_g_loss(fake).item();
    CHECK(total == doctest::Approx(300.0 * c + 1.0 * a).epsilon(1e-12));

    Tensor perfect_fake = Tensor::full({1, 2, 2, 2}, 1.0, DType::F64);
    CHECK(restoration_loss(target, target, perfect_fake, w).item() == doctest::Approx(0.0));
}

TEST_CASE("local NCC scores affine intensity relations as perfect") {
    Rng rng = make_rng(3);
    Tensor fixed = Tensor::rand_uniform({1, 9, 9, 9}, rng, 0.1, 1.1, DType::F64);
    Tensor warped = ops::affine(fixed, 1.7, 0.4).detach();  // a > 0, with offset
    const double loss = local_ncc_loss(fixed, warped, 9).item();
    const double voxels = 9.0 * 9.0 * 9.0;
    CHECK(loss == doctest::Approx(-voxels).epsilon(1e-4));
}

TEST_CASE("local NCC of constant images is zero under the epsilon policy") {
    Tensor a = Tensor::full({1, 7, 7, 7}, 0.6, DType::F64);
    Tensor b = Tensor::full({1, 7, 7, 7}, 0.3, DType::F64);
    CHECK(local_ncc_loss(a, b, 5).item() == doctest::Approx(0.0));
}

TEST_CASE("local NCC matches the sliding-window oracle") {
    Rng rng = make_rng(4);
    Tensor fixed = Tensor::rand_uniform({1, 9, 9, 9}, rng, 0.0, 1.0, DType::F64);
    Tensor warped = Tensor::rand_uniform({1, 9, 9, 9}, rng, 0.0, 1.0, DType::F64);
    const double loss = local_ncc_loss(fixed, warped, 9).item();
    const double oracle = ncc_oracle(fixed, warped, 9);
    CHECK(std::fabs(loss - oracle) < 1e-5);
    CHECK_THROWS_AS(local_ncc_loss(Tensor::zeros({2, 4, 4, 4}, DType::F64), warped, 9), UsageError);
}

TEST_CASE("diffusion regularizer") {
    Tensor zero = Tensor::zeros({3, 4, 4, 4}, DType::F64);
    CHECK(diffusion_regularizer(zero).item() == 0.0);

    const std::int64_t E = 5;
    const double alpha = 0.3;
    Tensor u = Tensor::zeros({3, E, E, E}, DType::F64);
    for (std::int64_t y = 0; y < E; ++y)
        for (std::int64_t x = 0; x < E; ++x)
            for (std::int64_t z = 0; z < E; ++z) u.set_value_at((y * E + x) * E + z, alpha * y);
    const double expect = alpha * alpha * static_cast<double>((E - 1) * E * E);
    CHECK(diffusion_regularizer(u).item() == doctest::Approx(expect).epsilon(1e-9));

    Rng rng = make_rng(5);
    Tensor r = Tensor::randn({3, 3, 4, 3}, rng, 1.0, DType::F64);
    double oracle = 0.0;
    const Shape d = r.dims();
    for (std::int64_t k = 0; k < 3; ++k)
        for (std::int64_t y = 0; y < d[1]; ++y)
            for (std::int64_t x = 0; x < d[2]; ++x)
                for (std::int64_t z = 0; z < d[3]; ++z) {
                    const auto at = [&](std::int64_t yy, std::int64_t xx, std::int64_t zz) {
                        return r.value_at(((k * d[1] + yy) * d[2] + xx) * d[3] + zz);
                    };
                    if (y + 1 < d[1]) oracle += std::pow(at(y + 1, x, z) - at(y, x, z), 2);
                    if (x + 1 < d[2]) oracle += std::pow(at(y, x + 1, z) - at(y, x, z), 2);
                    if (z + 1 < d[3]) oracle += std::pow(at(y, x, z + 1) - at(y, x, z), 2);
                }
    CHECK(diffusion_regularizer(r).item() == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("registration loss at the optimum") {
    Rng rng = make_rng(6);
    LossWeights w;
    Tensor img = Tensor::rand_uniform({1, 8, 8, 8}, rng, 0.1, 1.1, DType::F64);
    Tensor u = Tensor::zeros({3, 8, 8, 8}, DType::F64);
    const double loss = registration_loss(img, img, u, w).item();
    CHECK(loss == doctest::Approx(-512.0).epsilon(1e-4));  // -(#voxels) + 0
}

TEST_CASE("dice loss") {
    SUBCASE("perfect binary prediction is ~0") {
        Tensor labels = Tensor::zeros({1, 4, 4, 4}, DType::F64);
        for (std::int64_t i = 0; i < 20; ++i) labels.set_value_at(i, 1.0);
        Tensor logits = ops::affine(labels, 80.0, -40.0).detach();  // +/-40 logits
        CHECK(dice_loss(logits, labels).item() == doctest::Approx(0.0).epsilon(1e-4));
    }
    SUBCASE("empty prediction against a nonempty target is ~1") {
        Tensor labels = Tensor::zeros({1, 4, 4, 4}, DType::F64);
        for (std::int64_t i = 0; i < 20; ++i) labels.set_value_at(i, 1.0);
        Tensor logits = Tensor::full({1, 4, 4, 4}, -40.0, DType::F64);
        CHECK(dice_loss(logits, labels).item() == doctest::Approx(1.0).epsilon(1e-4));
    }
    SUBCASE("random soft prediction matches the direct-sum oracle") {
        Rng rng = make_rng(7);
        Tensor logits = Tensor::randn({2, 4, 4, 4}, rng, 1.0, DType::F64);
        Tensor labels = Tensor::zeros({2, 4, 4, 4}, DType::F64);
        std::uniform_int_distribution<int> bit(0, 1);
        for (std::int64_t i = 0; i < labels.numel(); ++i) labels.set_value_at(i, bit(rng));
        double acc = 0.0;
        const std::int64_t V = 64;
        for (std::int64_t cls = 0; cls < 2; ++cls) {
            double pg = 0, p2 = 0, g2 = 0;
            for (std::int64_t i = 0; i < V; ++i) {
                const double p = 1.0 / (1.0 + std::exp(-logits.value_at(cls * V + i)));
                const double g = labels.value_at(cls * V + i);
                pg += p * g;
                p2 += p * p;
                g2 += g * g;
            }
            acc += 2.0 * pg / (p2 + g2 + kLossEps);
        }
        const double oracle = 1.0 - acc / 2.0;
        CHECK(dice_loss(logits, labels).item() == doctest::Approx(oracle).epsilon(1e-9));
    }
}

TEST_CASE("focal loss") {
    SUBCASE("perfect confident prediction is ~0") {
        Tensor labels = Tensor::zeros({1, 3, 3, 3}, DType::F64);
        for (std::int64_t i = 0; i < 9; ++i) labels.set_value_at(i, 1.0);
        Tensor logits = ops::affine(labels, 80.0, -40.0).detach();
        CHECK(std::fabs(focal_loss(logits, labels, 0.25, 2.0).item()) < 1e-6);
    }
    SUBCASE("gamma 0, alpha 1 reduces to class-weighted cross-entropy") {
        Rng rng = make_rng(8);
        Tensor logits = Tensor::randn({1, 3, 3, 3}, rng, 1.0, DType::F64);
        Tensor labels = Tensor::zeros({1, 3, 3, 3}, DType::F64);
        std::uniform_int_distribution<int> bit(0, 1);
        for (std::int64_t i = 0; i < labels.numel(); ++i) labels.set_value_at(i, bit(rng));
        double ce = 0.0;
        for (std::int64_t i = 0; i < labels.numel(); ++i) {
            double p = 1.0 / (1.0 + std::exp(-logits.value_at(i)));
            p = std::min(std::max(p, kLossEps), 1.0 - kLossEps);
            const double g = labels.value_at(i);
            ce -= g * std::log(p) + (1 - g) * std::log(1 - p);
        }
        ce /= static_cast<double>(labels.numel());
        CHECK(focal_loss(logits, labels, 1.0, 0.0).item() == doctest::Approx(ce).epsilon(1e-9));
    }
    SUBCASE("loss decreases as the prediction approaches a positive target") {
        Tensor labels = Tensor::full({1, 2, 2, 2}, 1.0, DType::F64);
        double prev = 1e9;
        for (double logit : {-2.0, 0.0, 2.0, 4.0}) {
            Tensor logits = Tensor::full({1, 2, 2, 2}, logit, DType::F64);
            const double v = focal_loss(logits, labels, 0.25, 2.0).item();
            CHECK(v < prev);
            prev = v;
        }
    }
}

TEST_CASE("segmentation loss decomposes into dice plus focal") {
    Rng rng = make_rng(9);
    LossWeights w;
    Tensor logits = Tensor::randn({2, 6, 6, 6}, rng, 1.0, DType::F64);
    Tensor labels = Tensor::zeros({2, 6, 6, 6}, DType::F64);
    std::uniform_int_distribution<int> bit(0, 1);
    for (std::int64_t i = 0; i < labels.numel(); ++i) labels.set_value_at(i, bit(rng));
    const double total = segmentation_loss(logits, labels, w).item();
    const double d = dice_loss(logits, labels).item();
    const double f = focal_loss(logits, labels, w.focal_alpha, w.focal_gamma).item();
    CHECK(total == doctest::Approx(d + f).epsilon(1e-12));
}

TEST_CASE("losses stay finite and respect their bounds") {
    Rng rng = make_rng(10);
    Tensor a = Tensor::rand_uniform({1, 6, 6, 6}, rng, 0.0, 1.0, DType::F64);
    Tensor b = Tensor::rand_uniform({1, 6, 6, 6}, rng, 0.0, 1.0, DType::F64);
    const double voxels = 216.0;
    const double ncc = local_ncc_loss(a, b, 5).item();
    CHECK(std::isfinite(ncc));
    CHECK(ncc >= -voxels - 1e-6);
    CHECK(ncc <= 0.0);
    Tensor u = Tensor::randn({3, 6, 6, 6}, rng, 0.5, DType::F64);
    CHECK(diffusion_regularizer(u).item() >= 0.0);
    Tensor logits = Tensor::randn({1, 6, 6, 6}, rng, 6.0, DType::F64);
    Tensor labels = Tensor::zeros({1, 6, 6, 6}, DType::F64);
    CHECK(std::isfinite(focal_loss(logits, labels, 0.25, 2.0).item()));
    CHECK(std::isfinite(dice_loss(logits, labels).item()));
}

TEST_CASE("losses gradient suite passes at f64") {
    for (const auto& r : gradcheck::run_scope("losses", DType::F64, 31)) {
        INFO(r.name << " rel err " << r.max_rel_err);
        CHECK(r.pass);
    }
}

TEST_CASE("registration similarity prefers the zero field on matched images") {
    LossWeights w;
    Rng rng = make_rng(11);
    // A smooth synthetic image; the NCC term at u = 0 must beat warped fields.
    Tensor img = Tensor::zeros({1, 8, 8, 8}, DType::F64);
    for (std::int64_t y = 0; y < 8; ++y)
        for (std::int64_t x = 0; x < 8; ++x)
            for (std::int64_t z = 0; z < 8; ++z)
                img.set_value_at((y * 8 + x) * 8 + z,
                                 std::sin(0.7 * y) + std::cos(0.5 * x) + 0.3 * z);
    Tensor zero_field = Tensor::zeros({3, 8, 8, 8}, DType::F64);
    const double at_zero = registration_loss(img, img, zero_field, w).item();
    for (double amplitude : {0.5, 1.0, 2.0}) {
        Tensor u = synth_smooth_field({8, 8, 8}, amplitude, 2.0, 17).to(DType::F64);
        const double displaced = registration_loss(img, img, u, w).item();
        CHECK(at_zero < displaced);
    }
}
