#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>

#include "frmlp/metrics.hpp"
#include "frmlp/spatial.hpp"

using namespace frmlp;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.dims() == b.dims() &&
           std::memcmp(a.impl()->data.data(), b.impl()->data.data(), a.impl()->data.size()) == 0;
}

// Direct 8-corner interpolation oracle with border clamping.
double warp_oracle_at(const Tensor& m, std::int64_t c, double y, double x, double z) {
    const std::int64_t H = m.dim(1), W = m.dim(2), D = m.dim(3);
    auto clampd = [](double v, std::int64_t e) {
        return std::max(0.0, std::min(v, static_cast<double>(e - 1)));
    };
    y = clampd(y, H);
    x = clampd(x, W);
    z = clampd(z, D);
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y)), y1 = std::min(y0 + 1, H - 1);
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x)), x1 = std::min(x0 + 1, W - 1);
    const std::int64_t z0 = static_cast<std::int64_t>(std::floor(z)), z1 = std::min(z0 + 1, D - 1);
    const double ty = y - y0, tx = x - x0, tz = z - z0;
    auto at = [&](std::int64_t yy, std::int64_t xx, std::int64_t zz) {
        return m.value_at(((c * H + yy) * W + xx) * D + zz);
    };
    double acc = 0.0;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int e = 0; e < 2; ++e)
                acc += (a ? ty : 1 - ty) * (b ? tx : 1 - tx) * (e ? tz : 1 - tz) *
                       at(a ? y1 : y0, b ? x1 : x0, e ? z1 : z0);
    return acc;
}

}  // namespace

TEST_CASE("warp with a zero field is the identity, exactly") {
    Rng rng = make_rng(1);
    Tensor m = Tensor::randn({2, 5, 5, 5}, rng, 1.0, DType::F64);
    Tensor u = Tensor::zeros({3, 5, 5, 5}, DType::F64);
    CHECK(bitwise_equal(m, warp_trilinear(m, u)));
}

TEST_CASE("unit shift on an axis-linear image shifts by one voxel") {
    const std::int64_t E = 6;
    Tensor m = Tensor::zeros({1, E, E, E}, DType::F64);
    for (std::int64_t y = 0; y < E; ++y)
        for (std::int64_t x = 0; x < E; ++x)
            for (std::int64_t z = 0; z < E; ++z) m.set_value_at((y * E + x) * E + z, double(y));
    Tensor u = Tensor::zeros({3, E, E, E}, DType::F64);
    for (std::int64_t i = 0; i < E * E * E; ++i) u.set_value_at(i, 1.0);  // +1 along the first axis
    Tensor w = warp_trilinear(m, u);
    for (std::int64_t y = 0; y < E - 1; ++y)  // interior of the shifted axis
        for (std::int64_t x = 0; x < E; ++x)
            for (std::int64_t z = 0; z < E; ++z)
                CHECK(w.value_at((y * E + x) * E + z) == doctest::Approx(double(y + 1)));
}

TEST_CASE("warp matches the direct interpolation oracle") {
    Rng rng = make_rng(2);
    Tensor m = Tensor::randn({2, 4, 5, 4}, rng, 1.0, DType::F64);
    Tensor u = Tensor::rand_uniform({3, 4, 5, 4}, rng, -1.8, 1.8, DType::F64);
    Tensor w = warp_trilinear(m, u);
    const std::int64_t H = 4, W = 5, D = 4, S = H * W * D;
    for (std::int64_t c = 0; c < 2; ++c) {
        std::int64_t p = 0;
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x)
                for (std::int64_t z = 0; z < D; ++z, ++p) {
                    const double expect =
                        warp_oracle_at(m, c, y + u.value_at(p), x + u.value_at(S + p),
                                       z + u.value_at(2 * S + p));
                    CHECK(std::fabs(w.value_at(c * S + p) - expect) < 1e-6);
                }
    }
    Tensor bad = Tensor::zeros({3, 3, 3, 3}, DType::F64);
    CHECK_THROWS_AS(warp_trilinear(m, bad), ShapeError);
}

TEST_CASE("warp difference is bounded by the image gradient times the field difference") {
    // On an image with unit axis gradients the warp is 1-Lipschitz per axis.
    const std::int64_t E = 8;
    Tensor m = Tensor::zeros({1, E, E, E}, DType::F64);
    for (std::int64_t y = 0; y < E; ++y)
        for (std::int64_t x = 0; x < E; ++x)
            for (std::int64_t z = 0; z < E; ++z)
                m.set_value_at((y * E + x) * E + z, 0.5 * y + 0.3 * x + 0.2 * z);
    Rng rng = make_rng(3);
    Tensor u1 = Tensor::rand_uniform({3, E, E, E}, rng, -0.8, 0.8, DType::F64);
    Tensor u2 = Tensor::rand_uniform({3, E, E, E}, rng, -0.8, 0.8, DType::F64);
    Tensor w1 = warp_trilinear(m, u1);
    Tensor w2 = warp_trilinear(m, u2);
    double max_df = 0.0, max_du = 0.0;
    for (std::int64_t i = 0; i < w1.numel(); ++i)
        max_df = std::max(max_df, std::fabs(w1.value_at(i) - w2.value_at(i)));
    for (std::int64_t i = 0; i < u1.numel(); ++i)
        max_du = std::max(max_du, std::fabs(u1.value_at(i) - u2.value_at(i)));
    CHECK(max_df <= (0.5 + 0.3 + 0.2) * max_du + 1e-9);
}

TEST_CASE("nearest-neighbor label warping") {
    LabelMap s;
    s.dims = {4, 4, 4};
    s.values.assign(64, 0);
    s.at(1, 2, 3) = 5;
    s.at(2, 2, 2) = 7;

    SUBCASE("zero field keeps labels") {
        Tensor u = Tensor::zeros({3, 4, 4, 4});
        LabelMap w = warp_nearest(s, u);
        CHECK(w.values == s.values);
    }
    SUBCASE("sub-half-voxel shifts round to the same voxel") {
        Tensor u = Tensor::full({3, 4, 4, 4}, 0.4);
        LabelMap w = warp_nearest(s, u);
        CHECK(w.values == s.values);
    }
    SUBCASE("random field matches the rounding oracle") {
        Rng rng = make_rng(4);
        Tensor u = Tensor::rand_uniform({3, 4, 4, 4}, rng, -1.6, 1.6, DType::F32);
        LabelMap w = warp_nearest(s, u);
        const std::int64_t S = 64;
        std::int64_t p = 0;
        for (std::int64_t y = 0; y < 4; ++y)
            for (std::int64_t x = 0; x < 4; ++x)
                for (std::int64_t z = 0; z < 4; ++z, ++p) {
                    auto near = [](double v) {
                        return static_cast<std::int64_t>(
                            std::llround(std::max(0.0, std::min(v, 3.0))));
                    };
                    const std::uint16_t expect =
                        s.at(near(y + u.value_at(p)), near(x + u.value_at(S + p)),
                             near(z + u.value_at(2 * S + p)));
                    CHECK(w.values[static_cast<std::size_t>(p)] == expect);
                }
        // Values never leave the input label set.
        for (auto v : w.values) CHECK((v == 0 || v == 5 || v == 7));
    }
}

TEST_CASE("jacobian determinants of the zero field are exactly one") {
    Tensor u = Tensor::zeros({3, 4, 4, 4}, DType::F64);
    Tensor det = jacobian_determinants(u);
    for (std::int64_t i = 0; i < det.numel(); ++i) CHECK(det.value_at(i) == 1.0);
    CHECK_THROWS_AS(jacobian_determinants(Tensor::zeros({3, 2, 4, 4}, DType::F64)), UsageError);
}

TEST_CASE("linear contraction flips the determinant sign") {
    const std::int64_t E = 5;
    Tensor u = Tensor::zeros({3, E, E, E}, DType::F64);
    for (std::int64_t y = 0; y < E; ++y)
        for (std::int64_t x = 0; x < E; ++x)
            for (std::int64_t z = 0; z < E; ++z)
                u.set_value_at((y * E + x) * E + z, -2.0 * y);  // du_y/dy = -2
    Tensor det = jacobian_determinants(u);
    for (std::int64_t i = 0; i < det.numel(); ++i)
        CHECK(det.value_at(i) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("diagonal affine fields match the closed-form determinant") {
    const std::int64_t E = 6;
    const double a = 0.2, b = -0.1, c = 0.05;
    Tensor u = Tensor::zeros({3, E, E, E}, DType::F64);
    const std::int64_t S = E * E * E;
    for (std::int64_t y = 0; y < E; ++y)
        for (std::int64_t x = 0; x < E; ++x)
            for (std::int64_t z = 0; z < E; ++z) {
                const std::int64_t p = (y * E + x) * E + z;
                u.set_value_at(p, a * y);
                u.set_value_at(S + p, b * x);
                u.set_value_at(2 * S + p, c * z);
            }
    Tensor det = jacobian_determinants(u);
    const double expect = (1 + a) * (1 + b) * (1 + c);
    for (std::int64_t i = 0; i < det.numel(); ++i)
        CHECK(std::fabs(det.value_at(i) - expect) < 1e-6);
}

TEST_CASE("synthetic smooth fields") {
    SUBCASE("zero amplitude gives the zero field") {
        Tensor u = synth_smooth_field({8, 8, 8}, 0.0, 2.0, 7);
        for (std::int64_t i = 0; i < u.numel(); ++i) CHECK(u.value_at(i) == 0.0);
    }
    SUBCASE("outputs are folding free and reach the requested amplitude") {
        Tensor u = synth_smooth_field({12, 12, 12}, 2.0, 3.0, 11);
        CHECK(metrics::njd(u) == 0.0);
        double peak = 0.0;
        for (std::int64_t i = 0; i < u.numel(); ++i)
            peak = std::max(peak, std::fabs(u.value_at(i)));
        CHECK(peak <= 2.0 + 1e-5);
        CHECK(peak > 0.5);
    }
    SUBCASE("fixed seed is bitwise deterministic") {
        Tensor a = synth_smooth_field({10, 10, 10}, 1.5, 2.5, 42);
        Tensor b = synth_smooth_field({10, 10, 10}, 1.5, 2.5, 42);
        CHECK(bitwise_equal(a, b));
    }
    SUBCASE("parameter validation") {
        CHECK_THROWS_AS(synth_smooth_field({8, 8, 8}, -1.0, 2.0, 1), UsageError);
        CHECK_THROWS_AS(synth_smooth_field({8, 8, 8}, 1.0, 0.0, 1), UsageError);
    }
}
