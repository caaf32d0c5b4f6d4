#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "frmlp/gradcheck.hpp"
#include "frmlp/ops.hpp"

using namespace frmlp;

namespace {

// Independent oracle: naive triple loop.
std::vector<double> matmul_oracle(const Tensor& a, const Tensor& b) {
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            for (std::int64_t p = 0; p < k; ++p)
                out[static_cast<std::size_t>(i * n + j)] += a.value_at(i * k + p) * b.value_at(p * n + j);
    return out;
}

// Independent oracle: direct 7-loop cross-correlation with zero padding.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, int stride, int pad) {
    const std::int64_t cin = x.dim(0), H = x.dim(1), W = x.dim(2), D = x.dim(3);
    const std::int64_t cout = w.dim(0), k = w.dim(2);
    const std::int64_t oh = (H + 2 * pad - k) / stride + 1;
    const std::int64_t ow = (W + 2 * pad - k) / stride + 1;
    const std::int64_t od = (D + 2 * pad - k) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(cout * oh * ow * od), 0.0);
    for (std::int64_t co = 0; co < cout; ++co)
        for (std::int64_t oy = 0; oy < oh; ++oy)
            for (std::int64_t ox = 0; ox < ow; ++ox)
                for (std::int64_t oz = 0; oz < od; ++oz) {
                    double acc = 0.0;
                    for (std::int64_t ci = 0; ci < cin; ++ci)
                        for (std::int64_t ky = 0; ky < k; ++ky)
                            for (std::int64_t kx = 0; kx < k; ++kx)
                                for (std::int64_t kz = 0; kz < k; ++kz) {
                                    const std::int64_t iy = oy * stride + ky - pad;
                                    const std::int64_t ix = ox * stride + kx - pad;
                                    const std::int64_t iz = oz * stride + kz - pad;
                                    if (iy < 0 || iy >= H || ix < 0 || ix >= W || iz < 0 || iz >= D)
                                        continue;
                                    acc += x.value_at(((ci * H + iy) * W + ix) * D + iz) *
                                           w.value_at((((co * cin + ci) * k + ky) * k + kx) * k + kz);
                                }
                    out[static_cast<std::size_t>(((co * oh + oy) * ow + ox) * od + oz)] = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("matmul identity and zero cases") {
    Rng rng = make_rng(1);
    Tensor b = Tensor::randn({3, 4}, rng, 1.0, DType::F64);
    Tensor eye = Tensor::eye(3, DType::F64);
    Tensor prod = ops::matmul(eye, b);
    for (std::int64_t i = 0; i < b.numel(); ++i)
        CHECK(prod.value_at(i) == doctest::Approx(b.value_at(i)).epsilon(1e-15));

    Tensor z = ops::matmul(Tensor::zeros({2, 3}, DType::F64), Tensor::randn({3, 4}, rng, 1.0, DType::F64));
    for (std::int64_t i = 0; i < z.numel(); ++i) CHECK(z.value_at(i) == 0.0);
}

TEST_CASE("matmul matches the triple-loop oracle") {
    Rng rng = make_rng(2);
    Tensor a = Tensor::randn({4, 5}, rng, 1.0, DType::F64);
    Tensor b = Tensor::randn({5, 2}, rng, 1.0, DType::F64);
    Tensor c = ops::matmul(a, b);
    const auto oracle = matmul_oracle(a, b);
    for (std::int64_t i = 0; i < c.numel(); ++i) {
        const double rel = std::fabs(c.value_at(i) - oracle[static_cast<std::size_t>(i)]) /
                           std::max(1.0, std::fabs(oracle[static_cast<std::size_t>(i)]));
        CHECK(rel < 1e-6);
    }
    CHECK_THROWS_AS(ops::matmul(a, a), ShapeError);
}

TEST_CASE("conv3d delta kernel reproduces the input") {
    Rng rng = make_rng(3);
    Tensor x = Tensor::randn({1, 4, 4, 4}, rng, 1.0, DType::F64);
    Tensor w = Tensor::zeros({1, 1, 3, 3, 3}, DType::F64);
    w.set_value_at(13, 1.0);  // center tap of the 3^3 kernel
    Tensor y = ops::conv3d(x, w, Tensor(), 1, 1);
    REQUIRE(y.dims() == x.dims());
    for (std::int64_t i = 0; i < x.numel(); ++i)
        CHECK(y.value_at(i) == doctest::Approx(x.value_at(i)).epsilon(1e-12));
}

TEST_CASE("conv3d all-ones kernel on a constant volume") {
    const double c = 0.7;
    Tensor x = Tensor::full({1, 5, 5, 5}, c, DType::F64);
    Tensor w = Tensor::full({1, 1, 3, 3, 3}, 1.0, DType::F64);
    Tensor y = ops::conv3d(x, w, Tensor(), 1, 0);
    REQUIRE(y.dims() == Shape{1, 3, 3, 3});
    for (std::int64_t i = 0; i < y.numel(); ++i)
        CHECK(y.value_at(i) == doctest::Approx(27.0 * c).epsilon(1e-12));
}

TEST_CASE("conv3d matches the direct 7-loop oracle") {
    Rng rng = make_rng(4);
    Tensor x = Tensor::randn({1, 5, 5, 5}, rng, 1.0, DType::F64);
    Tensor w = Tensor::randn({2, 1, 3, 3, 3}, rng, 1.0, DType::F64);
    for (int stride : {1, 2}) {
        for (int pad : {0, 1}) {
            Tensor y = ops::conv3d(x, w, Tensor(), stride, pad);
            const auto oracle = conv_oracle(x, w, stride, pad);
            REQUIRE(static_cast<std::size_t>(y.numel()) == oracle.size());
            for (std::int64_t i = 0; i < y.numel(); ++i)
                CHECK(std::fabs(y.value_at(i) - oracle[static_cast<std::size_t>(i)]) < 1e-5);
        }
    }
}

TEST_CASE("conv3d rejects bad geometry") {
    Tensor x = Tensor::zeros({1, 2, 2, 2});
    Tensor w4 = Tensor::zeros({1, 1, 5, 5, 5});
    CHECK_THROWS_AS(ops::conv3d(x, w4, Tensor(), 1, 0), ShapeError);  // non-positive extent
    Tensor weven = Tensor::zeros({1, 1, 2, 2, 2});
    CHECK_THROWS_AS(ops::conv3d(x, weven, Tensor(), 1, 1), UsageError);  // even kernel
}

TEST_CASE("layer_norm of a constant channel maps to beta") {
    Tensor x = Tensor::full({3, 6}, 2.5, DType::F64);
    Tensor gamma = Tensor::full({6}, 1.0, DType::F64);
    Tensor beta = Tensor::zeros({6}, DType::F64);
    Tensor y = ops::layer_norm(x, gamma, beta);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(std::fabs(y.value_at(i)) < 1e-9);
}

TEST_CASE("layer_norm normalizes each position") {
    Rng rng = make_rng(6);
    const std::int64_t C = 16;
    Tensor x = Tensor::randn({5, C}, rng, 2.0, DType::F64);
    Tensor gamma = Tensor::full({C}, 1.0, DType::F64);
    Tensor beta = Tensor::zeros({C}, DType::F64);
    Tensor y = ops::layer_norm(x, gamma, beta);
    for (std::int64_t r = 0; r < 5; ++r) {
        double mean = 0, var = 0;
        for (std::int64_t c = 0; c < C; ++c) mean += y.value_at(r * C + c);
        mean /= C;
        for (std::int64_t c = 0; c < C; ++c) {
            const double d = y.value_at(r * C + c) - mean;
            var += d * d;
        }
        var /= C;
        CHECK(std::fabs(mean) < 1e-6);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("pointwise basics") {
    Tensor zero = Tensor::zeros({1});
    CHECK(ops::sigmoid(zero).item() == doctest::Approx(0.5));
    CHECK(ops::gelu(zero).item() == doctest::Approx(0.0));
    CHECK(ops::relu(Tensor::scalar(-2.0)).item() == 0.0);
    CHECK(ops::leaky_relu(Tensor::scalar(-2.0), 0.1).item() == doctest::Approx(-0.2));
    CHECK_THROWS_AS(ops::log(Tensor::scalar(-1.0)), DomainError);
    CHECK_THROWS_AS(ops::sqrt(Tensor::scalar(-1.0)), DomainError);
    CHECK_THROWS_AS(ops::add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
}

TEST_CASE("clamp passes no gradient outside the range") {
    Tensor x = Tensor::from_values({3}, std::array<double, 3>{-2.0, 0.1, 2.0}, DType::F64, true);
    ops::sum(ops::clamp(x, -0.5, 0.5)).backward();
    CHECK(x.grad_at(0) == 0.0);
    CHECK(x.grad_at(1) == 1.0);
    CHECK(x.grad_at(2) == 0.0);
}

TEST_CASE("permute inverse is the identity") {
    Rng rng = make_rng(7);
    Tensor x = Tensor::randn({2, 3, 4, 5}, rng);
    Tensor y = ops::permute(ops::permute(x, {3, 1, 0, 2}), {2, 1, 3, 0});
    REQUIRE(y.dims() == x.dims());
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(x.data<float>()[i] == y.data<float>()[i]);
}

TEST_CASE("reshape round trip is exact") {
    Rng rng = make_rng(8);
    Tensor x = Tensor::randn({3, 8}, rng);
    Tensor y = ops::reshape(ops::reshape(x, {2, 3, 4}), {3, 8});
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(x.data<float>()[i] == y.data<float>()[i]);
}

TEST_CASE("concat then narrow recovers operands exactly") {
    Rng rng = make_rng(9);
    Tensor a = Tensor::randn({2, 4}, rng);
    Tensor b = Tensor::randn({3, 4}, rng);
    std::array<Tensor, 2> parts{a, b};
    Tensor cat = ops::concat(std::span<const Tensor>(parts.data(), 2), 0);
    Tensor a2 = ops::narrow(cat, 0, 0, 2);
    Tensor b2 = ops::narrow(cat, 0, 2, 3);
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a.data<float>()[i] == a2.data<float>()[i]);
    for (std::int64_t i = 0; i < b.numel(); ++i) CHECK(b.data<float>()[i] == b2.data<float>()[i]);
}

TEST_CASE("pad then crop round trip is exact") {
    Rng rng = make_rng(10);
    Tensor x = Tensor::randn({2, 3, 4, 5}, rng);
    Tensor padded = ops::pad_spatial(x, {1, 2, 0}, {2, 0, 3});
    Tensor back = ops::crop_spatial(padded, {1, 2, 0}, {3, 4, 5});
    REQUIRE(back.dims() == x.dims());
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(x.data<float>()[i] == back.data<float>()[i]);
    // New slabs are zero.
    CHECK(padded.value_at(0) == 0.0);
}

TEST_CASE("box_sum3 matches a direct window sum") {
    Rng rng = make_rng(11);
    Tensor x = Tensor::randn({1, 4, 5, 4}, rng, 1.0, DType::F64);
    const int r = 1;
    Tensor y = ops::box_sum3(x, r);
    const std::int64_t H = 4, W = 5, D = 4;
    for (std::int64_t yy = 0; yy < H; ++yy)
        for (std::int64_t xx = 0; xx < W; ++xx)
            for (std::int64_t zz = 0; zz < D; ++zz) {
                double acc = 0.0;
                for (std::int64_t dy = -r; dy <= r; ++dy)
                    for (std::int64_t dx = -r; dx <= r; ++dx)
                        for (std::int64_t dz = -r; dz <= r; ++dz) {
                            const std::int64_t iy = yy + dy, ix = xx + dx, iz = zz + dz;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W || iz < 0 || iz >= D)
                                continue;
                            acc += x.value_at((iy * W + ix) * D + iz);
                        }
                CHECK(y.value_at((yy * W + xx) * D + zz) == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("trilinear upsample doubles extents and preserves constants") {
    Tensor x = Tensor::full({2, 3, 3, 3}, 1.25);
    Tensor y = ops::upsample_trilinear2(x);
    REQUIRE(y.dims() == Shape{2, 6, 6, 6});
    for (std::int64_t i = 0; i < y.numel(); ++i)
        CHECK(y.value_at(i) == doctest::Approx(1.25).epsilon(1e-6));
}

TEST_CASE("transposed conv doubles extents with stride 2") {
    Rng rng = make_rng(12);
    Tensor x = Tensor::randn({3, 4, 4, 4}, rng);
    Tensor w = Tensor::randn({3, 2, 2, 2, 2}, rng);
    Tensor y = ops::conv_transpose3d(x, w, Tensor(), 2);
    CHECK(y.dims() == Shape{2, 8, 8, 8});
}

TEST_CASE("ops gradient suite passes at both precisions") {
    // The autodiff-soundness sweep over multiple random instances runs in the
    // acceptance suite; a couple of seeds here keep the unit test fast.
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        for (const auto& r : gradcheck::run_scope("ops", DType::F64, seed)) {
            INFO(r.name << " seed " << seed << " rel err " << r.max_rel_err);
            CHECK(r.pass);
        }
    }
    for (const auto& r : gradcheck::run_scope("ops", DType::F32, 5)) {
        INFO(r.name << " rel err " << r.max_rel_err);
        CHECK(r.pass);
    }
}

TEST_CASE("gradient checker flags a corrupted backward") {
    auto fixture = gradcheck::corrupted_fixture();
    auto result = gradcheck::run_case(fixture, DType::F64, 1);
    CHECK(!result.pass);
    CHECK(result.max_rel_err > 0.1);
}

TEST_CASE("registered op inventory is unique") {
    const auto names = gradcheck::registered_op_names();
    std::set<std::string> unique(names.begin(), names.end());
    CHECK(unique.size() == names.size());
    CHECK(unique.count("matmul"));
    CHECK(unique.count("conv3d"));
    CHECK(unique.count("layer_norm"));
    CHECK(unique.count("warp_trilinear"));
}
