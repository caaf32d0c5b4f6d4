#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "frmlp/metrics.hpp"

using namespace frmlp;

namespace {

LabelMap random_mask(Rng& rng, std::int64_t e, double fill = 0.3) {
    LabelMap m;
    m.dims = {e, e, e};
    m.values.resize(static_cast<std::size_t>(e * e * e));
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (auto& v : m.values) v = dist(rng) < fill ? 1 : 0;
    return m;
}

bool mask_empty(const LabelMap& m) {
    return std::all_of(m.values.begin(), m.values.end(), [](std::uint16_t v) { return v == 0; });
}

// Exhaustive surface-distance oracle, independent of the implementation.
double hd95_oracle(const LabelMap& a, const LabelMap& b) {
    auto surface = [](const LabelMap& m) {
        std::vector<std::array<std::int64_t, 3>> out;
        const std::int64_t H = m.dims[0], W = m.dims[1], D = m.dims[2];
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x)
                for (std::int64_t z = 0; z < D; ++z) {
                    if (m.at(y, x, z) == 0) continue;
                    bool edge = y == 0 || y == H - 1 || x == 0 || x == W - 1 || z == 0 ||
                                z == D - 1;
                    if (!edge)
                        edge = !m.at(y - 1, x, z) || !m.at(y + 1, x, z) || !m.at(y, x - 1, z) ||
                               !m.at(y, x + 1, z) || !m.at(y, x, z - 1) || !m.at(y, x, z + 1);
                    if (edge) out.push_back({y, x, z});
                }
        return out;
    };
    const auto sa = surface(a), sb = surface(b);
    std::vector<double> all;
    auto push_directed = [&](const auto& from, const auto& to) {
        for (const auto& p : from) {
            double best = 1e300;
            for (const auto& q : to) {
                const double dy = double(p[0] - q[0]), dx = double(p[1] - q[1]),
                             dz = double(p[2] - q[2]);
                best = std::min(best, dy * dy + dx * dx + dz * dz);
            }
            all.push_back(std::sqrt(best));
        }
    };
    push_directed(sa, sb);
    push_directed(sb, sa);
    std::sort(all.begin(), all.end());
    const double pos = 0.95 * double(all.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, all.size() - 1);
    return all[lo] + (pos - std::floor(pos)) * (all[hi] - all[lo]);
}

}  // namespace

TEST_CASE("nrmse") {
    Rng rng = make_rng(1);
    Tensor y = Tensor::rand_uniform({1, 4, 4, 4}, rng, 0.0, 2.0, DType::F64);
    CHECK(metrics::nrmse(y, y) == 0.0);

    Tensor x = ops::affine(y, 1.0, 0.25).detach();
    double lo = 1e9, hi = -1e9;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        lo = std::min(lo, y.value_at(i));
        hi = std::max(hi, y.value_at(i));
    }
    CHECK(metrics::nrmse(x, y) == doctest::Approx(0.25 / (hi - lo)).epsilon(1e-12));

    Tensor z = Tensor::rand_uniform({1, 4, 4, 4}, rng, 0.0, 1.0, DType::F64);
    double acc = 0.0;
    for (std::int64_t i = 0; i < y.numel(); ++i)
        acc += std::pow((z.value_at(i) - y.value_at(i)) / (hi - lo), 2);
    const double oracle = std::sqrt(acc / double(y.numel()));
    CHECK(std::fabs(metrics::nrmse(z, y) - oracle) < 1e-9);

    CHECK_THROWS_AS(metrics::nrmse(x, Tensor::full({1, 4, 4, 4}, 1.0, DType::F64)), DomainError);
}

TEST_CASE("psnr") {
    Rng rng = make_rng(2);
    Tensor y = Tensor::rand_uniform({1, 4, 4, 4}, rng, 0.0, 1.0, DType::F64);
    CHECK(std::isinf(metrics::psnr(y, y)));

    // peak 1, constant error 0.1 -> MSE 0.01 -> 20 dB
    Tensor ref = Tensor::zeros({1, 3, 3, 3}, DType::F64);
    ref.set_value_at(0, 1.0);
    Tensor noisy = ops::affine(ref, 1.0, 0.1).detach();
    CHECK(metrics::psnr(noisy, ref) == doctest::Approx(20.0).epsilon(1e-9));

    Tensor x = Tensor::rand_uniform({1, 4, 4, 4}, rng, 0.0, 1.0, DType::F64);
    double mse = 0.0, peak = -1e9;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        mse += std::pow(x.value_at(i) - y.value_at(i), 2);
        peak = std::max(peak, y.value_at(i));
    }
    mse /= double(y.numel());
    CHECK(std::fabs(metrics::psnr(x, y) - 10.0 * std::log10(peak * peak / mse)) < 1e-9);
}

TEST_CASE("ssim") {
    Rng rng = make_rng(3);
    Tensor y = Tensor::rand_uniform({1, 4, 4, 4}, rng, 0.0, 1.0, DType::F64);
    CHECK(metrics::ssim(y, y, 1.0) == doctest::Approx(1.0).epsilon(1e-12));

    // Anti-correlated image with identical first moments scores below one.
    double mean = 0.0;
    for (std::int64_t i = 0; i < y.numel(); ++i) mean += y.value_at(i);
    mean /= double(y.numel());
    Tensor anti = ops::affine(y, -1.0, 2.0 * mean).detach();
    const double s = metrics::ssim(anti, y, 1.0);
    CHECK(s < 1.0);

    // Direct moments oracle.
    Tensor x = Tensor::rand_uniform({1, 4, 4, 4}, rng, 0.0, 1.0, DType::F64);
    const double n = double(y.numel());
    double mx = 0, my = 0;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        mx += x.value_at(i);
        my += y.value_at(i);
    }
    mx /= n;
    my /= n;
    double vx = 0, vy = 0, cov = 0;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        vx += std::pow(x.value_at(i) - mx, 2);
        vy += std::pow(y.value_at(i) - my, 2);
        cov += (x.value_at(i) - mx) * (y.value_at(i) - my);
    }
    vx /= n;
    vy /= n;
    cov /= n;
    const double c1 = 1e-4, c2 = 9e-4;
    const double oracle =
        ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    CHECK(std::fabs(metrics::ssim(x, y, 1.0) - oracle) < 1e-9);
    CHECK(metrics::ssim(x, y, 1.0) == doctest::Approx(metrics::ssim(y, x, 1.0)).epsilon(1e-12));
}

TEST_CASE("weighted score") {
    CHECK(metrics::weighted_score({3.5, 3.5, 3.5, 3.5, 3.5}) == doctest::Approx(3.5).epsilon(1e-12));
    CHECK(metrics::weighted_score({1, 0, 0, 0, 0}) == doctest::Approx(0.35).epsilon(1e-12));

    Rng rng = make_rng(4);
    std::uniform_real_distribution<double> dist(0.0, 10.0);
    std::array<double, 5> s{};
    for (auto& v : s) v = dist(rng);
    const std::array<double, 5> w{0.35, 0.25, 0.2, 0.15, 0.05};
    double oracle = 0.0;
    for (int i = 0; i < 5; ++i) oracle += w[i] * s[i];
    CHECK(metrics::weighted_score(s) == doctest::Approx(oracle).epsilon(1e-12));

    // Affine property: adding a constant adds the constant.
    std::array<double, 5> shifted = s;
    for (auto& v : shifted) v += 2.5;
    CHECK(metrics::weighted_score(shifted) ==
          doctest::Approx(metrics::weighted_score(s) + 2.5).epsilon(1e-9));
}

TEST_CASE("dsc") {
    Rng rng = make_rng(5);
    LabelMap a = random_mask(rng, 6);
    CHECK(metrics::dsc(a, a, {1}) == doctest::Approx(1.0));

    LabelMap b = a;
    for (auto& v : b.values) v = v ? 0 : 1;  // complement: disjoint
    CHECK(metrics::dsc(a, b, {1}) == 0.0);

    // |a|=2, |b|=2, intersection 1 -> 0.5
    LabelMap c, d;
    c.dims = d.dims = {4, 4, 4};
    c.values.assign(64, 0);
    d.values.assign(64, 0);
    c.values[0] = c.values[1] = 1;
    d.values[1] = d.values[2] = 1;
    CHECK(metrics::dsc(c, d, {1}) == doctest::Approx(0.5));

    // Empty-structure policy.
    LabelMap empty;
    empty.dims = {4, 4, 4};
    empty.values.assign(64, 0);
    CHECK(metrics::dsc(empty, empty, {1}) == 1.0);
    CHECK(metrics::dsc(empty, c, {1}) == 0.0);
    CHECK_THROWS_AS(metrics::dsc(a, b, {}), UsageError);
    CHECK(metrics::dsc(a, b, {1}) == doctest::Approx(metrics::dsc(b, a, {1})));
}

TEST_CASE("njd") {
    Tensor zero = Tensor::zeros({3, 5, 5, 5}, DType::F64);
    CHECK(metrics::njd(zero) == 0.0);

    const std::int64_t E = 5;
    Tensor fold = Tensor::zeros({3, E, E, E}, DType::F64);
    for (std::int64_t y = 0; y < E; ++y)
        for (std::int64_t x = 0; x < E; ++x)
            for (std::int64_t z = 0; z < E; ++z)
                fold.set_value_at((y * E + x) * E + z, -2.0 * y);
    CHECK(metrics::njd(fold) == doctest::Approx(100.0));

    Tensor smooth = synth_smooth_field({10, 10, 10}, 2.0, 3.0, 9);
    CHECK(metrics::njd(smooth) == 0.0);
}

TEST_CASE("hd95") {
    Rng rng = make_rng(6);
    LabelMap a = random_mask(rng, 6, 0.4);
    if (mask_empty(a)) a.values[0] = 1;
    CHECK(metrics::hd95(a, a) == 0.0);

    // Two single-voxel masks three voxels apart on an axis.
    LabelMap p, q;
    p.dims = q.dims = {8, 8, 8};
    p.values.assign(512, 0);
    q.values.assign(512, 0);
    p.at(2, 4, 4) = 1;
    q.at(5, 4, 4) = 1;
    CHECK(metrics::hd95(p, q) == doctest::Approx(3.0));

    LabelMap empty;
    empty.dims = {8, 8, 8};
    empty.values.assign(512, 0);
    CHECK_THROWS_AS(metrics::hd95(p, empty), DomainError);

    // Spacing turns voxel units into millimetres.
    CHECK(metrics::hd95(p, q, std::array<double, 3>{2.0, 1.0, 1.0}) == doctest::Approx(6.0));
}

TEST_CASE("hd95 and dsc match exhaustive oracles on random small masks") {
    Rng rng = make_rng(7);
    for (int i = 0; i < 20; ++i) {
        LabelMap a = random_mask(rng, 6, 0.25);
        LabelMap b = random_mask(rng, 6, 0.25);
        if (mask_empty(a)) a.values[10] = 1;
        if (mask_empty(b)) b.values[40] = 1;
        CHECK(std::fabs(metrics::hd95(a, b) - hd95_oracle(a, b)) < 1e-9);
        CHECK(metrics::hd95(a, b) == doctest::Approx(metrics::hd95(b, a)).epsilon(1e-12));

        std::int64_t na = 0, nb = 0, inter = 0;
        for (std::size_t j = 0; j < a.values.size(); ++j) {
            na += a.values[j] == 1;
            nb += b.values[j] == 1;
            inter += (a.values[j] == 1 && b.values[j] == 1);
        }
        const double dsc_oracle = 2.0 * double(inter) / double(na + nb);
        CHECK(metrics::dsc(a, b, {1}) == doctest::Approx(dsc_oracle).epsilon(1e-12));
    }
}

TEST_CASE("metric report renders text and json") {
    metrics::MetricReport r;
    r.task = "segment";
    r.records.push_back({"case0", "dsc", "1", 0.9});
    r.aggregate["dsc"] = 0.9;
    const std::string text = r.to_text();
    CHECK(text.find("case0") != std::string::npos);
    CHECK(text.find("dsc") != std::string::npos);
    const std::string json = r.to_json();
    CHECK(json.find("\"task\": \"segment\"") != std::string::npos);
    CHECK(json.find("\"aggregate\"") != std::string::npos);
}
