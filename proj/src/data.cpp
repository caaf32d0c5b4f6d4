#include "frmlp/data.hpp"

#include <algorithm>
#include <cmath>

namespace frmlp::data {

Phantom synth_phantom(std::array<std::int64_t, 3> dims, int n_blobs, std::uint64_t seed) {
    if (n_blobs < 0) throw UsageError("synth_phantom: negative blob count");
    const std::int64_t H = dims[0], W = dims[1], D = dims[2];
    Phantom out;
    out.volume = Tensor::zeros({1, H, W, D}, DType::F32);
    out.labels.dims = {H, W, D};
    out.labels.values.assign(static_cast<std::size_t>(H * W * D), 0);
    if (n_blobs == 0) return out;

    Rng rng = make_rng(seed, 7);
    struct Blob {
        double cy, cx, cz, sy, sx, sz, amp;
    };
    std::vector<Blob> blobs;
    std::uniform_real_distribution<double> center(0.22, 0.78);
    std::uniform_real_distribution<double> sigma(0.10, 0.22);
    std::uniform_real_distribution<double> amp(0.45, 1.0);
    for (int i = 0; i < n_blobs; ++i) {
        Blob b;
        b.cy = center(rng) * static_cast<double>(H);
        b.cx = center(rng) * static_cast<double>(W);
        b.cz = center(rng) * static_cast<double>(D);
        b.sy = sigma(rng) * static_cast<double>(H);
        b.sx = sigma(rng) * static_cast<double>(W);
        b.sz = sigma(rng) * static_cast<double>(D);
        b.amp = amp(rng);
        blobs.push_back(b);
    }
    std::size_t dominant = 0;
    for (std::size_t i = 1; i < blobs.size(); ++i)
        if (blobs[i].amp > blobs[dominant].amp) dominant = i;

    auto vol = out.volume.data<float>();
    double peak = 0.0;
    std::int64_t p = 0;
    for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x)
            for (std::int64_t z = 0; z < D; ++z, ++p) {
                double acc = 0.0;
                for (std::size_t i = 0; i < blobs.size(); ++i) {
                    const Blob& b = blobs[i];
                    const double dy = (y - b.cy) / b.sy;
                    const double dx = (x - b.cx) / b.sx;
                    const double dz = (z - b.cz) / b.sz;
                    const double g = b.amp * std::exp(-0.5 * (dy * dy + dx * dx + dz * dz));
                    acc += g;
                    if (i == dominant && g >= 0.5 * b.amp)
                        out.labels.values[static_cast<std::size_t>(p)] = 1;
                }
                vol[p] = static_cast<float>(acc);
                peak = std::max(peak, acc);
            }
    if (peak > 0.0)
        for (auto& v : vol) v = static_cast<float>(v / peak);
    return out;
}

Tensor synth_low_dose(const Tensor& clean, double drf, std::uint64_t seed,
                      double counts_at_full_dose) {
    if (drf <= 0) throw UsageError("synth_low_dose: dose reduction factor must be positive");
    if (counts_at_full_dose <= 0) throw UsageError("synth_low_dose: counts must be positive");
    const double s = counts_at_full_dose / drf;
    Tensor out = Tensor::zeros(clean.dims(), clean.dtype());
    Rng rng = make_rng(seed, 11);
    dispatch_dtype(clean.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto in = clean.data<T>();
        auto dst = out.data<T>();
        for (std::int64_t i = 0; i < clean.numel(); ++i) {
            const double lambda = static_cast<double>(in[i]) * s;
            if (lambda < 0) throw DomainError("synth_low_dose: negative intensity");
            if (lambda == 0.0) {
                dst[i] = T(0);
                continue;
            }
            std::poisson_distribution<long long> pois(lambda);
            dst[i] = static_cast<T>(static_cast<double>(pois(rng)) / s);
        }
    });
    return out;
}

RegistrationPair synth_registration_pair(std::array<std::int64_t, 3> dims, double amplitude,
                                         std::uint64_t seed, int n_blobs,
                                         double smoothness_sigma) {
    RegistrationPair pair;
    Phantom ph = synth_phantom(dims, n_blobs, seed);
    pair.moving = ph.volume;
    pair.moving_mask = ph.labels;
    pair.u_true = synth_smooth_field(dims, amplitude, smoothness_sigma, seed ^ 0x5bd1e995ULL);
    {
        NoGradGuard ng;
        pair.fixed = warp_trilinear(pair.moving, pair.u_true);
    }
    pair.fixed_mask = warp_nearest(pair.moving_mask, pair.u_true);
    return pair;
}

}  // namespace frmlp::data
