#include "frmlp/spatial.hpp"

#include <algorithm>
#include <cmath>

namespace frmlp {

namespace {

struct Taps {
    std::int64_t lo, hi;
    double t;
};

// Border-clamped sample position along one axis.
inline Taps axis_taps(double coord, std::int64_t extent) {
    coord = std::max(0.0, std::min(coord, static_cast<double>(extent - 1)));
    Taps taps;
    taps.lo = static_cast<std::int64_t>(std::floor(coord));
    taps.hi = std::min(taps.lo + 1, extent - 1);
    taps.t = coord - static_cast<double>(taps.lo);
    return taps;
}

void check_warp_dims(const Shape& md, const Shape& ud, const char* who) {
    if (md.size() != 4) throw ShapeError(std::string(who) + ": volume must be [C,H,W,D]");
    if (ud.size() != 4 || ud[0] != 3)
        throw ShapeError(std::string(who) + ": displacement field must be [3,H,W,D]");
    if (md[1] != ud[1] || md[2] != ud[2] || md[3] != ud[3])
        throw ShapeError(std::string(who) + ": volume " + shape_str(md) +
                         " and field " + shape_str(ud) + " extents disagree");
}

}  // namespace

Tensor warp_trilinear(const Tensor& m, const Tensor& u) {
    check_warp_dims(m.dims(), u.dims(), "warp_trilinear");
    if (m.dtype() != u.dtype()) throw UsageError("warp_trilinear: mixed dtypes");
    const Shape& d = m.dims();
    const std::int64_t C = d[0], H = d[1], W = d[2], D = d[3], S = H * W * D;

    auto node = detail::make_node(d, m.dtype(), {&m, &u});
    dispatch_dtype(m.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* mv = m.data<T>().data();
        const T* uv = u.data<T>().data();
        T* out = node->values<T>().data();
        std::int64_t p = 0;
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x)
                for (std::int64_t z = 0; z < D; ++z, ++p) {
                    const Taps ty = axis_taps(y + static_cast<double>(uv[p]), H);
                    const Taps tx = axis_taps(x + static_cast<double>(uv[S + p]), W);
                    const Taps tz = axis_taps(z + static_cast<double>(uv[2 * S + p]), D);
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T* ch = mv + c * S;
                        auto at = [&](std::int64_t iy, std::int64_t ix, std::int64_t iz) {
                            return static_cast<double>(ch[(iy * W + ix) * D + iz]);
                        };
                        const double v =
                            (1 - ty.t) * ((1 - tx.t) * ((1 - tz.t) * at(ty.lo, tx.lo, tz.lo) +
                                                        tz.t * at(ty.lo, tx.lo, tz.hi)) +
                                          tx.t * ((1 - tz.t) * at(ty.lo, tx.hi, tz.lo) +
                                                  tz.t * at(ty.lo, tx.hi, tz.hi))) +
                            ty.t * ((1 - tx.t) * ((1 - tz.t) * at(ty.hi, tx.lo, tz.lo) +
                                                  tz.t * at(ty.hi, tx.lo, tz.hi)) +
                                    tx.t * ((1 - tz.t) * at(ty.hi, tx.hi, tz.lo) +
                                            tz.t * at(ty.hi, tx.hi, tz.hi)));
                        out[c * S + p] = static_cast<T>(v);
                    }
                }
    });
    detail::install_backward(node, {&m, &u}, [m, u, C, H, W, D, S](detail::TensorImpl& self) mutable {
        dispatch_dtype(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            auto dy = self.grad_values<T>();
            const T* mv = m.data<T>().data();
            const T* uv = u.data<T>().data();
            T* gm = m.requires_grad() ? detail::grad_span<T>(m).data() : nullptr;
            T* gu = u.requires_grad() ? detail::grad_span<T>(u).data() : nullptr;
            std::int64_t p = 0;
            for (std::int64_t y = 0; y < H; ++y)
                for (std::int64_t x = 0; x < W; ++x)
                    for (std::int64_t z = 0; z < D; ++z, ++p) {
                        const double cy = y + static_cast<double>(uv[p]);
                        const double cx = x + static_cast<double>(uv[S + p]);
                        const double cz = z + static_cast<double>(uv[2 * S + p]);
                        const Taps ty = axis_taps(cy, H);
                        const Taps tx = axis_taps(cx, W);
                        const Taps tz = axis_taps(cz, D);
                        // Clamped coordinates have zero derivative outside the grid.
                        const bool in_y = cy > 0.0 && cy < static_cast<double>(H - 1);
                        const bool in_x = cx > 0.0 && cx < static_cast<double>(W - 1);
                        const bool in_z = cz > 0.0 && cz < static_cast<double>(D - 1);
                        double du_y = 0.0, du_x = 0.0, du_z = 0.0;
                        for (std::int64_t c = 0; c < C; ++c) {
                            const double g = static_cast<double>(dy[c * S + p]);
                            if (g == 0.0 && !gm) continue;
                            const T* ch = mv + c * S;
                            auto at = [&](std::int64_t iy, std::int64_t ix, std::int64_t iz) {
                                return static_cast<double>(ch[(iy * W + ix) * D + iz]);
                            };
                            const double wy[2] = {1 - ty.t, ty.t};
                            const double wx[2] = {1 - tx.t, tx.t};
                            const double wz[2] = {1 - tz.t, tz.t};
                            const std::int64_t iy[2] = {ty.lo, ty.hi};
                            const std::int64_t ix[2] = {tx.lo, tx.hi};
                            const std::int64_t iz[2] = {tz.lo, tz.hi};
                            if (gm)
                                for (int a = 0; a < 2; ++a)
                                    for (int b = 0; b < 2; ++b)
                                        for (int e = 0; e < 2; ++e)
                                            gm[c * S + (iy[a] * W + ix[b]) * D + iz[e]] +=
                                                static_cast<T>(g * wy[a] * wx[b] * wz[e]);
                            if (gu) {
                                for (int b = 0; b < 2; ++b)
                                    for (int e = 0; e < 2; ++e) {
                                        const double diff =
                                            at(ty.hi, ix[b], iz[e]) - at(ty.lo, ix[b], iz[e]);
                                        du_y += g * wx[b] * wz[e] * diff;
                                    }
                                for (int a = 0; a < 2; ++a)
                                    for (int e = 0; e < 2; ++e) {
                                        const double diff =
                                            at(iy[a], tx.hi, iz[e]) - at(iy[a], tx.lo, iz[e]);
                                        du_x += g * wy[a] * wz[e] * diff;
                                    }
                                for (int a = 0; a < 2; ++a)
                                    for (int b = 0; b < 2; ++b) {
                                        const double diff =
                                            at(iy[a], ix[b], tz.hi) - at(iy[a], ix[b], tz.lo);
                                        du_z += g * wy[a] * wx[b] * diff;
                                    }
                            }
                        }
                        if (gu) {
                            if (in_y) gu[p] += static_cast<T>(du_y);
                            if (in_x) gu[S + p] += static_cast<T>(du_x);
                            if (in_z) gu[2 * S + p] += static_cast<T>(du_z);
                        }
                    }
        });
    });
    return Tensor::wrap(node);
}

LabelMap warp_nearest(const LabelMap& s, const Tensor& u) {
    if (s.dims.size() != 3) throw ShapeError("warp_nearest: label map must be [H,W,D]");
    const Shape md{1, s.dims[0], s.dims[1], s.dims[2]};
    check_warp_dims(md, u.dims(), "warp_nearest");
    const std::int64_t H = s.dims[0], W = s.dims[1], D = s.dims[2], S = H * W * D;
    LabelMap out;
    out.dims = s.dims;
    out.values.resize(static_cast<std::size_t>(S));
    dispatch_dtype(u.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* uv = u.data<T>().data();
        std::int64_t p = 0;
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x)
                for (std::int64_t z = 0; z < D; ++z, ++p) {
                    auto nearest = [](double c, std::int64_t extent) {
                        const double clamped =
                            std::max(0.0, std::min(c, static_cast<double>(extent - 1)));
                        return static_cast<std::int64_t>(std::llround(clamped));
                    };
                    const std::int64_t iy = nearest(y + static_cast<double>(uv[p]), H);
                    const std::int64_t ix = nearest(x + static_cast<double>(uv[S + p]), W);
                    const std::int64_t iz = nearest(z + static_cast<double>(uv[2 * S + p]), D);
                    out.values[static_cast<std::size_t>(p)] = s.at(iy, ix, iz);
                }
    });
    return out;
}

Tensor jacobian_determinants(const Tensor& u) {
    if (u.rank() != 4 || u.dim(0) != 3)
        throw ShapeError("jacobian_determinants: field must be [3,H,W,D]");
    const std::int64_t H = u.dim(1), W = u.dim(2), D = u.dim(3), S = H * W * D;
    if (H < 3 || W < 3 || D < 3)
        throw UsageError("jacobian_determinants: extents must be >= 3 per axis");
    Tensor out = Tensor::zeros({H, W, D}, u.dtype());
    dispatch_dtype(u.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* uv = u.data<T>().data();
        T* det = out.data<T>().data();
        auto comp = [&](std::int64_t k, std::int64_t y, std::int64_t x, std::int64_t z) {
            return static_cast<double>(uv[k * S + (y * W + x) * D + z]);
        };
        // d/d axis by central differences inside, one-sided on the faces.
        auto deriv = [](double minus, double center, double plus, int mode) {
            switch (mode) {
                case -1: return center - minus;   // backward difference at the high face
                case 1: return plus - center;     // forward difference at the low face
                default: return 0.5 * (plus - minus);
            }
        };
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x)
                for (std::int64_t z = 0; z < D; ++z) {
                    double J[3][3];
                    for (std::int64_t k = 0; k < 3; ++k) {
                        const int my = y == 0 ? 1 : (y == H - 1 ? -1 : 0);
                        const int mx = x == 0 ? 1 : (x == W - 1 ? -1 : 0);
                        const int mz = z == 0 ? 1 : (z == D - 1 ? -1 : 0);
                        J[k][0] = deriv(comp(k, std::max<std::int64_t>(y - 1, 0), x, z),
                                        comp(k, y, x, z),
                                        comp(k, std::min(y + 1, H - 1), x, z), my);
                        J[k][1] = deriv(comp(k, y, std::max<std::int64_t>(x - 1, 0), z),
                                        comp(k, y, x, z),
                                        comp(k, y, std::min(x + 1, W - 1), z), mx);
                        J[k][2] = deriv(comp(k, y, x, std::max<std::int64_t>(z - 1, 0)),
                                        comp(k, y, x, z),
                                        comp(k, y, x, std::min(z + 1, D - 1)), mz);
                    }
                    J[0][0] += 1.0;
                    J[1][1] += 1.0;
                    J[2][2] += 1.0;
                    const double v = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                                     J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                                     J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
                    det[(y * W + x) * D + z] = static_cast<T>(v);
                }
    });
    return out;
}

namespace {

// Separable Gaussian smoothing along each spatial axis, truncated at 3 sigma.
void gaussian_smooth3(std::vector<double>& field, const Shape& dims, double sigma) {
    const std::int64_t radius = std::max<std::int64_t>(1, std::llround(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (std::int64_t i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        kernel[static_cast<std::size_t>(i + radius)] = v;
        norm += v;
    }
    for (auto& v : kernel) v /= norm;

    const std::int64_t H = dims[0], W = dims[1], D = dims[2];
    std::vector<double> tmp(field.size());
    auto clamp_to = [](std::int64_t q, std::int64_t extent) {
        return std::max<std::int64_t>(0, std::min(q, extent - 1));
    };
    for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x)
            for (std::int64_t z = 0; z < D; ++z) {
                double acc = 0.0;
                for (std::int64_t i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<std::size_t>(i + radius)] *
                           field[static_cast<std::size_t>((clamp_to(y + i, H) * W + x) * D + z)];
                tmp[static_cast<std::size_t>((y * W + x) * D + z)] = acc;
            }
    field.swap(tmp);
    for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x)
            for (std::int64_t z = 0; z < D; ++z) {
                double acc = 0.0;
                for (std::int64_t i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<std::size_t>(i + radius)] *
                           field[static_cast<std::size_t>((y * W + clamp_to(x + i, W)) * D + z)];
                tmp[static_cast<std::size_t>((y * W + x) * D + z)] = acc;
            }
    field.swap(tmp);
    for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x)
            for (std::int64_t z = 0; z < D; ++z) {
                double acc = 0.0;
                for (std::int64_t i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<std::size_t>(i + radius)] *
                           field[static_cast<std::size_t>((y * W + x) * D + clamp_to(z + i, D))];
                tmp[static_cast<std::size_t>((y * W + x) * D + z)] = acc;
            }
    field.swap(tmp);
}

double njd_fraction(const Tensor& u) {
    Tensor det = jacobian_determinants(u);
    std::int64_t bad = 0;
    for (std::int64_t i = 0; i < det.numel(); ++i)
        if (det.value_at(i) <= 0.0) ++bad;
    return static_cast<double>(bad) / static_cast<double>(det.numel());
}

}  // namespace

Tensor synth_smooth_field(std::array<std::int64_t, 3> dims, double amplitude,
                          double smoothness_sigma, std::uint64_t seed) {
    if (amplitude < 0) throw UsageError("synth_smooth_field: negative amplitude");
    if (smoothness_sigma <= 0) throw UsageError("synth_smooth_field: sigma must be positive");
    const Shape fd{3, dims[0], dims[1], dims[2]};
    if (amplitude == 0.0) return Tensor::zeros(fd, DType::F32);

    const Shape spatial{dims[0], dims[1], dims[2]};
    const std::int64_t S = dims[0] * dims[1] * dims[2];
    // Face taper keeps the displacement mass in the interior; without it the
    // clamped-boundary smoothing pushes the component peaks into the corners
    // and the max-rescale flattens the rest of the field.
    std::vector<double> envelope(static_cast<std::size_t>(S));
    {
        auto axis_window = [](std::int64_t i, std::int64_t e) {
            const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(e);
            const double s = std::sin(3.14159265358979323846 * t);
            return s * s;
        };
        std::int64_t p = 0;
        for (std::int64_t y = 0; y < dims[0]; ++y)
            for (std::int64_t x = 0; x < dims[1]; ++x)
                for (std::int64_t z = 0; z < dims[2]; ++z, ++p)
                    envelope[static_cast<std::size_t>(p)] =
                        axis_window(y, dims[0]) * axis_window(x, dims[1]) * axis_window(z, dims[2]);
    }
    for (int attempt = 0; attempt < 4; ++attempt) {
        Rng rng = make_rng(seed, 100 + static_cast<std::uint64_t>(attempt));
        std::normal_distribution<double> dist(0.0, 1.0);
        std::vector<double> field(static_cast<std::size_t>(3 * S));
        for (auto& v : field) v = dist(rng);
        for (int k = 0; k < 3; ++k) {
            std::vector<double> comp(field.begin() + k * S, field.begin() + (k + 1) * S);
            gaussian_smooth3(comp, spatial, smoothness_sigma);
            for (std::int64_t i = 0; i < S; ++i)
                comp[static_cast<std::size_t>(i)] *= envelope[static_cast<std::size_t>(i)];
            std::copy(comp.begin(), comp.end(), field.begin() + k * S);
        }
        double peak = 0.0;
        for (double v : field) peak = std::max(peak, std::fabs(v));
        if (peak == 0.0) continue;
        double target = amplitude;
        for (int rescale = 0; rescale < 12; ++rescale) {
            const double s = target / peak;
            Tensor u = Tensor::zeros(fd, DType::F32);
            auto uv = u.data<float>();
            for (std::size_t i = 0; i < field.size(); ++i)
                uv[i] = static_cast<float>(field[i] * s);
            if (njd_fraction(u) == 0.0) return u;
            target *= 0.8;  // shrink towards a folding-free field
        }
    }
    throw GenerationError("synth_smooth_field: could not reach a folding-free field");
}

}  // namespace frmlp
