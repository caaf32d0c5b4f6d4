#include <cmath>
#include <cstring>
#include <vector>

#include "frmlp/ops.hpp"

#ifdef FRMLP_WITH_OPENBLAS
#include <cblas.h>
#endif

namespace frmlp::ops {

#ifdef FRMLP_WITH_OPENBLAS

namespace {
struct BlasInit {
    BlasInit() { openblas_set_num_threads(1); }  // deterministic kernels
};
const BlasInit g_blas_init;
}  // namespace

template <>
void gemm<float>(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, const float* a,
                 const float* b, float* c, bool accumulate) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0f, a,
                static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n),
                accumulate ? 1.0f : 0.0f, c, static_cast<int>(n));
}

template <>
void gemm<double>(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
                  const double* b, double* c, bool accumulate) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
                static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n),
                accumulate ? 1.0 : 0.0, c, static_cast<int>(n));
}

#else

template <typename T>
void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b,
          T* c, bool accumulate) {
    // Reference kernel: materialize plain row-major operands, then ikj.
    std::vector<T> abuf, bbuf;
    if (ta) {
        abuf.resize(static_cast<std::size_t>(m * k));
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t p = 0; p < k; ++p) abuf[i * k + p] = a[p * m + i];
        a = abuf.data();
    }
    if (tb) {
        bbuf.resize(static_cast<std::size_t>(k * n));
        for (std::int64_t p = 0; p < k; ++p)
            for (std::int64_t j = 0; j < n; ++j) bbuf[p * n + j] = b[j * k + p];
        b = bbuf.data();
    }
    if (!accumulate) std::memset(c, 0, static_cast<std::size_t>(m * n) * sizeof(T));
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* brow = b + p * n;
            T* crow = c + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
}

template void gemm<float>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const double*,
                           const double*, double*, bool);

#endif

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: operands must be 2-D, got " + shape_str(a.dims()) + " x " +
                         shape_str(b.dims()));
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner extents disagree, " + shape_str(a.dims()) + " x " +
                         shape_str(b.dims()));
    if (a.dtype() != b.dtype()) throw UsageError("matmul: mixed dtypes");
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto node = detail::make_node({m, n}, a.dtype(), {&a, &b});
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        gemm<T>(false, false, m, n, k, a.data<T>().data(), b.data<T>().data(),
                node->values<T>().data(), false);
    });
    detail::install_backward(node, {&a, &b}, [a, b, m, k, n](detail::TensorImpl& self) mutable {
        dispatch_dtype(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            auto dy = self.grad_values<T>();
            if (a.requires_grad())
                gemm<T>(false, true, m, k, n, dy.data(), b.data<T>().data(),
                        detail::grad_span<T>(a).data(), true);
            if (b.requires_grad())
                gemm<T>(true, false, k, n, m, a.data<T>().data(), dy.data(),
                        detail::grad_span<T>(b).data(), true);
        });
    });
    return Tensor::wrap(node);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
        throw ShapeError("linear: x " + shape_str(x.dims()) + " incompatible with w " +
                         shape_str(w.dims()));
    const std::int64_t n_rows = x.dim(0), k = x.dim(1), m = w.dim(1);
    const bool with_bias = b.defined();
    if (with_bias && (b.rank() != 1 || b.dim(0) != m)) throw ShapeError("linear: bias must be [M]");
    auto node = detail::make_node({n_rows, m}, x.dtype(), {&x, &w, with_bias ? &b : nullptr});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* out = node->values<T>().data();
        gemm<T>(false, false, n_rows, m, k, x.data<T>().data(), w.data<T>().data(), out, false);
        if (with_bias) {
            const T* bias = b.data<T>().data();
            for (std::int64_t r = 0; r < n_rows; ++r)
                for (std::int64_t j = 0; j < m; ++j) out[r * m + j] += bias[j];
        }
    });
    detail::install_backward(
        node, {&x, &w, with_bias ? &b : nullptr},
        [x, w, b, n_rows, k, m, with_bias](detail::TensorImpl& self) mutable {
            dispatch_dtype(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                auto dy = self.grad_values<T>();
                if (x.requires_grad())
                    gemm<T>(false, true, n_rows, k, m, dy.data(), w.data<T>().data(),
                            detail::grad_span<T>(x).data(), true);
                if (w.requires_grad())
                    gemm<T>(true, false, k, m, n_rows, x.data<T>().data(), dy.data(),
                            detail::grad_span<T>(w).data(), true);
                if (with_bias && b.requires_grad()) {
                    auto gb = detail::grad_span<T>(b);
                    for (std::int64_t r = 0; r < n_rows; ++r)
                        for (std::int64_t j = 0; j < m; ++j) gb[j] += dy[r * m + j];
                }
            });
        });
    return Tensor::wrap(node);
}

namespace {

// Reused column/padding buffers; conv calls do not nest, so slots are safe
// within one thread.
template <typename T>
std::vector<T>& conv_scratch(int slot) {
    static thread_local std::array<std::vector<T>, 3> bufs;
    return bufs[static_cast<std::size_t>(slot)];
}

// Grows without value-initializing surviving elements.
template <typename T>
void bare_resize(std::vector<T>& v, std::size_t n) {
    if (v.size() < n) v.resize(n);
}

struct ConvDims {
    std::int64_t cin, h, w, d;
    std::int64_t cout, kk;
    std::int64_t oh, ow, od;
    int stride, pad;
    std::int64_t patch() const { return cin * kk * kk * kk; }
    std::int64_t out_voxels() const { return oh * ow * od; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int padding) {
    if (x.rank() != 4) throw ShapeError("conv3d: input must be [Cin,H,W,D]");
    if (w.rank() != 5) throw ShapeError("conv3d: kernel must be [Cout,Cin,k,k,k]");
    if (w.dim(2) != w.dim(3) || w.dim(3) != w.dim(4)) throw ShapeError("conv3d: kernel not cubic");
    if (w.dim(1) != x.dim(0))
        throw ShapeError("conv3d: kernel expects " + std::to_string(w.dim(1)) + " input channels, got " +
                         std::to_string(x.dim(0)));
    if (w.dim(2) % 2 == 0) throw UsageError("conv3d: kernel extent must be odd");
    if (stride < 1) throw UsageError("conv3d: stride must be >= 1");
    if (padding < 0) throw UsageError("conv3d: negative padding");
    ConvDims cd;
    cd.cin = x.dim(0);
    cd.h = x.dim(1);
    cd.w = x.dim(2);
    cd.d = x.dim(3);
    cd.cout = w.dim(0);
    cd.kk = w.dim(2);
    cd.stride = stride;
    cd.pad = padding;
    cd.oh = (cd.h + 2 * padding - cd.kk) / stride + 1;
    cd.ow = (cd.w + 2 * padding - cd.kk) / stride + 1;
    cd.od = (cd.d + 2 * padding - cd.kk) / stride + 1;
    if (cd.oh <= 0 || cd.ow <= 0 || cd.od <= 0)
        throw ShapeError("conv3d: non-positive output extent for input " + shape_str(x.dims()));
    return cd;
}

// Copies x into a zero-padded [cin, h+2p, w+2p, d+2p] buffer so the column
// builder runs without bounds checks.
template <typename T>
void pad_input(const T* x, const ConvDims& cd, std::vector<T>& padded) {
    const std::int64_t hp = cd.h + 2 * cd.pad, wp = cd.w + 2 * cd.pad, dp = cd.d + 2 * cd.pad;
    padded.assign(static_cast<std::size_t>(cd.cin * hp * wp * dp), T(0));
    for (std::int64_t ci = 0; ci < cd.cin; ++ci)
        for (std::int64_t y = 0; y < cd.h; ++y)
            for (std::int64_t xx = 0; xx < cd.w; ++xx)
                std::memcpy(padded.data() +
                                ((ci * hp + y + cd.pad) * wp + xx + cd.pad) * dp + cd.pad,
                            x + ((ci * cd.h + y) * cd.w + xx) * cd.d,
                            static_cast<std::size_t>(cd.d) * sizeof(T));
}

// cols is [patch, out_voxels]; built from the padded buffer with contiguous
// runs along the innermost axis when stride is 1.
template <typename T>
void im2col(const T* x, const ConvDims& cd, std::vector<T>& cols, std::vector<T>& padded) {
    pad_input(x, cd, padded);
    const std::int64_t hp = cd.h + 2 * cd.pad, wp = cd.w + 2 * cd.pad, dp = cd.d + 2 * cd.pad;
    const std::int64_t n = cd.out_voxels();
    bare_resize(cols, static_cast<std::size_t>(cd.patch() * n));
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < cd.cin; ++ci)
        for (std::int64_t ky = 0; ky < cd.kk; ++ky)
            for (std::int64_t kx = 0; kx < cd.kk; ++kx)
                for (std::int64_t kz = 0; kz < cd.kk; ++kz, ++row) {
                    T* dst = cols.data() + row * n;
                    for (std::int64_t oy = 0; oy < cd.oh; ++oy) {
                        const std::int64_t iy = oy * cd.stride + ky;
                        for (std::int64_t ox = 0; ox < cd.ow; ++ox) {
                            const std::int64_t ix = ox * cd.stride + kx;
                            const T* src = padded.data() + ((ci * hp + iy) * wp + ix) * dp + kz;
                            if (cd.stride == 1) {
                                std::memcpy(dst, src, static_cast<std::size_t>(cd.od) * sizeof(T));
                            } else {
                                for (std::int64_t oz = 0; oz < cd.od; ++oz)
                                    dst[oz] = src[oz * cd.stride];
                            }
                            dst += cd.od;
                        }
                    }
                }
}

// Transpose of im2col: accumulate runs into a padded buffer, then fold the
// interior back onto the voxel gradients.
template <typename T>
void col2im_add(const T* cols, const ConvDims& cd, T* gx, std::vector<T>& padded) {
    const std::int64_t hp = cd.h + 2 * cd.pad, wp = cd.w + 2 * cd.pad, dp = cd.d + 2 * cd.pad;
    padded.assign(static_cast<std::size_t>(cd.cin * hp * wp * dp), T(0));
    const std::int64_t n = cd.out_voxels();
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < cd.cin; ++ci)
        for (std::int64_t ky = 0; ky < cd.kk; ++ky)
            for (std::int64_t kx = 0; kx < cd.kk; ++kx)
                for (std::int64_t kz = 0; kz < cd.kk; ++kz, ++row) {
                    const T* src = cols + row * n;
                    for (std::int64_t oy = 0; oy < cd.oh; ++oy) {
                        const std::int64_t iy = oy * cd.stride + ky;
                        for (std::int64_t ox = 0; ox < cd.ow; ++ox) {
                            const std::int64_t ix = ox * cd.stride + kx;
                            T* dst = padded.data() + ((ci * hp + iy) * wp + ix) * dp + kz;
                            if (cd.stride == 1) {
                                for (std::int64_t oz = 0; oz < cd.od; ++oz) dst[oz] += src[oz];
                            } else {
                                for (std::int64_t oz = 0; oz < cd.od; ++oz)
                                    dst[oz * cd.stride] += src[oz];
                            }
                            src += cd.od;
                        }
                    }
                }
    for (std::int64_t ci = 0; ci < cd.cin; ++ci)
        for (std::int64_t y = 0; y < cd.h; ++y)
            for (std::int64_t xx = 0; xx < cd.w; ++xx) {
                const T* src =
                    padded.data() + ((ci * hp + y + cd.pad) * wp + xx + cd.pad) * dp + cd.pad;
                T* dst = gx + ((ci * cd.h + y) * cd.w + xx) * cd.d;
                for (std::int64_t z = 0; z < cd.d; ++z) dst[z] += src[z];
            }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
    const ConvDims cd = conv_dims(x, w, stride, padding);
    const bool with_bias = b.defined();
    if (with_bias && (b.rank() != 1 || b.dim(0) != cd.cout))
        throw ShapeError("conv3d: bias must be [Cout]");
    if (x.dtype() != w.dtype() || (with_bias && b.dtype() != x.dtype()))
        throw UsageError("conv3d: mixed dtypes");

    auto node = detail::make_node({cd.cout, cd.oh, cd.ow, cd.od}, x.dtype(),
                                  {&x, &w, with_bias ? &b : nullptr});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto& cols = conv_scratch<T>(0);
        auto& padded = conv_scratch<T>(1);
        im2col(x.data<T>().data(), cd, cols, padded);
        T* out = node->values<T>().data();
        gemm<T>(false, false, cd.cout, cd.out_voxels(), cd.patch(), w.data<T>().data(), cols.data(),
                out, false);
        if (with_bias) {
            const T* bias = b.data<T>().data();
            const std::int64_t n = cd.out_voxels();
            for (std::int64_t co = 0; co < cd.cout; ++co)
                for (std::int64_t i = 0; i < n; ++i) out[co * n + i] += bias[co];
        }
    });
    detail::install_backward(
        node, {&x, &w, with_bias ? &b : nullptr},
        [x, w, b, cd, with_bias](detail::TensorImpl& self) mutable {
            dispatch_dtype(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                auto dy = self.grad_values<T>();
                const std::int64_t n = cd.out_voxels();
                auto& scratch = conv_scratch<T>(1);
                if (w.requires_grad()) {
                    auto& cols = conv_scratch<T>(0);  // recomputed, not saved from the forward
                    im2col(x.data<T>().data(), cd, cols, scratch);
                    gemm<T>(false, true, cd.cout, cd.patch(), n, dy.data(), cols.data(),
                            detail::grad_span<T>(w).data(), true);
                }
                if (x.requires_grad()) {
                    auto& dcols = conv_scratch<T>(2);
                    bare_resize(dcols, static_cast<std::size_t>(cd.patch() * n));
                    gemm<T>(true, false, cd.patch(), n, cd.cout, w.data<T>().data(), dy.data(),
                            dcols.data(), false);
                    col2im_add(dcols.data(), cd, detail::grad_span<T>(x).data(), scratch);
                }
                if (with_bias && b.requires_grad()) {
                    auto gb = detail::grad_span<T>(b);
                    for (std::int64_t co = 0; co < cd.cout; ++co) {
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < n; ++i)
                            acc += static_cast<double>(dy[co * n + i]);
                        gb[co] += static_cast<T>(acc);
                    }
                }
            });
        });
    return Tensor::wrap(node);
}

namespace {

struct TConvDims {
    std::int64_t cin, h, w, d, cout, kk, oh, ow, od;
    int stride;
    std::int64_t in_voxels() const { return h * w * d; }
    std::int64_t out_voxels() const { return oh * ow * od; }
};

TConvDims tconv_dims(const Tensor& x, const Tensor& w, int stride) {
    if (x.rank() != 4) throw ShapeError("conv_transpose3d: input must be [Cin,H,W,D]");
    if (w.rank() != 5) throw ShapeError("conv_transpose3d: kernel must be [Cin,Cout,k,k,k]");
    if (w.dim(0) != x.dim(0)) throw ShapeError("conv_transpose3d: channel mismatch");
    if (w.dim(2) != w.dim(3) || w.dim(3) != w.dim(4))
        throw ShapeError("conv_transpose3d: kernel not cubic");
    if (stride < 1) throw UsageError("conv_transpose3d: stride must be >= 1");
    TConvDims td;
    td.cin = x.dim(0);
    td.h = x.dim(1);
    td.w = x.dim(2);
    td.d = x.dim(3);
    td.cout = w.dim(1);
    td.kk = w.dim(2);
    td.stride = stride;
    td.oh = (td.h - 1) * stride + td.kk;
    td.ow = (td.w - 1) * stride + td.kk;
    td.od = (td.d - 1) * stride + td.kk;
    return td;
}

}  // namespace

Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    const TConvDims td = tconv_dims(x, w, stride);
    const bool with_bias = b.defined();
    if (with_bias && (b.rank() != 1 || b.dim(0) != td.cout))
        throw ShapeError("conv_transpose3d: bias must be [Cout]");
    if (x.dtype() != w.dtype() || (with_bias && b.dtype() != x.dtype()))
        throw UsageError("conv_transpose3d: mixed dtypes");

    const std::int64_t k3 = td.kk * td.kk * td.kk;
    const std::int64_t rows = td.cout * k3;
    auto node =
        detail::make_node({td.cout, td.oh, td.ow, td.od}, x.dtype(), {&x, &w, with_bias ? &b : nullptr});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        // cols[co*k3 + kidx, in_voxel] = Wmat^T X, then scatter to the output grid.
        std::vector<T> cols(static_cast<std::size_t>(rows * td.in_voxels()));
        gemm<T>(true, false, rows, td.in_voxels(), td.cin, w.data<T>().data(), x.data<T>().data(),
                cols.data(), false);
        T* out = node->values<T>().data();
        for (std::int64_t co = 0; co < td.cout; ++co)
            for (std::int64_t ky = 0; ky < td.kk; ++ky)
                for (std::int64_t kx = 0; kx < td.kk; ++kx)
                    for (std::int64_t kz = 0; kz < td.kk; ++kz) {
                        const T* src = cols.data() + ((co * td.kk + ky) * td.kk + kx) * td.kk * td.in_voxels() +
                                       kz * td.in_voxels();
                        for (std::int64_t iy = 0; iy < td.h; ++iy)
                            for (std::int64_t ix = 0; ix < td.w; ++ix) {
                                T* dst = out + ((co * td.oh + iy * td.stride + ky) * td.ow +
                                                ix * td.stride + kx) *
                                                   td.od +
                                          kz;
                                const T* s = src + (iy * td.w + ix) * td.d;
                                for (std::int64_t iz = 0; iz < td.d; ++iz)
                                    dst[iz * td.stride] += s[iz];
                            }
                    }
        if (with_bias) {
            const T* bias = b.data<T>().data();
            const std::int64_t n = td.out_voxels();
            for (std::int64_t co = 0; co < td.cout; ++co)
                for (std::int64_t i = 0; i < n; ++i) out[co * n + i] += bias[co];
        }
    });
    detail::install_backward(
        node, {&x, &w, with_bias ? &b : nullptr},
        [x, w, b, td, rows, k3, with_bias](detail::TensorImpl& self) mutable {
            dispatch_dtype(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                auto dy = self.grad_values<T>();
                // Gather dcols from the output-grid gradient (transpose of the scatter).
                std::vector<T> dcols(static_cast<std::size_t>(rows * td.in_voxels()));
                for (std::int64_t co = 0; co < td.cout; ++co)
                    for (std::int64_t ky = 0; ky < td.kk; ++ky)
                        for (std::int64_t kx = 0; kx < td.kk; ++kx)
                            for (std::int64_t kz = 0; kz < td.kk; ++kz) {
                                T* dst = dcols.data() +
                                         (((co * td.kk + ky) * td.kk + kx) * td.kk + kz) *
                                             td.in_voxels();
                                for (std::int64_t iy = 0; iy < td.h; ++iy)
                                    for (std::int64_t ix = 0; ix < td.w; ++ix) {
                                        const T* s = dy.data() +
                                                     ((co * td.oh + iy * td.stride + ky) * td.ow +
                                                      ix * td.stride + kx) *
                                                         td.od +
                                                     kz;
                                        T* drow = dst + (iy * td.w + ix) * td.d;
                                        for (std::int64_t iz = 0; iz < td.d; ++iz)
                                            drow[iz] = s[iz * td.stride];
                                    }
                            }
                if (x.requires_grad())
                    gemm<T>(false, false, td.cin, td.in_voxels(), rows, w.data<T>().data(),
                            dcols.data(), detail::grad_span<T>(x).data(), true);
                if (w.requires_grad())
                    gemm<T>(false, true, td.cin, rows, td.in_voxels(), x.data<T>().data(),
                            dcols.data(), detail::grad_span<T>(w).data(), true);
                if (with_bias && b.requires_grad()) {
                    auto gb = detail::grad_span<T>(b);
                    const std::int64_t n = td.out_voxels();
                    for (std::int64_t co = 0; co < td.cout; ++co) {
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < n; ++i)
                            acc += static_cast<double>(dy[co * n + i]);
                        gb[co] += static_cast<T>(acc);
                    }
                }
            });
        });
    return Tensor::wrap(node);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (eps <= 0) throw UsageError("layer_norm: eps must be positive");
    if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
    const std::int64_t C = x.dims().back();
    if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
        throw ShapeError("layer_norm: gamma/beta must be [C]");
    if (gamma.dtype() != x.dtype() || beta.dtype() != x.dtype())
        throw UsageError("layer_norm: mixed dtypes");
    const std::int64_t rows = x.numel() / C;
    auto node = detail::make_node(x.dims(), x.dtype(), {&x, &gamma, &beta});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = x.data<T>().data();
        const T* g = gamma.data<T>().data();
        const T* bt = beta.data<T>().data();
        T* out = node->values<T>().data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* row = in + r * C;
            double mu = 0.0;
            for (std::int64_t c = 0; c < C; ++c) mu += static_cast<double>(row[c]);
            mu /= static_cast<double>(C);
            double var = 0.0;
            for (std::int64_t c = 0; c < C; ++c) {
                const double dv = static_cast<double>(row[c]) - mu;
                var += dv * dv;
            }
            var /= static_cast<double>(C);
            const double rstd = 1.0 / std::sqrt(var + eps);
            for (std::int64_t c = 0; c < C; ++c)
                out[r * C + c] = static_cast<T>(((static_cast<double>(row[c]) - mu) * rstd) *
                                                    static_cast<double>(g[c]) +
                                                static_cast<double>(bt[c]));
        }
    });
    detail::install_backward(
        node, {&x, &gamma, &beta}, [x, gamma, beta, rows, C, eps](detail::TensorImpl& self) mutable {
            dispatch_dtype(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                auto dy = self.grad_values<T>();
                const T* in = x.data<T>().data();
                const T* g = gamma.data<T>().data();
                T* dx = x.requires_grad() ? detail::grad_span<T>(x).data() : nullptr;
                T* dgam = gamma.requires_grad()
                              ? detail::grad_span<T>(gamma).data()
                              : nullptr;
                T* dbet = beta.requires_grad() ? detail::grad_span<T>(beta).data()
                                               : nullptr;
                for (std::int64_t r = 0; r < rows; ++r) {
                    const T* row = in + r * C;
                    const T* drow = dy.data() + r * C;
                    double mu = 0.0;
                    for (std::int64_t c = 0; c < C; ++c) mu += static_cast<double>(row[c]);
                    mu /= static_cast<double>(C);
                    double var = 0.0;
                    for (std::int64_t c = 0; c < C; ++c) {
                        const double dv = static_cast<double>(row[c]) - mu;
                        var += dv * dv;
                    }
                    var /= static_cast<double>(C);
                    const double rstd = 1.0 / std::sqrt(var + eps);
                    double m1 = 0.0, m2 = 0.0;
                    for (std::int64_t c = 0; c < C; ++c) {
                        const double xh = (static_cast<double>(row[c]) - mu) * rstd;
                        const double gd = static_cast<double>(drow[c]) * static_cast<double>(g[c]);
                        m1 += gd;
                        m2 += gd * xh;
                        if (dgam) dgam[c] += static_cast<T>(static_cast<double>(drow[c]) * xh);
                        if (dbet) dbet[c] += drow[c];
                    }
                    m1 /= static_cast<double>(C);
                    m2 /= static_cast<double>(C);
                    if (dx)
                        for (std::int64_t c = 0; c < C; ++c) {
                            const double xh = (static_cast<double>(row[c]) - mu) * rstd;
                            const double gd =
                                static_cast<double>(drow[c]) * static_cast<double>(g[c]);
                            dx[r * C + c] += static_cast<T>(rstd * (gd - m1 - xh * m2));
                        }
                }
            });
        });
    return Tensor::wrap(node);
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (eps <= 0) throw UsageError("instance_norm: eps must be positive");
    if (x.rank() != 4) throw ShapeError("instance_norm: input must be [C,H,W,D]");
    const std::int64_t C = x.dim(0), S = x.numel() / C;
    if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
        throw ShapeError("instance_norm: gamma/beta must be [C]");
    auto node = detail::make_node(x.dims(), x.dtype(), {&x, &gamma, &beta});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = x.data<T>().data();
        const T* g = gamma.data<T>().data();
        const T* bt = beta.data<T>().data();
        T* out = node->values<T>().data();
        for (std::int64_t c = 0; c < C; ++c) {
            const T* ch = in + c * S;
            double mu = 0.0;
            for (std::int64_t i = 0; i < S; ++i) mu += static_cast<double>(ch[i]);
            mu /= static_cast<double>(S);
            double var = 0.0;
            for (std::int64_t i = 0; i < S; ++i) {
                const double dv = static_cast<double>(ch[i]) - mu;
                var += dv * dv;
            }
            var /= static_cast<double>(S);
            const double rstd = 1.0 / std::sqrt(var + eps);
            for (std::int64_t i = 0; i < S; ++i)
                out[c * S + i] = static_cast<T>(((static_cast<double>(ch[i]) - mu) * rstd) *
                                                    static_cast<double>(g[c]) +
                                                static_cast<double>(bt[c]));
        }
    });
    detail::install_backward(
        node, {&x, &gamma, &beta}, [x, gamma, beta, C, S, eps](detail::TensorImpl& self) mutable {
            dispatch_dtype(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                auto dy = self.grad_values<T>();
                const T* in = x.data<T>().data();
                const T* g = gamma.data<T>().data();
                T* dx = x.requires_grad() ? detail::grad_span<T>(x).data() : nullptr;
                T* dgam = gamma.requires_grad()
                              ? detail::grad_span<T>(gamma).data()
                              : nullptr;
                T* dbet = beta.requires_grad() ? detail::grad_span<T>(beta).data()
                                               : nullptr;
                for (std::int64_t c = 0; c < C; ++c) {
                    const T* ch = in + c * S;
                    const T* drow = dy.data() + c * S;
                    double mu = 0.0;
                    for (std::int64_t i = 0; i < S; ++i) mu += static_cast<double>(ch[i]);
                    mu /= static_cast<double>(S);
                    double var = 0.0;
                    for (std::int64_t i = 0; i < S; ++i) {
                        const double dv = static_cast<double>(ch[i]) - mu;
                        var += dv * dv;
                    }
                    var /= static_cast<double>(S);
                    const double rstd = 1.0 / std::sqrt(var + eps);
                    const double gc = static_cast<double>(g[c]);
                    double m1 = 0.0, m2 = 0.0, dg = 0.0, db = 0.0;
                    for (std::int64_t i = 0; i < S; ++i) {
                        const double xh = (static_cast<double>(ch[i]) - mu) * rstd;
                        const double gd = static_cast<double>(drow[i]) * gc;
                        m1 += gd;
                        m2 += gd * xh;
                        dg += static_cast<double>(drow[i]) * xh;
                        db += static_cast<double>(drow[i]);
                    }
                    m1 /= static_cast<double>(S);
                    m2 /= static_cast<double>(S);
                    if (dgam) dgam[c] += static_cast<T>(dg);
                    if (dbet) dbet[c] += static_cast<T>(db);
                    if (dx)
                        for (std::int64_t i = 0; i < S; ++i) {
                            const double xh = (static_cast<double>(ch[i]) - mu) * rstd;
                            const double gd = static_cast<double>(drow[i]) * gc;
                            dx[c * S + i] += static_cast<T>(rstd * (gd - m1 - xh * m2));
                        }
                }
            });
        });
    return Tensor::wrap(node);
}

}  // namespace frmlp::ops
