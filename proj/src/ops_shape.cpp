#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "frmlp/ops.hpp"

namespace frmlp::ops {

namespace {

Shape strides_of(const Shape& dims) {
    Shape st(dims.size(), 1);
    for (std::size_t i = dims.size(); i-- > 1;) st[i - 1] = st[i] * dims[i];
    return st;
}

void check_4d(const Tensor& x, const char* op) {
    if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected a [C,H,W,D] tensor, got " +
                                        shape_str(x.dims()));
}

// Factorizes dims into [outer, dims[axis], inner] around one axis.
struct AxisView {
    std::int64_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& dims, std::size_t axis) {
    AxisView v;
    v.extent = dims[axis];
    for (std::size_t i = 0; i < axis; ++i) v.outer *= dims[i];
    for (std::size_t i = axis + 1; i < dims.size(); ++i) v.inner *= dims[i];
    return v;
}

template <typename T>
void box_sum_axis(const T* in, T* out, const AxisView& v, int radius) {
    const std::int64_t n = v.extent;
    for (std::int64_t o = 0; o < v.outer; ++o) {
        const T* src = in + o * n * v.inner;
        T* dst = out + o * n * v.inner;
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t j0 = std::max<std::int64_t>(0, i - radius);
            const std::int64_t j1 = std::min<std::int64_t>(n - 1, i + radius);
            for (std::int64_t q = 0; q < v.inner; ++q) {
                double acc = 0.0;
                for (std::int64_t j = j0; j <= j1; ++j)
                    acc += static_cast<double>(src[j * v.inner + q]);
                dst[i * v.inner + q] = static_cast<T>(acc);
            }
        }
    }
}

template <typename T>
void box_sum3_raw(const T* in, T* out, const Shape& dims, int radius, std::vector<T>& tmp) {
    const std::int64_t n = dims[0] * dims[1] * dims[2] * dims[3];
    tmp.resize(static_cast<std::size_t>(n));
    box_sum_axis(in, tmp.data(), axis_view(dims, 1), radius);
    box_sum_axis(tmp.data(), out, axis_view(dims, 2), radius);
    std::copy(out, out + n, tmp.begin());
    box_sum_axis(tmp.data(), out, axis_view(dims, 3), radius);
}

}  // namespace

Tensor reshape(const Tensor& x, Shape dims) {
    if (shape_numel(dims) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.dims()) + " as " + shape_str(dims));
    auto node = detail::make_node(std::move(dims), x.dtype(), {&x});
    std::memcpy(node->data.data(), x.impl()->data.data(), node->data.size());
    detail::install_backward(node, {&x}, [x](detail::TensorImpl& self) mutable {
        dispatch_dtype(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            auto dy = self.grad_values<T>();
            auto gx = detail::grad_span<T>(x);
            for (std::int64_t i = 0; i < self.numel; ++i) gx[i] += dy[i];
        });
    });
    return Tensor::wrap(node);
}

namespace {

// out[o] = in[gather(o)] for a bijective axis permutation.
template <typename T>
void permute_raw(const T* in, T* out, const Shape& out_dims, const Shape& stride_map) {
    const std::size_t rank = out_dims.size();
    Shape coord(rank, 0);
    std::int64_t in_flat = 0;
    const std::int64_t n = shape_numel(out_dims);
    for (std::int64_t o = 0; o < n; ++o) {
        out[o] = in[in_flat];
        for (std::size_t j = rank; j-- > 0;) {
            ++coord[j];
            in_flat += stride_map[j];
            if (coord[j] < out_dims[j]) break;
            in_flat -= stride_map[j] * out_dims[j];
            coord[j] = 0;
        }
    }
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    const std::size_t rank = x.rank();
    if (axes.size() != rank) throw UsageError("permute: axes length mismatch");
    std::vector<bool> seen(rank, false);
    Shape out_dims(rank);
    for (std::size_t j = 0; j < rank; ++j) {
        if (axes[j] >= rank || seen[axes[j]]) throw UsageError("permute: invalid axis list");
        seen[axes[j]] = true;
        out_dims[j] = x.dim(axes[j]);
    }
    const Shape in_strides = strides_of(x.dims());
    Shape stride_map(rank);
    for (std::size_t j = 0; j < rank; ++j) stride_map[j] = in_strides[axes[j]];

    auto node = detail::make_node(out_dims, x.dtype(), {&x});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        permute_raw(x.data<T>().data(), node->values<T>().data(), out_dims, stride_map);
    });
    detail::install_backward(node, {&x}, [x, axes](detail::TensorImpl& self) mutable {
        // The adjoint of a permutation is its inverse permutation.
        std::vector<std::size_t> inv(axes.size());
        for (std::size_t j = 0; j < axes.size(); ++j) inv[axes[j]] = j;
        const Shape grad_strides = strides_of(self.dims);
        Shape stride_map_inv(axes.size());
        for (std::size_t j = 0; j < axes.size(); ++j) stride_map_inv[j] = grad_strides[inv[j]];
        dispatch_dtype(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            auto dy = self.grad_values<T>();
            auto gx = detail::grad_span<T>(x);
            const Shape& xd = x.dims();
            Shape coord(xd.size(), 0);
            std::int64_t src = 0;
            for (std::int64_t o = 0; o < self.numel; ++o) {
                gx[o] += dy[src];
                for (std::size_t j = xd.size(); j-- > 0;) {
                    ++coord[j];
                    src += stride_map_inv[j];
                    if (coord[j] < xd[j]) break;
                    src -= stride_map_inv[j] * xd[j];
                    coord[j] = 0;
                }
            }
        });
    });
    return Tensor::wrap(node);
}

Tensor narrow(const Tensor& x, std::size_t axis, std::int64_t start, std::int64_t len) {
    if (axis >= x.rank()) throw UsageError("narrow: axis out of range");
    if (start < 0 || len <= 0 || start + len > x.dim(axis))
        throw ShapeError("narrow: window [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") outside extent " +
                         std::to_string(x.dim(axis)));
    Shape out_dims = x.dims();
    out_dims[axis] = len;
    const AxisView v = axis_view(x.dims(), axis);
    auto node = detail::make_node(out_dims, x.dtype(), {&x});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = x.data<T>().data();
        T* out = node->values<T>().data();
        for (std::int64_t o = 0; o < v.outer; ++o)
            std::memcpy(out + o * len * v.inner, in + (o * v.extent + start) * v.inner,
                        static_cast<std::size_t>(len * v.inner) * sizeof(T));
    });
    detail::install_backward(node, {&x}, [x, v, start, len](detail::TensorImpl& self) mutable {
        dispatch_dtype(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            auto dy = self.grad_values<T>();
            auto gx = detail::grad_span<T>(x);
            for (std::int64_t o = 0; o < v.outer; ++o) {
                const std::int64_t dst0 = (o * v.extent + start) * v.inner;
                const std::int64_t src0 = o * len * v.inner;
                for (std::int64_t i = 0; i < len * v.inner; ++i) gx[dst0 + i] += dy[src0 + i];
            }
        });
    });
    return Tensor::wrap(node);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw UsageError("concat: no operands");
    const Tensor& first = parts[0];
    if (axis >= first.rank()) throw UsageError("concat: axis out of range");
    Shape out_dims = first.dims();
    std::int64_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != first.rank() || p.dtype() != first.dtype())
            throw ShapeError("concat: incompatible operands");
        for (std::size_t j = 0; j < first.rank(); ++j)
            if (j != axis && p.dim(j) != first.dim(j))
                throw ShapeError("concat: shape mismatch on axis " + std::to_string(j));
        total += p.dim(axis);
    }
    out_dims[axis] = total;

    std::vector<const Tensor*> input_ptrs;
    for (const Tensor& p : parts) input_ptrs.push_back(&p);
    auto node = std::make_shared<detail::TensorImpl>();
    node->numel = shape_numel(out_dims);
    node->dims = out_dims;
    node->dtype = first.dtype();
    node->data.assign(static_cast<std::size_t>(node->numel) * dtype_size(first.dtype()),
                      std::byte{0});
    if (grad_enabled())
        for (const Tensor& p : parts)
            if (p.requires_grad()) node->requires_grad = true;

    const AxisView ov = axis_view(out_dims, axis);
    dispatch_dtype(first.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* out = node->values<T>().data();
        std::int64_t offset = 0;
        for (const Tensor& p : parts) {
            const std::int64_t ext = p.dim(axis);
            const T* in = p.data<T>().data();
            for (std::int64_t o = 0; o < ov.outer; ++o)
                std::memcpy(out + (o * ov.extent + offset) * ov.inner, in + o * ext * ov.inner,
                            static_cast<std::size_t>(ext * ov.inner) * sizeof(T));
            offset += ext;
        }
    });

    if (node->requires_grad) {
        std::vector<Tensor> held(parts.begin(), parts.end());
        for (const Tensor& p : held) node->parents.push_back(p.node());
        node->backward = [held, ov, axis](detail::TensorImpl& self) {
            dispatch_dtype(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                auto dy = self.grad_values<T>();
                std::int64_t offset = 0;
                for (const Tensor& p : held) {
                    const std::int64_t ext = p.dims()[axis];
                    if (p.requires_grad()) {
                        auto gp = detail::grad_span<T>(p);
                        for (std::int64_t o = 0; o < ov.outer; ++o) {
                            const std::int64_t src0 = (o * ov.extent + offset) * ov.inner;
                            const std::int64_t dst0 = o * ext * ov.inner;
                            for (std::int64_t i = 0; i < ext * ov.inner; ++i)
                                gp[dst0 + i] += dy[src0 + i];
                        }
                    }
                    offset += ext;
                }
            });
        };
    }
    return Tensor::wrap(node);
}

Tensor cast(const Tensor& x, DType dt) {
    auto node = detail::make_node(x.dims(), dt, {&x});
    dispatch_dtype(x.dtype(), [&](auto src_tag) {
        using S = decltype(src_tag);
        auto in = x.data<S>();
        dispatch_dtype(dt, [&](auto dst_tag) {
            using D = decltype(dst_tag);
            auto out = node->values<D>();
            for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = static_cast<D>(in[i]);
        });
    });
    detail::install_backward(node, {&x}, [x](detail::TensorImpl& self) mutable {
        dispatch_dtype(self.dtype, [&](auto out_tag) {
            using O = decltype(out_tag);
            auto dy = self.grad_values<O>();
            dispatch_dtype(x.dtype(), [&](auto in_tag) {
                using I = decltype(in_tag);
                auto gx = detail::grad_span<I>(x);
                for (std::int64_t i = 0; i < self.numel; ++i) gx[i] += static_cast<I>(dy[i]);
            });
        });
    });
    return Tensor::wrap(node);
}

Tensor pad_spatial(const Tensor& x, std::array<std::int64_t, 3> lo, std::array<std::int64_t, 3> hi) {
    check_4d(x, "pad_spatial");
    for (int i = 0; i < 3; ++i)
        if (lo[i] < 0 || hi[i] < 0) throw UsageError("pad_spatial: negative padding");
    const Shape& d = x.dims();
    Shape out_dims{d[0], d[1] + lo[0] + hi[0], d[2] + lo[1] + hi[1], d[3] + lo[2] + hi[2]};
    auto node = detail::make_node(out_dims, x.dtype(), {&x});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = x.data<T>().data();
        T* out = node->values<T>().data();
        const std::int64_t oH = out_dims[1], oW = out_dims[2], oD = out_dims[3];
        for (std::int64_t c = 0; c < d[0]; ++c)
            for (std::int64_t h = 0; h < d[1]; ++h)
                for (std::int64_t w = 0; w < d[2]; ++w)
                    std::memcpy(out + ((c * oH + h + lo[0]) * oW + w + lo[1]) * oD + lo[2],
                                in + ((c * d[1] + h) * d[2] + w) * d[3],
                                static_cast<std::size_t>(d[3]) * sizeof(T));
    });
    detail::install_backward(node, {&x}, [x, lo](detail::TensorImpl& self) mutable {
        dispatch_dtype(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            auto dy = self.grad_values<T>();
            auto gx = detail::grad_span<T>(x);
            const Shape& d = x.dims();
            const std::int64_t oH = self.dims[1], oW = self.dims[2], oD = self.dims[3];
            for (std::int64_t c = 0; c < d[0]; ++c)
                for (std::int64_t h = 0; h < d[1]; ++h)
                    for (std::int64_t w = 0; w < d[2]; ++w) {
                        const std::int64_t src0 =
                            ((c * oH + h + lo[0]) * oW + w + lo[1]) * oD + lo[2];
                        const std::int64_t dst0 = ((c * d[1] + h) * d[2] + w) * d[3];
                        for (std::int64_t z = 0; z < d[3]; ++z) gx[dst0 + z] += dy[src0 + z];
                    }
        });
    });
    return Tensor::wrap(node);
}

Tensor crop_spatial(const Tensor& x, std::array<std::int64_t, 3> start,
                    std::array<std::int64_t, 3> size) {
    check_4d(x, "crop_spatial");
    const Shape& d = x.dims();
    for (int i = 0; i < 3; ++i)
        if (start[i] < 0 || size[i] <= 0 || start[i] + size[i] > d[i + 1])
            throw ShapeError("crop_spatial: window outside volume");
    Tensor t = narrow(x, 1, start[0], size[0]);
    t = narrow(t, 2, start[1], size[1]);
    return narrow(t, 3, start[2], size[2]);
}

Tensor roll(const Tensor& x, std::size_t axis, std::int64_t shift) {
    if (axis >= x.rank()) throw UsageError("roll: axis out of range");
    const AxisView v = axis_view(x.dims(), axis);
    const std::int64_t n = v.extent;
    const std::int64_t s = ((shift % n) + n) % n;
    auto node = detail::make_node(x.dims(), x.dtype(), {&x});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = x.data<T>().data();
        T* out = node->values<T>().data();
        for (std::int64_t o = 0; o < v.outer; ++o)
            for (std::int64_t i = 0; i < n; ++i)
                std::memcpy(out + (o * n + i) * v.inner, in + (o * n + (i - s + n) % n) * v.inner,
                            static_cast<std::size_t>(v.inner) * sizeof(T));
    });
    detail::install_backward(node, {&x}, [x, v, s](detail::TensorImpl& self) mutable {
        const std::int64_t n = v.extent;
        dispatch_dtype(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            auto dy = self.grad_values<T>();
            auto gx = detail::grad_span<T>(x);
            for (std::int64_t o = 0; o < v.outer; ++o)
                for (std::int64_t i = 0; i < n; ++i) {
                    const std::int64_t src0 = (o * n + i) * v.inner;
                    const std::int64_t dst0 = (o * n + (i - s + n) % n) * v.inner;
                    for (std::int64_t q = 0; q < v.inner; ++q) gx[dst0 + q] += dy[src0 + q];
                }
        });
    });
    return Tensor::wrap(node);
}

Tensor space_to_depth2(const Tensor& x) {
    check_4d(x, "space_to_depth2");
    const Shape& d = x.dims();
    if (d[1] % 2 || d[2] % 2 || d[3] % 2)
        throw UsageError("space_to_depth2: odd spatial extent " + shape_str(d));
    const std::int64_t C = d[0], H2 = d[1] / 2, W2 = d[2] / 2, D2 = d[3] / 2;
    auto node = detail::make_node({8 * C, H2, W2, D2}, x.dtype(), {&x});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = x.data<T>().data();
        T* out = node->values<T>().data();
        for (std::int64_t o = 0; o < 8; ++o) {
            const std::int64_t dy = (o >> 2) & 1, dx = (o >> 1) & 1, dz = o & 1;
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t h = 0; h < H2; ++h)
                    for (std::int64_t w = 0; w < W2; ++w)
                        for (std::int64_t z = 0; z < D2; ++z)
                            out[(((o * C + c) * H2 + h) * W2 + w) * D2 + z] =
                                in[((c * d[1] + 2 * h + dy) * d[2] + 2 * w + dx) * d[3] + 2 * z +
                                   dz];
        }
    });
    detail::install_backward(node, {&x}, [x](detail::TensorImpl& self) mutable {
        const Shape& d = x.dims();
        const std::int64_t C = d[0], H2 = d[1] / 2, W2 = d[2] / 2, D2 = d[3] / 2;
        dispatch_dtype(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            auto g = self.grad_values<T>();
            auto gx = detail::grad_span<T>(x);
            for (std::int64_t o = 0; o < 8; ++o) {
                const std::int64_t dy = (o >> 2) & 1, dx = (o >> 1) & 1, dz = o & 1;
                for (std::int64_t c = 0; c < C; ++c)
                    for (std::int64_t h = 0; h < H2; ++h)
                        for (std::int64_t w = 0; w < W2; ++w)
                            for (std::int64_t z = 0; z < D2; ++z)
                                gx[((c * d[1] + 2 * h + dy) * d[2] + 2 * w + dx) * d[3] + 2 * z +
                                   dz] += g[(((o * C + c) * H2 + h) * W2 + w) * D2 + z];
            }
        });
    });
    return Tensor::wrap(node);
}

namespace {

struct LerpTap {
    std::int64_t i0, i1;
    double t;
};

LerpTap upsample_tap(std::int64_t out_idx, std::int64_t in_extent) {
    double s = (static_cast<double>(out_idx) + 0.5) / 2.0 - 0.5;
    s = std::max(0.0, std::min(s, static_cast<double>(in_extent - 1)));
    LerpTap tap;
    tap.i0 = static_cast<std::int64_t>(std::floor(s));
    tap.i1 = std::min(tap.i0 + 1, in_extent - 1);
    tap.t = s - static_cast<double>(tap.i0);
    return tap;
}

}  // namespace

Tensor upsample_trilinear2(const Tensor& x) {
    check_4d(x, "upsample_trilinear2");
    const Shape& d = x.dims();
    const std::int64_t C = d[0], H = d[1], W = d[2], D = d[3];
    auto node = detail::make_node({C, 2 * H, 2 * W, 2 * D}, x.dtype(), {&x});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = x.data<T>().data();
        T* out = node->values<T>().data();
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t h = 0; h < 2 * H; ++h) {
                const LerpTap th = upsample_tap(h, H);
                for (std::int64_t w = 0; w < 2 * W; ++w) {
                    const LerpTap tw = upsample_tap(w, W);
                    for (std::int64_t z = 0; z < 2 * D; ++z) {
                        const LerpTap tz = upsample_tap(z, D);
                        auto at = [&](std::int64_t ih, std::int64_t iw, std::int64_t iz) {
                            return static_cast<double>(in[((c * H + ih) * W + iw) * D + iz]);
                        };
                        const double v =
                            (1 - th.t) * ((1 - tw.t) * ((1 - tz.t) * at(th.i0, tw.i0, tz.i0) +
                                                        tz.t * at(th.i0, tw.i0, tz.i1)) +
                                          tw.t * ((1 - tz.t) * at(th.i0, tw.i1, tz.i0) +
                                                  tz.t * at(th.i0, tw.i1, tz.i1))) +
                            th.t * ((1 - tw.t) * ((1 - tz.t) * at(th.i1, tw.i0, tz.i0) +
                                                  tz.t * at(th.i1, tw.i0, tz.i1)) +
                                    tw.t * ((1 - tz.t) * at(th.i1, tw.i1, tz.i0) +
                                            tz.t * at(th.i1, tw.i1, tz.i1)));
                        out[((c * 2 * H + h) * 2 * W + w) * 2 * D + z] = static_cast<T>(v);
                    }
                }
            }
    });
    detail::install_backward(node, {&x}, [x](detail::TensorImpl& self) mutable {
        const Shape& d = x.dims();
        const std::int64_t C = d[0], H = d[1], W = d[2], D = d[3];
        dispatch_dtype(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            auto dy = self.grad_values<T>();
            auto gx = detail::grad_span<T>(x);
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t h = 0; h < 2 * H; ++h) {
                    const LerpTap th = upsample_tap(h, H);
                    for (std::int64_t w = 0; w < 2 * W; ++w) {
                        const LerpTap tw = upsample_tap(w, W);
                        for (std::int64_t z = 0; z < 2 * D; ++z) {
                            const LerpTap tz = upsample_tap(z, D);
                            const double g = static_cast<double>(
                                dy[((c * 2 * H + h) * 2 * W + w) * 2 * D + z]);
                            auto acc = [&](std::int64_t ih, std::int64_t iw, std::int64_t iz,
                                           double wgt) {
                                gx[((c * H + ih) * W + iw) * D + iz] += static_cast<T>(g * wgt);
                            };
                            acc(th.i0, tw.i0, tz.i0, (1 - th.t) * (1 - tw.t) * (1 - tz.t));
                            acc(th.i0, tw.i0, tz.i1, (1 - th.t) * (1 - tw.t) * tz.t);
                            acc(th.i0, tw.i1, tz.i0, (1 - th.t) * tw.t * (1 - tz.t));
                            acc(th.i0, tw.i1, tz.i1, (1 - th.t) * tw.t * tz.t);
                            acc(th.i1, tw.i0, tz.i0, th.t * (1 - tw.t) * (1 - tz.t));
                            acc(th.i1, tw.i0, tz.i1, th.t * (1 - tw.t) * tz.t);
                            acc(th.i1, tw.i1, tz.i0, th.t * tw.t * (1 - tz.t));
                            acc(th.i1, tw.i1, tz.i1, th.t * tw.t * tz.t);
                        }
                    }
                }
        });
    });
    return Tensor::wrap(node);
}

Tensor global_avg_pool(const Tensor& x) {
    check_4d(x, "global_avg_pool");
    const Shape& d = x.dims();
    const std::int64_t C = d[0], S = d[1] * d[2] * d[3];
    auto node = detail::make_node({C}, x.dtype(), {&x});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = x.data<T>().data();
        T* out = node->values<T>().data();
        for (std::int64_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < S; ++i) acc += static_cast<double>(in[c * S + i]);
            out[c] = static_cast<T>(acc / static_cast<double>(S));
        }
    });
    detail::install_backward(node, {&x}, [x, S](detail::TensorImpl& self) mutable {
        dispatch_dtype(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            auto dy = self.grad_values<T>();
            auto gx = detail::grad_span<T>(x);
            const std::int64_t C = self.numel;
            for (std::int64_t c = 0; c < C; ++c) {
                const T g = static_cast<T>(static_cast<double>(dy[c]) / static_cast<double>(S));
                for (std::int64_t i = 0; i < S; ++i) gx[c * S + i] += g;
            }
        });
    });
    return Tensor::wrap(node);
}

Tensor scale_channels(const Tensor& x, const Tensor& gate) {
    check_4d(x, "scale_channels");
    if (gate.rank() != 1 || gate.dim(0) != x.dim(0))
        throw ShapeError("scale_channels: gate must be [C]");
    if (gate.dtype() != x.dtype()) throw UsageError("scale_channels: mixed dtypes");
    const std::int64_t C = x.dim(0), S = x.numel() / C;
    auto node = detail::make_node(x.dims(), x.dtype(), {&x, &gate});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = x.data<T>().data();
        const T* g = gate.data<T>().data();
        T* out = node->values<T>().data();
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < S; ++i) out[c * S + i] = in[c * S + i] * g[c];
    });
    detail::install_backward(node, {&x, &gate}, [x, gate, C, S](detail::TensorImpl& self) mutable {
        dispatch_dtype(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            auto dy = self.grad_values<T>();
            const T* in = x.data<T>().data();
            const T* g = gate.data<T>().data();
            if (x.requires_grad()) {
                auto gx = detail::grad_span<T>(x);
                for (std::int64_t c = 0; c < C; ++c)
                    for (std::int64_t i = 0; i < S; ++i) gx[c * S + i] += dy[c * S + i] * g[c];
            }
            if (gate.requires_grad()) {
                auto gg = detail::grad_span<T>(gate);
                for (std::int64_t c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < S; ++i)
                        acc += static_cast<double>(dy[c * S + i]) *
                               static_cast<double>(in[c * S + i]);
                    gg[c] += static_cast<T>(acc);
                }
            }
        });
    });
    return Tensor::wrap(node);
}

Tensor box_sum3(const Tensor& x, int radius) {
    check_4d(x, "box_sum3");
    if (radius < 0) throw UsageError("box_sum3: negative radius");
    auto node = detail::make_node(x.dims(), x.dtype(), {&x});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        std::vector<T> tmp;
        box_sum3_raw(x.data<T>().data(), node->values<T>().data(), x.dims(), radius, tmp);
    });
    detail::install_backward(node, {&x}, [x, radius](detail::TensorImpl& self) mutable {
        // Symmetric window with zero boundary: the adjoint is the same box sum.
        dispatch_dtype(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            auto dy = self.grad_values<T>();
            auto gx = detail::grad_span<T>(x);
            std::vector<T> tmp, out(static_cast<std::size_t>(self.numel));
            box_sum3_raw(dy.data(), out.data(), x.dims(), radius, tmp);
            for (std::int64_t i = 0; i < self.numel; ++i) gx[i] += out[i];
        });
    });
    return Tensor::wrap(node);
}

}  // namespace frmlp::ops
