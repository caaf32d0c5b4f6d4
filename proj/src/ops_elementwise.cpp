#include <cmath>

#include "frmlp/ops.hpp"

namespace frmlp::ops {

namespace {

void check_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype())
        throw UsageError(std::string(op) + ": mixed dtypes");
    if (a.dims() != b.dims())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.dims()) + " vs " +
                         shape_str(b.dims()));
}

// f: value -> value. df: (x, y) -> local derivative dy/dx.
template <typename F, typename DF>
Tensor unary_op(const Tensor& x, F f, DF df) {
    auto node = detail::make_node(x.dims(), x.dtype(), {&x});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto in = x.data<T>();
        auto out = node->values<T>();
        const std::int64_t n = x.numel();
        for (std::int64_t i = 0; i < n; ++i)
            out[i] = static_cast<T>(f(static_cast<double>(in[i])));
    });
    detail::install_backward(node, {&x}, [x, df](detail::TensorImpl& self) mutable {
        dispatch_dtype(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            auto dy = self.grad_values<T>();
            auto y = self.values<T>();
            auto in = x.data<T>();
            auto gx = detail::grad_span<T>(x);
            const std::int64_t n = self.numel;
            for (std::int64_t i = 0; i < n; ++i)
                gx[i] += static_cast<T>(df(static_cast<double>(in[i]), static_cast<double>(y[i])) *
                                        static_cast<double>(dy[i]));
        });
    });
    return Tensor::wrap(node);
}

// fwd: (a, b) -> value; dfa/dfb: (a, b, y) -> local derivative.
template <typename F, typename DA, typename DB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
    check_same(a, b, name);
    auto node = detail::make_node(a.dims(), a.dtype(), {&a, &b});
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto av = a.data<T>();
        auto bv = b.data<T>();
        auto out = node->values<T>();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i)
            out[i] = static_cast<T>(f(static_cast<double>(av[i]), static_cast<double>(bv[i])));
    });
    detail::install_backward(node, {&a, &b}, [a, b, dfa, dfb](detail::TensorImpl& self) mutable {
        dispatch_dtype(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            auto dy = self.grad_values<T>();
            auto y = self.values<T>();
            auto av = a.data<T>();
            auto bv = b.data<T>();
            const std::int64_t n = self.numel;
            if (a.requires_grad()) {
                auto ga = detail::grad_span<T>(a);
                for (std::int64_t i = 0; i < n; ++i)
                    ga[i] += static_cast<T>(dfa(static_cast<double>(av[i]),
                                                static_cast<double>(bv[i]),
                                                static_cast<double>(y[i])) *
                                            static_cast<double>(dy[i]));
            }
            if (b.requires_grad()) {
                auto gb = detail::grad_span<T>(b);
                for (std::int64_t i = 0; i < n; ++i)
                    gb[i] += static_cast<T>(dfb(static_cast<double>(av[i]),
                                                static_cast<double>(bv[i]),
                                                static_cast<double>(y[i])) *
                                            static_cast<double>(dy[i]));
            }
        });
    });
    return Tensor::wrap(node);
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double out) { return -out / y; });
}

Tensor affine(const Tensor& x, double scale_factor, double shift) {
    return unary_op(
        x, [=](double v) { return scale_factor * v + shift; },
        [=](double, double) { return scale_factor; });
}

Tensor scale(const Tensor& x, double s) { return affine(x, s, 0.0); }

Tensor neg(const Tensor& x) { return affine(x, -1.0, 0.0); }

Tensor relu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
    return unary_op(
        x, [=](double v) { return v > 0.0 ? v : slope * v; },
        [=](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor gelu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
        [](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            return cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
        });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        for (T v : x.data<T>())
            if (v < T(0)) throw DomainError("sqrt of a negative value");
    });
    return unary_op(
        x, [](double v) { return std::sqrt(v); },
        [](double, double y) { return 0.5 / y; });
}

Tensor log(const Tensor& x) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        for (T v : x.data<T>())
            if (v <= T(0)) throw DomainError("log requires positive input");
    });
    return unary_op(
        x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (lo > hi) throw UsageError("clamp: lo > hi");
    return unary_op(
        x, [=](double v) { return v < lo ? lo : (v > hi ? hi : v); },
        [=](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor pow_const(const Tensor& x, double p) {
    const bool integral = p >= 0.0 && p == std::floor(p);
    if (!integral) {
        dispatch_dtype(x.dtype(), [&](auto tag) {
            using T = decltype(tag);
            for (T v : x.data<T>())
                if (v <= T(0)) throw DomainError("pow_const with non-integer exponent requires positive input");
        });
    }
    return unary_op(
        x, [=](double v) { return std::pow(v, p); },
        [=](double v, double) { return p == 0.0 ? 0.0 : p * std::pow(v, p - 1.0); });
}

Tensor sum(const Tensor& x) {
    auto node = detail::make_node({1}, x.dtype(), {&x});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        double acc = 0.0;  // fixed-order accumulation in double
        for (T v : x.data<T>()) acc += static_cast<double>(v);
        node->values<T>()[0] = static_cast<T>(acc);
    });
    detail::install_backward(node, {&x}, [x](detail::TensorImpl& self) mutable {
        dispatch_dtype(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            const T g = self.grad_values<T>()[0];
            auto gx = detail::grad_span<T>(x);
            for (auto& v : gx) v += g;
        });
    });
    return Tensor::wrap(node);
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace frmlp::ops
