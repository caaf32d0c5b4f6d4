#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "frmlp/common.hpp"

namespace frmlp {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

inline std::size_t dtype_size(DType dt) { return dt == DType::F32 ? 4 : 8; }
inline const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }

using Rng = std::mt19937_64;

/// Derives an independent deterministic generator for (seed, stream).
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

namespace detail {

struct TensorImpl {
    Shape dims;
    DType dtype = DType::F32;
    std::int64_t numel = 0;
    std::vector<std::byte> data;
    bool requires_grad = false;
    std::vector<std::byte> grad;  // empty until first accumulation

    // Reverse-mode graph. `backward` reads this node's grad and accumulates
    // into the parents' grads. Cleared after it runs so captured buffers are
    // released as the sweep proceeds.
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward;
    bool backward_ran = false;

    template <typename T>
    std::span<T> values() {
        return {reinterpret_cast<T*>(data.data()), static_cast<std::size_t>(numel)};
    }
    template <typename T>
    std::span<const T> values() const {
        return {reinterpret_cast<const T*>(data.data()), static_cast<std::size_t>(numel)};
    }
    /// Grad buffer, zero-initialized on first use.
    template <typename T>
    std::span<T> grad_values() {
        if (grad.empty()) grad.assign(data.size(), std::byte{0});
        return {reinterpret_cast<T*>(grad.data()), static_cast<std::size_t>(numel)};
    }
};

}  // namespace detail

/// Whether newly created ops record the computation graph (thread-local).
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev_); }

  private:
    bool prev_;
};

/// Dense row-major tensor handle with reverse-mode autodiff.
///
/// Copying a Tensor copies the handle, not the storage. Data buffers are
/// treated as immutable while a graph referencing them is alive; leaf
/// parameters are updated in place between iterations only.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape dims, DType dt = DType::F32, bool requires_grad = false);
    static Tensor full(Shape dims, double value, DType dt = DType::F32, bool requires_grad = false);
    static Tensor from_values(Shape dims, std::span<const double> values, DType dt = DType::F32,
                              bool requires_grad = false);
    static Tensor scalar(double value, DType dt = DType::F32);
    /// i.i.d. N(0, stddev^2) entries.
    static Tensor randn(Shape dims, Rng& rng, double stddev = 1.0, DType dt = DType::F32,
                        bool requires_grad = false);
    static Tensor rand_uniform(Shape dims, Rng& rng, double lo, double hi, DType dt = DType::F32,
                               bool requires_grad = false);
    /// Identity matrix [n, n].
    static Tensor eye(std::int64_t n, DType dt = DType::F32, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& dims() const { return impl_->dims; }
    std::int64_t dim(std::size_t axis) const { return impl_->dims.at(axis); }
    std::size_t rank() const { return impl_->dims.size(); }
    std::int64_t numel() const { return impl_ ? impl_->numel : 0; }
    DType dtype() const { return impl_->dtype; }
    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool on);

    template <typename T>
    std::span<T> data() {
        check_dtype<T>();
        return impl_->values<T>();
    }
    template <typename T>
    std::span<const T> data() const {
        check_dtype<T>();
        return const_cast<const detail::TensorImpl*>(impl_.get())->values<T>();
    }

    /// Element read as double regardless of dtype (row-major flat index).
    double value_at(std::int64_t flat) const;
    void set_value_at(std::int64_t flat, double v);
    /// Scalar extraction; throws UsageError unless numel() == 1.
    double item() const;

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    /// Gradient read as double (row-major flat index); requires has_grad().
    double grad_at(std::int64_t flat) const;
    template <typename T>
    std::span<T> grad_data() {
        check_dtype<T>();
        return impl_->grad_values<T>();
    }
    void zero_grad();

    /// Deep copy of the values; no graph, keeps dtype, requires_grad off.
    Tensor clone() const;
    /// Same values, cut from the graph. Copies the buffer.
    Tensor detach() const;
    Tensor to(DType dt) const;  // non-graph conversion of raw values

    /// Reverse-mode sweep from a scalar. Populates grads of all reachable
    /// requires_grad leaves. Running it twice on the same scalar without
    /// rebuilding the graph throws UsageError (documented policy: error).
    void backward();

    detail::TensorImpl* impl() { return impl_.get(); }
    const detail::TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& node() const { return impl_; }

    static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl) {
        Tensor t;
        t.impl_ = std::move(impl);
        return t;
    }

  private:
    template <typename T>
    void check_dtype() const {
        static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
        const DType want = std::is_same_v<T, float> ? DType::F32 : DType::F64;
        if (!impl_ || impl_->dtype != want)
            throw UsageError("tensor dtype access mismatch");
    }

    std::shared_ptr<detail::TensorImpl> impl_;
};

std::int64_t shape_numel(const Shape& dims);

/// Invokes f with a value of the scalar type matching dt.
template <typename F>
decltype(auto) dispatch_dtype(DType dt, F&& f) {
    if (dt == DType::F32) return f(float{});
    return f(double{});
}

namespace detail {

/// Grad accumulation access for backward closures; allocates zeroed storage
/// on first use. Centralizes the const-stripping of captured handles.
template <typename T>
std::span<T> grad_span(const Tensor& t) {
    return const_cast<TensorImpl*>(t.impl())->grad_values<T>();
}

/// Allocates a graph-connected result: dims/dtype set, data zero-filled,
/// requires_grad = grad_enabled() && any input requires grad. The caller
/// fills data and, when grad is required, installs the backward closure.
std::shared_ptr<TensorImpl> make_node(Shape dims, DType dt,
                                      std::initializer_list<const Tensor*> inputs);

void install_backward(const std::shared_ptr<TensorImpl>& node,
                      std::initializer_list<const Tensor*> inputs,
                      std::function<void(TensorImpl&)> fn);

}  // namespace detail

}  // namespace frmlp
