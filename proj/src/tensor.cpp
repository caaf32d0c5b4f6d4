#include "frmlp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace frmlp {

namespace {

thread_local bool g_grad_enabled = true;

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t state = seed ^ (0xa0761d6478bd642fULL * (stream + 1));
    const std::uint64_t a = splitmix64(state);
    const std::uint64_t b = splitmix64(state);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    return Rng(seq);
}

std::int64_t shape_numel(const Shape& dims) {
    std::int64_t n = 1;
    for (auto d : dims) {
        if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(dims));
        n *= d;
    }
    return n;
}

namespace detail {

std::shared_ptr<TensorImpl> make_node(Shape dims, DType dt,
                                      std::initializer_list<const Tensor*> inputs) {
    auto node = std::make_shared<TensorImpl>();
    node->numel = shape_numel(dims);
    node->dims = std::move(dims);
    node->dtype = dt;
    node->data.assign(static_cast<std::size_t>(node->numel) * dtype_size(dt), std::byte{0});
    if (grad_enabled()) {
        for (const Tensor* in : inputs) {
            if (in && in->defined() && in->requires_grad()) {
                node->requires_grad = true;
                break;
            }
        }
    }
    return node;
}

void install_backward(const std::shared_ptr<TensorImpl>& node,
                      std::initializer_list<const Tensor*> inputs,
                      std::function<void(TensorImpl&)> fn) {
    if (!node->requires_grad) return;
    for (const Tensor* in : inputs) {
        if (in && in->defined()) node->parents.push_back(in->node());
    }
    node->backward = std::move(fn);
}

}  // namespace detail

Tensor Tensor::zeros(Shape dims, DType dt, bool requires_grad) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->numel = shape_numel(dims);
    impl->dims = std::move(dims);
    impl->dtype = dt;
    impl->data.assign(static_cast<std::size_t>(impl->numel) * dtype_size(dt), std::byte{0});
    impl->requires_grad = requires_grad;
    return wrap(std::move(impl));
}

Tensor Tensor::full(Shape dims, double value, DType dt, bool requires_grad) {
    Tensor t = zeros(std::move(dims), dt, requires_grad);
    dispatch_dtype(dt, [&](auto tag) {
        using T = decltype(tag);
        auto d = t.impl()->values<T>();
        std::fill(d.begin(), d.end(), static_cast<T>(value));
    });
    return t;
}

Tensor Tensor::from_values(Shape dims, std::span<const double> values, DType dt,
                           bool requires_grad) {
    Tensor t = zeros(std::move(dims), dt, requires_grad);
    if (static_cast<std::int64_t>(values.size()) != t.numel())
        throw ShapeError("from_values: got " + std::to_string(values.size()) + " values for shape " +
                         shape_str(t.dims()));
    dispatch_dtype(dt, [&](auto tag) {
        using T = decltype(tag);
        auto d = t.impl()->values<T>();
        for (std::size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
    });
    return t;
}

Tensor Tensor::scalar(double value, DType dt) { return full({1}, value, dt); }

Tensor Tensor::randn(Shape dims, Rng& rng, double stddev, DType dt, bool requires_grad) {
    Tensor t = zeros(std::move(dims), dt, requires_grad);
    std::normal_distribution<double> dist(0.0, 1.0);
    dispatch_dtype(dt, [&](auto tag) {
        using T = decltype(tag);
        auto d = t.impl()->values<T>();
        for (auto& v : d) v = static_cast<T>(dist(rng) * stddev);
    });
    return t;
}

Tensor Tensor::rand_uniform(Shape dims, Rng& rng, double lo, double hi, DType dt,
                            bool requires_grad) {
    Tensor t = zeros(std::move(dims), dt, requires_grad);
    std::uniform_real_distribution<double> dist(lo, hi);
    dispatch_dtype(dt, [&](auto tag) {
        using T = decltype(tag);
        auto d = t.impl()->values<T>();
        for (auto& v : d) v = static_cast<T>(dist(rng));
    });
    return t;
}

Tensor Tensor::eye(std::int64_t n, DType dt, bool requires_grad) {
    Tensor t = zeros({n, n}, dt, requires_grad);
    dispatch_dtype(dt, [&](auto tag) {
        using T = decltype(tag);
        auto d = t.impl()->values<T>();
        for (std::int64_t i = 0; i < n; ++i) d[static_cast<std::size_t>(i * n + i)] = T(1);
    });
    return t;
}

void Tensor::set_requires_grad(bool on) {
    if (!impl_) throw UsageError("set_requires_grad on undefined tensor");
    if (on && impl_->backward) throw UsageError("requires_grad can only be toggled on leaves");
    impl_->requires_grad = on;
}

double Tensor::value_at(std::int64_t flat) const {
    if (flat < 0 || flat >= numel()) throw UsageError("value_at: index out of range");
    return dispatch_dtype(impl_->dtype, [&](auto tag) -> double {
        using T = decltype(tag);
        return static_cast<double>(impl_->values<T>()[static_cast<std::size_t>(flat)]);
    });
}

void Tensor::set_value_at(std::int64_t flat, double v) {
    if (flat < 0 || flat >= numel()) throw UsageError("set_value_at: index out of range");
    dispatch_dtype(impl_->dtype, [&](auto tag) {
        using T = decltype(tag);
        impl_->values<T>()[static_cast<std::size_t>(flat)] = static_cast<T>(v);
    });
}

double Tensor::item() const {
    if (!impl_ || impl_->numel != 1) throw UsageError("item() requires a scalar tensor");
    return value_at(0);
}

double Tensor::grad_at(std::int64_t flat) const {
    if (!has_grad()) throw UsageError("grad_at: tensor has no gradient");
    if (flat < 0 || flat >= numel()) throw UsageError("grad_at: index out of range");
    return dispatch_dtype(impl_->dtype, [&](auto tag) -> double {
        using T = decltype(tag);
        const T* g = reinterpret_cast<const T*>(impl_->grad.data());
        return static_cast<double>(g[static_cast<std::size_t>(flat)]);
    });
}

void Tensor::zero_grad() {
    if (impl_) {
        impl_->grad.clear();
        impl_->backward_ran = false;
    }
}

Tensor Tensor::clone() const {
    Tensor t = zeros(dims(), dtype());
    std::memcpy(t.impl()->data.data(), impl_->data.data(), impl_->data.size());
    return t;
}

Tensor Tensor::detach() const { return clone(); }

Tensor Tensor::to(DType dt) const {
    if (dt == dtype()) return clone();
    Tensor t = zeros(dims(), dt);
    dispatch_dtype(dtype(), [&](auto src_tag) {
        using S = decltype(src_tag);
        auto src = impl_->values<S>();
        dispatch_dtype(dt, [&](auto dst_tag) {
            using D = decltype(dst_tag);
            auto dst = t.impl()->values<D>();
            for (std::int64_t i = 0; i < numel(); ++i)
                dst[static_cast<std::size_t>(i)] = static_cast<D>(src[static_cast<std::size_t>(i)]);
        });
    });
    return t;
}

void Tensor::backward() {
    if (!impl_ || impl_->numel != 1) throw UsageError("backward() requires a scalar loss");
    if (!std::isfinite(item())) throw DomainError("backward() on a non-finite loss");
    if (impl_->backward_ran)
        throw UsageError("backward() already ran for this scalar; rebuild the graph or zero_grad");
    if (!impl_->requires_grad) throw UsageError("backward() on a tensor with no graph");

    // Iterative post-order DFS for the topological order. The order pins
    // every node for the duration of the sweep.
    std::vector<std::shared_ptr<detail::TensorImpl>> order;
    std::unordered_set<detail::TensorImpl*> visited;
    std::vector<std::pair<std::shared_ptr<detail::TensorImpl>, std::size_t>> stack;
    stack.emplace_back(impl_, 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            const auto& p = node->parents[next++];
            if (p->requires_grad && !visited.count(p.get())) {
                visited.insert(p.get());
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    dispatch_dtype(impl_->dtype, [&](auto tag) {
        using T = decltype(tag);
        impl_->grad_values<T>()[0] = T(1);
    });

    // Reverse topological sweep. Closures, graph edges and intermediate grad
    // buffers are released as soon as they are consumed; leaf grads survive.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* node = it->get();
        if (node->backward) {
            if (!node->grad.empty()) node->backward(*node);
            node->backward = nullptr;
            node->grad.clear();
            node->parents.clear();
        }
    }
    impl_->backward_ran = true;
}

}  // namespace frmlp
