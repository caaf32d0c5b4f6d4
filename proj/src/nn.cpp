#include "frmlp/nn.hpp"

#include <cmath>

namespace frmlp::nn {

Tensor ParamStore::add(const std::string& name, Tensor t) {
    if (contains(name)) throw UsageError("parameter registered twice: " + name);
    t.set_requires_grad(true);
    entries_.emplace_back(name, t);
    return t;
}

bool ParamStore::contains(const std::string& name) const {
    for (const auto& [n, _] : entries_)
        if (n == name) return true;
    return false;
}

Tensor ParamStore::find(const std::string& name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return t;
    throw UsageError("unknown parameter: " + name);
}

std::int64_t ParamStore::param_count() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [_, t] : entries_) const_cast<Tensor&>(t).zero_grad();
}

namespace {

Tensor init_matrix(Shape dims, std::int64_t fan_in, std::int64_t fan_out, Rng& rng, DType dt,
                   Init init) {
    switch (init) {
        case Init::Zero:
            return Tensor::zeros(std::move(dims), dt);
        case Init::Identity: {
            if (dims.size() != 2 || dims[0] != dims[1])
                throw UsageError("identity init needs a square matrix");
            return Tensor::eye(dims[0], dt);
        }
        default: {
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            return Tensor::rand_uniform(std::move(dims), rng, -limit, limit, dt);
        }
    }
}

}  // namespace

Linear::Linear(ParamStore& ps, const std::string& prefix, std::int64_t in, std::int64_t out,
               Rng& rng, DType dt, Init init, bool with_bias) {
    w = ps.add(prefix + ".w", init_matrix({in, out}, in, out, rng, dt, init));
    if (with_bias) {
        if (init == Init::UnitBias)
            b = ps.add(prefix + ".b", Tensor::full({out}, 1.0, dt));
        else
            b = ps.add(prefix + ".b", Tensor::zeros({out}, dt));
    }
}

Conv3d::Conv3d(ParamStore& ps, const std::string& prefix, std::int64_t cin, std::int64_t cout,
               int k, int stride_, int pad_, Rng& rng, DType dt, Init init)
    : stride(stride_), pad(pad_) {
    const std::int64_t k3 = static_cast<std::int64_t>(k) * k * k;
    w = ps.add(prefix + ".w", init_matrix({cout, cin, k, k, k}, cin * k3, cout * k3, rng, dt, init));
    b = ps.add(prefix + ".b", Tensor::zeros({cout}, dt));
}

ConvTranspose3d::ConvTranspose3d(ParamStore& ps, const std::string& prefix, std::int64_t cin,
                                 std::int64_t cout, int k, int stride_, Rng& rng, DType dt)
    : stride(stride_) {
    const std::int64_t k3 = static_cast<std::int64_t>(k) * k * k;
    w = ps.add(prefix + ".w",
               init_matrix({cin, cout, k, k, k}, cin * k3, cout * k3, rng, dt, Init::Glorot));
    b = ps.add(prefix + ".b", Tensor::zeros({cout}, dt));
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, std::int64_t c, DType dt) {
    gamma = ps.add(prefix + ".gamma", Tensor::full({c}, 1.0, dt));
    beta = ps.add(prefix + ".beta", Tensor::zeros({c}, dt));
}

Tensor LayerNorm::forward_channels(const Tensor& x) const {
    if (x.rank() != 4) throw ShapeError("forward_channels expects [C,H,W,D]");
    const Shape d = x.dims();
    Tensor t = to_tokens(x);
    t = ops::layer_norm(t, gamma, beta);
    return from_tokens(t, d[0], {d[1], d[2], d[3]});
}

InstanceNorm::InstanceNorm(ParamStore& ps, const std::string& prefix, std::int64_t c, DType dt) {
    gamma = ps.add(prefix + ".gamma", Tensor::full({c}, 1.0, dt));
    beta = ps.add(prefix + ".beta", Tensor::zeros({c}, dt));
}

Tensor to_tokens(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("to_tokens expects [C,H,W,D]");
    const Shape& d = x.dims();
    Tensor t = ops::permute(x, {1, 2, 3, 0});
    return ops::reshape(t, {d[1] * d[2] * d[3], d[0]});
}

Tensor from_tokens(const Tensor& tokens, std::int64_t c, std::array<std::int64_t, 3> hwd) {
    if (tokens.rank() != 2) throw ShapeError("from_tokens expects [N,C] rows");
    Tensor t = ops::reshape(tokens, {hwd[0], hwd[1], hwd[2], c});
    return ops::permute(t, {3, 0, 1, 2});
}

}  // namespace frmlp::nn
