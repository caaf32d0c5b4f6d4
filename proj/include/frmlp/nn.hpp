#pragma once

#include <string>
#include <utility>
#include <vector>

#include "frmlp/ops.hpp"
#include "frmlp/tensor.hpp"

namespace frmlp::nn {

enum class Init {
    Glorot,     // uniform(-l, l), l = sqrt(6 / (fan_in + fan_out))
    Zero,       // exact zeros (residual pass-through projections, flow heads)
    Identity,   // square matrices only
    UnitBias,   // zeros for weights is handled separately; bias of ones
};

/// Flat registry of named learnable tensors. Networks register parameters at
/// construction; the optimizer and checkpoint writer walk the list in
/// registration order, which is deterministic for a given config.
class ParamStore {
  public:
    Tensor add(const std::string& name, Tensor t);
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    bool contains(const std::string& name) const;
    Tensor find(const std::string& name) const;
    std::int64_t param_count() const;
    void zero_grad();

  private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

struct Linear {
    Tensor w, b;  // w [in, out]; b [out] (may be undefined for bias-free maps)

    Linear() = default;
    Linear(ParamStore& ps, const std::string& prefix, std::int64_t in, std::int64_t out, Rng& rng,
           DType dt, Init init = Init::Glorot, bool with_bias = true);
    Tensor forward(const Tensor& x) const { return ops::linear(x, w, b); }
};

struct Conv3d {
    Tensor w, b;  // w [Cout,Cin,k,k,k]
    int stride = 1, pad = 0;

    Conv3d() = default;
    Conv3d(ParamStore& ps, const std::string& prefix, std::int64_t cin, std::int64_t cout, int k,
           int stride, int pad, Rng& rng, DType dt, Init init = Init::Glorot);
    Tensor forward(const Tensor& x) const { return ops::conv3d(x, w, b, stride, pad); }
};

struct ConvTranspose3d {
    Tensor w, b;  // w [Cin,Cout,k,k,k]
    int stride = 2;

    ConvTranspose3d() = default;
    ConvTranspose3d(ParamStore& ps, const std::string& prefix, std::int64_t cin, std::int64_t cout,
                    int k, int stride, Rng& rng, DType dt);
    Tensor forward(const Tensor& x) const { return ops::conv_transpose3d(x, w, b, stride); }
};

struct LayerNorm {
    Tensor gamma, beta;

    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& prefix, std::int64_t c, DType dt);
    /// Normalizes the last axis.
    Tensor forward(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }
    /// Normalizes the channel axis of a [C,H,W,D] map.
    Tensor forward_channels(const Tensor& x) const;
};

struct InstanceNorm {
    Tensor gamma, beta;

    InstanceNorm() = default;
    InstanceNorm(ParamStore& ps, const std::string& prefix, std::int64_t c, DType dt);
    Tensor forward(const Tensor& x) const { return ops::instance_norm(x, gamma, beta); }
};

/// [C,H,W,D] -> [H*W*D, C] token rows (channel-last).
Tensor to_tokens(const Tensor& x);
/// Inverse of to_tokens for the given spatial extents.
Tensor from_tokens(const Tensor& tokens, std::int64_t c, std::array<std::int64_t, 3> hwd);

}  // namespace frmlp::nn
