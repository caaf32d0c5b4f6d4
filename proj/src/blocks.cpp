#include "frmlp/blocks.hpp"

#include <numeric>

namespace frmlp {

namespace {

constexpr std::array<std::int64_t, 5> kBlockSize{8, 8, 6, 6, 4};
constexpr std::array<std::int64_t, 5> kGridSize{8, 8, 6, 6, 4};
constexpr std::array<std::int64_t, 5> kInnerRegion{8, 8, 6, 6, 4};
constexpr std::array<std::int64_t, 5> kCrossRegion{4, 4, 3, 3, 2};
constexpr std::array<std::int64_t, 5> kWindowSize{8, 8, 6, 6, 4};
constexpr std::array<std::int64_t, 5> kShiftSize{4, 4, 3, 3, 2};

void check_feature_map(const Tensor& x, const char* who) {
    if (x.rank() != 4) throw ShapeError(std::string(who) + ": expected [C,H,W,D]");
}

}  // namespace

BlockKind block_kind_from_string(const std::string& s) {
    if (s == "gmlp") return BlockKind::Gmlp;
    if (s == "hire") return BlockKind::Hire;
    if (s == "smlp") return BlockKind::Smlp;
    if (s == "swinmlp") return BlockKind::SwinMlp;
    if (s == "conv") return BlockKind::Conv;
    throw ConfigError("unknown block kind: " + s);
}

const char* block_kind_name(BlockKind k) {
    switch (k) {
        case BlockKind::Gmlp: return "gmlp";
        case BlockKind::Hire: return "hire";
        case BlockKind::Smlp: return "smlp";
        case BlockKind::SwinMlp: return "swinmlp";
        case BlockKind::Conv: return "conv";
    }
    return "?";
}

void BlockConfig::validate() const {
    if (stage_index < 1 || stage_index > 5) throw ConfigError("stage_index must be in 1..5");
    if (channels <= 0) throw ConfigError("channels must be positive");
    switch (kind) {
        case BlockKind::Gmlp:
            if (block_size <= 0 || grid_size <= 0)
                throw ConfigError("gmlp partition sizes must be positive");
            if (channels % 2) throw ConfigError("gmlp needs an even channel count");
            break;
        case BlockKind::Hire:
            if (inner_region <= 0 || cross_region <= 0)
                throw ConfigError("hire region sizes must be positive");
            break;
        case BlockKind::SwinMlp:
            if (window <= 0 || shift < 0) throw ConfigError("swinmlp window/shift invalid");
            if (shift >= window) throw ConfigError("swinmlp shift must be smaller than the window");
            if (channels % kSwinMlpHeadWidth)
                throw ConfigError("swinmlp channels must be divisible by the head width");
            break;
        case BlockKind::Smlp:
            if (spatial_dims[0] <= 0 || spatial_dims[1] <= 0 || spatial_dims[2] <= 0)
                throw ConfigError("smlp requires fixed spatial extents at configuration time");
            break;
        case BlockKind::Conv: break;
    }
}

BlockConfig stage_block_config(BlockKind kind, int stage_index, std::int64_t channels,
                               std::array<std::int64_t, 3> dims, int block_index) {
    if (stage_index < 1 || stage_index > 5) throw ConfigError("stage_index must be in 1..5");
    BlockConfig cfg;
    cfg.kind = kind;
    cfg.stage_index = stage_index;
    cfg.channels = channels;
    cfg.spatial_dims = dims;
    cfg.block_index = block_index;
    const int i = stage_index - 1;
    cfg.block_size = kBlockSize[i];
    cfg.grid_size = kGridSize[i];
    cfg.inner_region = kInnerRegion[i];
    cfg.cross_region = kCrossRegion[i];
    cfg.window = kWindowSize[i];
    cfg.shift = kShiftSize[i];
    cfg.validate();
    return cfg;
}

// ---- partitions --------------------------------------------------------------

namespace {

struct PartitionGeometry {
    std::int64_t C, H, W, D;
    std::int64_t th, tw, td;  // tokens per axis within a group
    std::int64_t gh, gw, gd;  // groups per axis
    std::int64_t sh, sw, sd;  // voxel stride between consecutive tokens
};

PartitionGeometry partition_geometry(const Shape& chwd, std::int64_t size, bool dilated,
                                     const char* who) {
    PartitionGeometry pg;
    pg.C = chwd[0];
    pg.H = chwd[1];
    pg.W = chwd[2];
    pg.D = chwd[3];
    if (size <= 0) throw UsageError(std::string(who) + ": size must be positive");
    if (pg.H % size || pg.W % size || pg.D % size)
        throw UsageError(std::string(who) + ": extents " + shape_str(chwd) +
                         " not a multiple of " + std::to_string(size));
    pg.th = pg.tw = pg.td = size;
    if (dilated) {
        // g^3 tokens per group, spaced extent/g apart; groups are base offsets.
        pg.sh = pg.H / size;
        pg.sw = pg.W / size;
        pg.sd = pg.D / size;
        pg.gh = pg.sh;
        pg.gw = pg.sw;
        pg.gd = pg.sd;
    } else {
        pg.sh = pg.sw = pg.sd = 1;
        pg.gh = pg.H / size;
        pg.gw = pg.W / size;
        pg.gd = pg.D / size;
    }
    return pg;
}

// Voxel index of token (ty,tx,tz) of group (gy,gx,gz) for channel c.
inline std::int64_t voxel_index(const PartitionGeometry& pg, bool dilated, std::int64_t c,
                                std::int64_t gy, std::int64_t gx, std::int64_t gz, std::int64_t ty,
                                std::int64_t tx, std::int64_t tz) {
    std::int64_t y, x, z;
    if (dilated) {
        y = ty * pg.sh + gy;
        x = tx * pg.sw + gx;
        z = tz * pg.sd + gz;
    } else {
        y = gy * pg.th + ty;
        x = gx * pg.tw + tx;
        z = gz * pg.td + tz;
    }
    return ((c * pg.H + y) * pg.W + x) * pg.D + z;
}

template <bool kDilated>
Tensor partition_impl(const Tensor& x, std::int64_t size, const char* who) {
    check_feature_map(x, who);
    const PartitionGeometry pg = partition_geometry(x.dims(), size, kDilated, who);
    const std::int64_t G = pg.gh * pg.gw * pg.gd;
    const std::int64_t T = size * size * size;
    auto node = detail::make_node({G, T, pg.C}, x.dtype(), {&x});
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using TV = decltype(tag);
        const TV* in = x.data<TV>().data();
        TV* out = node->values<TV>().data();
        std::int64_t g = 0;
        for (std::int64_t gy = 0; gy < pg.gh; ++gy)
            for (std::int64_t gx = 0; gx < pg.gw; ++gx)
                for (std::int64_t gz = 0; gz < pg.gd; ++gz, ++g) {
                    std::int64_t t = 0;
                    for (std::int64_t ty = 0; ty < pg.th; ++ty)
                        for (std::int64_t tx = 0; tx < pg.tw; ++tx)
                            for (std::int64_t tz = 0; tz < pg.td; ++tz, ++t)
                                for (std::int64_t c = 0; c < pg.C; ++c)
                                    out[(g * T + t) * pg.C + c] =
                                        in[voxel_index(pg, kDilated, c, gy, gx, gz, ty, tx, tz)];
                }
    });
    detail::install_backward(node, {&x}, [x, pg, size](detail::TensorImpl& self) mutable {
        const std::int64_t T = size * size * size;
        dispatch_dtype(self.dtype, [&](auto tag) {
            using TV = decltype(tag);
            auto dy = self.grad_values<TV>();
            auto gx_ = detail::grad_span<TV>(x);
            std::int64_t g = 0;
            for (std::int64_t gy = 0; gy < pg.gh; ++gy)
                for (std::int64_t gx = 0; gx < pg.gw; ++gx)
                    for (std::int64_t gz = 0; gz < pg.gd; ++gz, ++g) {
                        std::int64_t t = 0;
                        for (std::int64_t ty = 0; ty < pg.th; ++ty)
                            for (std::int64_t tx = 0; tx < pg.tw; ++tx)
                                for (std::int64_t tz = 0; tz < pg.td; ++tz, ++t)
                                    for (std::int64_t c = 0; c < pg.C; ++c)
                                        gx_[voxel_index(pg, kDilated, c, gy, gx, gz, ty, tx, tz)] +=
                                            dy[(g * T + t) * pg.C + c];
                    }
        });
    });
    return Tensor::wrap(node);
}

template <bool kDilated>
Tensor unpartition_impl(const Tensor& tokens, const Shape& chwd, std::int64_t size,
                        const char* who) {
    if (tokens.rank() != 3) throw ShapeError(std::string(who) + ": expected [G,T,C] tokens");
    if (chwd.size() != 4) throw ShapeError(std::string(who) + ": target dims must be [C,H,W,D]");
    const PartitionGeometry pg = partition_geometry(chwd, size, kDilated, who);
    const std::int64_t G = pg.gh * pg.gw * pg.gd;
    const std::int64_t T = size * size * size;
    if (tokens.dim(0) != G || tokens.dim(1) != T || tokens.dim(2) != pg.C)
        throw ShapeError(std::string(who) + ": token shape " + shape_str(tokens.dims()) +
                         " does not match target " + shape_str(chwd));
    auto node = detail::make_node(chwd, tokens.dtype(), {&tokens});
    dispatch_dtype(tokens.dtype(), [&](auto tag) {
        using TV = decltype(tag);
        const TV* in = tokens.data<TV>().data();
        TV* out = node->values<TV>().data();
        std::int64_t g = 0;
        for (std::int64_t gy = 0; gy < pg.gh; ++gy)
            for (std::int64_t gx = 0; gx < pg.gw; ++gx)
                for (std::int64_t gz = 0; gz < pg.gd; ++gz, ++g) {
                    std::int64_t t = 0;
                    for (std::int64_t ty = 0; ty < pg.th; ++ty)
                        for (std::int64_t tx = 0; tx < pg.tw; ++tx)
                            for (std::int64_t tz = 0; tz < pg.td; ++tz, ++t)
                                for (std::int64_t c = 0; c < pg.C; ++c)
                                    out[voxel_index(pg, kDilated, c, gy, gx, gz, ty, tx, tz)] =
                                        in[(g * T + t) * pg.C + c];
                }
    });
    detail::install_backward(node, {&tokens}, [tokens, pg, size](detail::TensorImpl& self) mutable {
        const std::int64_t T = size * size * size;
        dispatch_dtype(self.dtype, [&](auto tag) {
            using TV = decltype(tag);
            auto dy = self.grad_values<TV>();
            auto gt = detail::grad_span<TV>(tokens);
            std::int64_t g = 0;
            for (std::int64_t gy = 0; gy < pg.gh; ++gy)
                for (std::int64_t gx = 0; gx < pg.gw; ++gx)
                    for (std::int64_t gz = 0; gz < pg.gd; ++gz, ++g) {
                        std::int64_t t = 0;
                        for (std::int64_t ty = 0; ty < pg.th; ++ty)
                            for (std::int64_t tx = 0; tx < pg.tw; ++tx)
                                for (std::int64_t tz = 0; tz < pg.td; ++tz, ++t)
                                    for (std::int64_t c = 0; c < pg.C; ++c)
                                        gt[(g * T + t) * pg.C + c] +=
                                            dy[voxel_index(pg, kDilated, c, gy, gx, gz, ty, tx, tz)];
                    }
        });
    });
    return Tensor::wrap(node);
}

}  // namespace

Tensor block_partition(const Tensor& x, std::int64_t b) {
    return partition_impl<false>(x, b, "block_partition");
}
Tensor block_unpartition(const Tensor& tokens, const Shape& chwd, std::int64_t b) {
    return unpartition_impl<false>(tokens, chwd, b, "block_unpartition");
}
Tensor grid_partition(const Tensor& x, std::int64_t g) {
    return partition_impl<true>(x, g, "grid_partition");
}
Tensor grid_unpartition(const Tensor& tokens, const Shape& chwd, std::int64_t g) {
    return unpartition_impl<true>(tokens, chwd, g, "grid_unpartition");
}

std::pair<Tensor, Shape> pad_to_multiple(const Tensor& x, std::array<std::int64_t, 3> m) {
    check_feature_map(x, "pad_to_multiple");
    for (auto v : m)
        if (v <= 0) throw UsageError("pad_to_multiple: multiples must be positive");
    const Shape orig = x.dims();
    std::array<std::int64_t, 3> hi{};
    bool any = false;
    for (int i = 0; i < 3; ++i) {
        const std::int64_t e = orig[i + 1];
        const std::int64_t target = (e + m[i] - 1) / m[i] * m[i];
        hi[i] = target - e;
        any = any || hi[i] > 0;
    }
    if (!any) return {x, orig};
    return {ops::pad_spatial(x, {0, 0, 0}, hi), orig};
}

Tensor crop_to(const Tensor& x, const Shape& chwd) {
    if (x.dims() == chwd) return x;
    return ops::crop_spatial(x, {0, 0, 0}, {chwd[1], chwd[2], chwd[3]});
}

// ---- spatial gating ------------------------------------------------------------

SpatialGatingUnit::SpatialGatingUnit(nn::ParamStore& ps, const std::string& prefix,
                                     std::int64_t channels, std::int64_t tokens, Rng& rng, DType dt)
    : norm(ps, prefix + ".norm", channels / 2, dt) {
    if (channels % 2) throw ConfigError("spatial gating needs an even channel count");
    mix.w = ps.add(prefix + ".mix.w", Tensor::zeros({tokens, tokens}, dt));
    mix.b = ps.add(prefix + ".mix.b", Tensor::full({tokens}, 1.0, dt));
    (void)rng;
}

Tensor SpatialGatingUnit::forward(const Tensor& tokens) const {
    if (tokens.rank() != 3) throw ShapeError("spatial gating expects [G,T,C]");
    const std::int64_t G = tokens.dim(0), T = tokens.dim(1), C = tokens.dim(2);
    if (C % 2) throw ConfigError("spatial gating needs an even channel count");
    if (mix.w.dim(0) != T) throw ShapeError("spatial gating configured for a different token count");
    Tensor z1 = ops::narrow(tokens, 2, 0, C / 2);
    Tensor z2 = ops::narrow(tokens, 2, C / 2, C / 2);
    z2 = ops::layer_norm(z2, norm.gamma, norm.beta);
    // Learned token mix along T, shared across channels.
    Tensor rows = ops::permute(z2, {0, 2, 1});           // [G, C/2, T]
    rows = ops::reshape(rows, {G * (C / 2), T});
    rows = mix.forward(rows);
    rows = ops::reshape(rows, {G, C / 2, T});
    z2 = ops::permute(rows, {0, 2, 1});
    return ops::mul(z1, z2);
}

// ---- gmlp ----------------------------------------------------------------------

GmlpBlock::GmlpBlock(nn::ParamStore& ps, const std::string& prefix, const BlockConfig& cfg_,
                     Rng& rng, DType dt)
    : cfg(cfg_),
      norm(ps, prefix + ".norm", cfg_.channels, dt),
      expand(ps, prefix + ".expand", cfg_.channels, 2 * cfg_.channels, rng, dt),
      gate_block(ps, prefix + ".gate_block", cfg_.channels,
                 cfg_.block_size * cfg_.block_size * cfg_.block_size, rng, dt),
      gate_grid(ps, prefix + ".gate_grid", cfg_.channels,
                cfg_.grid_size * cfg_.grid_size * cfg_.grid_size, rng, dt),
      project(ps, prefix + ".project", cfg_.channels, cfg_.channels, rng, dt, nn::Init::Zero) {
    cfg.validate();
}

Tensor GmlpBlock::forward(const Tensor& x) const {
    check_feature_map(x, "gmlp block");
    const std::int64_t C = cfg.channels;
    const std::int64_t m = std::lcm(cfg.block_size, cfg.grid_size);
    auto [xp, orig] = pad_to_multiple(x, {m, m, m});
    const Shape pd = xp.dims();
    const std::array<std::int64_t, 3> hwd{pd[1], pd[2], pd[3]};

    Tensor t = nn::to_tokens(xp);
    t = norm.forward(t);
    t = expand.forward(t);  // [N, 2C]
    Tensor y = nn::from_tokens(t, 2 * C, hwd);
    Tensor half_a = ops::narrow(y, 0, 0, C);
    Tensor half_b = ops::narrow(y, 0, C, C);

    Shape half_dims{C / 2, pd[1], pd[2], pd[3]};
    Tensor a = block_unpartition(gate_block.forward(block_partition(half_a, cfg.block_size)),
                                 half_dims, cfg.block_size);
    Tensor b = grid_unpartition(gate_grid.forward(grid_partition(half_b, cfg.grid_size)),
                                half_dims, cfg.grid_size);

    std::array<Tensor, 2> parts{a, b};
    Tensor cat = ops::concat(std::span<const Tensor>(parts.data(), parts.size()), 0);  // [C,...]
    Tensor out = nn::from_tokens(project.forward(nn::to_tokens(cat)), C, hwd);
    return ops::add(x, crop_to(out, orig));
}

// ---- hire ----------------------------------------------------------------------

HireBlock::HireBlock(nn::ParamStore& ps, const std::string& prefix, const BlockConfig& cfg_,
                     Rng& rng, DType dt)
    : cfg(cfg_), shifted(cfg_.block_index % 2 == 1) {
    cfg.validate();
    const std::int64_t cr = cfg.channels * cfg.inner_region;
    fc_h = nn::Linear(ps, prefix + ".fc_h", cr, cr, rng, dt, nn::Init::Zero);
    fc_w = nn::Linear(ps, prefix + ".fc_w", cr, cr, rng, dt, nn::Init::Zero);
    fc_d = nn::Linear(ps, prefix + ".fc_d", cr, cr, rng, dt, nn::Init::Zero);
    fc_channel = nn::Linear(ps, prefix + ".fc_channel", cfg.channels, cfg.channels, rng, dt,
                            nn::Init::Zero);
}

namespace {

// Folds regions of `r` consecutive positions along `axis` into channels,
// applies fc on the [r*C] features, and unfolds. Cyclic shift by `s` first
// (and back) when requested.
Tensor hire_axis_branch(const Tensor& x, std::size_t axis, std::int64_t r, std::int64_t s,
                        const nn::Linear& fc) {
    const Shape d = x.dims();
    const std::int64_t C = d[0], E = d[axis];
    if (E % r)
        throw UsageError("hire: axis extent " + std::to_string(E) + " not a multiple of region " +
                         std::to_string(r));
    Tensor t = s != 0 ? ops::roll(x, axis, s) : x;

    // Bring the folded axis to position 1: [C, E, A, B]
    std::vector<std::size_t> to{0, axis};
    for (std::size_t j = 1; j < 4; ++j)
        if (j != axis) to.push_back(j);
    t = ops::permute(t, to);
    const std::int64_t A = t.dim(2), B = t.dim(3);
    const std::int64_t nr = E / r;
    t = ops::reshape(t, {C, nr, r, A, B});
    t = ops::permute(t, {1, 3, 4, 2, 0});  // [nr, A, B, r, C]
    t = ops::reshape(t, {nr * A * B, r * C});
    t = fc.forward(t);
    t = ops::reshape(t, {nr, A, B, r, C});
    t = ops::permute(t, {4, 0, 3, 1, 2});  // [C, nr, r, A, B]
    t = ops::reshape(t, {C, E, A, B});
    // Undo the axis move.
    std::vector<std::size_t> back(4);
    for (std::size_t j = 0; j < 4; ++j) back[to[j]] = j;
    t = ops::permute(t, back);
    return s != 0 ? ops::roll(t, axis, -s) : t;
}

}  // namespace

Tensor HireBlock::forward(const Tensor& x) const {
    check_feature_map(x, "hire block");
    const std::int64_t r = cfg.inner_region;
    const std::int64_t s = shifted ? cfg.cross_region : 0;
    auto [xp, orig] = pad_to_multiple(x, {r, r, r});
    const Shape pd = xp.dims();

    Tensor bh = hire_axis_branch(xp, 1, r, s, fc_h);
    Tensor bw = hire_axis_branch(xp, 2, r, s, fc_w);
    Tensor bd = hire_axis_branch(xp, 3, r, s, fc_d);
    Tensor bc = nn::from_tokens(fc_channel.forward(nn::to_tokens(xp)), cfg.channels,
                                {pd[1], pd[2], pd[3]});
    Tensor sum = ops::add(ops::add(bh, bw), ops::add(bd, bc));
    return ops::add(x, crop_to(sum, orig));
}

// ---- smlp ----------------------------------------------------------------------

SmlpBlock::SmlpBlock(nn::ParamStore& ps, const std::string& prefix, const BlockConfig& cfg_,
                     Rng& rng, DType dt)
    : cfg(cfg_) {
    cfg.validate();
    mix_h = nn::Linear(ps, prefix + ".mix_h", cfg.spatial_dims[0], cfg.spatial_dims[0], rng, dt,
                       nn::Init::Identity, /*with_bias=*/false);
    mix_w = nn::Linear(ps, prefix + ".mix_w", cfg.spatial_dims[1], cfg.spatial_dims[1], rng, dt,
                       nn::Init::Identity, false);
    mix_d = nn::Linear(ps, prefix + ".mix_d", cfg.spatial_dims[2], cfg.spatial_dims[2], rng, dt,
                       nn::Init::Identity, false);
    fuse = nn::Linear(ps, prefix + ".fuse", 4 * cfg.channels, cfg.channels, rng, dt,
                      nn::Init::Zero);
}

namespace {

// Applies a learned [E,E] map along one spatial axis, shared over the rest.
Tensor smlp_axis_mix(const Tensor& x, std::size_t axis, const nn::Linear& mix) {
    std::vector<std::size_t> to;
    for (std::size_t j = 0; j < 4; ++j)
        if (j != axis) to.push_back(j);
    to.push_back(axis);  // axis last
    Tensor t = ops::permute(x, to);
    const Shape td = t.dims();
    const std::int64_t E = td[3];
    t = ops::reshape(t, {td[0] * td[1] * td[2], E});
    t = mix.forward(t);
    t = ops::reshape(t, {td[0], td[1], td[2], E});
    std::vector<std::size_t> back(4);
    for (std::size_t j = 0; j < 4; ++j) back[to[j]] = j;
    return ops::permute(t, back);
}

}  // namespace

Tensor SmlpBlock::forward(const Tensor& x) const {
    check_feature_map(x, "smlp block");
    const Shape& d = x.dims();
    if (d[1] != cfg.spatial_dims[0] || d[2] != cfg.spatial_dims[1] || d[3] != cfg.spatial_dims[2])
        throw ShapeError("smlp block configured for extents [" + std::to_string(cfg.spatial_dims[0]) +
                         ", " + std::to_string(cfg.spatial_dims[1]) + ", " +
                         std::to_string(cfg.spatial_dims[2]) + "], got " + shape_str(d));
    Tensor bh = smlp_axis_mix(x, 1, mix_h);
    Tensor bw = smlp_axis_mix(x, 2, mix_w);
    Tensor bd = smlp_axis_mix(x, 3, mix_d);
    std::array<Tensor, 4> parts{bh, bw, bd, x};
    Tensor cat = ops::concat(std::span<const Tensor>(parts.data(), parts.size()), 0);  // [4C,...]
    Tensor fused = nn::from_tokens(fuse.forward(nn::to_tokens(cat)), cfg.channels,
                                   {d[1], d[2], d[3]});
    return ops::add(x, fused);
}

// ---- swin-mlp ------------------------------------------------------------------

SwinMlpBlock::SwinMlpBlock(nn::ParamStore& ps, const std::string& prefix, const BlockConfig& cfg_,
                           Rng& rng, DType dt)
    : cfg(cfg_),
      shifted(cfg_.block_index % 2 == 1),
      norm1(ps, prefix + ".norm1", cfg_.channels, dt),
      norm2(ps, prefix + ".norm2", cfg_.channels, dt) {
    cfg.validate();
    const std::int64_t T = cfg.window * cfg.window * cfg.window;
    const std::int64_t heads = cfg.channels / kSwinMlpHeadWidth;
    head_mix.reserve(static_cast<std::size_t>(heads));
    for (std::int64_t h = 0; h < heads; ++h)
        head_mix.emplace_back(ps, prefix + ".head" + std::to_string(h), T, T, rng, dt,
                              nn::Init::Zero);
    mlp_expand = nn::Linear(ps, prefix + ".mlp_expand", cfg.channels, 4 * cfg.channels, rng, dt);
    mlp_project = nn::Linear(ps, prefix + ".mlp_project", 4 * cfg.channels, cfg.channels, rng, dt,
                             nn::Init::Zero);
}

Tensor SwinMlpBlock::forward(const Tensor& x) const {
    check_feature_map(x, "swinmlp block");
    const std::int64_t C = cfg.channels, w = cfg.window;
    const std::int64_t hw = kSwinMlpHeadWidth;
    const std::int64_t heads = C / hw;
    const std::int64_t s = shifted ? cfg.shift : 0;

    // Sub-layer 1: shifted-window grouped token FC with pre-norm and residual.
    Tensor t = norm1.forward_channels(x);
    auto [tp, orig] = pad_to_multiple(t, {w, w, w});
    const Shape pd = tp.dims();
    if (s != 0) {
        tp = ops::roll(tp, 1, -s);
        tp = ops::roll(tp, 2, -s);
        tp = ops::roll(tp, 3, -s);
    }
    Tensor tokens = block_partition(tp, w);  // [G, T, C]
    const std::int64_t G = tokens.dim(0), T = tokens.dim(1);
    std::vector<Tensor> mixed;
    mixed.reserve(static_cast<std::size_t>(heads));
    for (std::int64_t h = 0; h < heads; ++h) {
        Tensor sub = ops::narrow(tokens, 2, h * hw, hw);     // [G, T, hw]
        Tensor rows = ops::permute(sub, {0, 2, 1});          // [G, hw, T]
        rows = ops::reshape(rows, {G * hw, T});
        rows = head_mix[static_cast<std::size_t>(h)].forward(rows);
        rows = ops::reshape(rows, {G, hw, T});
        mixed.push_back(ops::permute(rows, {0, 2, 1}));
    }
    Tensor cat = ops::concat(std::span<const Tensor>(mixed.data(), mixed.size()), 2);
    Tensor y = block_unpartition(cat, pd, w);
    if (s != 0) {
        y = ops::roll(y, 1, s);
        y = ops::roll(y, 2, s);
        y = ops::roll(y, 3, s);
    }
    Tensor y1 = ops::add(x, crop_to(y, orig));

    // Sub-layer 2: channel MLP (expand x4, GELU, zero-init projection).
    Tensor u = norm2.forward_channels(y1);
    Tensor rows = nn::to_tokens(u);
    rows = mlp_expand.forward(rows);
    rows = ops::gelu(rows);
    rows = mlp_project.forward(rows);
    const Shape& d = x.dims();
    Tensor mlp = nn::from_tokens(rows, C, {d[1], d[2], d[3]});
    return ops::add(y1, mlp);
}

// ---- residual conv block ---------------------------------------------------------

ResidualConvBlock::ResidualConvBlock(nn::ParamStore& ps, const std::string& prefix,
                                     std::int64_t channels, Rng& rng, DType dt)
    : conv1(ps, prefix + ".conv1", channels, channels, 3, 1, 1, rng, dt),
      conv2(ps, prefix + ".conv2", channels, channels, 3, 1, 1, rng, dt, nn::Init::Zero),
      norm1(ps, prefix + ".norm1", channels, dt),
      norm2(ps, prefix + ".norm2", channels, dt) {}

Tensor ResidualConvBlock::forward(const Tensor& x) const {
    Tensor t = conv1.forward(x);
    t = norm1.forward(t);
    t = ops::relu(t);
    t = conv2.forward(t);
    t = norm2.forward(t);
    return ops::add(x, t);  // shortcut after the conv path, no post-activation
}

// ---- channel attention -----------------------------------------------------------

ChannelAttention::ChannelAttention(nn::ParamStore& ps, const std::string& prefix,
                                   std::int64_t channels, Rng& rng, DType dt)
    : norm(ps, prefix + ".norm", channels, dt),
      conv1(ps, prefix + ".conv1", channels, channels, 3, 1, 1, rng, dt),
      conv2(ps, prefix + ".conv2", channels, channels, 3, 1, 1, rng, dt, nn::Init::Zero),
      se_reduce(ps, prefix + ".se_reduce", channels, channels / kSeReduction, rng, dt),
      se_expand(ps, prefix + ".se_expand", channels / kSeReduction, channels, rng, dt) {
    if (channels % kSeReduction)
        throw ConfigError("channel attention needs channels divisible by the SE reduction");
}

Tensor ChannelAttention::forward(const Tensor& x) const {
    check_feature_map(x, "channel attention");
    Tensor t = norm.forward_channels(x);
    t = conv1.forward(t);
    t = ops::leaky_relu(t, 0.01);
    t = conv2.forward(t);
    Tensor g = ops::global_avg_pool(t);               // [C]
    g = ops::reshape(g, {1, x.dim(0)});
    g = se_reduce.forward(g);
    g = ops::relu(g);
    g = se_expand.forward(g);
    g = ops::sigmoid(g);
    g = ops::reshape(g, {x.dim(0)});
    Tensor gated = ops::scale_channels(t, g);
    return ops::add(x, gated);
}

std::unique_ptr<Block> make_block(nn::ParamStore& ps, const std::string& prefix,
                                  const BlockConfig& cfg, Rng& rng, DType dt) {
    cfg.validate();
    switch (cfg.kind) {
        case BlockKind::Gmlp: return std::make_unique<GmlpBlock>(ps, prefix, cfg, rng, dt);
        case BlockKind::Hire: return std::make_unique<HireBlock>(ps, prefix, cfg, rng, dt);
        case BlockKind::Smlp: return std::make_unique<SmlpBlock>(ps, prefix, cfg, rng, dt);
        case BlockKind::SwinMlp: return std::make_unique<SwinMlpBlock>(ps, prefix, cfg, rng, dt);
        case BlockKind::Conv:
            return std::make_unique<ResidualConvBlock>(ps, prefix, cfg.channels, rng, dt);
    }
    throw ConfigError("unknown block kind");
}

}  // namespace frmlp
