#include "frmlp/network.hpp"

#include <algorithm>

namespace frmlp {

Task task_from_string(const std::string& s) {
    if (s == "restore") return Task::Restore;
    if (s == "register") return Task::Register;
    if (s == "segment") return Task::Segment;
    throw ConfigError("unknown task: " + s);
}

const char* task_name(Task t) {
    switch (t) {
        case Task::Restore: return "restore";
        case Task::Register: return "register";
        case Task::Segment: return "segment";
    }
    return "?";
}

void NetworkConfig::validate() const {
    if (n_stages < 1 || n_stages > 5) throw ConfigError("n_stages must be in 1..5");
    if (in_channels <= 0 || out_channels <= 0 || base_channels <= 0)
        throw ConfigError("channel counts must be positive");
    if (base_channels % 2) throw ConfigError("base_channels must be even");
    if (base_channels % (kSwinMlpHeadWidth) &&
        std::any_of(stage_kinds.begin(), stage_kinds.begin() + n_stages,
                    [](BlockKind k) { return k == BlockKind::SwinMlp; }))
        throw ConfigError("swinmlp stages need base_channels divisible by the head width");
    if (base_channels % kSeReduction) throw ConfigError("base_channels must allow the SE reduction");
    for (auto e : input_dims)
        if (e <= 0) throw ConfigError("input_dims must be positive");
    if (task == Task::Register && in_channels < 2)
        throw ConfigError("registration expects a channel-concatenated (moving, fixed) pair");
}

std::array<std::int64_t, 3> NetworkConfig::padded_dims() const {
    const std::int64_t m = pad_multiple();
    std::array<std::int64_t, 3> out{};
    for (int i = 0; i < 3; ++i) out[i] = (input_dims[i] + m - 1) / m * m;
    return out;
}

std::array<std::int64_t, 3> NetworkConfig::stage_dims(int stage) const {
    auto d = padded_dims();
    for (int i = 0; i < 3; ++i) d[i] >>= (stage - 1);
    return d;
}

PatchMerge::PatchMerge(nn::ParamStore& ps, const std::string& prefix, std::int64_t c, Rng& rng,
                       DType dt)
    : norm(ps, prefix + ".norm", 8 * c, dt),
      reduce(ps, prefix + ".reduce", 8 * c, 2 * c, rng, dt) {}

Tensor PatchMerge::forward(const Tensor& x) const {
    const Shape& d = x.dims();
    if (d[1] % 2 || d[2] % 2 || d[3] % 2)
        throw UsageError("patch_merge: odd spatial extents " + shape_str(d) + "; caller pads");
    Tensor t = ops::space_to_depth2(x);  // [8C, H/2, W/2, D/2]
    const Shape& sd = t.dims();
    Tensor rows = nn::to_tokens(t);
    rows = ops::layer_norm(rows, norm.gamma, norm.beta);
    rows = reduce.forward(rows);
    return nn::from_tokens(rows, d[0] * 2, {sd[1], sd[2], sd[3]});
}

Encoder::Encoder(nn::ParamStore& ps, const NetworkConfig& cfg_, Rng& rng, DType dt) : cfg(cfg_) {
    cfg.validate();
    embed = nn::Conv3d(ps, "encoder.embed", cfg.in_channels, cfg.base_channels, 3, 1, 1, rng, dt);
    for (int s = 1; s <= cfg.n_stages; ++s) {
        StageModule m;
        const std::int64_t c = cfg.stage_channels(s);
        const std::string prefix = "encoder.stage" + std::to_string(s);
        if (s > 1) m.merge.emplace(ps, prefix + ".merge", c / 2, rng, dt);
        const auto dims = cfg.stage_dims(s);
        m.block0 = make_block(ps, prefix + ".block0",
                              stage_block_config(cfg.stage_kinds[s - 1], s, c, dims, 0), rng, dt);
        m.attn0 = ChannelAttention(ps, prefix + ".attn0", c, rng, dt);
        m.block1 = make_block(ps, prefix + ".block1",
                              stage_block_config(cfg.stage_kinds[s - 1], s, c, dims, 1), rng, dt);
        m.attn1 = ChannelAttention(ps, prefix + ".attn1", c, rng, dt);
        stages.push_back(std::move(m));
    }
}

std::vector<Tensor> Encoder::forward(const Tensor& image) const {
    if (image.rank() != 4) throw ShapeError("encoder: input must be [C,H,W,D]");
    if (image.dim(0) != cfg.in_channels)
        throw ShapeError("encoder: expected " + std::to_string(cfg.in_channels) +
                         " input channels, got " + std::to_string(image.dim(0)));
    const std::int64_t m = cfg.pad_multiple();
    for (int i = 0; i < 3; ++i)
        if (image.dim(static_cast<std::size_t>(i + 1)) % m)
            throw UsageError("encoder: input extents must be pre-padded to multiples of " +
                             std::to_string(m));
    std::vector<Tensor> features;
    features.reserve(stages.size());
    Tensor t = embed.forward(image);
    for (const StageModule& s : stages) {
        if (s.merge) t = s.merge->forward(t);
        t = s.attn0.forward(s.block0->forward(t));
        t = s.attn1.forward(s.block1->forward(t));
        features.push_back(t);
    }
    return features;
}

DecoderResBlock::DecoderResBlock(nn::ParamStore& ps, const std::string& prefix, std::int64_t cin,
                                 std::int64_t cout, Rng& rng, DType dt)
    : conv1(ps, prefix + ".conv1", cin, cout, 3, 1, 1, rng, dt),
      conv2(ps, prefix + ".conv2", cout, cout, 3, 1, 1, rng, dt, nn::Init::Zero),
      norm1(ps, prefix + ".norm1", cout, dt),
      norm2(ps, prefix + ".norm2", cout, dt) {
    if (cin != cout) shortcut.emplace(ps, prefix + ".shortcut", cin, cout, 1, 1, 0, rng, dt);
}

Tensor DecoderResBlock::forward(const Tensor& x) const {
    Tensor t = conv1.forward(x);
    t = norm1.forward(t);
    t = ops::relu(t);
    t = conv2.forward(t);
    t = norm2.forward(t);
    Tensor sc = shortcut ? shortcut->forward(x) : x;
    return ops::add(sc, t);
}

UnetDecoder::UnetDecoder(nn::ParamStore& ps, const NetworkConfig& cfg, Rng& rng, DType dt) {
    const int n = cfg.n_stages;
    for (int s = 1; s <= n; ++s) {
        const std::int64_t c = cfg.stage_channels(s);
        skip.emplace_back(ps, "decoder.skip" + std::to_string(s), c, c, rng, dt);
    }
    for (int s = 1; s < n; ++s) {
        const std::int64_t c = cfg.stage_channels(s);
        up.emplace_back(ps, "decoder.up" + std::to_string(s), 2 * c, c, 2, 2, rng, dt);
        fuse.emplace_back(ps, "decoder.fuse" + std::to_string(s), 2 * c, c, rng, dt);
    }
    head = nn::Conv3d(ps, "decoder.head", cfg.base_channels, cfg.out_channels, 1, 1, 0, rng, dt);
}

Tensor UnetDecoder::forward(const std::vector<Tensor>& features) const {
    const int n = static_cast<int>(features.size());
    Tensor d = skip[static_cast<std::size_t>(n - 1)].forward(features[static_cast<std::size_t>(n - 1)]);
    for (int s = n - 1; s >= 1; --s) {
        Tensor u = up[static_cast<std::size_t>(s - 1)].forward(d);
        Tensor p = skip[static_cast<std::size_t>(s - 1)].forward(features[static_cast<std::size_t>(s - 1)]);
        std::array<Tensor, 2> parts{u, p};
        Tensor cat = ops::concat(std::span<const Tensor>(parts.data(), parts.size()), 0);
        d = fuse[static_cast<std::size_t>(s - 1)].forward(cat);
    }
    return head.forward(d);
}

MorphDecoder::MorphDecoder(nn::ParamStore& ps, const NetworkConfig& cfg, Rng& rng, DType dt) {
    const int n = cfg.n_stages;
    for (int s = 1; s < n; ++s) {
        const std::int64_t c = cfg.stage_channels(s);
        up.emplace_back(ps, "decoder.up" + std::to_string(s), 2 * c, c, 2, 2, rng, dt);
        ConvPair pair;
        pair.conv1 = nn::Conv3d(ps, "decoder.fuse" + std::to_string(s) + ".conv1", 2 * c, c, 3, 1,
                                1, rng, dt);
        pair.norm1 = nn::InstanceNorm(ps, "decoder.fuse" + std::to_string(s) + ".norm1", c, dt);
        pair.conv2 = nn::Conv3d(ps, "decoder.fuse" + std::to_string(s) + ".conv2", c, c, 3, 1, 1,
                                rng, dt);
        pair.norm2 = nn::InstanceNorm(ps, "decoder.fuse" + std::to_string(s) + ".norm2", c, dt);
        fuse.push_back(std::move(pair));
    }
    head = nn::Conv3d(ps, "decoder.head", cfg.base_channels, 3, 3, 1, 1, rng, dt, nn::Init::Zero);
}

Tensor MorphDecoder::forward(const std::vector<Tensor>& features) const {
    const int n = static_cast<int>(features.size());
    Tensor d = features[static_cast<std::size_t>(n - 1)];
    for (int s = n - 1; s >= 1; --s) {
        Tensor u = up[static_cast<std::size_t>(s - 1)].forward(d);
        std::array<Tensor, 2> parts{u, features[static_cast<std::size_t>(s - 1)]};
        Tensor cat = ops::concat(std::span<const Tensor>(parts.data(), parts.size()), 0);
        const ConvPair& p = fuse[static_cast<std::size_t>(s - 1)];
        Tensor t = p.conv1.forward(cat);
        t = p.norm1.forward(t);
        t = ops::leaky_relu(t, 0.2);
        t = p.conv2.forward(t);
        t = p.norm2.forward(t);
        d = ops::leaky_relu(t, 0.2);
    }
    return head.forward(d);
}

Network::Network(const NetworkConfig& cfg, std::uint64_t seed, DType dt) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = make_rng(seed, 0);
    encoder_ = std::make_unique<Encoder>(params_, cfg_, rng, dt);
    if (cfg_.task == Task::Register)
        morph_ = std::make_unique<MorphDecoder>(params_, cfg_, rng, dt);
    else
        unet_ = std::make_unique<UnetDecoder>(params_, cfg_, rng, dt);
}

Tensor Network::forward(const Tensor& input) const {
    if (input.rank() != 4) throw ShapeError("network: input must be [C,H,W,D]");
    const std::int64_t m = cfg_.pad_multiple();
    auto [padded, orig] = pad_to_multiple(input, {m, m, m});
    std::vector<Tensor> features = encoder_->forward(padded);
    Tensor out = morph_ ? morph_->forward(features) : unet_->forward(features);
    return crop_to(out, orig);
}

namespace {
constexpr std::array<std::int64_t, 5> kDiscriminatorLadder{16, 32, 64, 128, 256};
}

Discriminator::Discriminator(std::int64_t in_channels, std::uint64_t seed, DType dt)
    : in_channels_(in_channels) {
    Rng rng = make_rng(seed, 1);
    std::int64_t c = in_channels;
    for (std::size_t i = 0; i < kDiscriminatorLadder.size(); ++i) {
        const std::int64_t cout = kDiscriminatorLadder[i];
        convs_.emplace_back(params_, "disc.conv" + std::to_string(i + 1), c, cout, 3, 2, 1, rng,
                            dt);
        if (i + 1 < kDiscriminatorLadder.size())
            norms_.emplace_back(params_, "disc.norm" + std::to_string(i + 1), cout, dt);
        c = cout;
    }
}

Tensor Discriminator::forward(const Tensor& pair) const {
    if (pair.rank() != 4) throw ShapeError("discriminator: input must be [C,H,W,D]");
    if (pair.dim(0) != in_channels_)
        throw ShapeError("discriminator: expected " + std::to_string(in_channels_) + " channels");
    for (int i = 1; i <= 3; ++i)
        if (pair.dim(static_cast<std::size_t>(i)) < 16)
            throw ShapeError("discriminator: extents must be >= 16 for five stride-2 halvings");
    Tensor t = pair;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        t = convs_[i].forward(t);
        if (i + 1 < convs_.size()) {
            t = ops::leaky_relu(t, 0.2);
            t = norms_[i].forward(t);
        } else {
            t = ops::sigmoid(t);
        }
    }
    return t;
}

}  // namespace frmlp
