#pragma once

#include <array>
#include <memory>
#include <string>

#include "frmlp/nn.hpp"

namespace frmlp {

enum class BlockKind { Gmlp, Hire, Smlp, SwinMlp, Conv };

BlockKind block_kind_from_string(const std::string& s);
const char* block_kind_name(BlockKind k);

/// Per-stage partition schedule (stage index 1..5):
///   gmlp block/grid size  [8, 8, 6, 6, 4]
///   hire inner region     [8, 8, 6, 6, 4], cross region [4, 4, 3, 3, 2]
///   swin-mlp window       [8, 8, 6, 6, 4], shift        [4, 4, 3, 3, 2]
struct BlockConfig {
    BlockKind kind = BlockKind::Gmlp;
    int stage_index = 1;  // 1..5
    std::int64_t channels = 0;
    std::int64_t block_size = 0;
    std::int64_t grid_size = 0;
    std::int64_t inner_region = 0;
    std::int64_t cross_region = 0;
    std::int64_t window = 0;
    std::int64_t shift = 0;
    std::array<std::int64_t, 3> spatial_dims{0, 0, 0};
    /// Position of the block within its stage (0 or 1). Odd blocks apply the
    /// cyclic shift in the hire and swin-mlp variants.
    int block_index = 0;

    void validate() const;
};

/// Fills the Table-style schedule for a stage; spatial_dims are the extents
/// the stage operates on (after input padding).
BlockConfig stage_block_config(BlockKind kind, int stage_index, std::int64_t channels,
                               std::array<std::int64_t, 3> dims, int block_index);

constexpr std::int64_t kSwinMlpHeadWidth = 8;
constexpr std::int64_t kSeReduction = 4;

// ---- token group partitions -------------------------------------------------
/// Non-overlapping b^3 tiles as token groups: [C,H,W,D] -> [G, b^3, C].
/// Tokens are in tile scan order (H, then W, then D fastest).
Tensor block_partition(const Tensor& x, std::int64_t b);
Tensor block_unpartition(const Tensor& tokens, const Shape& chwd, std::int64_t b);
/// Dilated lattice groups: token i of a group sits at stride (H/g, W/g, D/g);
/// one group per base offset. [C,H,W,D] -> [G, g^3, C].
Tensor grid_partition(const Tensor& x, std::int64_t g);
Tensor grid_unpartition(const Tensor& tokens, const Shape& chwd, std::int64_t g);

/// Zero-pads each spatial axis up to the next multiple of m (high side).
/// Returns the padded map and the original dims; crop_to inverts exactly.
std::pair<Tensor, Shape> pad_to_multiple(const Tensor& x, std::array<std::int64_t, 3> m);
Tensor crop_to(const Tensor& x, const Shape& chwd);

// ---- blocks ------------------------------------------------------------------
/// Shape-preserving residual unit over [C,H,W,D] feature maps. All kinds share
/// this signature so stages can swap them by configuration alone.
struct Block {
    virtual ~Block() = default;
    virtual Tensor forward(const Tensor& x) const = 0;
};

std::unique_ptr<Block> make_block(nn::ParamStore& ps, const std::string& prefix,
                                  const BlockConfig& cfg, Rng& rng, DType dt);

/// Channel-split gate: z2 half is layer-normed, token-mixed (weights init 0,
/// bias init 1) and multiplied onto z1. [G,T,C] -> [G,T,C/2].
struct SpatialGatingUnit {
    nn::LayerNorm norm;
    nn::Linear mix;  // [T, T], bias [T]

    SpatialGatingUnit() = default;
    SpatialGatingUnit(nn::ParamStore& ps, const std::string& prefix, std::int64_t channels,
                      std::int64_t tokens, Rng& rng, DType dt);
    Tensor forward(const Tensor& tokens) const;
};

struct GmlpBlock : Block {
    BlockConfig cfg;
    nn::LayerNorm norm;
    nn::Linear expand;  // C -> 2C
    SpatialGatingUnit gate_block, gate_grid;
    nn::Linear project;  // C -> C, zero init

    GmlpBlock(nn::ParamStore& ps, const std::string& prefix, const BlockConfig& cfg, Rng& rng,
              DType dt);
    Tensor forward(const Tensor& x) const override;
};

struct HireBlock : Block {
    BlockConfig cfg;
    bool shifted;
    nn::Linear fc_h, fc_w, fc_d;  // [C*r, C*r], zero init
    nn::Linear fc_channel;        // [C, C], zero init

    HireBlock(nn::ParamStore& ps, const std::string& prefix, const BlockConfig& cfg, Rng& rng,
              DType dt);
    Tensor forward(const Tensor& x) const override;
};

struct SmlpBlock : Block {
    BlockConfig cfg;
    nn::Linear mix_h, mix_w, mix_d;  // axis mixers, identity init, no bias
    nn::Linear fuse;                 // 4C -> C, zero init

    SmlpBlock(nn::ParamStore& ps, const std::string& prefix, const BlockConfig& cfg, Rng& rng,
              DType dt);
    Tensor forward(const Tensor& x) const override;
};

struct SwinMlpBlock : Block {
    BlockConfig cfg;
    bool shifted;
    nn::LayerNorm norm1, norm2;
    std::vector<nn::Linear> head_mix;  // per head: [w^3, w^3], zero init
    nn::Linear mlp_expand;             // C -> 4C
    nn::Linear mlp_project;            // 4C -> C, zero init

    SwinMlpBlock(nn::ParamStore& ps, const std::string& prefix, const BlockConfig& cfg, Rng& rng,
                 DType dt);
    Tensor forward(const Tensor& x) const override;
};

/// Ablation block: two 3^3 convs with per-channel normalization and ReLU on
/// the residual branch; the second conv is zero-initialized.
struct ResidualConvBlock : Block {
    nn::Conv3d conv1, conv2;
    nn::InstanceNorm norm1, norm2;

    ResidualConvBlock(nn::ParamStore& ps, const std::string& prefix, std::int64_t channels,
                      Rng& rng, DType dt);
    Tensor forward(const Tensor& x) const override;
};

/// LN -> 3^3 conv -> LeakyReLU -> 3^3 conv -> SE gate -> residual.
struct ChannelAttention {
    nn::LayerNorm norm;
    nn::Conv3d conv1, conv2;
    nn::Linear se_reduce, se_expand;

    ChannelAttention() = default;
    ChannelAttention(nn::ParamStore& ps, const std::string& prefix, std::int64_t channels, Rng& rng,
                     DType dt);
    Tensor forward(const Tensor& x) const;
};

}  // namespace frmlp
