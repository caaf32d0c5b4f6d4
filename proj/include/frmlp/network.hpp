#pragma once

#include <array>
#include <memory>
#include <optional>
#include <vector>

#include "frmlp/blocks.hpp"

namespace frmlp {

enum class Task { Restore, Register, Segment };

Task task_from_string(const std::string& s);
const char* task_name(Task t);

/// Five-stage configuration with a [24, 48, 96, 192, 384] channel ladder.
/// n_stages < 5 drops the deepest stages for desk-scale inputs.
struct NetworkConfig {
    Task task = Task::Restore;
    std::array<BlockKind, 5> stage_kinds{BlockKind::Gmlp, BlockKind::Gmlp, BlockKind::Gmlp,
                                         BlockKind::Gmlp, BlockKind::Gmlp};
    int n_stages = 5;
    std::int64_t in_channels = 1;
    std::int64_t out_channels = 1;  // register always decodes to a 3-channel field
    std::int64_t base_channels = 24;
    std::array<std::int64_t, 3> input_dims{32, 32, 32};

    void validate() const;
    std::int64_t stage_channels(int stage) const {  // stage 1-based
        return base_channels << (stage - 1);
    }
    std::int64_t pad_multiple() const { return std::int64_t{1} << (n_stages - 1); }
    /// Extents after padding input_dims up to the stage multiple.
    std::array<std::int64_t, 3> padded_dims() const;
    std::array<std::int64_t, 3> stage_dims(int stage) const;
};

/// 2x2x2 neighborhood fold, layer norm, linear 8C -> 2C.
struct PatchMerge {
    nn::LayerNorm norm;   // over 8C
    nn::Linear reduce;    // 8C -> 2C

    PatchMerge() = default;
    PatchMerge(nn::ParamStore& ps, const std::string& prefix, std::int64_t c, Rng& rng, DType dt);
    Tensor forward(const Tensor& x) const;
};

/// Multi-scale pyramid starting at full input resolution: F1 is never
/// downsampled; stages i >= 2 halve extents and double channels.
struct Encoder {
    NetworkConfig cfg;
    nn::Conv3d embed;  // in_channels -> base_channels, 3^3, stride 1

    struct StageModule {
        std::optional<PatchMerge> merge;  // absent for stage 1
        std::unique_ptr<Block> block0, block1;
        ChannelAttention attn0, attn1;
    };
    std::vector<StageModule> stages;

    Encoder(nn::ParamStore& ps, const NetworkConfig& cfg, Rng& rng, DType dt);
    /// Input must be pre-padded to multiples of cfg.pad_multiple().
    std::vector<Tensor> forward(const Tensor& image) const;
};

/// Residual conv unit with a channel-matching shortcut (identity, or 1x1x1
/// conv when the channel count changes).
struct DecoderResBlock {
    nn::Conv3d conv1, conv2;
    nn::InstanceNorm norm1, norm2;
    std::optional<nn::Conv3d> shortcut;

    DecoderResBlock() = default;
    DecoderResBlock(nn::ParamStore& ps, const std::string& prefix, std::int64_t cin,
                    std::int64_t cout, Rng& rng, DType dt);
    Tensor forward(const Tensor& x) const;
};

/// Skip-processing residual conv blocks per scale, learnable x2 upsampling,
/// concat fusion, 1x1x1 head producing raw logits / intensities.
struct UnetDecoder {
    std::vector<DecoderResBlock> skip;     // one per stage
    std::vector<nn::ConvTranspose3d> up;   // stage i+1 -> i
    std::vector<DecoderResBlock> fuse;     // 2C_i -> C_i
    nn::Conv3d head;

    UnetDecoder(nn::ParamStore& ps, const NetworkConfig& cfg, Rng& rng, DType dt);
    Tensor forward(const std::vector<Tensor>& features) const;
};

/// Plain two-conv fusion blocks and a zero-initialized 3^3 flow head, so a
/// freshly built network predicts the identity transform.
struct MorphDecoder {
    struct ConvPair {
        nn::Conv3d conv1, conv2;
        nn::InstanceNorm norm1, norm2;
    };
    std::vector<nn::ConvTranspose3d> up;
    std::vector<ConvPair> fuse;
    nn::Conv3d head;  // base_channels -> 3, zero init

    MorphDecoder(nn::ParamStore& ps, const NetworkConfig& cfg, Rng& rng, DType dt);
    Tensor forward(const std::vector<Tensor>& features) const;
};

/// Encoder plus task decoder. forward() pads the input to the stage multiple
/// and crops the decoded map back to the original extents.
class Network {
  public:
    Network(const NetworkConfig& cfg, std::uint64_t seed, DType dt = DType::F32);

    Tensor forward(const Tensor& input) const;
    std::vector<Tensor> encode(const Tensor& padded) const { return encoder_->forward(padded); }

    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    const NetworkConfig& config() const { return cfg_; }
    std::int64_t param_count() const { return params_.param_count(); }

  private:
    NetworkConfig cfg_;
    nn::ParamStore params_;
    std::unique_ptr<Encoder> encoder_;
    std::unique_ptr<UnetDecoder> unet_;
    std::unique_ptr<MorphDecoder> morph_;
};

/// Five stride-2 conv blocks (LeakyReLU + per-channel norm), channel ladder
/// [16, 32, 64, 128, 256], sigmoid on the last block. Requires spatial
/// extents >= 16 so the halving ladder stays non-degenerate.
class Discriminator {
  public:
    Discriminator(std::int64_t in_channels, std::uint64_t seed, DType dt = DType::F32);

    Tensor forward(const Tensor& pair) const;
    nn::ParamStore& params() { return params_; }
    std::int64_t param_count() const { return params_.param_count(); }

  private:
    std::int64_t in_channels_;
    nn::ParamStore params_;
    std::vector<nn::Conv3d> convs_;
    std::vector<nn::InstanceNorm> norms_;
};

}  // namespace frmlp
