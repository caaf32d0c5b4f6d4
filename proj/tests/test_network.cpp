#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "frmlp/network.hpp"

using namespace frmlp;

TEST_CASE("conv embedding keeps resolution and yields 24 channels") {
    Rng rng = make_rng(1);
    nn::ParamStore ps;
    nn::Conv3d embed(ps, "embed", 1, 24, 3, 1, 1, rng, DType::F32);
    Tensor img = Tensor::randn({1, 6, 6, 6}, rng);
    Tensor f = embed.forward(img);
    CHECK(f.dims() == Shape{24, 6, 6, 6});
    // Closed-form parameter count: 1*24*27 weights + 24 biases.
    CHECK(ps.param_count() == 672);
}

TEST_CASE("an empty parameter store counts zero parameters") {
    nn::ParamStore ps;
    CHECK(ps.param_count() == 0);
}

TEST_CASE("patch merge halves extents and doubles channels") {
    Rng rng = make_rng(2);
    nn::ParamStore ps;
    PatchMerge pm(ps, "pm", 24, rng, DType::F32);
    Tensor x = Tensor::randn({24, 8, 8, 8}, rng);
    Tensor y = pm.forward(x);
    CHECK(y.dims() == Shape{48, 4, 4, 4});
    CHECK_THROWS_AS(pm.forward(Tensor::randn({24, 7, 8, 8}, rng)), UsageError);
}

TEST_CASE("patch merge maps constant inputs to constant outputs") {
    Rng rng = make_rng(3);
    nn::ParamStore ps;
    PatchMerge pm(ps, "pm", 4, rng, DType::F64);
    Tensor x = Tensor::full({4, 4, 4, 4}, 0.8, DType::F64);
    Tensor y = pm.forward(x);
    const double first = y.value_at(0);
    const std::int64_t per_channel = 2 * 2 * 2;
    for (std::int64_t c = 0; c < y.dim(0); ++c) {
        const double v = y.value_at(c * per_channel);
        for (std::int64_t i = 0; i < per_channel; ++i)
            CHECK(y.value_at(c * per_channel + i) == doctest::Approx(v).epsilon(1e-12));
    }
    (void)first;
}

TEST_CASE("encoder produces the channel/resolution ladder for every block kind") {
    for (BlockKind kind : {BlockKind::Gmlp, BlockKind::Hire, BlockKind::Smlp, BlockKind::SwinMlp,
                           BlockKind::Conv}) {
        NetworkConfig cfg;
        cfg.task = Task::Segment;
        cfg.stage_kinds = {kind, kind, kind, kind, kind};
        cfg.n_stages = 5;
        cfg.input_dims = {32, 32, 32};
        Network net(cfg, 7, DType::F32);
        Rng rng = make_rng(4);
        Tensor img = Tensor::randn({1, 32, 32, 32}, rng);
        const auto features = net.encode(img);
        REQUIRE(features.size() == 5);
        const std::array<std::int64_t, 5> chans{24, 48, 96, 192, 384};
        const std::array<std::int64_t, 5> exts{32, 16, 8, 4, 2};
        for (int s = 0; s < 5; ++s) {
            INFO(block_kind_name(kind) << " stage " << s + 1);
            CHECK(features[static_cast<std::size_t>(s)].dims() ==
                  Shape{chans[static_cast<std::size_t>(s)], exts[static_cast<std::size_t>(s)],
                        exts[static_cast<std::size_t>(s)], exts[static_cast<std::size_t>(s)]});
        }
    }
}

TEST_CASE("stage-wise substitution changes modules, never the shape ladder") {
    for (const char* code : {"PPPPP", "CPPPP", "CCPPP"}) {
        NetworkConfig cfg;
        cfg.task = Task::Segment;
        cfg.n_stages = 5;
        cfg.input_dims = {32, 32, 32};
        for (int i = 0; i < 5; ++i)
            cfg.stage_kinds[static_cast<std::size_t>(i)] =
                code[i] == 'C' ? BlockKind::Conv : BlockKind::Gmlp;
        Network net(cfg, 8, DType::F32);
        Rng rng = make_rng(5);
        const auto features = net.encode(Tensor::randn({1, 32, 32, 32}, rng));
        CHECK(features[0].dims() == Shape{24, 32, 32, 32});
        CHECK(features[4].dims() == Shape{384, 2, 2, 2});
    }
}

TEST_CASE("unet decoder returns the input resolution") {
    for (std::int64_t out_channels : {1, 3}) {
        NetworkConfig cfg;
        cfg.task = Task::Segment;
        cfg.n_stages = 3;
        cfg.out_channels = out_channels;
        cfg.input_dims = {12, 12, 12};
        Network net(cfg, 9, DType::F32);
        Rng rng = make_rng(6);
        Tensor img = Tensor::randn({1, 12, 12, 12}, rng);
        Tensor out = net.forward(img);
        CHECK(out.dims() == Shape{out_channels, 12, 12, 12});
    }
}

TEST_CASE("unet decoder crops odd input extents back exactly") {
    NetworkConfig cfg;
    cfg.task = Task::Restore;
    cfg.n_stages = 3;
    cfg.input_dims = {9, 10, 11};
    Network net(cfg, 10, DType::F32);
    Rng rng = make_rng(7);
    Tensor img = Tensor::randn({1, 9, 10, 11}, rng);
    CHECK(net.forward(img).dims() == Shape{1, 9, 10, 11});
}

TEST_CASE("freshly initialized registration network predicts the identity transform") {
    NetworkConfig cfg;
    cfg.task = Task::Register;
    cfg.n_stages = 4;
    cfg.in_channels = 2;
    cfg.input_dims = {16, 16, 16};
    Network net(cfg, 11, DType::F64);
    Rng rng = make_rng(8);
    Tensor pair = Tensor::randn({2, 16, 16, 16}, rng, 1.0, DType::F64);
    Tensor u = net.forward(pair);
    REQUIRE(u.dims() == Shape{3, 16, 16, 16});
    for (std::int64_t i = 0; i < u.numel(); ++i) CHECK(u.value_at(i) == 0.0);
}

TEST_CASE("discriminator output is a probability map with the stride-2 ladder") {
    Discriminator disc(2, 12, DType::F32);
    Rng rng = make_rng(9);
    Tensor pair = Tensor::randn({2, 32, 32, 32}, rng);
    Tensor p = disc.forward(pair);
    CHECK(p.dims() == Shape{256, 1, 1, 1});
    for (std::int64_t i = 0; i < p.numel(); ++i) {
        CHECK(p.value_at(i) > 0.0);
        CHECK(p.value_at(i) < 1.0);
    }
    CHECK_THROWS_AS(disc.forward(Tensor::randn({2, 8, 8, 8}, rng)), ShapeError);
    CHECK_THROWS_AS(disc.forward(Tensor::randn({1, 32, 32, 32}, rng)), ShapeError);
}

TEST_CASE("network config validation") {
    NetworkConfig cfg;
    cfg.n_stages = 6;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.n_stages = 5;
    cfg.base_channels = 7;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.base_channels = 24;
    cfg.task = Task::Register;
    cfg.in_channels = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("encoder requires pre-padded extents") {
    NetworkConfig cfg;
    cfg.task = Task::Segment;
    cfg.n_stages = 5;
    cfg.input_dims = {32, 32, 32};
    Network net(cfg, 13, DType::F32);
    Rng rng = make_rng(10);
    CHECK_THROWS_AS(net.encode(Tensor::randn({1, 30, 32, 32}, rng)), UsageError);
}
