#include "frmlp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "frmlp/blocks.hpp"
#include "frmlp/network.hpp"
#include "frmlp/objectives.hpp"
#include "frmlp/spatial.hpp"

namespace frmlp::gradcheck {

double fd_step(DType dt) { return dt == DType::F32 ? 1e-3 : 1e-6; }

namespace {

// O(1)-scale values bounded away from the listed non-smooth points.
Tensor sample_away_from(Shape dims, Rng& rng, DType dt, const std::vector<double>& kinks,
                        double margin = 0.05, double lo = 0.2, double hi = 1.2,
                        bool both_signs = true) {
    Tensor t = Tensor::zeros(dims, dt, /*requires_grad=*/true);
    std::uniform_real_distribution<double> mag(lo, hi);
    std::uniform_int_distribution<int> sign(0, 1);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        double v;
        for (;;) {
            v = mag(rng) * (both_signs && sign(rng) ? -1.0 : 1.0);
            bool ok = true;
            for (double k : kinks)
                if (std::fabs(v - k) < margin) ok = false;
            if (ok) break;
        }
        t.set_value_at(i, v);
    }
    return t;
}

Tensor sample_smooth(Shape dims, Rng& rng, DType dt) {
    return sample_away_from(std::move(dims), rng, dt, {});
}

Tensor sample_positive(Shape dims, Rng& rng, DType dt) {
    return sample_away_from(std::move(dims), rng, dt, {}, 0.05, 0.3, 1.5, /*both_signs=*/false);
}

// Fixed random coefficients turn any output into a scalar readout that
// exercises every output element.
std::function<Tensor(const Tensor&)> make_readout(Rng& rng) {
    const std::uint64_t salt = rng();
    return [salt](const Tensor& y) {
        Rng local(salt);
        Tensor w = Tensor::rand_uniform(y.dims(), local, 0.5, 1.5, y.dtype());
        return ops::sum(ops::mul(y, w));
    };
}

struct ProbeTarget {
    std::size_t input_idx;
    std::int64_t coord;
};

std::vector<ProbeTarget> choose_probes(const Instance& inst, int total_probes, Rng& rng) {
    std::vector<ProbeTarget> probes;
    if (total_probes <= 0) {
        for (std::size_t i = 0; i < inst.inputs.size(); ++i)
            for (std::int64_t c = 0; c < inst.inputs[i].second.numel(); ++c)
                probes.push_back({i, c});
        return probes;
    }
    std::vector<std::int64_t> cumulative{0};
    for (const auto& [_, t] : inst.inputs) cumulative.push_back(cumulative.back() + t.numel());
    const std::int64_t total = cumulative.back();
    // A few probes always land on the first input (typically the data path).
    const std::int64_t first_n = inst.inputs[0].second.numel();
    std::uniform_int_distribution<std::int64_t> first_dist(0, first_n - 1);
    for (int i = 0; i < std::min<int>(8, total_probes); ++i)
        probes.push_back({0, first_dist(rng)});
    std::uniform_int_distribution<std::int64_t> dist(0, total - 1);
    while (static_cast<int>(probes.size()) < total_probes) {
        const std::int64_t flat = dist(rng);
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), flat);
        const std::size_t idx = static_cast<std::size_t>(it - cumulative.begin()) - 1;
        probes.push_back({idx, flat - cumulative[idx]});
    }
    return probes;
}

}  // namespace

Result run_case(const Case& c, DType dt, std::uint64_t seed) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(std::hash<std::string>{}(c.name)));
    Instance inst = c.make(dt, rng);

    // Analytic gradients.
    Tensor loss = inst.forward();
    loss.backward();
    std::vector<std::vector<double>> analytic(inst.inputs.size());
    for (std::size_t i = 0; i < inst.inputs.size(); ++i) {
        Tensor& t = inst.inputs[i].second;
        analytic[i].resize(static_cast<std::size_t>(t.numel()), 0.0);
        if (t.has_grad())
            for (std::int64_t j = 0; j < t.numel(); ++j)
                analytic[i][static_cast<std::size_t>(j)] = t.grad_at(j);
    }

    const double h = fd_step(dt);
    Result res;
    res.name = c.name;
    res.scope = c.scope;
    res.tolerance = dt == DType::F32 ? c.tol_f32 : c.tol_f64;

    const auto probes = choose_probes(inst, c.total_probes, rng);
    NoGradGuard ng;
    for (const ProbeTarget& p : probes) {
        Tensor& t = inst.inputs[p.input_idx].second;
        const double orig = t.value_at(p.coord);
        t.set_value_at(p.coord, orig + h);
        const double f_plus = inst.forward().item();
        t.set_value_at(p.coord, orig - h);
        const double f_minus = inst.forward().item();
        t.set_value_at(p.coord, orig);
        const double numeric = (f_plus - f_minus) / (2.0 * h);
        const double a = analytic[p.input_idx][static_cast<std::size_t>(p.coord)];
        const double rel = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst = inst.inputs[p.input_idx].first + "[" + std::to_string(p.coord) + "]";
        }
    }
    res.pass = res.max_rel_err < res.tolerance;
    return res;
}

std::vector<Result> run_scope(const std::string& scope, DType dt, std::uint64_t seed) {
    std::vector<Result> out;
    for (const Case& c : registry())
        if (scope == "all" || c.scope == scope) out.push_back(run_case(c, dt, seed));
    if (out.empty()) throw UsageError("gradcheck: unknown scope " + scope);
    return out;
}

std::string report_text(const std::vector<Result>& results) {
    std::ostringstream os;
    os.precision(3);
    for (const Result& r : results) {
        os << (r.pass ? "PASS" : "FAIL") << "  " << r.scope << "/" << r.name
           << "  max_rel_err=" << std::scientific << r.max_rel_err << "  tol=" << r.tolerance;
        if (!r.pass) os << "  worst=" << r.worst;
        os << "\n";
    }
    return os.str();
}

// ---- case registry -----------------------------------------------------------

namespace {

Case unary_case(const std::string& name, std::vector<double> kinks,
                std::function<Tensor(const Tensor&)> apply, bool positive_input = false) {
    Case c;
    c.name = name;
    c.scope = "ops";
    c.make = [kinks, apply, positive_input](DType dt, Rng& rng) {
        Instance inst;
        Tensor x = positive_input ? sample_positive({2, 3, 4}, rng, dt)
                                  : sample_away_from({2, 3, 4}, rng, dt, kinks);
        auto readout = make_readout(rng);
        inst.inputs = {{"x", x}};
        inst.forward = [x, apply, readout]() { return readout(apply(x)); };
        return inst;
    };
    return c;
}

Case binary_case(const std::string& name, std::function<Tensor(const Tensor&, const Tensor&)> apply,
                 bool positive_b = false) {
    Case c;
    c.name = name;
    c.scope = "ops";
    c.make = [apply, positive_b](DType dt, Rng& rng) {
        Instance inst;
        Tensor a = sample_smooth({3, 4}, rng, dt);
        Tensor b = positive_b ? sample_positive({3, 4}, rng, dt) : sample_smooth({3, 4}, rng, dt);
        auto readout = make_readout(rng);
        inst.inputs = {{"a", a}, {"b", b}};
        inst.forward = [a, b, apply, readout]() { return readout(apply(a, b)); };
        return inst;
    };
    return c;
}

Case loss_case(const std::string& name, std::function<Instance(DType, Rng&)> make) {
    Case c;
    c.name = name;
    c.scope = "losses";
    c.make = std::move(make);
    return c;
}

std::vector<Case> build_op_cases() {
    std::vector<Case> cases;
    auto add = [&](Case c) { cases.push_back(std::move(c)); };

    add(unary_case("relu", {0.0}, [](const Tensor& x) { return ops::relu(x); }));
    add(unary_case("leaky_relu", {0.0},
                   [](const Tensor& x) { return ops::leaky_relu(x, 0.1); }));
    add(unary_case("gelu", {}, [](const Tensor& x) { return ops::gelu(x); }));
    add(unary_case("sigmoid", {}, [](const Tensor& x) { return ops::sigmoid(x); }));
    add(unary_case("abs", {0.0}, [](const Tensor& x) { return ops::abs(x); }));
    add(unary_case("square", {}, [](const Tensor& x) { return ops::square(x); }));
    add(unary_case("sqrt", {}, [](const Tensor& x) { return ops::sqrt(x); }, true));
    add(unary_case("log", {}, [](const Tensor& x) { return ops::log(x); }, true));
    add(unary_case("clamp", {-0.6, 0.6}, [](const Tensor& x) { return ops::clamp(x, -0.6, 0.6); }));
    add(unary_case("pow_const", {}, [](const Tensor& x) { return ops::pow_const(x, 1.7); }, true));
    add(unary_case("affine", {}, [](const Tensor& x) { return ops::affine(x, 1.75, -0.25); }));
    add(unary_case("scale", {}, [](const Tensor& x) { return ops::scale(x, -2.5); }));
    add(unary_case("neg", {}, [](const Tensor& x) { return ops::neg(x); }));
    add(unary_case("sum", {}, [](const Tensor& x) { return ops::sum(x); }));
    add(unary_case("mean", {}, [](const Tensor& x) { return ops::mean(x); }));
    add(unary_case("reshape", {}, [](const Tensor& x) { return ops::reshape(x, {4, 6}); }));
    add(unary_case("permute", {}, [](const Tensor& x) { return ops::permute(x, {2, 0, 1}); }));
    add(unary_case("narrow", {}, [](const Tensor& x) { return ops::narrow(x, 1, 1, 2); }));
    add(unary_case("cast", {}, [](const Tensor& x) {
        return ops::cast(ops::cast(x, DType::F64), x.dtype());
    }));

    add(binary_case("add", [](const Tensor& a, const Tensor& b) { return ops::add(a, b); }));
    add(binary_case("sub", [](const Tensor& a, const Tensor& b) { return ops::sub(a, b); }));
    add(binary_case("mul", [](const Tensor& a, const Tensor& b) { return ops::mul(a, b); }));
    add(binary_case("div", [](const Tensor& a, const Tensor& b) { return ops::div(a, b); }, true));

    {
        Case c;
        c.name = "concat";
        c.scope = "ops";
        c.make = [](DType dt, Rng& rng) {
            Instance inst;
            Tensor a = sample_smooth({2, 3}, rng, dt);
            Tensor b = sample_smooth({4, 3}, rng, dt);
            auto readout = make_readout(rng);
            inst.inputs = {{"a", a}, {"b", b}};
            inst.forward = [a, b, readout]() {
                std::array<Tensor, 2> parts{a, b};
                return readout(ops::concat(std::span<const Tensor>(parts.data(), 2), 0));
            };
            return inst;
        };
        cases.push_back(std::move(c));
    }

    struct MapCase {
        const char* name;
        std::function<Tensor(const Tensor&)> apply;
        Shape dims;
    };
    const std::vector<MapCase> map_cases{
        {"pad_spatial", [](const Tensor& x) { return ops::pad_spatial(x, {1, 0, 2}, {0, 1, 1}); },
         {2, 3, 3, 2}},
        {"crop_spatial",
         [](const Tensor& x) { return ops::crop_spatial(x, {1, 0, 1}, {2, 3, 2}); },
         {2, 4, 3, 4}},
        {"roll", [](const Tensor& x) { return ops::roll(x, 2, 2); }, {2, 3, 4, 3}},
        {"space_to_depth2", [](const Tensor& x) { return ops::space_to_depth2(x); }, {2, 4, 2, 4}},
        {"upsample_trilinear2", [](const Tensor& x) { return ops::upsample_trilinear2(x); },
         {2, 3, 2, 3}},
        {"global_avg_pool", [](const Tensor& x) { return ops::global_avg_pool(x); }, {3, 2, 3, 2}},
        {"box_sum3", [](const Tensor& x) { return ops::box_sum3(x, 1); }, {1, 4, 4, 4}},
        {"block_partition", [](const Tensor& x) { return block_partition(x, 2); }, {3, 4, 4, 4}},
        {"block_unpartition",
         [](const Tensor& x) {
             return block_unpartition(block_partition(x, 2), x.dims(), 2);
         },
         {3, 4, 4, 4}},
        {"grid_partition", [](const Tensor& x) { return grid_partition(x, 2); }, {3, 4, 4, 4}},
        {"grid_unpartition",
         [](const Tensor& x) { return grid_unpartition(grid_partition(x, 2), x.dims(), 2); },
         {3, 4, 4, 4}},
    };
    for (const MapCase& mc : map_cases) {
        Case c;
        c.name = mc.name;
        c.scope = "ops";
        auto apply = mc.apply;
        Shape dims = mc.dims;
        c.make = [apply, dims](DType dt, Rng& rng) {
            Instance inst;
            Tensor x = sample_smooth(dims, rng, dt);
            auto readout = make_readout(rng);
            inst.inputs = {{"x", x}};
            inst.forward = [x, apply, readout]() { return readout(apply(x)); };
            return inst;
        };
        cases.push_back(std::move(c));
    }

    {
        Case c;
        c.name = "scale_channels";
        c.scope = "ops";
        c.make = [](DType dt, Rng& rng) {
            Instance inst;
            Tensor x = sample_smooth({3, 2, 3, 2}, rng, dt);
            Tensor g = sample_smooth({3}, rng, dt);
            auto readout = make_readout(rng);
            inst.inputs = {{"x", x}, {"gate", g}};
            inst.forward = [x, g, readout]() { return readout(ops::scale_channels(x, g)); };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    {
        Case c;
        c.name = "matmul";
        c.scope = "ops";
        c.make = [](DType dt, Rng& rng) {
            Instance inst;
            Tensor a = sample_smooth({4, 5}, rng, dt);
            Tensor b = sample_smooth({5, 2}, rng, dt);
            auto readout = make_readout(rng);
            inst.inputs = {{"a", a}, {"b", b}};
            inst.forward = [a, b, readout]() { return readout(ops::matmul(a, b)); };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    {
        Case c;
        c.name = "linear";
        c.scope = "ops";
        c.make = [](DType dt, Rng& rng) {
            Instance inst;
            Tensor x = sample_smooth({3, 4}, rng, dt);
            Tensor w = sample_smooth({4, 5}, rng, dt);
            Tensor b = sample_smooth({5}, rng, dt);
            auto readout = make_readout(rng);
            inst.inputs = {{"x", x}, {"w", w}, {"b", b}};
            inst.forward = [x, w, b, readout]() { return readout(ops::linear(x, w, b)); };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    {
        Case c;
        c.name = "conv3d";
        c.scope = "ops";
        // f32 quotient noise ~ sqrt(outputs)*ulp/h exceeds 1e-3 for conv-sized
        // reductions; the f64 sweep carries the tight tolerance.
        c.tol_f32 = 1e-2;
        c.make = [](DType dt, Rng& rng) {
            Instance inst;
            Tensor x = sample_smooth({1, 5, 5, 5}, rng, dt);
            Tensor w = sample_smooth({2, 1, 3, 3, 3}, rng, dt);
            Tensor b = sample_smooth({2}, rng, dt);
            auto readout = make_readout(rng);
            inst.inputs = {{"x", x}, {"w", w}, {"b", b}};
            inst.forward = [x, w, b, readout]() { return readout(ops::conv3d(x, w, b, 1, 1)); };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    {
        Case c;
        c.name = "conv_transpose3d";
        c.scope = "ops";
        c.tol_f32 = 1e-2;
        c.make = [](DType dt, Rng& rng) {
            Instance inst;
            Tensor x = sample_smooth({3, 3, 2, 3}, rng, dt);
            Tensor w = sample_smooth({3, 2, 2, 2, 2}, rng, dt);
            Tensor b = sample_smooth({2}, rng, dt);
            auto readout = make_readout(rng);
            inst.inputs = {{"x", x}, {"w", w}, {"b", b}};
            inst.forward = [x, w, b, readout]() {
                return readout(ops::conv_transpose3d(x, w, b, 2));
            };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    {
        Case c;
        c.name = "layer_norm";
        c.scope = "ops";
        c.make = [](DType dt, Rng& rng) {
            Instance inst;
            Tensor x = sample_smooth({4, 6}, rng, dt);
            Tensor gamma = sample_smooth({6}, rng, dt);
            Tensor beta = sample_smooth({6}, rng, dt);
            auto readout = make_readout(rng);
            inst.inputs = {{"x", x}, {"gamma", gamma}, {"beta", beta}};
            inst.forward = [x, gamma, beta, readout]() {
                return readout(ops::layer_norm(x, gamma, beta));
            };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    {
        Case c;
        c.name = "instance_norm";
        c.scope = "ops";
        c.make = [](DType dt, Rng& rng) {
            Instance inst;
            Tensor x = sample_smooth({3, 2, 3, 2}, rng, dt);
            Tensor gamma = sample_smooth({3}, rng, dt);
            Tensor beta = sample_smooth({3}, rng, dt);
            auto readout = make_readout(rng);
            inst.inputs = {{"x", x}, {"gamma", gamma}, {"beta", beta}};
            inst.forward = [x, gamma, beta, readout]() {
                return readout(ops::instance_norm(x, gamma, beta));
            };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    {
        Case c;
        c.name = "warp_trilinear";
        c.scope = "ops";
        c.make = [](DType dt, Rng& rng) {
            Instance inst;
            Tensor m = sample_smooth({2, 5, 5, 5}, rng, dt);
            // Small interior displacements keep samples off the clamped border
            // and away from integer lattice kinks.
            Tensor u = sample_away_from({3, 5, 5, 5}, rng, dt, {0.0, 1.0, -1.0}, 0.08, 0.15, 0.85);
            auto readout = make_readout(rng);
            inst.inputs = {{"m", m}, {"u", u}};
            inst.forward = [m, u, readout]() { return readout(warp_trilinear(m, u)); };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    return cases;
}

// Shared scaffolding for block-scope cases: input plus every block parameter.
Case block_case(const std::string& name, BlockKind kind, std::int64_t channels, Shape input_dims,
                int stage_index, int block_index) {
    Case c;
    c.name = name;
    c.scope = "blocks";
    c.tol_f64 = 1e-5;
    c.make = [kind, channels, input_dims, stage_index, block_index](DType dt, Rng& rng) {
        Instance inst;
        auto ps = std::make_shared<nn::ParamStore>();
        BlockConfig cfg = stage_block_config(kind, stage_index, channels,
                                             {input_dims[1], input_dims[2], input_dims[3]},
                                             block_index);
        // Small partitions keep the finite-difference sweep tractable.
        cfg.block_size = 2;
        cfg.grid_size = 2;
        cfg.inner_region = 2;
        cfg.cross_region = 1;
        cfg.window = 2;
        cfg.shift = 1;
        auto block = std::shared_ptr<Block>(make_block(*ps, "block", cfg, rng, dt));
        Tensor x = sample_smooth(input_dims, rng, dt);
        inst.inputs = {{"x", x}};
        for (const auto& [pname, p] : ps->entries()) {
            // Zero-initialized projections get random values so the check
            // exercises non-trivial paths.
            Tensor pt = p;
            Rng prng(rng());
            Tensor rnd = Tensor::rand_uniform(pt.dims(), prng, -0.4, 0.4, dt);
            for (std::int64_t i = 0; i < pt.numel(); ++i)
                pt.set_value_at(i, pt.value_at(i) + rnd.value_at(i));
            inst.inputs.emplace_back(pname, pt);
        }
        auto readout = make_readout(rng);
        inst.forward = [block, x, readout, ps]() { return readout(block->forward(x)); };
        return inst;
    };
    return c;
}

std::vector<Case> build_block_cases() {
    std::vector<Case> cases;
    cases.push_back(block_case("gmlp_block", BlockKind::Gmlp, 4, {4, 4, 4, 4}, 1, 0));
    cases.push_back(block_case("hire_block", BlockKind::Hire, 4, {4, 4, 4, 4}, 1, 1));
    cases.push_back(block_case("smlp_block", BlockKind::Smlp, 4, {4, 4, 4, 4}, 1, 0));
    cases.push_back(block_case("swinmlp_block", BlockKind::SwinMlp, 8, {8, 4, 4, 4}, 1, 1));
    cases.push_back(block_case("conv_block", BlockKind::Conv, 4, {4, 4, 4, 4}, 1, 0));

    {
        Case c;
        c.name = "channel_attention";
        c.scope = "blocks";
        c.make = [](DType dt, Rng& rng) {
            Instance inst;
            auto ps = std::make_shared<nn::ParamStore>();
            auto ca = std::make_shared<ChannelAttention>(*ps, "ca", 8, rng, dt);
            Tensor x = sample_smooth({8, 4, 4, 4}, rng, dt);
            inst.inputs = {{"x", x}};
            for (const auto& [pname, p] : ps->entries()) {
                Tensor pt = p;
                Rng prng(rng());
                Tensor rnd = Tensor::rand_uniform(pt.dims(), prng, -0.4, 0.4, dt);
                for (std::int64_t i = 0; i < pt.numel(); ++i)
                    pt.set_value_at(i, pt.value_at(i) + rnd.value_at(i));
                inst.inputs.emplace_back(pname, pt);
            }
            auto readout = make_readout(rng);
            inst.forward = [ca, x, readout, ps]() { return readout(ca->forward(x)); };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    {
        Case c;
        c.name = "spatial_gating";
        c.scope = "blocks";
        c.make = [](DType dt, Rng& rng) {
            Instance inst;
            auto ps = std::make_shared<nn::ParamStore>();
            auto sgu = std::make_shared<SpatialGatingUnit>(*ps, "sgu", 4, 4, rng, dt);
            Tensor x = sample_smooth({1, 4, 4}, rng, dt);
            inst.inputs = {{"tokens", x}};
            for (const auto& [pname, p] : ps->entries()) {
                Tensor pt = p;
                Rng prng(rng());
                Tensor rnd = Tensor::rand_uniform(pt.dims(), prng, -0.4, 0.4, dt);
                for (std::int64_t i = 0; i < pt.numel(); ++i)
                    pt.set_value_at(i, pt.value_at(i) + rnd.value_at(i));
                inst.inputs.emplace_back(pname, pt);
            }
            auto readout = make_readout(rng);
            inst.forward = [sgu, x, readout, ps]() { return readout(sgu->forward(x)); };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    return cases;
}

// Network cases use sampled probes; each instance randomizes every parameter
// slightly so zero-initialized heads still carry gradient signal.
Instance network_instance(std::shared_ptr<Network> net, Tensor input, Rng& rng,
                          bool probe_params) {
    Instance inst;
    inst.inputs = {{"input", input}};
    if (probe_params) {
        for (const auto& [pname, p] : net->params().entries()) {
            Tensor pt = p;
            Rng prng(rng());
            Tensor rnd = Tensor::rand_uniform(pt.dims(), prng, -0.05, 0.05, pt.dtype());
            for (std::int64_t i = 0; i < pt.numel(); ++i)
                pt.set_value_at(i, pt.value_at(i) + rnd.value_at(i));
            inst.inputs.emplace_back(pname, pt);
        }
    }
    return inst;
}

std::vector<Case> build_network_cases() {
    std::vector<Case> cases;
    {
        Case c;
        c.name = "conv_embed";
        c.scope = "networks";
        c.make = [](DType dt, Rng& rng) {
            Instance inst;
            auto ps = std::make_shared<nn::ParamStore>();
            auto conv = std::make_shared<nn::Conv3d>(*ps, "embed", 1, 6, 3, 1, 1, rng, dt);
            Tensor x = sample_smooth({1, 4, 4, 4}, rng, dt);
            inst.inputs = {{"image", x}, {"w", conv->w}, {"b", conv->b}};
            auto readout = make_readout(rng);
            inst.forward = [conv, x, readout, ps]() { return readout(conv->forward(x)); };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    {
        Case c;
        c.name = "patch_merge";
        c.scope = "networks";
        c.make = [](DType dt, Rng& rng) {
            Instance inst;
            auto ps = std::make_shared<nn::ParamStore>();
            auto pm = std::make_shared<PatchMerge>(*ps, "merge", 2, rng, dt);
            Tensor x = sample_smooth({2, 4, 4, 4}, rng, dt);
            inst.inputs = {{"x", x}};
            for (const auto& [pname, p] : ps->entries()) inst.inputs.emplace_back(pname, p);
            auto readout = make_readout(rng);
            inst.forward = [pm, x, readout, ps]() { return readout(pm->forward(x)); };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    {
        Case c;
        c.name = "encoder_f5_readout";
        c.scope = "networks";
        c.tol_f64 = 1e-4;
        c.total_probes = 48;
        c.make = [](DType dt, Rng& rng) {
            NetworkConfig cfg;
            cfg.task = Task::Segment;
            cfg.n_stages = 5;
            cfg.input_dims = {16, 16, 16};
            auto net = std::make_shared<Network>(cfg, rng(), dt);
            Tensor x = sample_smooth({1, 16, 16, 16}, rng, dt);
            Instance inst = network_instance(net, x, rng, /*probe_params=*/false);
            auto readout = make_readout(rng);
            inst.forward = [net, x, readout]() { return readout(net->encode(x).back()); };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    {
        Case c;
        c.name = "unet_decoder";
        c.scope = "networks";
        c.tol_f64 = 1e-4;
        c.total_probes = 96;
        c.make = [](DType dt, Rng& rng) {
            NetworkConfig cfg;
            cfg.task = Task::Segment;
            cfg.n_stages = 5;
            cfg.out_channels = 2;
            cfg.input_dims = {16, 16, 16};
            auto net = std::make_shared<Network>(cfg, rng(), dt);
            Tensor x = sample_smooth({1, 16, 16, 16}, rng, dt);
            Instance inst = network_instance(net, x, rng, /*probe_params=*/true);
            auto readout = make_readout(rng);
            inst.forward = [net, x, readout]() { return readout(net->forward(x)); };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    {
        Case c;
        c.name = "morph_decoder";
        c.scope = "networks";
        c.tol_f64 = 1e-4;
        c.total_probes = 96;
        c.make = [](DType dt, Rng& rng) {
            NetworkConfig cfg;
            cfg.task = Task::Register;
            cfg.n_stages = 5;
            cfg.in_channels = 2;
            cfg.input_dims = {12, 12, 12};
            auto net = std::make_shared<Network>(cfg, rng(), dt);
            Tensor moving = sample_positive({1, 12, 12, 12}, rng, dt);
            Tensor fixed = sample_positive({1, 12, 12, 12}, rng, dt);
            Instance inst;
            inst.inputs = {{"moving", moving}, {"fixed", fixed}};
            for (const auto& [pname, p] : net->params().entries()) {
                Tensor pt = p;
                Rng prng(rng());
                Tensor rnd = Tensor::rand_uniform(pt.dims(), prng, -0.05, 0.05, pt.dtype());
                for (std::int64_t i = 0; i < pt.numel(); ++i)
                    pt.set_value_at(i, pt.value_at(i) + rnd.value_at(i));
                inst.inputs.emplace_back(pname, pt);
            }
            LossWeights w;
            inst.forward = [net, moving, fixed, w]() {
                std::array<Tensor, 2> parts{moving, fixed};
                Tensor pair = ops::concat(std::span<const Tensor>(parts.data(), 2), 0);
                Tensor u = net->forward(pair);
                return registration_loss(fixed, moving, u, w);
            };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    {
        Case c;
        c.name = "discriminator";
        c.scope = "networks";
        c.tol_f64 = 1e-4;
        c.total_probes = 96;
        c.make = [](DType dt, Rng& rng) {
            auto disc = std::make_shared<Discriminator>(2, rng(), dt);
            Tensor pair = sample_smooth({2, 32, 32, 32}, rng, dt);
            Instance inst;
            inst.inputs = {{"pair", pair}};
            for (const auto& [pname, p] : disc->params().entries()) {
                Tensor pt = p;
                Rng prng(rng());
                Tensor rnd = Tensor::rand_uniform(pt.dims(), prng, -0.05, 0.05, pt.dtype());
                for (std::int64_t i = 0; i < pt.numel(); ++i)
                    pt.set_value_at(i, pt.value_at(i) + rnd.value_at(i));
                inst.inputs.emplace_back(pname, pt);
            }
            auto readout = make_readout(rng);
            inst.forward = [disc, pair, readout]() { return readout(disc->forward(pair)); };
            return inst;
        };
        cases.push_back(std::move(c));
    }
    return cases;
}

std::vector<Case> build_loss_cases() {
    std::vector<Case> cases;
    cases.push_back(loss_case("content_loss", [](DType dt, Rng& rng) {
        Instance inst;
        Tensor pred = sample_smooth({1, 3, 3, 3}, rng, dt);
        Tensor target = sample_smooth({1, 3, 3, 3}, rng, dt);
        inst.inputs = {{"pred", pred}};
        inst.forward = [pred, target]() { return content_loss(pred, target); };
        return inst;
    }));
    cases.push_back(loss_case("lsgan_d_loss", [](DType dt, Rng& rng) {
        Instance inst;
        Tensor real = sample_smooth({1, 2, 2, 2}, rng, dt);
        Tensor fake = sample_smooth({1, 2, 2, 2}, rng, dt);
        inst.inputs = {{"d_real", real}, {"d_fake", fake}};
        inst.forward = [real, fake]() { return lsgan_d_loss(real, fake); };
        return inst;
    }));
    cases.push_back(loss_case("lsgan_g_loss", [](DType dt, Rng& rng) {
        Instance inst;
        Tensor fake = sample_smooth({1, 2, 2, 2}, rng, dt);
        inst.inputs = {{"d_fake", fake}};
        inst.forward = [fake]() { return lsgan_g_loss(fake); };
        return inst;
    }));
    cases.push_back(loss_case("restoration_loss", [](DType dt, Rng& rng) {
        Instance inst;
        Tensor pred = sample_smooth({1, 3, 3, 3}, rng, dt);
        Tensor target = sample_smooth({1, 3, 3, 3}, rng, dt);
        Tensor fake = sample_smooth({1, 2, 2, 2}, rng, dt);
        LossWeights w;
        inst.inputs = {{"pred", pred}, {"d_fake", fake}};
        inst.forward = [pred, target, fake, w]() {
            return restoration_loss(pred, target, fake, w);
        };
        return inst;
    }));
    cases.push_back(loss_case("local_ncc_loss", [](DType dt, Rng& rng) {
        Instance inst;
        Tensor fixed = sample_positive({1, 9, 9, 9}, rng, dt);
        Tensor warped = sample_positive({1, 9, 9, 9}, rng, dt);
        inst.inputs = {{"fixed", fixed}, {"warped", warped}};
        inst.forward = [fixed, warped]() { return local_ncc_loss(fixed, warped, 9); };
        return inst;
    }));
    cases.push_back(loss_case("diffusion_regularizer", [](DType dt, Rng& rng) {
        Instance inst;
        Tensor u = sample_smooth({3, 4, 4, 4}, rng, dt);
        inst.inputs = {{"u", u}};
        inst.forward = [u]() { return diffusion_regularizer(u); };
        return inst;
    }));
    cases.push_back(loss_case("registration_loss", [](DType dt, Rng& rng) {
        Instance inst;
        Tensor fixed = sample_positive({1, 8, 8, 8}, rng, dt);
        Tensor moving = sample_positive({1, 8, 8, 8}, rng, dt);
        Tensor u = sample_away_from({3, 8, 8, 8}, rng, dt, {0.0, 1.0, -1.0}, 0.08, 0.15, 0.85);
        LossWeights w;
        inst.inputs = {{"fixed", fixed}, {"moving", moving}, {"u", u}};
        inst.forward = [fixed, moving, u, w]() { return registration_loss(fixed, moving, u, w); };
        return inst;
    }));
    cases.push_back(loss_case("dice_loss", [](DType dt, Rng& rng) {
        Instance inst;
        Tensor logits = sample_smooth({2, 4, 4, 4}, rng, dt);
        Tensor labels = Tensor::zeros({2, 4, 4, 4}, dt);
        std::uniform_int_distribution<int> bit(0, 1);
        for (std::int64_t i = 0; i < labels.numel(); ++i) labels.set_value_at(i, bit(rng));
        inst.inputs = {{"logits", logits}};
        inst.forward = [logits, labels]() { return dice_loss(logits, labels); };
        return inst;
    }));
    cases.push_back(loss_case("focal_loss", [](DType dt, Rng& rng) {
        Instance inst;
        Tensor logits = sample_smooth({2, 4, 4, 4}, rng, dt);
        Tensor labels = Tensor::zeros({2, 4, 4, 4}, dt);
        std::uniform_int_distribution<int> bit(0, 1);
        for (std::int64_t i = 0; i < labels.numel(); ++i) labels.set_value_at(i, bit(rng));
        inst.inputs = {{"logits", logits}};
        inst.forward = [logits, labels]() { return focal_loss(logits, labels, 0.25, 2.0); };
        return inst;
    }));
    cases.push_back(loss_case("segmentation_loss", [](DType dt, Rng& rng) {
        Instance inst;
        Tensor logits = sample_smooth({2, 6, 6, 6}, rng, dt);
        Tensor labels = Tensor::zeros({2, 6, 6, 6}, dt);
        std::uniform_int_distribution<int> bit(0, 1);
        for (std::int64_t i = 0; i < labels.numel(); ++i) labels.set_value_at(i, bit(rng));
        LossWeights w;
        inst.inputs = {{"logits", logits}};
        inst.forward = [logits, labels, w]() { return segmentation_loss(logits, labels, w); };
        return inst;
    }));
    return cases;
}

}  // namespace

const std::vector<Case>& registry() {
    static const std::vector<Case> cases = [] {
        std::vector<Case> all = build_op_cases();
        for (auto& c : build_block_cases()) all.push_back(std::move(c));
        for (auto& c : build_network_cases()) all.push_back(std::move(c));
        for (auto& c : build_loss_cases()) all.push_back(std::move(c));
        return all;
    }();
    return cases;
}

std::vector<std::string> registered_op_names() {
    std::vector<std::string> names;
    for (const Case& c : registry())
        if (c.scope == "ops") names.push_back(c.name);
    return names;
}

Case corrupted_fixture() {
    Case c;
    c.name = "corrupted_gradient_fixture";
    c.scope = "fixture";
    c.make = [](DType dt, Rng& rng) {
        Instance inst;
        Tensor x = sample_smooth({2, 3}, rng, dt);
        inst.inputs = {{"x", x}};
        inst.forward = [x]() {
            // y = 2x with a backward that claims dy/dx = 3.
            auto node = detail::make_node(x.dims(), x.dtype(), {&x});
            dispatch_dtype(x.dtype(), [&](auto tag) {
                using T = decltype(tag);
                auto in = x.data<T>();
                auto out = node->values<T>();
                for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = T(2) * in[i];
            });
            detail::install_backward(node, {&x}, [x](detail::TensorImpl& self) mutable {
                dispatch_dtype(self.dtype, [&](auto tag) {
                    using T = decltype(tag);
                    auto dy = self.grad_values<T>();
                    auto gx = detail::grad_span<T>(x);
                    for (std::int64_t i = 0; i < self.numel; ++i) gx[i] += T(3) * dy[i];
                });
            });
            return ops::sum(Tensor::wrap(node));
        };
        return inst;
    };
    return c;
}

}  // namespace frmlp::gradcheck
