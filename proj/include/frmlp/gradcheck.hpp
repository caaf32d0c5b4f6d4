#pragma once

#include <functional>
#include <string>
#include <vector>

#include "frmlp/tensor.hpp"

namespace frmlp::gradcheck {

/// A freshly built scenario: named tensors to perturb (requires_grad set) and
/// a forward closure that rebuilds the graph and returns a scalar readout.
struct Instance {
    std::vector<std::pair<std::string, Tensor>> inputs;
    std::function<Tensor()> forward;
};

struct Case {
    std::string name;
    std::string scope;  // ops | blocks | networks | losses
    double tol_f32 = 1e-3;
    double tol_f64 = 1e-5;
    /// 0 probes every coordinate of every input; otherwise this many
    /// coordinates are sampled across the concatenated input space (the first
    /// input always contributes a handful).
    int total_probes = 0;
    std::function<Instance(DType, Rng&)> make;
};

struct Result {
    std::string name;
    std::string scope;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::string worst;  // tensor/coordinate of the largest error
};

/// Central-difference step: 1e-3 at f32, 1e-6 at f64 (inputs are O(1)).
double fd_step(DType dt);

/// All registered cases, grouped by scope. Ops appear exactly once each.
const std::vector<Case>& registry();

/// Case names in the "ops" scope (the registered-op inventory).
std::vector<std::string> registered_op_names();

Result run_case(const Case& c, DType dt, std::uint64_t seed);
/// scope "all" runs everything.
std::vector<Result> run_scope(const std::string& scope, DType dt, std::uint64_t seed);
std::string report_text(const std::vector<Result>& results);

/// Negative control: an op whose backward is deliberately wrong; the runner
/// must flag it. Not part of the registry.
Case corrupted_fixture();

}  // namespace frmlp::gradcheck
