#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "frmlp/spatial.hpp"
#include "frmlp/tensor.hpp"

namespace frmlp::metrics {

/// sqrt(mean(((x - y) / (max(y) - min(y)))^2)); requires a non-constant y.
double nrmse(const Tensor& x, const Tensor& y);

/// 10 * log10(max(y)^2 / MSE) in dB; +infinity when x == y.
double psnr(const Tensor& x, const Tensor& y);

/// Global-statistics SSIM with C1 = (0.01 L)^2, C2 = (0.03 L)^2.
double ssim(const Tensor& x, const Tensor& y, double data_range);

/// Ultra-low-dose evaluation weights over DRF (100, 50, 20, 10, 4):
/// (0.35, 0.25, 0.2, 0.15, 0.05).
double weighted_score(const std::array<double, 5>& scores_by_drf);

/// Mean Dice over the given structure ids; both-empty structures score 1,
/// one-empty structures score 0.
double dsc(const LabelMap& a, const LabelMap& b, const std::set<std::uint16_t>& structures);

/// Percentage of voxels with a non-positive Jacobian determinant.
double njd(const Tensor& u);

/// 95th percentile (linear interpolation) of the combined multiset of
/// directed surface distances, 6-connectivity boundaries; optional per-axis
/// spacing turns voxel units into mm.
double hd95(const LabelMap& a, const LabelMap& b,
            std::optional<std::array<double, 3>> spacing = std::nullopt);

struct CaseRecord {
    std::string case_id;
    std::string metric;
    std::string structure;  // empty when not structure-resolved
    double value;
};

struct MetricReport {
    std::string task;
    std::vector<CaseRecord> records;
    std::map<std::string, double> aggregate;  // metric name -> mean (or weighted score)
    std::map<std::string, std::string> metadata;

    /// One text line per record plus aggregate lines.
    std::string to_text() const;
    /// Machine-readable JSON summary.
    std::string to_json() const;
};

}  // namespace frmlp::metrics
