#include "frmlp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace frmlp::metrics {

namespace {

void check_same_dims(const Tensor& x, const Tensor& y, const char* who) {
    if (x.dims() != y.dims())
        throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(x.dims()) + " vs " +
                         shape_str(y.dims()));
}

std::pair<double, double> min_max(const Tensor& t) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        const double v = t.value_at(i);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return {lo, hi};
}

double mse(const Tensor& x, const Tensor& y) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double d = x.value_at(i) - y.value_at(i);
        acc += d * d;
    }
    return acc / static_cast<double>(x.numel());
}

}  // namespace

double nrmse(const Tensor& x, const Tensor& y) {
    check_same_dims(x, y, "nrmse");
    const auto [lo, hi] = min_max(y);
    if (hi <= lo) throw DomainError("nrmse: reference image has zero intensity range");
    const double range = hi - lo;
    return std::sqrt(mse(x, y)) / range;
}

double psnr(const Tensor& x, const Tensor& y) {
    check_same_dims(x, y, "psnr");
    const double err = mse(x, y);
    if (err == 0.0) return std::numeric_limits<double>::infinity();
    const double peak = min_max(y).second;
    return 10.0 * std::log10(peak * peak / err);
}

double ssim(const Tensor& x, const Tensor& y, double data_range) {
    check_same_dims(x, y, "ssim");
    if (data_range <= 0) throw DomainError("ssim: data range must be positive");
    const double n = static_cast<double>(x.numel());
    double mx = 0.0, my = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        mx += x.value_at(i);
        my += y.value_at(i);
    }
    mx /= n;
    my /= n;
    double vx = 0.0, vy = 0.0, cov = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double dx = x.value_at(i) - mx;
        const double dy = y.value_at(i) - my;
        vx += dx * dx;
        vy += dy * dy;
        cov += dx * dy;
    }
    vx /= n;
    vy /= n;
    cov /= n;
    const double c1 = 0.01 * data_range * 0.01 * data_range;
    const double c2 = 0.03 * data_range * 0.03 * data_range;
    return ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

double weighted_score(const std::array<double, 5>& scores_by_drf) {
    // Printed weight list sums to 1.45; the last weight is corrected to 0.05
    // so the score stays a convex combination.
    constexpr std::array<double, 5> w{0.35, 0.25, 0.2, 0.15, 0.05};
    double acc = 0.0;
    for (std::size_t i = 0; i < 5; ++i) acc += w[i] * scores_by_drf[i];
    return acc;
}

double dsc(const LabelMap& a, const LabelMap& b, const std::set<std::uint16_t>& structures) {
    if (a.dims != b.dims) throw ShapeError("dsc: label maps must share dims");
    if (structures.empty()) throw UsageError("dsc: empty structure set");
    double acc = 0.0;
    for (const std::uint16_t id : structures) {
        std::int64_t na = 0, nb = 0, inter = 0;
        for (std::size_t i = 0; i < a.values.size(); ++i) {
            const bool ina = a.values[i] == id;
            const bool inb = b.values[i] == id;
            na += ina;
            nb += inb;
            inter += (ina && inb);
        }
        if (na == 0 && nb == 0)
            acc += 1.0;
        else if (na == 0 || nb == 0)
            acc += 0.0;
        else
            acc += 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
    }
    return acc / static_cast<double>(structures.size());
}

double njd(const Tensor& u) {
    Tensor det = jacobian_determinants(u);
    std::int64_t bad = 0;
    for (std::int64_t i = 0; i < det.numel(); ++i)
        if (det.value_at(i) <= 0.0) ++bad;
    return 100.0 * static_cast<double>(bad) / static_cast<double>(det.numel());
}

namespace {

struct Voxel {
    std::int64_t y, x, z;
};

// Surface voxels under 6-connectivity; out-of-volume neighbors count as
// background, so voxels on the array faces are surface.
std::vector<Voxel> surface_voxels(const LabelMap& m) {
    std::vector<Voxel> out;
    const std::int64_t H = m.dims[0], W = m.dims[1], D = m.dims[2];
    for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x)
            for (std::int64_t z = 0; z < D; ++z) {
                if (m.at(y, x, z) == 0) continue;
                const bool boundary =
                    y == 0 || y == H - 1 || x == 0 || x == W - 1 || z == 0 || z == D - 1 ||
                    m.at(y - 1, x, z) == 0 || m.at(y + 1, x, z) == 0 || m.at(y, x - 1, z) == 0 ||
                    m.at(y, x + 1, z) == 0 || m.at(y, x, z + 1) == 0 || m.at(y, x, z - 1) == 0;
                if (boundary) out.push_back({y, x, z});
            }
    return out;
}

double percentile95(std::vector<double>& values) {
    std::sort(values.begin(), values.end());
    const double pos = 0.95 * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - std::floor(pos);
    return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace

double hd95(const LabelMap& a, const LabelMap& b, std::optional<std::array<double, 3>> spacing) {
    if (a.dims != b.dims) throw ShapeError("hd95: label maps must share dims");
    const std::vector<Voxel> sa = surface_voxels(a);
    const std::vector<Voxel> sb = surface_voxels(b);
    if (sa.empty() || sb.empty())
        throw DomainError("hd95: undefined for an empty mask");
    const std::array<double, 3> sp = spacing.value_or(std::array<double, 3>{1.0, 1.0, 1.0});
    auto directed = [&](const std::vector<Voxel>& from, const std::vector<Voxel>& to,
                        std::vector<double>& out) {
        for (const Voxel& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const Voxel& q : to) {
                const double dy = static_cast<double>(p.y - q.y) * sp[0];
                const double dx = static_cast<double>(p.x - q.x) * sp[1];
                const double dz = static_cast<double>(p.z - q.z) * sp[2];
                best = std::min(best, dy * dy + dx * dx + dz * dz);
            }
            out.push_back(std::sqrt(best));
        }
    };
    std::vector<double> distances;
    distances.reserve(sa.size() + sb.size());
    directed(sa, sb, distances);
    directed(sb, sa, distances);
    return percentile95(distances);
}

std::string MetricReport::to_text() const {
    std::ostringstream os;
    os.precision(9);
    for (const CaseRecord& r : records) {
        os << r.case_id << "\t" << r.metric;
        if (!r.structure.empty()) os << "\t" << r.structure;
        os << "\t" << r.value << "\n";
    }
    for (const auto& [name, value] : aggregate) os << "aggregate\t" << name << "\t" << value << "\n";
    return os.str();
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["task"] = task;
    j["aggregate"] = aggregate;
    j["metadata"] = metadata;
    nlohmann::json cases = nlohmann::json::array();
    for (const CaseRecord& r : records) {
        nlohmann::json c;
        c["case"] = r.case_id;
        c["metric"] = r.metric;
        if (!r.structure.empty()) c["structure"] = r.structure;
        c["value"] = r.value;
        cases.push_back(c);
    }
    j["cases"] = cases;
    return j.dump(2);
}

}  // namespace frmlp::metrics
