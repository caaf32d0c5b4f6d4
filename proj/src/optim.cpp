#include "frmlp/optim.hpp"

#include <cmath>

namespace frmlp {

Adam::Adam(nn::ParamStore& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
    for (const auto& [name, t] : params_.entries()) {
        m_.push_back(Tensor::zeros(t.dims(), t.dtype()));
        v_.push_back(Tensor::zeros(t.dims(), t.dtype()));
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.entries().size(); ++i) {
        Tensor p = params_.entries()[i].second;
        dispatch_dtype(p.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto data = p.data<T>();
            auto m = m_[i].data<T>();
            auto v = v_[i].data<T>();
            const bool has_grad = p.has_grad();
            std::span<T> g;
            if (has_grad) g = p.grad_data<T>();
            for (std::int64_t j = 0; j < p.numel(); ++j) {
                const double gj = has_grad ? static_cast<double>(g[j]) : 0.0;
                const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1 - cfg_.beta1) * gj;
                const double vj =
                    cfg_.beta2 * static_cast<double>(v[j]) + (1 - cfg_.beta2) * gj * gj;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                const double mhat = mj / bc1;
                const double vhat = vj / bc2;
                data[j] = static_cast<T>(static_cast<double>(data[j]) -
                                         cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        });
    }
}

std::vector<std::pair<std::string, Tensor>> Adam::state() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < params_.entries().size(); ++i) {
        const std::string& name = params_.entries()[i].first;
        out.emplace_back("opt.m." + name, m_[i]);
        out.emplace_back("opt.v." + name, v_[i]);
    }
    return out;
}

void Adam::load_state(const std::vector<std::pair<std::string, Tensor>>& state) {
    for (std::size_t i = 0; i < params_.entries().size(); ++i) {
        const std::string& name = params_.entries()[i].first;
        bool found_m = false, found_v = false;
        for (const auto& [sname, t] : state) {
            if (sname == "opt.m." + name) {
                if (t.dims() != m_[i].dims()) throw FormatError("optimizer state shape mismatch", 0);
                m_[i] = t.clone();
                found_m = true;
            } else if (sname == "opt.v." + name) {
                if (t.dims() != v_[i].dims()) throw FormatError("optimizer state shape mismatch", 0);
                v_[i] = t.clone();
                found_v = true;
            }
        }
        if (!found_m || !found_v)
            throw FormatError("optimizer state missing for parameter " + name, 0);
    }
}

}  // namespace frmlp
