#pragma once

#include "frmlp/nn.hpp"

namespace frmlp {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
  public:
    Adam(nn::ParamStore& params, AdamConfig cfg);

    /// One bias-corrected update from the parameters' current grads
    /// (missing grads count as zero).
    void step();
    void zero_grad() { params_.zero_grad(); }
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    std::int64_t steps_taken() const { return t_; }
    void set_steps_taken(std::int64_t t) { t_ = t; }

    /// First/second-moment buffers, named for checkpointing.
    std::vector<std::pair<std::string, Tensor>> state() const;
    void load_state(const std::vector<std::pair<std::string, Tensor>>& state);

  private:
    nn::ParamStore& params_;
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace frmlp
