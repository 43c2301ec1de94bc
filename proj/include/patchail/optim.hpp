#pragma once

#include "patchail/tensor.hpp"

#include <span>
#include <vector>

namespace patchail {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Array m;
    Array v;
};

/// One bias-corrected Adam update of `param` in place. `step` is the 1-based
/// index of this update.
void adam_step(Eigen::Ref<Array> param, const Eigen::Ref<const Array>& grad, AdamState& state, long step,
               const AdamConfig& config);

/// Adam over a fixed parameter list; reads each tensor's accumulated grad.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig config = {});

    void step();
    void zero_grad();

    long steps() const { return step_; }
    const AdamConfig& config() const { return config_; }
    void set_lr(double lr) { config_.lr = lr; }
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    std::vector<AdamState> state_;
    AdamConfig config_;
    long step_ = 0;
};

}  // namespace patchail
