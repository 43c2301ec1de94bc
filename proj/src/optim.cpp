#include "patchail/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace patchail {

void adam_step(Eigen::Ref<Array> param, const Eigen::Ref<const Array>& grad, AdamState& state, long step,
               const AdamConfig& config) {
    if (state.m.size() == 0) state.m = Array::Zero(param.size());
    if (state.v.size() == 0) state.v = Array::Zero(param.size());
    if (grad.size() != param.size() || state.m.size() != param.size() || state.v.size() != param.size()) {
        throw std::invalid_argument("adam_step: shape mismatch between parameter, gradient and state");
    }
    if (step < 1) throw std::invalid_argument("adam_step: step counter starts at 1");
    state.m = config.beta1 * state.m + (1.0 - config.beta1) * grad;
    state.v = config.beta2 * state.v + (1.0 - config.beta2) * grad.square();
    const double c1 = 1.0 - std::pow(config.beta1, double(step));
    const double c2 = 1.0 - std::pow(config.beta2, double(step));
    param -= config.lr * (state.m / c1) / ((state.v / c2).sqrt() + config.eps);
}

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), state_(params_.size()), config_(config) {}

void Adam::step() {
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        adam_step(p.data(), p.grad(), state_[i], step_, config_);
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

}  // namespace patchail
