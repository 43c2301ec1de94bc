#include "patchail/discriminator.hpp"

#include <stdexcept>

namespace patchail {

Tensor disc_loss(const Tensor& expert_logits, const Tensor& agent_logits, double eps) {
    if (expert_logits.shape() != agent_logits.shape()) {
        throw std::invalid_argument("disc_loss: expert batch " + to_string(expert_logits.shape()) +
                                    " and agent batch " + to_string(agent_logits.shape()) + " differ");
    }
    const Tensor p_expert = clamp(sigmoid(expert_logits), eps, 1.0 - eps);
    const Tensor p_agent = clamp(sigmoid(agent_logits), eps, 1.0 - eps);
    return neg(mean(log(p_expert))) - mean(log(add_scalar(neg(p_agent), 1.0)));
}

namespace {

std::vector<Array> take_grads(std::span<const Tensor> params) {
    std::vector<Array> out;
    out.reserve(params.size());
    for (const Tensor& p : params) {
        Tensor h = p;
        out.push_back(h.grad());
        h.zero_grad();
    }
    return out;
}

}  // namespace

PenaltyResult gradient_penalty_at(const LogitFn& logits, std::span<const Tensor> params, const Tensor& expert,
                                  const Tensor& agent, const Eigen::ArrayXd& alpha, double coefficient) {
    if (expert.shape() != agent.shape() || expert.rank() < 1) {
        throw std::invalid_argument("gradient_penalty: expert " + to_string(expert.shape()) + " and agent " +
                                    to_string(agent.shape()) + " differ");
    }
    const Index n = expert.dim(0);
    if (alpha.size() != n) throw std::invalid_argument("gradient_penalty: one interpolation weight per sample");
    const Index per = n == 0 ? 0 : expert.size() / n;

    Array mixed(expert.size());
    for (Index i = 0; i < n; ++i) {
        mixed.segment(i * per, per) =
            alpha[i] * expert.data().segment(i * per, per) + (1.0 - alpha[i]) * agent.data().segment(i * per, per);
    }

    const std::vector<Array> saved = take_grads(params);

    PenaltyResult result;
    result.interpolated = Tensor(expert.shape(), mixed, true);
    sum(mean_per_sample(logits(result.interpolated))).backward();
    result.input_grad = result.interpolated.grad();

    result.grad_norms.resize(n);
    Array direction(expert.size());
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
        const auto g = result.input_grad.segment(i * per, per);
        const double norm = g.matrix().norm();
        result.grad_norms[i] = norm;
        total += (norm - 1.0) * (norm - 1.0);
        // dPenalty/dg_i
        const double w = norm > 0.0 ? 2.0 * coefficient * (norm - 1.0) / (double(n) * norm) : 0.0;
        direction.segment(i * per, per) = w * g;
    }
    result.value = n > 0 ? coefficient * total / double(n) : 0.0;

    if (params.empty()) return result;

    const std::vector<Array> base = take_grads(params);
    std::vector<Array> penalty_grad(params.size());
    const double largest = direction.size() ? direction.abs().maxCoeff() : 0.0;
    if (largest > 0.0) {
        // Input moves by at most 1e-4 along the direction.
        const double h = 1e-4 / largest;
        Tensor shifted(expert.shape(), mixed + h * direction, false);
        sum(mean_per_sample(logits(shifted))).backward();
        const std::vector<Array> moved = take_grads(params);
        for (std::size_t k = 0; k < params.size(); ++k) penalty_grad[k] = (moved[k] - base[k]) / h;
    } else {
        for (std::size_t k = 0; k < params.size(); ++k) penalty_grad[k] = Array::Zero(base[k].size());
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor h = params[k];
        h.grad() = saved[k] + penalty_grad[k];
    }
    return result;
}

PenaltyResult gradient_penalty(const LogitFn& logits, std::span<const Tensor> params, const Tensor& expert,
                               const Tensor& agent, double coefficient, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::ArrayXd alpha(expert.rank() ? expert.dim(0) : 0);
    for (Index i = 0; i < alpha.size(); ++i) alpha[i] = u(rng);
    return gradient_penalty_at(logits, params, expert, agent, alpha, coefficient);
}

PatchDiscriminator::PatchDiscriminator(const ArchSpec& spec, Index in_channels, Index input_hw,
                                       std::uint64_t seed, AdamConfig optim)
    : net_(build_network(spec, in_channels, input_hw, seed)),
      optim_(std::make_shared<Adam>(net_.parameters(), optim)) {}

PatchGeometry PatchDiscriminator::geometry() const {
    return patch_geometry(net_.spec(), net_.input_h(), net_.input_w());
}

std::vector<Eigen::ArrayXXd> PatchDiscriminator::logit_grids(const Tensor& pairs) const {
    NoGradGuard no_grad;
    const Index n = pairs.dim(0);
    const Index per = n ? pairs.size() / n : 0;
    constexpr Index kChunk = 64;
    std::vector<Eigen::ArrayXXd> grids;
    grids.reserve(static_cast<std::size_t>(n));
    for (Index n0 = 0; n0 < n; n0 += kChunk) {
        const Index count = std::min(kChunk, n - n0);
        Shape shape = pairs.shape();
        shape[0] = count;
        const Tensor chunk(shape, pairs.data().segment(n0 * per, count * per));
        const Tensor out = net_.forward(chunk);
        const Index ph = out.dim(2), pw = out.dim(3);
        for (Index s = 0; s < count; ++s) {
            Eigen::ArrayXXd g(ph, pw);
            for (Index r = 0; r < ph; ++r) {
                for (Index c = 0; c < pw; ++c) g(r, c) = out.data()[(s * ph + r) * pw + c];
            }
            grids.push_back(std::move(g));
        }
    }
    return grids;
}

DiscUpdateStats PatchDiscriminator::update(const Tensor& expert, const Tensor& agent, double gp_coefficient,
                                           std::mt19937_64& rng) {
    optim_->zero_grad();
    Tensor loss = disc_loss(net_.forward(expert), net_.forward(agent));
    loss.backward();
    DiscUpdateStats stats{loss.item(), 0.0};
    if (gp_coefficient > 0.0) {
        const std::vector<Tensor> params = net_.parameters();
        const ConvNet& net = net_;
        stats.penalty =
            gradient_penalty([&net](const Tensor& x) { return net.forward(x); }, params, expert, agent,
                             gp_coefficient, rng)
                .value;
    }
    optim_->step();
    return stats;
}

ExpertStats PatchDiscriminator::refresh_expert_stats(const Tensor& expert_pairs, long step) const {
    if (expert_pairs.rank() < 1 || expert_pairs.dim(0) < 1) {
        throw std::invalid_argument("refresh_expert_stats: empty expert sample");
    }
    const std::vector<Eigen::ArrayXXd> grids = logit_grids(expert_pairs);
    ExpertStats stats;
    stats.mean_logits = Eigen::ArrayXXd::Zero(grids.front().rows(), grids.front().cols());
    for (const auto& g : grids) stats.mean_logits += g;
    stats.mean_logits /= double(grids.size());
    stats.refresh_step = step;
    return stats;
}

}  // namespace patchail
