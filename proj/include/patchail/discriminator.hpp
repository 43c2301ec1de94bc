#pragma once

#include "patchail/nets.hpp"
#include "patchail/optim.hpp"

#include <functional>
#include <random>
#include <vector>

namespace patchail {

inline constexpr double kProbClamp = 1e-6;

/// Patch-label binary cross-entropy over [N,1,P,P] logits: expert cells are
/// labelled 1, agent cells 0. Probabilities are clamped to [eps, 1-eps].
Tensor disc_loss(const Tensor& expert_logits, const Tensor& agent_logits, double eps = kProbClamp);

/// Mean over the grid of the raw discriminator logits for a set of expert pairs.
struct ExpertStats {
    Eigen::ArrayXXd mean_logits;
    long refresh_step = -1;

    bool valid() const { return mean_logits.size() > 0; }
};

using LogitFn = std::function<Tensor(const Tensor&)>;

struct PenaltyResult {
    double value = 0.0;
    Eigen::ArrayXd grad_norms;  // per sample, ||d mean-cell-logit / d x_hat||
    Array input_grad;           // d sum_n mean-cell-logit_n / d x_hat
    Tensor interpolated;
};

/// Gradient penalty at random interpolates of expert and agent inputs:
/// coefficient * mean_n (||grad_x mean-cell-logit||_2 - 1)^2.
///
/// When `params` is non-empty the penalty's parameter gradient is added to
/// their grad fields. It is the directional derivative of the parameter
/// gradient along v = dPenalty/d(input-gradient), taken as a forward
/// difference of two first-order backward passes. Existing gradients in
/// `params` are preserved and added to.
PenaltyResult gradient_penalty(const LogitFn& logits, std::span<const Tensor> params, const Tensor& expert,
                               const Tensor& agent, double coefficient, std::mt19937_64& rng);

/// Same, with fixed interpolation weights (one per sample).
PenaltyResult gradient_penalty_at(const LogitFn& logits, std::span<const Tensor> params, const Tensor& expert,
                                  const Tensor& agent, const Eigen::ArrayXd& alpha, double coefficient);

struct DiscUpdateStats {
    double loss = 0.0;
    double penalty = 0.0;
};

class PatchDiscriminator {
public:
    PatchDiscriminator() = default;
    PatchDiscriminator(const ArchSpec& spec, Index in_channels, Index input_hw, std::uint64_t seed,
                       AdamConfig optim = {});

    /// Raw logits [N,1,P,P].
    Tensor logits(const Tensor& pairs) const { return net_.forward(pairs); }
    /// Logit grids without recording a tape, evaluated in chunks.
    std::vector<Eigen::ArrayXXd> logit_grids(const Tensor& pairs) const;

    /// One Adam step on disc_loss + gradient penalty.
    DiscUpdateStats update(const Tensor& expert, const Tensor& agent, double gp_coefficient, std::mt19937_64& rng);

    /// Mean logits over `expert_pairs` with the current parameters.
    ExpertStats refresh_expert_stats(const Tensor& expert_pairs, long step) const;

    const ConvNet& net() const { return net_; }
    PatchGeometry geometry() const;
    std::vector<Tensor> parameters() const { return net_.parameters(); }
    NamedTensors named_parameters() const { return net_.named_parameters("disc"); }
    long updates() const { return optim_ ? optim_->steps() : 0; }

private:
    ConvNet net_;
    std::shared_ptr<Adam> optim_;
};

}  // namespace patchail
