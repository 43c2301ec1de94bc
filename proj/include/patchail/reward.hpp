#pragma once

#include "patchail/discriminator.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace patchail {

enum class Transform { logd, neg_log1md, airl };
enum class Aggregator { mean, max, min, median };
enum class Variant { plain, weight, bonus };

Transform parse_transform(const std::string& s);
Aggregator parse_aggregator(const std::string& s);
Variant parse_variant(const std::string& s);
std::string to_string(Transform t);
std::string to_string(Aggregator a);
std::string to_string(Variant v);

struct RewardConfig {
    Transform transform = Transform::airl;
    Aggregator aggregator = Aggregator::mean;
    Variant variant = Variant::plain;
    double lambda = 1.3;
    double scale = 1.0;
    double clamp_eps = kProbClamp;
    // Optional linear decay of lambda to lambda_final over this many steps; 0 keeps it constant.
    long lambda_decay_steps = 0;
    double lambda_final = 0.0;

    void validate() const;
    double lambda_at(long step) const;

    /// Defaults per variant: weight uses lambda 1.3, bonus uses lambda 0.5 and scale 0.5.
    static RewardConfig defaults_for(Variant variant);
};

template <typename Scalar>
using Grid = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Elementwise sigmoid, then clamp into [eps, 1-eps].
template <typename Derived>
Grid<typename Derived::Scalar> clamped_probs(const Eigen::ArrayBase<Derived>& logits, typename Derived::Scalar eps) {
    using S = typename Derived::Scalar;
    return logits.unaryExpr([eps](S z) {
        const S p = z >= S(0) ? S(1) / (S(1) + std::exp(-z)) : std::exp(z) / (S(1) + std::exp(z));
        return std::clamp(p, eps, S(1) - eps);
    });
}

/// Patch rewards h(D). `probs` is expected inside [eps, 1-eps]; it is clamped again here.
template <typename Derived>
Grid<typename Derived::Scalar> transform(const Eigen::ArrayBase<Derived>& probs, Transform kind,
                                         typename Derived::Scalar eps = typename Derived::Scalar(kProbClamp)) {
    using S = typename Derived::Scalar;
    const Grid<S> d = probs.max(eps).min(S(1) - eps);
    switch (kind) {
        case Transform::logd: return d.log();
        case Transform::neg_log1md: return -(S(1) - d).log();
        case Transform::airl: return d.log() - (S(1) - d).log();
    }
    throw std::invalid_argument("unknown reward transform");
}

template <typename Derived>
typename Derived::Scalar aggregate(const Eigen::DenseBase<Derived>& rewards, Aggregator kind) {
    using S = typename Derived::Scalar;
    if (rewards.size() == 0) throw std::invalid_argument("aggregate: empty grid");
    switch (kind) {
        case Aggregator::mean: return rewards.mean();
        case Aggregator::max: return rewards.maxCoeff();
        case Aggregator::min: return rewards.minCoeff();
        case Aggregator::median: {
            std::vector<S> v;
            v.reserve(static_cast<std::size_t>(rewards.size()));
            for (Eigen::Index c = 0; c < rewards.cols(); ++c) {
                for (Eigen::Index r = 0; r < rewards.rows(); ++r) v.push_back(rewards(r, c));
            }
            const std::size_t mid = v.size() / 2;
            std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
            if (v.size() % 2 == 1) return v[mid];
            const S upper = v[mid];
            const S lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
            return (lower + upper) / S(2);
        }
    }
    throw std::invalid_argument("unknown aggregator");
}

/// Softmax over every cell of the grid.
template <typename Derived>
Grid<typename Derived::Scalar> normalize(const Eigen::ArrayBase<Derived>& logits) {
    using S = typename Derived::Scalar;
    const Grid<S> e = (logits - logits.maxCoeff()).exp();
    return e / e.sum();
}

/// log softmax over every cell; finite for any finite input.
template <typename Derived>
Grid<typename Derived::Scalar> log_normalize(const Eigen::ArrayBase<Derived>& logits) {
    const Grid<typename Derived::Scalar> shifted = logits - logits.maxCoeff();
    return shifted - std::log(shifted.exp().sum());
}

/// KL(softmax(a) || softmax(b)), evaluated in log space.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar softmax_kl(const Eigen::ArrayBase<DerivedA>& a, const Eigen::ArrayBase<DerivedB>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("softmax_kl: grid mismatch");
    const auto log_p = log_normalize(a);
    const auto log_q = log_normalize(b);
    return std::max(typename DerivedA::Scalar(0), (log_p.exp() * (log_p - log_q)).sum());
}

/// exp(-KL(softmax(agent) || softmax(mean expert logits))).
template <typename Derived>
typename Derived::Scalar sim_bar(const Eigen::ArrayBase<Derived>& agent_logits,
                                 const Eigen::ArrayBase<Derived>& mean_expert_logits) {
    return std::exp(-softmax_kl(agent_logits, mean_expert_logits));
}

double sim_bar(const Eigen::ArrayXXd& agent_logits, const ExpertStats& stats);

/// exp(-min_i KL(softmax(agent) || softmax(expert_i))) over the whole expert set.
double sim_raw(const Eigen::ArrayXXd& agent_logits, std::span<const Eigen::ArrayXXd> expert_logits);

/// Reward pieces for one observation pair.
struct RewardBreakdown {
    double reward = 0.0;
    double aggregate = 0.0;   // Aggr(h(D))
    double similarity = 1.0;  // sim_bar, 1 for the plain variant
};

/// plain: scale*A; weight: scale*lambda*sim*A; bonus: scale*(lambda*sim + A).
double compose(double aggregated, double similarity, Variant variant, double lambda, double scale);

/// Reward from one logit grid. Weight/bonus need valid stats.
RewardBreakdown compose_reward(const Eigen::ArrayXXd& logits, const RewardConfig& config, const ExpertStats* stats,
                               long step = 0);

/// Rewards for a batch of observation pairs, computed without a tape.
std::vector<RewardBreakdown> compose_rewards(const PatchDiscriminator& disc, const Tensor& pairs,
                                             const RewardConfig& config, const ExpertStats* stats, long step = 0);

}  // namespace patchail
