#include "patchail/reward.hpp"

#include <limits>

namespace patchail {

Transform parse_transform(const std::string& s) {
    if (s == "logd") return Transform::logd;
    if (s == "neg_log1md") return Transform::neg_log1md;
    if (s == "airl") return Transform::airl;
    throw std::invalid_argument("unknown reward transform '" + s + "' (logd|neg_log1md|airl)");
}

Aggregator parse_aggregator(const std::string& s) {
    if (s == "mean") return Aggregator::mean;
    if (s == "max") return Aggregator::max;
    if (s == "min") return Aggregator::min;
    if (s == "median") return Aggregator::median;
    throw std::invalid_argument("unknown aggregator '" + s + "' (mean|max|min|median)");
}

Variant parse_variant(const std::string& s) {
    if (s == "plain") return Variant::plain;
    if (s == "weight") return Variant::weight;
    if (s == "bonus") return Variant::bonus;
    throw std::invalid_argument("unknown reward variant '" + s + "' (plain|weight|bonus)");
}

std::string to_string(Transform t) {
    switch (t) {
        case Transform::logd: return "logd";
        case Transform::neg_log1md: return "neg_log1md";
        case Transform::airl: return "airl";
    }
    return "?";
}

std::string to_string(Aggregator a) {
    switch (a) {
        case Aggregator::mean: return "mean";
        case Aggregator::max: return "max";
        case Aggregator::min: return "min";
        case Aggregator::median: return "median";
    }
    return "?";
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::plain: return "plain";
        case Variant::weight: return "weight";
        case Variant::bonus: return "bonus";
    }
    return "?";
}

void RewardConfig::validate() const {
    if (!(lambda > 0.0)) throw std::invalid_argument("reward.lambda must be positive");
    if (!(scale > 0.0)) throw std::invalid_argument("reward.scale must be positive");
    if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) throw std::invalid_argument("reward clamp eps must be in (0, 0.5)");
    if (lambda_decay_steps < 0) throw std::invalid_argument("reward.lambda_decay_steps must be >= 0");
}

double RewardConfig::lambda_at(long step) const {
    if (lambda_decay_steps == 0) return lambda;
    const double t = std::clamp(double(step) / double(lambda_decay_steps), 0.0, 1.0);
    return lambda + t * (lambda_final - lambda);
}

RewardConfig RewardConfig::defaults_for(Variant variant) {
    RewardConfig c;
    c.variant = variant;
    if (variant == Variant::bonus) {
        c.lambda = 0.5;
        c.scale = 0.5;
    }
    return c;
}

double sim_bar(const Eigen::ArrayXXd& agent_logits, const ExpertStats& stats) {
    if (!stats.valid()) throw std::invalid_argument("sim_bar: expert statistics have not been computed");
    if (agent_logits.rows() != stats.mean_logits.rows() || agent_logits.cols() != stats.mean_logits.cols()) {
        throw std::invalid_argument("sim_bar: grid size differs from expert statistics");
    }
    return sim_bar(agent_logits, stats.mean_logits);
}

double sim_raw(const Eigen::ArrayXXd& agent_logits, std::span<const Eigen::ArrayXXd> expert_logits) {
    if (expert_logits.empty()) throw std::invalid_argument("sim_raw: empty expert set");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : expert_logits) best = std::min(best, softmax_kl(agent_logits, e));
    return std::exp(-best);
}

double compose(double aggregated, double similarity, Variant variant, double lambda, double scale) {
    switch (variant) {
        case Variant::plain: return scale * aggregated;
        case Variant::weight: return scale * lambda * similarity * aggregated;
        case Variant::bonus: return scale * (lambda * similarity + aggregated);
    }
    throw std::invalid_argument("unknown reward variant");
}

RewardBreakdown compose_reward(const Eigen::ArrayXXd& logits, const RewardConfig& config, const ExpertStats* stats,
                               long step) {
    RewardBreakdown out;
    out.aggregate = aggregate(transform(clamped_probs(logits, config.clamp_eps), config.transform, config.clamp_eps),
                              config.aggregator);
    if (config.variant != Variant::plain) {
        if (stats == nullptr || !stats->valid()) {
            throw std::logic_error("reward variant '" + to_string(config.variant) +
                                   "' needs expert statistics; refresh them first");
        }
        out.similarity = sim_bar(logits, *stats);
    }
    out.reward = compose(out.aggregate, out.similarity, config.variant, config.lambda_at(step), config.scale);
    return out;
}

std::vector<RewardBreakdown> compose_rewards(const PatchDiscriminator& disc, const Tensor& pairs,
                                             const RewardConfig& config, const ExpertStats* stats, long step) {
    std::vector<RewardBreakdown> out;
    for (const auto& grid : disc.logit_grids(pairs)) out.push_back(compose_reward(grid, config, stats, step));
    return out;
}

}  // namespace patchail
