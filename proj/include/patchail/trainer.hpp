#pragma once

#include "patchail/agent.hpp"
#include "patchail/discriminator.hpp"
#include "patchail/env.hpp"
#include "patchail/reward.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace patchail {

struct TrainConfig {
    std::uint64_t seed = 1;
    long total_steps = 1000000;  // decision steps
    long eval_every = 10000;
    int eval_episodes = 10;
    std::filesystem::path demo_path = "demos.pail";
    std::filesystem::path out_dir = "run";

    PointMassConfig env{};
    AgentConfig agent{};
    Index buffer_size = 150000;
    long update_every = 2;       // env steps between agent updates
    long seed_steps = 2000;      // no updates before this many steps

    ArchSpec arch = arch::dmc_discriminator();
    double disc_lr = 1e-4;
    Index disc_batch_size = 256;
    long disc_every = 1;         // agent updates per discriminator update
    double gp_coef = 10.0;
    long stats_refresh = 20000;  // env steps between expert-stat refreshes
    Index stats_samples = 256;

    RewardConfig reward = RewardConfig::defaults_for(Variant::weight);

    void validate() const;

    /// Sets one key from its text form; throws std::invalid_argument on unknown keys or bad values.
    void set(const std::string& key, const std::string& value);
    /// Every key with its current value, in a fixed order.
    std::vector<std::pair<std::string, std::string>> entries() const;
    static std::vector<std::string> keys();

    /// Parses "key = value" lines; '#' starts a comment.
    static TrainConfig from_text(const std::string& text);
    static TrainConfig load(const std::filesystem::path& path);
    /// Applies "key=value" overrides in order.
    void apply_overrides(const std::vector<std::string>& overrides);
    std::string to_text() const;

    /// Desk-scale configuration used by the end-to-end benchmark.
    static TrainConfig smoke();
};

struct LogRow {
    long step = 0;
    long disc_updates = 0;
    long agent_updates = 0;
    double disc_loss = 0.0;
    double gp = 0.0;
    double mean_patch_reward = 0.0;
    double sim_bar_mean = 0.0;
    double actor_loss = 0.0;
    double critic_loss = 0.0;
    double eval_return = 0.0;
};

/// Observes training at every log interval. Must not touch the trainer's random streams.
using IntervalHook = std::function<void(long step, const PatchDiscriminator& disc, const ReplayBuffer& buffer)>;

struct TrainResult {
    std::vector<LogRow> log;
    std::filesystem::path checkpoint;
    double expert_return = 0.0;
    double final_return = 0.0;
};

/// Writes config.txt, log.csv, timing.csv and checkpoint.ptck under out_dir.
TrainResult train(const TrainConfig& config, const IntervalHook& hook = {});

struct EvalResult {
    double mean = 0.0;
    double std = 0.0;
    std::vector<double> returns;
};

using PolicyFn = std::function<Eigen::Vector2d(const Tensor& observation, int t)>;

/// Ground-truth return of one episode started from `episode_seed`.
double rollout_return(const PointMassConfig& env, std::uint64_t episode_seed, const PolicyFn& policy);

/// Seed of evaluation episode `index`; fixed per run seed so evaluations are comparable.
std::uint64_t eval_episode_seed(std::uint64_t seed, int index);

/// Deterministic rollouts of an agent.
EvalResult evaluate(const DdpgAgent& agent, const PointMassConfig& env, int episodes, std::uint64_t seed);
/// Rebuilds the agent described by `config` and loads `checkpoint` into it.
EvalResult evaluate(const TrainConfig& config, const std::filesystem::path& checkpoint, int episodes);

/// Builds the networks of `config` and restores their parameters from a checkpoint.
struct Restored {
    DdpgAgent agent;
    PatchDiscriminator disc;
};
Restored restore_networks(const TrainConfig& config, const std::filesystem::path& checkpoint);

/// Trains with `config` and, at every log interval, scores the same batch of
/// replay pairs with both similarity forms. Writes sim_compare.csv in out_dir.
struct SimRow {
    long step = 0;
    double sim_raw = 0.0;
    double sim_bar = 0.0;
};
std::vector<SimRow> compare_similarity(const TrainConfig& config, Index pairs_per_interval = 64);

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace patchail
