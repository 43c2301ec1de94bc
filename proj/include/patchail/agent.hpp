#pragma once

#include "patchail/nets.hpp"
#include "patchail/optim.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <vector>

namespace patchail {

// ---------------------------------------------------------------- augmentation

/// Replicate-pads every sample by `pad` and crops an HxW window at the given
/// per-sample (row, col) offsets in [0, 2*pad]. All channels of a sample share it.
Tensor shift_with_offsets(const Tensor& batch, int pad, const std::vector<std::pair<int, int>>& offsets);

/// Random-shift augmentation with offsets drawn uniformly from `rng`.
Tensor random_shift(const Tensor& batch, int pad, std::mt19937_64& rng);

// ---------------------------------------------------------------- exploration

struct ExplorationSchedule {
    double start = 1.0;
    double end = 0.1;
    long horizon = 500000;

    double value(long step) const;
};

// ---------------------------------------------------------------- replay

/// Maps a batch of observation pairs [B, 2*stack, H, W] to one reward each.
using PairRewardFn = std::function<Eigen::ArrayXd(const Tensor& pairs)>;

struct NStepBatch {
    Tensor obs;         // s_t        [B, stack, H, W]
    Tensor action;      // a_t        [B, A]
    Tensor next_obs;    // s_{t+n}    [B, stack, H, W]
    Eigen::ArrayXd returns;   // sum_{k<n} gamma^k r_{t+k}, cut at a terminal step
    Eigen::ArrayXd discount;  // gamma^n (0 if a terminal step was reached)
    Tensor pairs;       // the (s_{t+k}, s_{t+k+1}) pairs that were scored
};

/// Ring buffer of single frames. Stacks are rebuilt from consecutive frames of
/// one episode, so a transition never carries an environment reward.
class ReplayBuffer {
public:
    ReplayBuffer(Index capacity, Index frame_stack, Index height, Index width, Index action_dim);

    /// Opens a new episode whose first frame is `frame` [H*W].
    void start_episode(const Eigen::ArrayXd& frame);
    /// Records the action taken from the current observation and the frame it produced.
    /// `terminal` marks a true termination (no bootstrapping past it).
    void add(const Eigen::VectorXd& action, const Eigen::ArrayXd& next_frame, bool terminal = false);

    /// Stored frames (slots), at most capacity.
    Index size() const { return std::min<Index>(static_cast<Index>(written_), capacity_); }
    Index capacity() const { return capacity_; }
    /// Slots currently holding a transition whose n-step window is complete.
    bool can_sample(int n) const;

    /// Uniform over transitions t whose window t..t+n stays inside one episode
    /// (or reaches a terminal step earlier).
    NStepBatch sample_nstep(Index batch, int n, double gamma, const PairRewardFn& reward_fn,
                            std::mt19937_64& rng) const;
    /// Uniform single-step pairs (s_t, s_{t+1}) [B, 2*stack, H, W].
    Tensor sample_pairs(Index batch, std::mt19937_64& rng) const;

    /// Global index of the oldest retained frame and of the next frame to be written.
    std::uint64_t oldest() const { const auto cap = static_cast<std::uint64_t>(capacity_); return written_ > cap ? written_ - cap : 0; }
    std::uint64_t next_index() const { return written_; }
    /// Frame stored under a global index.
    Eigen::ArrayXd frame(std::uint64_t index) const;
    /// Stacked observation ending at global frame index.
    Eigen::ArrayXd observation(std::uint64_t index) const;
    /// Number of frames of the episode preceding this one inside it (0 for the first frame).
    Index step_in_episode(std::uint64_t index) const;

private:
    struct Slot {
        std::uint64_t episode = 0;
        Index step = 0;       // position within the episode
        bool has_action = false;
        bool terminal = false;  // the frame after this slot's action ends the episode
    };

    std::size_t slot_of(std::uint64_t index) const { return static_cast<std::size_t>(index % std::uint64_t(capacity_)); }
    bool retained(std::uint64_t index) const { return index >= oldest() && index < written_; }
    /// Whether transition at `index` has a complete window and full stack in memory.
    bool valid_start(std::uint64_t index, int n) const;
    void write_frame(const Eigen::ArrayXd& frame);

    Index capacity_;
    Index stack_, height_, width_, action_dim_;
    std::vector<std::uint8_t> frames_;  // capacity x H x W, intensity levels
    Eigen::ArrayXXd actions_;           // action_dim x capacity
    std::vector<Slot> slots_;
    std::uint64_t written_ = 0;
    std::uint64_t episode_ = 0;
    bool open_ = false;
};

// ---------------------------------------------------------------- agent

struct AgentConfig {
    double lr = 1e-4;
    double gamma = 0.99;
    int nstep = 3;
    Index batch_size = 256;
    double tau = 0.01;
    Index feature_dim = 50;
    Index hidden_dim = 1024;
    long exploration_steps = 2000;
    ExplorationSchedule schedule{};
    int aug_pad = 4;
    ArchSpec encoder_arch = arch::encoder();

    void validate() const;
};

struct UpdateStats {
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    double mean_q = 0.0;
};

/// Pixel actor-critic: DDPG with twin critics, a shared conv encoder trained by
/// the critic loss only, and soft-updated target critics.
class DdpgAgent {
public:
    DdpgAgent(const AgentConfig& config, Index frame_stack, Index image_size, Index action_dim, std::uint64_t seed);

    /// Uniform actions before `exploration_steps`, then actor + N(0, schedule(step)^2) noise,
    /// clipped; no noise when `explore` is false.
    Eigen::VectorXd act(const Tensor& observation, long step, bool explore, std::mt19937_64& rng) const;

    struct CriticStep {
        double loss = 0.0;  // before the step
        double mean_q = 0.0;
        Tensor features;    // encoder output before the step, detached
    };

    /// Critic step on an (already augmented) batch; encoder gradients come from here only.
    CriticStep update_critic(const Tensor& obs, const Tensor& action, const Eigen::ArrayXd& returns,
                             const Tensor& next_obs, const Eigen::ArrayXd& discount);
    /// Actor step through critic 1 on detached features.
    double update_actor(const Tensor& features);
    /// Moves target critics toward online critics by `tau`.
    void soft_update(double tau);

    /// Augments, then runs critic, actor and target updates.
    UpdateStats update(const NStepBatch& batch, std::mt19937_64& rng);

    const AgentConfig& config() const { return config_; }
    const Encoder& encoder() const { return encoder_; }
    const Actor& actor() const { return actor_; }
    const Critic& critic(int i) const { return critics_.at(static_cast<std::size_t>(i)); }
    const Critic& target_critic(int i) const { return targets_.at(static_cast<std::size_t>(i)); }

    NamedTensors named_parameters() const;
    /// Encoder and actor only; enough to act.
    NamedTensors policy_parameters() const;

private:
    AgentConfig config_;
    Index action_dim_;
    Encoder encoder_;
    Actor actor_;
    std::array<Critic, 2> critics_;
    std::array<Critic, 2> targets_;
    std::shared_ptr<Adam> encoder_opt_;
    std::shared_ptr<Adam> actor_opt_;
    std::shared_ptr<Adam> critic_opt_;
};

}  // namespace patchail
