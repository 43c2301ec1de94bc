#pragma once

#include "patchail/tensor.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace patchail {

/// Grayscale intensity levels are k/255 rounded through float, so frames survive
/// a float32 round trip bit for bit.
double pixel_level(int k);

struct PointMassConfig {
    Index image_size = 84;
    Index frame_stack = 3;
    int action_repeat = 2;
    int episode_length = 250;  // decision steps
    double speed = 0.025;      // displacement per inner step at |action| = 1
    double goal_x = 0.5;
    double goal_y = 0.5;
    // Starts are uniform in [start_min, start_max]^2, redrawn while closer than
    // min_start_distance to the goal.
    double start_min = 0.05;
    double start_max = 0.95;
    double min_start_distance = 0.3;
    double agent_radius = 0.07;
    double goal_radius = 0.1;
    double goal_intensity = 0.35;

    void validate() const;
    /// Largest distance covered in one decision step (diagonal at full command).
    double max_step_distance() const;
};

struct PointState {
    double x = 0.0;
    double y = 0.0;
};

struct StepResult {
    Tensor observation;        // [stack, H, W]
    double ground_truth_reward = 0.0;
    bool done = false;
};

/// 2-D point mass driven by velocity commands toward a fixed goal.
class PointMassEnv {
public:
    static constexpr Index kActionDim = 2;

    explicit PointMassEnv(PointMassConfig config = {}, std::uint64_t seed = 0);

    /// Starts an episode from a start position drawn from the env's stream.
    Tensor reset();
    /// Re-seeds, then resets.
    Tensor reset(std::uint64_t episode_seed);
    /// Starts an episode at an explicit position.
    Tensor reset_to(PointState start);

    StepResult step(const Eigen::Vector2d& action);

    const PointMassConfig& config() const { return config_; }
    const PointState& state() const { return state_; }
    PointState goal() const { return {config_.goal_x, config_.goal_y}; }
    int steps_taken() const { return t_; }
    bool done() const { return t_ >= config_.episode_length; }
    double ground_truth_reward() const;

    /// Single frame [H, W] of a state; pure function of the state.
    Eigen::ArrayXd render(const PointState& s) const;
    Tensor observation() const;

private:
    void push_frame(const Eigen::ArrayXd& frame);

    PointMassConfig config_;
    std::mt19937_64 rng_;
    PointState state_;
    int t_ = 0;
    bool started_ = false;
    std::vector<Eigen::ArrayXd> frames_;  // oldest first
};

/// Proportional controller toward the goal, clipped to [-1, 1]^2. Uses the true state.
Eigen::Vector2d scripted_expert(const PointState& state, const PointMassConfig& config);

/// Upper bound on an episode's return for a controller that heads straight
/// at the goal at the largest speed any admissible action allows.
double straight_line_return_bound(const PointState& start, const PointMassConfig& config);

/// Seed of episode `index` in a run seeded with `seed`.
std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t index);

// ---------------------------------------------------------------- demonstrations

struct Trajectory {
    Index steps = 0;  // T; there are T+1 observations
    Index stack = 0;
    Index height = 0;
    Index width = 0;
    Index action_dim = 0;        // 0 when actions are absent
    Eigen::ArrayXf observations;  // [(T+1), stack, H, W]
    Eigen::ArrayXf actions;       // [T, action_dim]

    Index observation_size() const { return stack * height * width; }
    /// Observation t as doubles, [stack*H*W].
    Eigen::ArrayXd observation(Index t) const;
    /// Channel-concatenated (s_t, s_{t+1}), [2*stack*H*W].
    Eigen::ArrayXd pair(Index t) const;
    Eigen::Vector2d action(Index t) const;
};

struct DemoMetadata {
    std::string env = "point_mass";
    std::uint64_t seed = 0;
    double expert_return = 0.0;          // mean over trajectories
    std::vector<double> returns;         // per trajectory
    std::vector<std::uint64_t> episode_seeds;
};

struct DemoSet {
    std::vector<Trajectory> trajectories;
    DemoMetadata metadata;

    Index num_pairs() const;
    /// Pairs stacked into [count, 2*stack, H, W] for the given (trajectory, t) indices.
    Tensor pairs(const std::vector<std::pair<Index, Index>>& index) const;
    /// Uniformly sampled pairs.
    Tensor sample_pairs(Index count, std::mt19937_64& rng) const;
    /// Every pair in order.
    Tensor all_pairs() const;
};

inline constexpr std::uint32_t kDemoVersion = 1;

struct DemoFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Binary layout (little-endian): "PAIL", u32 version, u32 n_traj, then per
/// trajectory u32 T, u8 stack, u16 H, u16 W, u8 act_dim, f32 observations
/// [(T+1) x stack x H x W], f32 actions [T x act_dim]. Metadata goes to a
/// JSON sidecar at `<path>.json`.
void save_demos(const DemoSet& demos, const std::filesystem::path& path);
DemoSet load_demos(const std::filesystem::path& path);
/// Byte size of the binary file for these trajectories.
std::uintmax_t demo_file_size(const std::vector<Trajectory>& trajectories);

/// Rolls out the scripted expert for `episodes` episodes.
DemoSet generate_demos(const PointMassConfig& config, int episodes, std::uint64_t seed, bool with_actions = true);

/// Replays a trajectory's actions from its seeded start and returns the ground-truth return.
double replay_return(const Trajectory& trajectory, const PointMassConfig& config, std::uint64_t episode_seed);

}  // namespace patchail
