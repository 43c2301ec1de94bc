#include "patchail/env.hpp"

#include "binary_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace patchail {

double pixel_level(int k) {
    static const std::array<double, 256> table = [] {
        std::array<double, 256> t{};
        for (int i = 0; i < 256; ++i) t[static_cast<std::size_t>(i)] = static_cast<float>(i / 255.0);
        return t;
    }();
    return table.at(static_cast<std::size_t>(std::clamp(k, 0, 255)));
}

void PointMassConfig::validate() const {
    if (image_size < 8) throw std::invalid_argument("env.image_size must be at least 8");
    if (frame_stack < 1 || frame_stack > 255) throw std::invalid_argument("env.frame_stack must be in [1, 255]");
    if (action_repeat < 1) throw std::invalid_argument("env.action_repeat must be positive");
    if (episode_length < 1) throw std::invalid_argument("env.episode_length must be positive");
    if (!(speed > 0.0)) throw std::invalid_argument("env.speed must be positive");
    if (!(start_min >= 0.0 && start_min <= start_max && start_max <= 1.0)) {
        throw std::invalid_argument("env start range must satisfy 0 <= start_min <= start_max <= 1");
    }
    if (!(goal_x >= 0.0 && goal_x <= 1.0 && goal_y >= 0.0 && goal_y <= 1.0)) {
        throw std::invalid_argument("env goal must lie in [0, 1]^2");
    }
    // The corners of the start square must leave room to satisfy the distance constraint.
    double farthest = 0.0;
    for (double x : {start_min, start_max}) {
        for (double y : {start_min, start_max}) farthest = std::max(farthest, std::hypot(x - goal_x, y - goal_y));
    }
    if (!(min_start_distance >= 0.0 && min_start_distance < farthest)) {
        throw std::invalid_argument("env.min_start_distance leaves no admissible start position");
    }
}

double PointMassConfig::max_step_distance() const { return speed * action_repeat * std::sqrt(2.0); }

std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

PointMassEnv::PointMassEnv(PointMassConfig config, std::uint64_t seed) : config_(config), rng_(seed) {
    config_.validate();
}

Tensor PointMassEnv::reset() {
    std::uniform_real_distribution<double> u(config_.start_min, config_.start_max);
    PointState s;
    do {
        s.x = u(rng_);
        s.y = u(rng_);
    } while (std::hypot(s.x - config_.goal_x, s.y - config_.goal_y) < config_.min_start_distance);
    return reset_to(s);
}

Tensor PointMassEnv::reset(std::uint64_t seed) {
    rng_.seed(seed);
    return reset();
}

Tensor PointMassEnv::reset_to(PointState start) {
    state_ = {std::clamp(start.x, 0.0, 1.0), std::clamp(start.y, 0.0, 1.0)};
    t_ = 0;
    started_ = true;
    const Eigen::ArrayXd frame = render(state_);
    frames_.assign(static_cast<std::size_t>(config_.frame_stack), frame);
    return observation();
}

StepResult PointMassEnv::step(const Eigen::Vector2d& action) {
    if (!started_ || done()) throw std::logic_error("PointMassEnv::step after episode end; call reset()");
    if (!action.allFinite()) throw std::invalid_argument("PointMassEnv::step: non-finite action");
    const Eigen::Vector2d a = action.cwiseMax(-1.0).cwiseMin(1.0);
    for (int i = 0; i < config_.action_repeat; ++i) {
        state_.x = std::clamp(state_.x + config_.speed * a.x(), 0.0, 1.0);
        state_.y = std::clamp(state_.y + config_.speed * a.y(), 0.0, 1.0);
    }
    ++t_;
    push_frame(render(state_));
    return {observation(), ground_truth_reward(), done()};
}

double PointMassEnv::ground_truth_reward() const {
    return 1.0 - std::hypot(state_.x - config_.goal_x, state_.y - config_.goal_y);
}

Eigen::ArrayXd PointMassEnv::render(const PointState& s) const {
    const Index n = config_.image_size;
    const double px = double(n);
    const double agent_r = config_.agent_radius * px;
    const double goal_r = config_.goal_radius * px;
    Eigen::ArrayXd frame(n * n);
    for (Index r = 0; r < n; ++r) {
        const double cy = r + 0.5;
        for (Index c = 0; c < n; ++c) {
            const double cx = c + 0.5;
            const double da = std::hypot(cx - s.x * px, cy - s.y * px);
            const double dg = std::hypot(cx - config_.goal_x * px, cy - config_.goal_y * px);
            const double agent = std::clamp(agent_r + 0.5 - da, 0.0, 1.0);
            const double ring = config_.goal_intensity * std::clamp(1.0 - std::abs(dg - goal_r), 0.0, 1.0);
            const double v = std::max(agent, ring);
            frame[r * n + c] = pixel_level(static_cast<int>(std::lround(v * 255.0)));
        }
    }
    return frame;
}

void PointMassEnv::push_frame(const Eigen::ArrayXd& frame) {
    std::rotate(frames_.begin(), frames_.begin() + 1, frames_.end());
    frames_.back() = frame;
}

Tensor PointMassEnv::observation() const {
    const Index plane = config_.image_size * config_.image_size;
    Array data(config_.frame_stack * plane);
    for (Index i = 0; i < config_.frame_stack; ++i) data.segment(i * plane, plane) = frames_[static_cast<std::size_t>(i)];
    return Tensor(Shape{config_.frame_stack, config_.image_size, config_.image_size}, std::move(data));
}

Eigen::Vector2d scripted_expert(const PointState& state, const PointMassConfig& config) {
    const double gain = 1.0 / (config.speed * config.action_repeat);
    Eigen::Vector2d a(gain * (config.goal_x - state.x), gain * (config.goal_y - state.y));
    return a.cwiseMax(-1.0).cwiseMin(1.0);
}

double straight_line_return_bound(const PointState& start, const PointMassConfig& config) {
    const double d0 = std::hypot(start.x - config.goal_x, start.y - config.goal_y);
    const double v = config.max_step_distance();
    double total = 0.0;
    for (int t = 1; t <= config.episode_length; ++t) total += 1.0 - std::max(0.0, d0 - t * v);
    return total;
}

// ---------------------------------------------------------------- trajectories

Eigen::ArrayXd Trajectory::observation(Index t) const {
    const Index n = observation_size();
    return observations.segment(t * n, n).cast<double>();
}

Eigen::ArrayXd Trajectory::pair(Index t) const {
    if (t < 0 || t >= steps) throw std::out_of_range("Trajectory::pair index");
    const Index n = observation_size();
    return observations.segment(t * n, 2 * n).cast<double>();
}

Eigen::Vector2d Trajectory::action(Index t) const {
    if (action_dim != 2) throw std::logic_error("trajectory has no 2-D actions");
    return Eigen::Vector2d(actions[t * 2], actions[t * 2 + 1]);
}

Index DemoSet::num_pairs() const {
    Index n = 0;
    for (const Trajectory& t : trajectories) n += t.steps;
    return n;
}

Tensor DemoSet::pairs(const std::vector<std::pair<Index, Index>>& index) const {
    if (trajectories.empty()) throw std::logic_error("DemoSet is empty");
    const Trajectory& first = trajectories.front();
    const Index per = 2 * first.observation_size();
    Array data(static_cast<Index>(index.size()) * per);
    for (std::size_t i = 0; i < index.size(); ++i) {
        const Trajectory& tr = trajectories.at(static_cast<std::size_t>(index[i].first));
        if (tr.observation_size() != first.observation_size()) throw std::logic_error("DemoSet: mixed frame shapes");
        data.segment(static_cast<Index>(i) * per, per) = tr.pair(index[i].second);
    }
    return Tensor(Shape{static_cast<Index>(index.size()), 2 * first.stack, first.height, first.width},
                  std::move(data));
}

Tensor DemoSet::sample_pairs(Index count, std::mt19937_64& rng) const {
    const Index total = num_pairs();
    if (total == 0) throw std::logic_error("DemoSet has no observation pairs");
    std::uniform_int_distribution<Index> pick(0, total - 1);
    std::vector<std::pair<Index, Index>> index;
    index.reserve(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i) {
        Index k = pick(rng);
        Index tr = 0;
        while (k >= trajectories[static_cast<std::size_t>(tr)].steps) k -= trajectories[static_cast<std::size_t>(tr++)].steps;
        index.emplace_back(tr, k);
    }
    return pairs(index);
}

Tensor DemoSet::all_pairs() const {
    std::vector<std::pair<Index, Index>> index;
    for (std::size_t tr = 0; tr < trajectories.size(); ++tr) {
        for (Index t = 0; t < trajectories[tr].steps; ++t) index.emplace_back(static_cast<Index>(tr), t);
    }
    return pairs(index);
}

// ---------------------------------------------------------------- file format

std::uintmax_t demo_file_size(const std::vector<Trajectory>& trajectories) {
    std::uintmax_t bytes = 4 + 4 + 4;
    for (const Trajectory& t : trajectories) {
        bytes += 4 + 1 + 2 + 2 + 1;
        bytes += 4ull * static_cast<std::uintmax_t>((t.steps + 1) * t.observation_size());
        bytes += 4ull * static_cast<std::uintmax_t>(t.steps * t.action_dim);
    }
    return bytes;
}

namespace {

std::filesystem::path sidecar(const std::filesystem::path& path) {
    std::filesystem::path p = path;
    p += ".json";
    return p;
}

}  // namespace

void save_demos(const DemoSet& demos, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write demo file " + path.string());
    os.write("PAIL", 4);
    io::put<std::uint32_t>(os, kDemoVersion);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(demos.trajectories.size()));
    for (const Trajectory& t : demos.trajectories) {
        if (t.stack > 255 || t.height > 65535 || t.width > 65535 || t.action_dim > 255) {
            throw std::invalid_argument("trajectory dimensions exceed the demo format's field widths");
        }
        if (t.observations.size() != (t.steps + 1) * t.observation_size() ||
            t.actions.size() != t.steps * t.action_dim) {
            throw std::invalid_argument("trajectory arrays do not match their declared sizes");
        }
        io::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.steps));
        io::put<std::uint8_t>(os, static_cast<std::uint8_t>(t.stack));
        io::put<std::uint16_t>(os, static_cast<std::uint16_t>(t.height));
        io::put<std::uint16_t>(os, static_cast<std::uint16_t>(t.width));
        io::put<std::uint8_t>(os, static_cast<std::uint8_t>(t.action_dim));
        os.write(reinterpret_cast<const char*>(t.observations.data()),
                 static_cast<std::streamsize>(t.observations.size() * 4));
        os.write(reinterpret_cast<const char*>(t.actions.data()), static_cast<std::streamsize>(t.actions.size() * 4));
    }
    if (!os) throw std::runtime_error("write failed for demo file " + path.string());

    nlohmann::json meta{{"env", demos.metadata.env},
                        {"seed", demos.metadata.seed},
                        {"expert_return", demos.metadata.expert_return},
                        {"returns", demos.metadata.returns},
                        {"episode_seeds", demos.metadata.episode_seeds}};
    std::ofstream ms(sidecar(path), std::ios::trunc);
    if (!ms) throw std::runtime_error("cannot write demo metadata " + sidecar(path).string());
    ms << meta.dump(2) << '\n';
}

DemoSet load_demos(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open demo file " + path.string());
    DemoSet demos;
    try {
        io::expect_magic(is, "PAIL");
        const auto version = io::get<std::uint32_t>(is, "version");
        if (version != kDemoVersion) throw io::FormatError("unsupported demo version " + std::to_string(version));
        const auto n = io::get<std::uint32_t>(is, "trajectory count");
        for (std::uint32_t i = 0; i < n; ++i) {
            Trajectory t;
            t.steps = io::get<std::uint32_t>(is, "T");
            t.stack = io::get<std::uint8_t>(is, "stack");
            t.height = io::get<std::uint16_t>(is, "H");
            t.width = io::get<std::uint16_t>(is, "W");
            t.action_dim = io::get<std::uint8_t>(is, "act_dim");
            t.observations.resize((t.steps + 1) * t.observation_size());
            t.actions.resize(t.steps * t.action_dim);
            if (!is.read(reinterpret_cast<char*>(t.observations.data()),
                         static_cast<std::streamsize>(t.observations.size() * 4))) {
                throw io::FormatError("truncated file while reading frames");
            }
            if (!is.read(reinterpret_cast<char*>(t.actions.data()), static_cast<std::streamsize>(t.actions.size() * 4))) {
                throw io::FormatError("truncated file while reading actions");
            }
            demos.trajectories.push_back(std::move(t));
        }
        if (is.peek() != std::char_traits<char>::eof()) throw io::FormatError("trailing bytes after last trajectory");
    } catch (const io::FormatError& e) {
        throw DemoFormatError(path.string() + ": " + e.what());
    }

    std::ifstream ms(sidecar(path));
    if (ms) {
        const nlohmann::json meta = nlohmann::json::parse(ms);
        demos.metadata.env = meta.value("env", "point_mass");
        demos.metadata.seed = meta.value("seed", std::uint64_t{0});
        demos.metadata.expert_return = meta.value("expert_return", 0.0);
        demos.metadata.returns = meta.value("returns", std::vector<double>{});
        demos.metadata.episode_seeds = meta.value("episode_seeds", std::vector<std::uint64_t>{});
    }
    return demos;
}

namespace {
// Out of line so the optimizer cannot fold the narrowing into the caller.
[[gnu::noinline]] Eigen::Vector2d round_to_float(const Eigen::Vector2d& a) {
    volatile float x = static_cast<float>(a.x());
    volatile float y = static_cast<float>(a.y());
    return Eigen::Vector2d(double(x), double(y));
}
}  // namespace

DemoSet generate_demos(const PointMassConfig& config, int episodes, std::uint64_t seed, bool with_actions) {
    if (episodes < 1) throw std::invalid_argument("generate_demos: need at least one episode");
    PointMassEnv env(config, seed);
    DemoSet demos;
    demos.metadata.seed = seed;
    const Index obs_size = config.frame_stack * config.image_size * config.image_size;
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
        const std::uint64_t es = episode_seed(seed, static_cast<std::uint64_t>(e));
        Trajectory t;
        t.steps = config.episode_length;
        t.stack = config.frame_stack;
        t.height = config.image_size;
        t.width = config.image_size;
        t.action_dim = with_actions ? PointMassEnv::kActionDim : 0;
        t.observations.resize((t.steps + 1) * obs_size);
        t.actions.resize(t.steps * t.action_dim);

        Tensor obs = env.reset(es);
        t.observations.segment(0, obs_size) = obs.data().cast<float>();
        double ret = 0.0;
        for (Index k = 0; k < t.steps; ++k) {
            // Stored actions are f32; apply exactly the rounded command so replays match.
            const Eigen::Vector2d cmd = round_to_float(scripted_expert(env.state(), config));
            if (with_actions) {
                t.actions[k * 2] = static_cast<float>(cmd.x());
                t.actions[k * 2 + 1] = static_cast<float>(cmd.y());
            }
            const StepResult r = env.step(cmd);
            ret += r.ground_truth_reward;
            t.observations.segment((k + 1) * obs_size, obs_size) = r.observation.data().cast<float>();
        }
        demos.metadata.returns.push_back(ret);
        demos.metadata.episode_seeds.push_back(es);
        total += ret;
        demos.trajectories.push_back(std::move(t));
    }
    demos.metadata.expert_return = total / episodes;
    return demos;
}

double replay_return(const Trajectory& trajectory, const PointMassConfig& config, std::uint64_t seed) {
    PointMassEnv env(config, 0);
    env.reset(seed);
    double ret = 0.0;
    for (Index k = 0; k < trajectory.steps; ++k) ret += env.step(trajectory.action(k)).ground_truth_reward;
    return ret;
}

}  // namespace patchail
