#include "patchail/env.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace patchail;

namespace {

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "patchail_test_env";
    std::filesystem::create_directories(dir);
    return dir / name;
}

PointMassConfig small() {
    PointMassConfig c;
    c.image_size = 24;
    c.episode_length = 40;
    return c;
}

}  // namespace

TEST_CASE("dynamics and reward") {
    PointMassEnv env(small(), 1);
    const Tensor obs = env.reset_to({0.2, 0.3});
    CHECK(obs.shape() == Shape{3, 24, 24});
    const double r0 = env.ground_truth_reward();
    for (int i = 0; i < 5; ++i) {
        const StepResult s = env.step(Eigen::Vector2d::Zero());
        CHECK(env.state().x == 0.2);
        CHECK(env.state().y == 0.3);
        CHECK(s.ground_truth_reward == r0);
    }
    CHECK(r0 == doctest::Approx(1.0 - std::hypot(0.3, 0.2)).epsilon(1e-15));

    env.reset_to({0.5, 0.5});
    CHECK(env.step(Eigen::Vector2d::Zero()).ground_truth_reward == 1.0);

    // Commands are clipped to [-1, 1] and positions to the unit square.
    env.reset_to({0.99, 0.01});
    env.step(Eigen::Vector2d(50.0, -50.0));
    CHECK(env.state().x == 1.0);
    CHECK(env.state().y == 0.0);

    const PointMassConfig cfg = small();
    env.reset_to({0.3, 0.3});
    env.step(Eigen::Vector2d(1.0, 0.5));
    CHECK(env.state().x == doctest::Approx(0.3 + cfg.action_repeat * cfg.speed).epsilon(1e-15));
    CHECK(env.state().y == doctest::Approx(0.3 + 0.5 * cfg.action_repeat * cfg.speed).epsilon(1e-15));
}

TEST_CASE("observations are stacked frames in [0, 1]") {
    PointMassEnv env(small(), 2);
    Tensor obs = env.reset();
    const Index n = 24 * 24;
    // At reset every slot holds the first frame.
    CHECK((obs.data().segment(0, n) == obs.data().segment(2 * n, n)).all());
    const Eigen::ArrayXd before = obs.data().segment(2 * n, n);
    obs = env.step(Eigen::Vector2d(1.0, 1.0)).observation;
    CHECK((obs.data().segment(n, n) == before).all());  // shifted back by one slot
    CHECK((obs.data().segment(2 * n, n) == env.render(env.state())).all());
    CHECK((obs.data() >= 0.0).all());
    CHECK((obs.data() <= 1.0).all());
    // Values sit on the 8-bit level grid.
    for (double v : obs.data()) CHECK(pixel_level(static_cast<int>(std::lround(v * 255.0))) == v);
}

TEST_CASE("episodes end and starts respect the goal distance") {
    const PointMassConfig cfg = small();
    PointMassEnv env(cfg, 3);
    for (int e = 0; e < 200; ++e) {
        env.reset();
        const double d = std::hypot(env.state().x - cfg.goal_x, env.state().y - cfg.goal_y);
        CHECK(d >= cfg.min_start_distance);
        CHECK(env.state().x >= cfg.start_min);
        CHECK(env.state().x <= cfg.start_max);
    }
    for (int t = 0; t < cfg.episode_length - 1; ++t) CHECK_FALSE(env.step(Eigen::Vector2d::Zero()).done);
    CHECK(env.step(Eigen::Vector2d::Zero()).done);
    CHECK_THROWS_AS(env.step(Eigen::Vector2d::Zero()), std::logic_error);
}

TEST_CASE("fixed seed and actions give bit-identical observations") {
    auto run = [] {
        PointMassEnv env(small(), 0);
        Tensor obs = env.reset(42);
        std::vector<Eigen::ArrayXd> frames{obs.data()};
        for (int t = 0; t < 20; ++t) frames.push_back(env.step(Eigen::Vector2d(std::sin(t), std::cos(t))).observation.data());
        return frames;
    };
    const auto a = run(), b = run();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK((a[i] == b[i]).all());
}

TEST_CASE("scripted expert") {
    const PointMassConfig cfg = small();
    CHECK(scripted_expert({0.5, 0.5}, cfg).isZero());
    CHECK(scripted_expert({0.2, 0.5}, cfg).x() > 0.0);
    CHECK(scripted_expert({0.8, 0.5}, cfg).x() < 0.0);

    PointMassConfig full;
    full.image_size = 16;  // rendering does not affect returns
    double expert = 0.0, bound = 0.0;
    PointMassEnv env(full, 0);
    for (int e = 0; e < 100; ++e) {
        env.reset(episode_seed(5, e));
        const PointState start = env.state();
        double ret = 0.0;
        while (!env.done()) ret += env.step(scripted_expert(env.state(), full)).ground_truth_reward;
        expert += ret;
        const double b = straight_line_return_bound(start, full);
        CHECK(ret <= b + 1e-9);
        bound += b;
    }
    CHECK(expert >= 0.9 * bound);
}

TEST_CASE("demo files") {
    PointMassConfig cfg = small();
    const DemoSet demos = generate_demos(cfg, 10, 9);
    REQUIRE(demos.trajectories.size() == 10);
    CHECK(demos.num_pairs() == 10 * cfg.episode_length);
    const auto path = scratch("demos.pail");
    save_demos(demos, path);
    CHECK(std::filesystem::file_size(path) == demo_file_size(demos.trajectories));
    // Header 12 bytes; per trajectory 10 bytes + f32 frames + f32 actions.
    const std::uintmax_t per = 10 + 4 * (41 * 3 * 24 * 24) + 4 * (40 * 2);
    CHECK(std::filesystem::file_size(path) == 12 + 10 * per);

    const DemoSet back = load_demos(path);
    REQUIRE(back.trajectories.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        const Trajectory &a = demos.trajectories[i], &b = back.trajectories[i];
        CHECK(a.steps == b.steps);
        CHECK((a.observations == b.observations).all());
        CHECK((a.actions == b.actions).all());
    }
    CHECK(back.metadata.expert_return == demos.metadata.expert_return);
    CHECK(back.metadata.episode_seeds == demos.metadata.episode_seeds);

    // Replaying stored actions reproduces the recorded returns.
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(replay_return(back.trajectories[i], cfg, back.metadata.episode_seeds[i]) ==
              doctest::Approx(back.metadata.returns[i]).epsilon(1e-12));
    }

    // Observation-only files carry no actions.
    const auto bare = scratch("bare.pail");
    save_demos(generate_demos(cfg, 2, 9, false), bare);
    CHECK(load_demos(bare).trajectories[0].action_dim == 0);

    // Pairs concatenate consecutive observations along channels.
    const Tensor p = back.pairs({{3, 7}});
    CHECK(p.shape() == Shape{1, 6, 24, 24});
    const Index n = 3 * 24 * 24;
    CHECK((p.data().segment(0, n) == back.trajectories[3].observation(7)).all());
    CHECK((p.data().segment(n, n) == back.trajectories[3].observation(8)).all());
}

TEST_CASE("corrupted demo files are rejected") {
    const auto path = scratch("bad.pail");
    save_demos(generate_demos(small(), 1, 1), path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(load_demos(path), DemoFormatError);
    std::filesystem::resize_file(path, 20);
    CHECK_THROWS(load_demos(path));
    CHECK_THROWS(load_demos(scratch("missing.pail")));
}

TEST_CASE("config validation") {
    PointMassConfig c;
    c.image_size = 4;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = PointMassConfig{};
    c.min_start_distance = 2.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK(episode_seed(1, 2) != episode_seed(1, 3));
    CHECK(episode_seed(1, 2) == episode_seed(1, 2));
}
