#include "patchail/agent.hpp"
#include "patchail/checkpoint.hpp"
#include "patchail/env.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace patchail;
using namespace patchail::testing;

namespace {

// 2x2 frames that encode a global frame counter in their first two pixels.
Eigen::ArrayXd code_frame(std::uint64_t g) {
    Eigen::ArrayXd f = Eigen::ArrayXd::Zero(4);
    f[0] = pixel_level(static_cast<int>(g % 256));
    f[1] = pixel_level(static_cast<int>(g / 256));
    return f;
}

std::uint64_t decode(const Eigen::ArrayXd& frame) {
    return static_cast<std::uint64_t>(std::lround(frame[0] * 255.0)) +
           256u * static_cast<std::uint64_t>(std::lround(frame[1] * 255.0));
}

AgentConfig tiny_agent() {
    AgentConfig c;
    c.batch_size = 8;
    c.feature_dim = 8;
    c.hidden_dim = 16;
    c.lr = 1e-3;
    c.aug_pad = 2;
    c.encoder_arch = ArchSpec::parse("[(3,4,2,0),(3,4,1,0)]");
    c.encoder_arch.terminal = Activation::relu;
    return c;
}

bool same_values(const NamedTensors& a, const NamedTensors& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(a[i].second.data() == b[i].second.data()).all()) return false;
    }
    return true;
}

NamedTensors snapshot(const NamedTensors& t) {
    NamedTensors out;
    for (const auto& [name, v] : t) out.emplace_back(name, v.clone());
    return out;
}

NamedTensors with_prefix(const NamedTensors& all, const std::string& prefix) {
    NamedTensors out;
    for (const auto& e : all) {
        if (e.first.rfind(prefix, 0) == 0) out.push_back(e);
    }
    return out;
}

}  // namespace

TEST_CASE("random shift: centre offset, shapes, impulse tracking") {
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({3, 2, 10, 10}, rng, 0, 1);
    const Tensor centred = shift_with_offsets(x, 4, {{4, 4}, {4, 4}, {4, 4}});
    CHECK((centred.data() == x.data()).all());
    for (int trial = 0; trial < 20; ++trial) CHECK(random_shift(x, 4, rng).shape() == x.shape());

    // Impulse at (r, c) moves to (r + pad - dr, c + pad - dc) and keeps its mass.
    const int pad = 2;
    for (int dr = 0; dr <= 2 * pad; ++dr)
        for (int dc = 0; dc <= 2 * pad; ++dc) {
            Tensor img = Tensor::zeros({1, 1, 12, 12});
            img.data()[5 * 12 + 6] = 1.0;
            const Tensor y = shift_with_offsets(img, pad, {{dr, dc}});
            CHECK(y.data().sum() == 1.0);
            CHECK(at4(y, 0, 0, 5 + pad - dr, 6 + pad - dc) == 1.0);
        }
    CHECK_THROWS_AS(shift_with_offsets(x, 4, {{9, 0}, {4, 4}, {4, 4}}), std::invalid_argument);
    CHECK_THROWS_AS(shift_with_offsets(x, 5, {{0, 0}, {0, 0}, {0, 0}}), std::invalid_argument);
}

TEST_CASE("random shift moves all channels of a sample by the same offset") {
    std::mt19937_64 rng(2);
    Tensor img = Tensor::zeros({1, 3, 12, 12});
    for (Index c = 0; c < 3; ++c) img.data()[(c * 12 + 6) * 12 + 6] = 1.0;
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor y = random_shift(img, 2, rng);
        Index where[3];
        for (Index c = 0; c < 3; ++c) {
            Eigen::Index idx = 0;
            y.data().segment(c * 144, 144).maxCoeff(&idx);
            where[c] = idx;
        }
        CHECK(where[0] == where[1]);
        CHECK(where[1] == where[2]);
    }
}

TEST_CASE("exploration schedule") {
    const ExplorationSchedule s{1.0, 0.1, 500000};
    CHECK(s.value(0) == 1.0);
    CHECK(s.value(250000) == doctest::Approx(0.55).epsilon(1e-15));
    CHECK(s.value(500000) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(s.value(900000) == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("n-step return of three unit rewards") {
    ReplayBuffer buf(100, 1, 2, 2, 2);
    buf.start_episode(code_frame(0));
    for (std::uint64_t t = 1; t <= 3; ++t) buf.add(Eigen::VectorXd::Zero(2), code_frame(t));
    std::mt19937_64 rng(3);
    const auto ones = [](const Tensor& p) { return Eigen::ArrayXd::Ones(p.dim(0)); };
    const NStepBatch b = buf.sample_nstep(4, 3, 0.99, ones, rng);
    for (Index i = 0; i < 4; ++i) {
        CHECK(b.returns[i] == doctest::Approx(2.9701).epsilon(1e-15));
        CHECK(b.discount[i] == doctest::Approx(std::pow(0.99, 3)).epsilon(1e-15));
    }
    CHECK_FALSE(buf.can_sample(4));
}

TEST_CASE("n-step window stops at a terminal step") {
    ReplayBuffer buf(100, 1, 2, 2, 2);
    buf.start_episode(code_frame(0));
    buf.add(Eigen::VectorXd::Zero(2), code_frame(1), true);
    std::mt19937_64 rng(4);
    const auto r = [](const Tensor& p) { return Eigen::ArrayXd::Constant(p.dim(0), 0.75); };
    const NStepBatch b = buf.sample_nstep(3, 3, 0.99, r, rng);
    for (Index i = 0; i < 3; ++i) {
        CHECK(b.returns[i] == 0.75);
        CHECK(b.discount[i] == 0.0);
    }
    CHECK(b.pairs.dim(0) == 3);
}

TEST_CASE("n-step returns match a scan over the stored episodes") {
    const Index capacity = 64;
    ReplayBuffer buf(capacity, 2, 2, 2, 2);
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> len(1, 12);
    std::bernoulli_distribution ends_terminal(0.5);
    const Eigen::ArrayXd reward_of = uniform(1000, rng, -1, 1);  // reward of the transition out of frame g
    std::map<std::uint64_t, std::uint64_t> episode_of;
    std::map<std::uint64_t, bool> terminal_after;  // frame g's transition ends the episode
    std::map<std::uint64_t, bool> has_action;
    std::uint64_t g = 0, episode = 0;
    while (g < 300) {
        ++episode;
        buf.start_episode(code_frame(g));
        episode_of[g] = episode;
        const int steps = len(rng);
        const bool term = ends_terminal(rng);
        for (int k = 0; k < steps; ++k) {
            has_action[g] = true;
            terminal_after[g] = term && k == steps - 1;
            buf.add(Eigen::VectorXd::Constant(2, double(g)), code_frame(g + 1), terminal_after[g]);
            ++g;
            episode_of[g] = episode;
        }
        ++g;  // the next episode starts on a fresh frame
    }
    REQUIRE(buf.next_index() == g);
    CHECK(buf.size() == capacity);
    CHECK(buf.oldest() == g - capacity);

    const int n = 3;
    const double gamma = 0.9;
    const Index plane = 4;
    const auto reward_fn = [&](const Tensor& pairs) {
        Eigen::ArrayXd r(pairs.dim(0));
        const Index per = pairs.size() / pairs.dim(0);
        // Transition out of frame t: the current frame is the last stacked frame of s_t.
        for (Index i = 0; i < pairs.dim(0); ++i) r[i] = reward_of[decode(pairs.data().segment(i * per + plane, plane))];
        return r;
    };
    const NStepBatch b = buf.sample_nstep(1000, n, gamma, reward_fn, rng);
    for (Index i = 0; i < 1000; ++i) {
        const std::uint64_t t = decode(b.obs.data().segment(i * 2 * plane + plane, plane));
        REQUIRE(has_action.count(t));
        CHECK(b.action.data()[2 * i] == double(t));
        double ret = 0.0, disc = 1.0;
        std::uint64_t end = t;
        bool stopped = false;
        for (int k = 0; k < n; ++k) {
            ret += disc * reward_of[t + k];
            disc *= gamma;
            end = t + k + 1;
            CHECK(episode_of[t + k] == episode_of[t]);
            if (terminal_after[t + k]) {
                stopped = true;
                break;
            }
        }
        CHECK(b.returns[i] == doctest::Approx(ret).epsilon(1e-12));
        CHECK(b.discount[i] == (stopped ? 0.0 : std::pow(gamma, n)));
        CHECK(decode(b.next_obs.data().segment(i * 2 * plane + plane, plane)) == end);
        CHECK(episode_of[end] == episode_of[t]);
        CHECK(t >= buf.oldest());
    }
}

TEST_CASE("replay buffer evicts oldest frames first") {
    ReplayBuffer buf(10, 3, 2, 2, 2);
    buf.start_episode(code_frame(0));
    for (std::uint64_t g = 1; g < 25; ++g) buf.add(Eigen::VectorXd::Zero(2), code_frame(g));
    CHECK(buf.size() == 10);
    CHECK(buf.oldest() == 15);
    for (std::uint64_t g = 15; g < 25; ++g) CHECK(decode(buf.frame(g)) == g);
    CHECK_THROWS_AS(buf.frame(14), std::out_of_range);
    // Stacks repeat the first frame at the episode start.
    ReplayBuffer fresh(10, 3, 2, 2, 2);
    fresh.start_episode(code_frame(7));
    const Eigen::ArrayXd obs = fresh.observation(0);
    CHECK(decode(obs.segment(0, 4)) == 7);
    CHECK(decode(obs.segment(8, 4)) == 7);
    CHECK_THROWS_AS(ReplayBuffer(10, 1, 2, 2, 2).add(Eigen::VectorXd::Zero(2), code_frame(0)), std::logic_error);
}

TEST_CASE("pre-training exploration is uniform on the action box") {
    DdpgAgent agent(tiny_agent(), 3, 16, 2, 1);
    std::mt19937_64 rng(6);
    const Tensor obs = Tensor::zeros({3, 16, 16});
    std::array<int, 10> bins{};
    double sum = 0.0, sq = 0.0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const Eigen::VectorXd a = agent.act(obs, 100, true, rng);
        REQUIRE(a.size() == 2);
        CHECK((a.array().abs() <= 1.0).all());
        ++bins[static_cast<std::size_t>(std::min(9, int((a[0] + 1.0) * 5.0)))];
        sum += a[0];
        sq += a[0] * a[0];
    }
    CHECK(std::abs(sum / draws) < 0.03);  // sd of the mean is 0.0058
    CHECK(sq / draws == doctest::Approx(1.0 / 3.0).epsilon(0.05));
    double chi2 = 0.0;
    for (int c : bins) chi2 += (c - draws / 10.0) * (c - draws / 10.0) / (draws / 10.0);
    CHECK(chi2 < 27.88);  // 99.9% quantile, 9 degrees of freedom
}

TEST_CASE("evaluation actions are deterministic") {
    DdpgAgent agent(tiny_agent(), 3, 16, 2, 2);
    std::mt19937_64 r1(1), r2(999);
    std::mt19937_64 rng(7);
    const Tensor obs = random_tensor({3, 16, 16}, rng, 0, 1);
    const Eigen::VectorXd a = agent.act(obs, 1000000, false, r1);
    const Eigen::VectorXd b = agent.act(obs, 1000000, false, r2);
    CHECK(a == b);
    CHECK((a.array().abs() <= 1.0).all());
}

TEST_CASE("soft updates") {
    DdpgAgent agent(tiny_agent(), 3, 16, 2, 3);
    const NamedTensors all = agent.named_parameters();
    const NamedTensors online = snapshot(with_prefix(all, "critic0"));
    const NamedTensors target_before = snapshot(with_prefix(all, "target0"));
    agent.soft_update(0.25);
    const NamedTensors target_after = with_prefix(agent.named_parameters(), "target0");
    for (std::size_t i = 0; i < online.size(); ++i) {
        const Array expect = 0.75 * target_before[i].second.data() + 0.25 * online[i].second.data();
        CHECK((target_after[i].second.data() - expect).abs().maxCoeff() < 1e-15);
    }
    agent.soft_update(1.0);
    CHECK(same_values(with_prefix(agent.named_parameters(), "target0"), with_prefix(agent.named_parameters(), "critic0")));
    CHECK(same_values(with_prefix(agent.named_parameters(), "target1"), with_prefix(agent.named_parameters(), "critic1")));
}

TEST_CASE("actor update leaves the critics and encoder untouched") {
    DdpgAgent agent(tiny_agent(), 3, 16, 2, 4);
    std::mt19937_64 rng(8);
    const Tensor obs = random_tensor({8, 3, 16, 16}, rng, 0, 1);
    Tensor features;
    {
        NoGradGuard g;
        features = agent.encoder().forward(obs);
    }
    const NamedTensors before = snapshot(agent.named_parameters());
    const NamedTensors actor_before = snapshot(with_prefix(before, "actor"));
    agent.update_actor(features);
    const NamedTensors after = agent.named_parameters();
    for (std::size_t i = 0; i < after.size(); ++i) {
        const bool is_actor = after[i].first.rfind("actor", 0) == 0;
        if (!is_actor) {
            INFO(after[i].first);
            CHECK((after[i].second.data() == before[i].second.data()).all());
            CHECK((!after[i].second.has_grad() || (after[i].second.grad() == 0.0).all()));
        }
    }
    CHECK_FALSE(same_values(with_prefix(after, "actor"), actor_before));
}

TEST_CASE("critic loss vanishes for a zero temporal-difference batch") {
    DdpgAgent agent(tiny_agent(), 3, 16, 2, 5);
    // Make both critics and both targets the same network through a checkpoint round trip.
    const auto path = std::filesystem::temp_directory_path() / "patchail_test_twins.ptck";
    NamedTensors twins;
    for (const auto& [name, t] : agent.named_parameters()) {
        std::string source = name;
        for (const char* from : {"critic1", "target0", "target1"}) {
            if (name.rfind(from, 0) == 0) source = "critic0" + name.substr(std::string(from).size());
        }
        for (const auto& [n2, t2] : agent.named_parameters()) {
            if (n2 == source) twins.emplace_back(name, t2.clone());
        }
    }
    REQUIRE(twins.size() == agent.named_parameters().size());
    save_checkpoint(path, twins);
    restore_checkpoint(path, agent.named_parameters());

    std::mt19937_64 rng(9);
    const Tensor obs = random_tensor({6, 3, 16, 16}, rng, 0, 1);
    const Tensor next = random_tensor({6, 3, 16, 16}, rng, 0, 1);
    const Tensor action = random_tensor({6, 2}, rng);
    Array q, next_q;
    {
        NoGradGuard g;
        q = agent.critic(0).forward(agent.encoder().forward(obs), action).data();
        CHECK((q == agent.critic(1).forward(agent.encoder().forward(obs), action).data()).all());
        const Tensor nf = agent.encoder().forward(next);
        next_q = agent.target_critic(0).forward(nf, agent.actor().forward(nf)).data();
    }
    const DdpgAgent::CriticStep bootstrap_free = agent.update_critic(obs, action, q, next, Eigen::ArrayXd::Zero(6));
    CHECK(bootstrap_free.loss == 0.0);

    DdpgAgent agent2(tiny_agent(), 3, 16, 2, 5);
    restore_checkpoint(path, agent2.named_parameters());
    const Eigen::ArrayXd discount = Eigen::ArrayXd::Constant(6, 0.97);
    const DdpgAgent::CriticStep bootstrapped = agent2.update_critic(obs, action, q - discount * next_q, next, discount);
    CHECK(bootstrapped.loss < 1e-28);
}

TEST_CASE("full update runs and changes the networks") {
    DdpgAgent agent(tiny_agent(), 3, 16, 2, 6);
    ReplayBuffer buf(200, 3, 16, 16, 2);
    PointMassConfig env_cfg;
    env_cfg.image_size = 16;
    env_cfg.episode_length = 20;
    PointMassEnv env(env_cfg, 0);
    std::mt19937_64 rng(10);
    for (int e = 0; e < 3; ++e) {
        Tensor obs = env.reset(episode_seed(1, e));
        buf.start_episode(obs.data().segment(2 * 256, 256));
        while (!env.done()) {
            const Eigen::VectorXd a = agent.act(obs, 0, true, rng);
            obs = env.step(a).observation;
            buf.add(a, obs.data().segment(2 * 256, 256));
        }
    }
    const NamedTensors before = snapshot(agent.named_parameters());
    const auto r = [](const Tensor& p) { return Eigen::ArrayXd::Constant(p.dim(0), 0.1); };
    const UpdateStats s = agent.update(buf.sample_nstep(8, 3, 0.99, r, rng), rng);
    CHECK(std::isfinite(s.critic_loss));
    CHECK(std::isfinite(s.actor_loss));
    CHECK_FALSE(same_values(agent.named_parameters(), before));
}
