#include "patchail/reward.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace patchail;
using namespace patchail::testing;

TEST_CASE("transforms") {
    Eigen::ArrayXXd half = Eigen::ArrayXXd::Constant(1, 1, 0.5);
    CHECK(transform(half, Transform::airl)(0, 0) == 0.0);
    CHECK(transform(half, Transform::logd)(0, 0) == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
    CHECK(transform(half, Transform::neg_log1md)(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    std::mt19937_64 rng(1);
    const Eigen::ArrayXXd z = random_grid(6, 6, rng, -8, 8);
    const Eigen::ArrayXXd r = transform(clamped_probs(z, kProbClamp), Transform::airl);
    CHECK((r - z).abs().maxCoeff() < 1e-9);
    // Every transform is monotone in D.
    Eigen::ArrayXXd d(1, 50);
    for (Index i = 0; i < 50; ++i) d(0, i) = 0.01 + 0.0198 * double(i);
    for (Transform t : {Transform::logd, Transform::neg_log1md, Transform::airl}) {
        const Eigen::ArrayXXd h = transform(d, t);
        for (Index i = 1; i < 50; ++i) CHECK(h(0, i) > h(0, i - 1));
    }
    // Clamping keeps the extremes finite.
    Eigen::ArrayXXd edge(1, 2);
    edge << 0.0, 1.0;
    for (Transform t : {Transform::logd, Transform::neg_log1md, Transform::airl}) CHECK(transform(edge, t).allFinite());
}

TEST_CASE("aggregators") {
    CHECK(aggregate(Eigen::ArrayXXd::Constant(5, 5, -1.25), Aggregator::mean) == -1.25);
    Eigen::ArrayXXd g(2, 2);
    g << 1, 2, 3, 4;
    CHECK(aggregate(g, Aggregator::min) == 1.0);
    CHECK(aggregate(g, Aggregator::max) == 4.0);
    CHECK(aggregate(g, Aggregator::mean) == 2.5);
    CHECK(aggregate(g, Aggregator::median) == 2.5);
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::ArrayXXd r = random_grid(39, 39 + trial % 2, rng);
        for (Aggregator a : {Aggregator::mean, Aggregator::max, Aggregator::min, Aggregator::median}) {
            CHECK(aggregate(r, a) == doctest::Approx(scan_aggregate(r, a)).epsilon(1e-13));
        }
    }
    CHECK_THROWS_AS(aggregate(Eigen::ArrayXXd(0, 0), Aggregator::mean), std::invalid_argument);
}

TEST_CASE("normalize") {
    const Eigen::ArrayXXd u = normalize(Eigen::ArrayXXd::Constant(39, 39, 3.0));
    CHECK((u - 1.0 / 1521.0).abs().maxCoeff() < 1e-15);
    Eigen::ArrayXXd z(1, 2);
    z << 0.0, std::log(3.0);
    const Eigen::ArrayXXd p = normalize(z);
    CHECK(p(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(p(0, 1) == doctest::Approx(0.75).epsilon(1e-15));
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::ArrayXXd g = random_grid(7, 7, rng, -500, 500);
        const Eigen::ArrayXXd n = normalize(g);
        CHECK(std::abs(n.sum() - 1.0) <= 1e-12);
        CHECK((n >= 0.0).all());
        const double c = uniform(1, rng, -1e3, 1e3)[0];
        CHECK((normalize(Eigen::ArrayXXd(g + c)) - n).abs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("sim_bar") {
    Eigen::ArrayXXd agent(1, 2), expert(1, 2);
    agent << 0.0, 0.0;
    expert << 0.0, std::log(3.0);
    const double kl = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    CHECK(kl == doctest::Approx(0.14384).epsilon(1e-4));
    CHECK(sim_bar(agent, expert) == doctest::Approx(std::exp(-kl)).epsilon(1e-14));
    CHECK(sim_bar(agent, expert) == doctest::Approx(0.86602).epsilon(1e-5));

    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::ArrayXXd a = random_grid(5, 5, rng, -30, 30), b = random_grid(5, 5, rng, -30, 30);
        const double s = sim_bar(a, b);
        CHECK(s > 0.0);
        CHECK(s <= 1.0);
        CHECK(sim_bar(a, a) == 1.0);
        CHECK(sim_bar(Eigen::ArrayXXd(a + 2.5), b) == doctest::Approx(s).epsilon(1e-12));
        CHECK(std::log(s) == doctest::Approx(-scan_kl_softmax(a, b)).epsilon(1e-10));
    }
    ExpertStats empty;
    CHECK_THROWS_AS(sim_bar(agent, empty), std::invalid_argument);
}

TEST_CASE("sim_raw") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Eigen::ArrayXXd> experts{random_grid(2, 2, rng), random_grid(2, 2, rng), random_grid(2, 2, rng)};
        const Eigen::ArrayXXd a = random_grid(2, 2, rng);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& e : experts) best = std::min(best, scan_kl_softmax(a, e));
        CHECK(sim_raw(a, experts) == doctest::Approx(std::exp(-best)).epsilon(1e-12));
        CHECK(sim_raw(experts[1], experts) == 1.0);

        ExpertStats one;
        one.mean_logits = experts[0];
        CHECK(sim_raw(a, std::span<const Eigen::ArrayXXd>(experts.data(), 1)) == sim_bar(a, one));
    }
    CHECK_THROWS_AS(sim_raw(random_grid(2, 2, rng), {}), std::invalid_argument);
}

TEST_CASE("composition") {
    RewardConfig plain = RewardConfig::defaults_for(Variant::plain);
    CHECK(compose_reward(Eigen::ArrayXXd::Zero(4, 4), plain, nullptr).reward == 0.0);
    CHECK(compose(2.0, 1.0, Variant::weight, 1.3, 1.0) == doctest::Approx(2.6).epsilon(1e-15));
    CHECK(compose(1.0, 0.8, Variant::bonus, 0.5, 0.5) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(RewardConfig::defaults_for(Variant::weight).lambda == 1.3);
    CHECK(RewardConfig::defaults_for(Variant::bonus).lambda == 0.5);
    CHECK(RewardConfig::defaults_for(Variant::bonus).scale == 0.5);

    const RewardConfig weight = RewardConfig::defaults_for(Variant::weight);
    CHECK_THROWS_AS(compose_reward(Eigen::ArrayXXd::Zero(2, 2), weight, nullptr), std::logic_error);

    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> pick(0, 3);
    for (int trial = 0; trial < 1000; ++trial) {
        RewardConfig c = RewardConfig::defaults_for(trial % 2 ? Variant::weight : Variant::bonus);
        c.transform = static_cast<Transform>(pick(rng) % 3);
        c.aggregator = static_cast<Aggregator>(pick(rng));
        c.lambda = uniform(1, rng, 0.1, 2.0)[0];
        c.scale = uniform(1, rng, 0.1, 2.0)[0];
        const Eigen::ArrayXXd z = random_grid(3, 4, rng, -6, 6);
        ExpertStats stats;
        stats.mean_logits = random_grid(3, 4, rng, -6, 6);

        Eigen::ArrayXXd h(3, 4);
        for (Index i = 0; i < z.size(); ++i) {
            const double d = std::clamp(sigmoid_of(z(i)), kProbClamp, 1.0 - kProbClamp);
            h(i) = c.transform == Transform::logd ? std::log(d)
                   : c.transform == Transform::neg_log1md ? -std::log(1.0 - d)
                                                           : std::log(d) - std::log(1.0 - d);
        }
        const double agg = scan_aggregate(h, c.aggregator);
        const double sim = std::exp(-scan_kl_softmax(z, stats.mean_logits));
        const double expected = c.variant == Variant::weight ? c.scale * c.lambda * sim * agg
                                                             : c.scale * (c.lambda * sim + agg);
        const RewardBreakdown r = compose_reward(z, c, &stats);
        CHECK(r.aggregate == doctest::Approx(agg).epsilon(1e-10));
        CHECK(r.similarity == doctest::Approx(sim).epsilon(1e-10));
        CHECK(r.reward == doctest::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("lambda schedule and config validation") {
    RewardConfig c;
    CHECK(c.lambda_at(12345) == c.lambda);
    c.lambda_decay_steps = 100;
    c.lambda_final = 0.3;
    CHECK(c.lambda_at(0) == 1.3);
    CHECK(c.lambda_at(50) == doctest::Approx(0.8));
    CHECK(c.lambda_at(1000) == doctest::Approx(0.3));
    c.lambda = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK_THROWS_AS(parse_transform("sqrt"), std::invalid_argument);
    CHECK(parse_aggregator(to_string(Aggregator::median)) == Aggregator::median);
    CHECK(parse_variant("bonus") == Variant::bonus);
}
