#include "patchail/gradcheck.hpp"

#include "patchail/discriminator.hpp"
#include "patchail/nets.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace patchail {

Array numeric_gradient(const ScalarFn& f, const std::vector<Tensor>& leaves, double h) {
    NoGradGuard no_grad;
    Index total = 0;
    for (const Tensor& t : leaves) total += t.size();
    Array out(total);
    Index k = 0;
    for (const Tensor& leaf : leaves) {
        Tensor t = leaf;
        for (Index i = 0; i < t.size(); ++i, ++k) {
            const double saved = t.data()[i];
            t.data()[i] = saved + h;
            const double up = f(leaves).item();
            t.data()[i] = saved - h;
            const double down = f(leaves).item();
            t.data()[i] = saved;
            out[k] = (up - down) / (2.0 * h);
        }
    }
    return out;
}

double gradient_relative_error(const ScalarFn& f, const std::vector<Tensor>& leaves, double h) {
    for (const Tensor& t : leaves) {
        if (!t.requires_grad()) throw std::invalid_argument("gradient_relative_error: leaves must require gradients");
        Tensor(t).zero_grad();
    }
    Tensor y = f(leaves);
    if (y.size() != 1) throw std::invalid_argument("gradient_relative_error: function must return a scalar");
    y.backward();
    Index total = 0;
    for (const Tensor& t : leaves) total += t.size();
    Array analytic(total);
    Index k = 0;
    for (const Tensor& t : leaves) {
        analytic.segment(k, t.size()) = t.grad();
        k += t.size();
    }
    const Array numeric = numeric_gradient(f, leaves, h);
    const double scale = std::max(analytic.matrix().norm(), numeric.matrix().norm());
    if (scale == 0.0) return 0.0;
    return (analytic - numeric).matrix().norm() / scale;
}

namespace {

struct Suite {
    std::mt19937_64 rng;
    std::vector<GradcheckResult> results;

    Array uniform(Index n, double lo = -1.0, double hi = 1.0) {
        std::uniform_real_distribution<double> u(lo, hi);
        Array a(n);
        for (Index i = 0; i < n; ++i) a[i] = u(rng);
        return a;
    }

    // Keeps values at least `gap` from every point in `kinks`, so that central
    // differences never straddle a non-differentiable point.
    Array away_from(Array a, std::initializer_list<double> kinks, double gap = 1e-3) {
        for (double& v : a) {
            for (double k : kinks) {
                if (std::abs(v - k) < gap) v = k + (v < k ? -gap : gap);
            }
        }
        return a;
    }

    Tensor leaf(Shape s, Array values) { return Tensor(std::move(s), std::move(values), true); }
    Tensor leaf(Shape s) {
        const Index n = numel(s);
        return leaf(std::move(s), uniform(n));
    }

    // Contracts an op's output with fixed random weights to get a scalar.
    ScalarFn projected(std::function<Tensor(const std::vector<Tensor>&)> op, const Shape& out_shape) {
        const Tensor weights(out_shape, uniform(numel(out_shape)));
        return [op, weights](const std::vector<Tensor>& x) { return sum(op(x) * weights); };
    }

    void check(const std::string& name, const std::vector<Tensor>& leaves,
               std::function<Tensor(const std::vector<Tensor>&)> op, double tolerance = kOpTolerance) {
        Shape out_shape;
        {
            NoGradGuard g;
            out_shape = op(leaves).shape();
        }
        const double err = gradient_relative_error(projected(std::move(op), out_shape), leaves);
        results.push_back({name, err, tolerance});
    }
};

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed) {
    Suite s{std::mt19937_64(seed), {}};
    using V = std::vector<Tensor>;

    s.check("add", {s.leaf({3, 4}), s.leaf({3, 4})}, [](const V& x) { return x[0] + x[1]; });
    s.check("sub", {s.leaf({3, 4}), s.leaf({3, 4})}, [](const V& x) { return x[0] - x[1]; });
    s.check("mul", {s.leaf({3, 4}), s.leaf({3, 4})}, [](const V& x) { return x[0] * x[1]; });
    s.check("scale", {s.leaf({5})}, [](const V& x) { return scale(x[0], -1.7); });
    s.check("add_scalar", {s.leaf({5})}, [](const V& x) { return add_scalar(x[0], 0.3); });
    s.check("neg", {s.leaf({5})}, [](const V& x) { return neg(x[0]); });
    s.check("square", {s.leaf({2, 3})}, [](const V& x) { return square(x[0]); });
    s.check("relu", {s.leaf({4, 5}, s.away_from(s.uniform(20), {0.0}))}, [](const V& x) { return relu(x[0]); });
    s.check("leaky_relu", {s.leaf({4, 5}, s.away_from(s.uniform(20), {0.0}))},
            [](const V& x) { return leaky_relu(x[0], 0.2); });
    s.check("tanh", {s.leaf({4, 5})}, [](const V& x) { return tanh(x[0]); });
    s.check("sigmoid", {s.leaf({4, 5})}, [](const V& x) { return sigmoid(x[0]); });
    s.check("exp", {s.leaf({4, 5})}, [](const V& x) { return exp(x[0]); });
    s.check("log", {s.leaf({4, 5}, s.uniform(20).abs() + 0.1)}, [](const V& x) { return log(x[0]); });
    s.check("clamp", {s.leaf({4, 5}, s.away_from(s.uniform(20), {-0.5, 0.5}))},
            [](const V& x) { return clamp(x[0], -0.5, 0.5); });
    s.check("sum", {s.leaf({3, 4})}, [](const V& x) { return sum(x[0]); });
    s.check("mean", {s.leaf({3, 4})}, [](const V& x) { return mean(x[0]); });
    s.check("min", {s.leaf({3, 4})}, [](const V& x) { return min(x[0]); });
    s.check("max", {s.leaf({3, 4})}, [](const V& x) { return max(x[0]); });
    s.check("median (odd count)", {s.leaf({3, 3})}, [](const V& x) { return median(x[0]); });
    s.check("median (even count)", {s.leaf({2, 4})}, [](const V& x) { return median(x[0]); });
    s.check("mean_per_sample", {s.leaf({3, 2, 2})}, [](const V& x) { return mean_per_sample(x[0]); });
    s.check("softmax_flat", {s.leaf({2, 1, 3, 3})}, [](const V& x) { return softmax_flat(x[0]); });
    s.check("reshape", {s.leaf({2, 6})}, [](const V& x) { return reshape(x[0], {3, 4}); });
    s.check("flatten", {s.leaf({2, 2, 3})}, [](const V& x) { return flatten(x[0]); });
    s.check("concat_channels", {s.leaf({2, 2, 3, 3}), s.leaf({2, 1, 3, 3})},
            [](const V& x) { return concat_channels(x[0], x[1]); });
    s.check("linear", {s.leaf({3, 4}), s.leaf({5, 4}), s.leaf({5})},
            [](const V& x) { return linear(x[0], x[1], x[2]); });
    s.check("layer_norm", {s.leaf({3, 6}), s.leaf({6}), s.leaf({6})},
            [](const V& x) { return layer_norm(x[0], x[1], x[2]); });

    for (const auto& [spec, c, hw] : std::vector<std::tuple<ConvSpec, Index, Index>>{
             {ConvSpec{3, 2, 2, 0}, 2, 7}, {ConvSpec{4, 3, 1, 1}, 2, 6}, {ConvSpec{4, 2, 2, 1}, 3, 8},
             {ConvSpec{1, 2, 1, 0}, 3, 4}, {ConvSpec{2, 1, 2, 1}, 1, 5}}) {
        const std::string name = "conv2d (" + std::to_string(spec.kernel) + "," + std::to_string(spec.out_channels) +
                                 "," + std::to_string(spec.stride) + "," + std::to_string(spec.padding) + ")";
        const ConvSpec sp = spec;
        s.check(name, {s.leaf({2, c, hw, hw}), s.leaf({spec.out_channels, c, spec.kernel, spec.kernel}), s.leaf({spec.out_channels})},
                [sp](const V& x) { return conv2d(x[0], x[1], x[2], sp); });
    }

    // Assembled patch discriminator: logits with respect to inputs and every parameter.
    const ArchSpec small = ArchSpec::parse("[(4,4,2,1),(4,4,1,1),(4,1,1,1)]");
    ConvNet net(small, 6, 12, 12, seed + 1);
    {
        V leaves{s.leaf({2, 6, 12, 12})};
        for (const Tensor& p : net.parameters()) {
            Tensor q = p;
            q.set_requires_grad(true);
            leaves.push_back(q);
        }
        s.check("discriminator logits", leaves, [&net](const V& x) { return net.forward(x[0]); });
        V pair_leaves = leaves;
        pair_leaves.insert(pair_leaves.begin() + 1, s.leaf({2, 6, 12, 12}));
        const double err = gradient_relative_error(
            [&net](const V& x) { return disc_loss(net.forward(x[0]), net.forward(x[1])); }, pair_leaves);
        s.results.push_back({"discriminator loss", err, kOpTolerance});
    }

    // Gradient-penalty input gradient: d/dx of the summed mean-cell logit at the interpolates.
    {
        const Tensor expert(Shape{3, 6, 12, 12}, s.uniform(3 * 6 * 144, 0.0, 1.0));
        const Tensor agent(Shape{3, 6, 12, 12}, s.uniform(3 * 6 * 144, 0.0, 1.0));
        const Eigen::ArrayXd alpha = s.uniform(3, 0.0, 1.0);
        const LogitFn fn = [&net](const Tensor& x) { return net.forward(x); };
        const PenaltyResult p = gradient_penalty_at(fn, {}, expert, agent, alpha, 10.0);
        const Tensor x(expert.shape(), p.interpolated.data(), true);
        const Array numeric = numeric_gradient([&net](const V& v) { return sum(mean_per_sample(net.forward(v[0]))); }, {x});
        const double scale = std::max(p.input_grad.matrix().norm(), numeric.matrix().norm());
        const double err = scale == 0.0 ? 0.0 : (p.input_grad - numeric).matrix().norm() / scale;
        s.results.push_back({"gradient penalty input gradient", err, kPenaltyTolerance});
    }

    // Gradient-penalty parameter gradient (forward-difference second pass) against
    // central differences of the penalty value itself.
    {
        const Tensor expert(Shape{2, 6, 12, 12}, s.uniform(2 * 6 * 144, 0.0, 1.0));
        const Tensor agent(Shape{2, 6, 12, 12}, s.uniform(2 * 6 * 144, 0.0, 1.0));
        const Eigen::ArrayXd alpha = s.uniform(2, 0.0, 1.0);
        const LogitFn fn = [&net](const Tensor& x) { return net.forward(x); };
        std::vector<Tensor> params = net.parameters();
        for (Tensor& p : params) p.zero_grad();
        gradient_penalty_at(fn, params, expert, agent, alpha, 10.0);
        Index total = 0;
        for (const Tensor& p : params) total += p.size();
        Array analytic(total), numeric(total);
        Index k = 0;
        for (Tensor& p : params) {
            analytic.segment(k, p.size()) = p.grad();
            k += p.size();
        }
        // Evaluating the penalty deposits logit gradients on the parameters; they are discarded.
        k = 0;
        const double h = 1e-5;
        for (Tensor& p : params) {
            for (Index i = 0; i < p.size(); ++i, ++k) {
                const double saved = p.data()[i];
                p.data()[i] = saved + h;
                const double up = gradient_penalty_at(fn, {}, expert, agent, alpha, 10.0).value;
                p.data()[i] = saved - h;
                const double down = gradient_penalty_at(fn, {}, expert, agent, alpha, 10.0).value;
                p.data()[i] = saved;
                numeric[k] = (up - down) / (2.0 * h);
            }
        }
        for (Tensor& p : params) p.zero_grad();
        const double scale = std::max(analytic.matrix().norm(), numeric.matrix().norm());
        const double err = scale == 0.0 ? 0.0 : (analytic - numeric).matrix().norm() / scale;
        s.results.push_back({"gradient penalty parameter gradient", err, kPenaltyTolerance});
    }
    return s.results;
}

}  // namespace patchail
