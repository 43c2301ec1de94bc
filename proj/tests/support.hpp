#pragma once

#include "patchail/reward.hpp"
#include "patchail/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace patchail::testing {

inline Array uniform(Index n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Array a(n);
    for (double& v : a) v = u(rng);
    return a;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
    const Index n = numel(shape);
    return Tensor(std::move(shape), uniform(n, rng, lo, hi), requires_grad);
}

// Value at [n, c, h, w] of a row-major 4-D tensor.
inline double at4(const Tensor& t, Index n, Index c, Index h, Index w) {
    return t.data()[((n * t.dim(1) + c) * t.dim(2) + h) * t.dim(3) + w];
}

}  // namespace patchail::testing

namespace patchail::testing {

// Synthetic pairs [count, channels, size, size]: one half of every image is
// bright, the other dark, with small pixel noise.
inline Tensor half_bright_pairs(Index count, Index channels, Index size, bool top, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> noise(-0.05, 0.05);
    Array v(count * channels * size * size);
    Index k = 0;
    for (Index n = 0; n < count; ++n)
        for (Index c = 0; c < channels; ++c)
            for (Index r = 0; r < size; ++r)
                for (Index col = 0; col < size; ++col) {
                    const bool bright = top ? r < size / 2 : r >= size / 2;
                    v[k++] = (bright ? 0.85 : 0.1) + noise(rng);
                }
    return Tensor(Shape{count, channels, size, size}, v);
}

}  // namespace patchail::testing

namespace patchail::testing {

inline Eigen::ArrayXXd random_grid(Index h, Index w, std::mt19937_64& rng, double lo = -4.0, double hi = 4.0) {
    const Array v = uniform(h * w, rng, lo, hi);
    return Eigen::Map<const Eigen::ArrayXXd>(v.data(), h, w);
}

inline double sigmoid_of(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Straight loops over every cell; no Eigen reductions.
inline double scan_aggregate(const Eigen::ArrayXXd& g, Aggregator kind) {
    std::vector<double> v;
    for (Index r = 0; r < g.rows(); ++r)
        for (Index c = 0; c < g.cols(); ++c) v.push_back(g(r, c));
    if (kind == Aggregator::mean) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / double(v.size());
    }
    if (kind == Aggregator::max) {
        double m = -std::numeric_limits<double>::infinity();
        for (double x : v) m = std::max(m, x);
        return m;
    }
    if (kind == Aggregator::min) {
        double m = std::numeric_limits<double>::infinity();
        for (double x : v) m = std::min(m, x);
        return m;
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double scan_kl_softmax(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b) {
    double za = 0.0, zb = 0.0, ma = a.maxCoeff(), mb = b.maxCoeff();
    for (Index i = 0; i < a.size(); ++i) {
        za += std::exp(a(i) - ma);
        zb += std::exp(b(i) - mb);
    }
    double kl = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
        const double p = std::exp(a(i) - ma) / za, q = std::exp(b(i) - mb) / zb;
        kl += p * std::log(p / q);
    }
    return kl;
}

}  // namespace patchail::testing
