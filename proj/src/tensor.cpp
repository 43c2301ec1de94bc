#include "patchail/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace patchail {

namespace {

thread_local bool g_grad_enabled = true;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                    to_string(b.shape()));
    }
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

// Builds an output node; the tape is recorded only when some input needs it.
Tensor make_result(Shape shape, Array value, std::initializer_list<const Tensor*> inputs,
                   std::function<void(const Array&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_enabled && any_requires_grad(inputs)) {
        node->requires_grad = true;
        for (const Tensor* t : inputs) {
            if (t->requires_grad()) node->parents.push_back(t->node());
        }
        node->backward = std::move(backward);
    }
    return Tensor(node);
}

template <typename Fn, typename Dfn>
Tensor unary(const Tensor& a, Fn&& fn, Dfn&& dfn) {
    Array out = fn(a.data());
    NodePtr pa = a.node();
    if (!(g_grad_enabled && a.requires_grad())) return make_result(a.shape(), std::move(out), {&a}, nullptr);
    Array saved_out = out;
    return make_result(a.shape(), std::move(out), {&a}, [pa, saved_out, dfn](const Array& g) {
        pa->accumulate(dfn(pa->value, saved_out, g));
    });
}

// Sample extents for [N, ...].
std::pair<Index, Index> split_batch(const Tensor& a, const char* op) {
    if (a.rank() < 1) throw std::invalid_argument(std::string(op) + ": needs a batch axis");
    const Index n = a.dim(0);
    const Index per = n == 0 ? 0 : a.size() / n;
    return {n, per};
}

}  // namespace

Index numel(const Shape& shape) {
    Index n = 1;
    for (Index e : shape) {
        if (e < 0) throw std::invalid_argument("negative extent in shape " + to_string(shape));
        n *= e;
    }
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

void detail::Node::accumulate(const Array& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
        grad = g;
    } else {
        grad += g;
    }
}

Tensor::Tensor() : Tensor(Shape{0}, Array()) {}

Tensor::Tensor(Shape shape, Array values, bool requires_grad) : node_(std::make_shared<Node>()) {
    if (numel(shape) != values.size()) {
        throw std::invalid_argument("Tensor: data length " + std::to_string(values.size()) +
                                    " does not match shape " + to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return constant(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::constant(Shape shape, double value, bool requires_grad) {
    const Index n = numel(shape);
    return Tensor(std::move(shape), Array::Constant(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(Shape{}, Array::Constant(1, value), requires_grad);
}

double Tensor::item() const {
    if (size() != 1) throw std::logic_error("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
}

void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

Array& Tensor::grad() {
    if (!has_grad()) node_->grad = Array::Zero(node_->value.size());
    return node_->grad;
}

const Array& Tensor::grad() const { return const_cast<Tensor*>(this)->grad(); }

void Tensor::zero_grad() {
    if (node_->grad.size() != 0) node_->grad.setZero();
}

void Tensor::backward() {
    if (size() != 1) throw std::logic_error("backward() without a seed needs a scalar, got " + to_string(shape()));
    backward(Array::Ones(1));
}

void Tensor::backward(const Array& seed) {
    if (!node_->requires_grad) throw std::logic_error("backward without recorded forward");
    if (seed.size() != size()) throw std::invalid_argument("backward: seed size mismatch");

    // Post-order DFS gives parents before children; walk it in reverse.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    // Interior nodes start clean so repeated passes do not double count them;
    // leaves keep their accumulated gradient.
    for (Node* n : order) {
        if (n->backward) n->grad.resize(0);
    }
    node_->accumulate(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.size() != 0) n->backward(n->grad);
    }
}

Tensor Tensor::detach() const { return Tensor(shape(), data(), false); }

Tensor Tensor::clone() const { return Tensor(shape(), data(), requires_grad()); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void ConvSpec::validate() const {
    if (kernel < 1 || stride < 1 || padding < 0 || out_channels < 1) {
        throw std::invalid_argument("ConvSpec: need kernel>=1, stride>=1, padding>=0, out_channels>=1");
    }
}

// ---------------------------------------------------------------- arithmetic

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    NodePtr pa = a.node(), pb = b.node();
    return make_result(a.shape(), a.data() + b.data(), {&a, &b}, [pa, pb](const Array& g) {
        pa->accumulate(g);
        pb->accumulate(g);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    NodePtr pa = a.node(), pb = b.node();
    return make_result(a.shape(), a.data() - b.data(), {&a, &b}, [pa, pb](const Array& g) {
        pa->accumulate(g);
        pb->accumulate(-g);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    NodePtr pa = a.node(), pb = b.node();
    return make_result(a.shape(), a.data() * b.data(), {&a, &b}, [pa, pb](const Array& g) {
        if (pa->requires_grad) pa->accumulate(g * pb->value);
        if (pb->requires_grad) pb->accumulate(g * pa->value);
    });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(
        a, [&](const Array& x) -> Array { return x * factor; },
        [factor](const Array&, const Array&, const Array& g) -> Array { return g * factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
    return unary(
        a, [&](const Array& x) -> Array { return x + offset; },
        [](const Array&, const Array&, const Array& g) -> Array { return g; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor square(const Tensor& a) {
    return unary(
        a, [](const Array& x) -> Array { return x.square(); },
        [](const Array& x, const Array&, const Array& g) -> Array { return 2.0 * x * g; });
}

// ---------------------------------------------------------------- activations

Tensor relu(const Tensor& a) {
    return unary(
        a, [](const Array& x) -> Array { return x.max(0.0); },
        [](const Array& x, const Array&, const Array& g) -> Array { return (x > 0.0).select(g, 0.0); });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary(
        a, [&](const Array& x) -> Array { return (x > 0.0).select(x, slope * x); },
        [slope](const Array& x, const Array&, const Array& g) -> Array { return (x > 0.0).select(g, slope * g); });
}

Tensor tanh(const Tensor& a) {
    return unary(
        a, [](const Array& x) -> Array { return x.tanh(); },
        [](const Array&, const Array& y, const Array& g) -> Array { return g * (1.0 - y.square()); });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        a,
        [](const Array& x) -> Array {
            // Branching on sign keeps exp() from overflowing.
            return x.unaryExpr([](double v) {
                if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                const double e = std::exp(v);
                return e / (1.0 + e);
            });
        },
        [](const Array&, const Array& y, const Array& g) -> Array { return g * y * (1.0 - y); });
}

Tensor log(const Tensor& a) {
    if ((a.data() <= 0.0).any()) throw std::domain_error("log of non-positive value; clamp first");
    return unary(
        a, [](const Array& x) -> Array { return x.log(); },
        [](const Array& x, const Array&, const Array& g) -> Array { return g / x; });
}

Tensor exp(const Tensor& a) {
    return unary(
        a, [](const Array& x) -> Array { return x.exp(); },
        [](const Array&, const Array& y, const Array& g) -> Array { return g * y; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
    return unary(
        a, [&](const Array& x) -> Array { return x.max(lo).min(hi); },
        [lo, hi](const Array& x, const Array&, const Array& g) -> Array {
            return ((x >= lo) && (x <= hi)).select(g, 0.0);
        });
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& a) {
    NodePtr pa = a.node();
    const Index n = a.size();
    return make_result(Shape{}, Array::Constant(1, a.data().sum()), {&a},
                       [pa, n](const Array& g) { pa->accumulate(Array::Constant(n, g[0])); });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("mean of empty tensor");
    NodePtr pa = a.node();
    const Index n = a.size();
    return make_result(Shape{}, Array::Constant(1, a.data().mean()), {&a},
                       [pa, n](const Array& g) { pa->accumulate(Array::Constant(n, g[0] / double(n))); });
}

namespace {

Tensor select_reduction(const Tensor& a, std::vector<std::pair<Index, double>> picks) {
    double value = 0.0;
    for (auto [i, w] : picks) value += w * a.data()[i];
    NodePtr pa = a.node();
    const Index n = a.size();
    return make_result(Shape{}, Array::Constant(1, value), {&a}, [pa, n, picks](const Array& g) {
        Array d = Array::Zero(n);
        for (auto [i, w] : picks) d[i] += w * g[0];
        pa->accumulate(d);
    });
}

}  // namespace

Tensor min(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("min of empty tensor");
    Index i = 0;
    a.data().minCoeff(&i);
    return select_reduction(a, {{i, 1.0}});
}

Tensor max(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("max of empty tensor");
    Index i = 0;
    a.data().maxCoeff(&i);
    return select_reduction(a, {{i, 1.0}});
}

Tensor median(const Tensor& a) {
    const Index n = a.size();
    if (n == 0) throw std::invalid_argument("median of empty tensor");
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    const Array& v = a.data();
    std::stable_sort(idx.begin(), idx.end(), [&](Index l, Index r) { return v[l] < v[r]; });
    const auto mid = static_cast<std::size_t>(n / 2);
    if (n % 2 == 1) return select_reduction(a, {{idx[mid], 1.0}});
    return select_reduction(a, {{idx[mid - 1], 0.5}, {idx[mid], 0.5}});
}

Tensor mean_per_sample(const Tensor& a) {
    auto [n, per] = split_batch(a, "mean_per_sample");
    if (per == 0) throw std::invalid_argument("mean_per_sample: empty samples");
    Eigen::Map<const RowMatrix> m(a.data().data(), n, per);
    Array out = m.rowwise().mean().array();
    NodePtr pa = a.node();
    return make_result(Shape{n}, std::move(out), {&a}, [pa, n, per](const Array& g) {
        Array d(n * per);
        for (Index i = 0; i < n; ++i) d.segment(i * per, per).setConstant(g[i] / double(per));
        pa->accumulate(d);
    });
}

Tensor softmax_flat(const Tensor& a) {
    auto [n, per] = split_batch(a, "softmax_flat");
    Array out(a.size());
    for (Index i = 0; i < n; ++i) {
        auto x = a.data().segment(i * per, per);
        Array e = (x - x.maxCoeff()).exp();
        out.segment(i * per, per) = e / e.sum();
    }
    NodePtr pa = a.node();
    Array y = out;
    return make_result(a.shape(), std::move(out), {&a}, [pa, y, n, per](const Array& g) {
        Array d(y.size());
        for (Index i = 0; i < n; ++i) {
            auto yi = y.segment(i * per, per);
            auto gi = g.segment(i * per, per);
            d.segment(i * per, per) = yi * (gi - (gi * yi).sum());
        }
        pa->accumulate(d);
    });
}

// ---------------------------------------------------------------- reshaping

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw std::invalid_argument("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
    }
    NodePtr pa = a.node();
    return make_result(std::move(shape), a.data(), {&a}, [pa](const Array& g) { pa->accumulate(g); });
}

Tensor flatten(const Tensor& a) {
    auto [n, per] = split_batch(a, "flatten");
    return reshape(a, Shape{n, per});
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || a.rank() != b.rank() || a.dim(0) != b.dim(0)) {
        throw std::invalid_argument("concat_channels: incompatible " + to_string(a.shape()) + " and " +
                                    to_string(b.shape()));
    }
    for (std::size_t ax = 2; ax < a.rank(); ++ax) {
        if (a.dim(ax) != b.dim(ax)) throw std::invalid_argument("concat_channels: trailing extents differ");
    }
    const Index n = a.dim(0);
    const Index sa = a.size() / n, sb = b.size() / n;
    Array out(a.size() + b.size());
    for (Index i = 0; i < n; ++i) {
        out.segment(i * (sa + sb), sa) = a.data().segment(i * sa, sa);
        out.segment(i * (sa + sb) + sa, sb) = b.data().segment(i * sb, sb);
    }
    Shape shape = a.shape();
    shape[1] += b.dim(1);
    NodePtr pa = a.node(), pb = b.node();
    return make_result(std::move(shape), std::move(out), {&a, &b}, [pa, pb, n, sa, sb](const Array& g) {
        if (pa->requires_grad) {
            Array d(n * sa);
            for (Index i = 0; i < n; ++i) d.segment(i * sa, sa) = g.segment(i * (sa + sb), sa);
            pa->accumulate(d);
        }
        if (pb->requires_grad) {
            Array d(n * sb);
            for (Index i = 0; i < n; ++i) d.segment(i * sb, sb) = g.segment(i * (sa + sb) + sa, sb);
            pb->accumulate(d);
        }
    });
}

// ---------------------------------------------------------------- dense layers

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 || x.dim(1) != weight.dim(1) ||
        bias.dim(0) != weight.dim(0)) {
        throw std::invalid_argument("linear: incompatible shapes x" + to_string(x.shape()) + " W" +
                                    to_string(weight.shape()) + " b" + to_string(bias.shape()));
    }
    const Index n = x.dim(0), in = x.dim(1), out = weight.dim(0);
    Eigen::Map<const RowMatrix> X(x.data().data(), n, in);
    Eigen::Map<const RowMatrix> W(weight.data().data(), out, in);
    RowMatrix Y = X * W.transpose();
    Y.rowwise() += bias.data().matrix().transpose();
    Array y = Eigen::Map<Array>(Y.data(), n * out);

    NodePtr px = x.node(), pw = weight.node(), pb = bias.node();
    return make_result(Shape{n, out}, std::move(y), {&x, &weight, &bias},
                       [px, pw, pb, n, in, out](const Array& g) {
                           Eigen::Map<const RowMatrix> G(g.data(), n, out);
                           if (px->requires_grad) {
                               Eigen::Map<const RowMatrix> Wm(pw->value.data(), out, in);
                               RowMatrix dX = G * Wm;
                               px->accumulate(Eigen::Map<Array>(dX.data(), n * in));
                           }
                           if (pw->requires_grad) {
                               Eigen::Map<const RowMatrix> Xm(px->value.data(), n, in);
                               RowMatrix dW = G.transpose() * Xm;
                               pw->accumulate(Eigen::Map<Array>(dW.data(), out * in));
                           }
                           if (pb->requires_grad) pb->accumulate(G.colwise().sum().transpose().array());
                       });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps) {
    if (x.rank() != 2 || gain.size() != x.dim(1) || offset.size() != x.dim(1)) {
        throw std::invalid_argument("layer_norm: incompatible shapes");
    }
    const Index n = x.dim(0), d = x.dim(1);
    Eigen::Map<const RowMatrix> X(x.data().data(), n, d);
    RowMatrix xhat(n, d);
    Eigen::VectorXd inv_std(n);
    for (Index i = 0; i < n; ++i) {
        const double mu = X.row(i).mean();
        const double var = (X.row(i).array() - mu).square().mean();
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (X.row(i).array() - mu) * inv_std[i];
    }
    RowMatrix Y = xhat;
    for (Index i = 0; i < n; ++i) {
        Y.row(i) = Y.row(i).array() * gain.data().transpose() + offset.data().transpose();
    }
    Array y = Eigen::Map<Array>(Y.data(), n * d);

    NodePtr px = x.node(), pg = gain.node(), pb = offset.node();
    return make_result(x.shape(), std::move(y), {&x, &gain, &offset},
                       [px, pg, pb, xhat, inv_std, n, d](const Array& g) {
                           Eigen::Map<const RowMatrix> G(g.data(), n, d);
                           if (pg->requires_grad) {
                               pg->accumulate((G.array() * xhat.array()).colwise().sum().transpose());
                           }
                           if (pb->requires_grad) pb->accumulate(G.colwise().sum().transpose().array());
                           if (px->requires_grad) {
                               RowMatrix dX(n, d);
                               for (Index i = 0; i < n; ++i) {
                                   Eigen::ArrayXd dxhat = G.row(i).array().transpose() * pg->value;
                                   Eigen::ArrayXd xh = xhat.row(i).array().transpose();
                                   dX.row(i) = (inv_std[i] * (dxhat - dxhat.mean() - xh * (dxhat * xh).mean()))
                                                   .matrix()
                                                   .transpose();
                               }
                               px->accumulate(Eigen::Map<Array>(dX.data(), n * d));
                           }
                       });
}

// ---------------------------------------------------------------- convolution

namespace {

struct ConvGeometry {
    Index n, c, h, w, cout, k, stride, pad, ho, wo;
    Index patch() const { return c * k * k; }
    Index out_plane() const { return ho * wo; }
};

// Rows: (c, ky, kx); columns: (sample, oy, ox) for samples [n0, n0 + count).
void im2col(const double* input, const ConvGeometry& g, Index n0, Index count, RowMatrix& cols) {
    const Index ncols = count * g.out_plane();
    cols.resize(g.patch(), ncols);
    for (Index c = 0; c < g.c; ++c) {
        for (Index ky = 0; ky < g.k; ++ky) {
            for (Index kx = 0; kx < g.k; ++kx) {
                double* row = cols.row((c * g.k + ky) * g.k + kx).data();
                for (Index s = 0; s < count; ++s) {
                    const double* plane = input + ((n0 + s) * g.c + c) * g.h * g.w;
                    for (Index oy = 0; oy < g.ho; ++oy) {
                        const Index iy = oy * g.stride - g.pad + ky;
                        double* dst = row + (s * g.ho + oy) * g.wo;
                        if (iy < 0 || iy >= g.h) {
                            std::fill(dst, dst + g.wo, 0.0);
                            continue;
                        }
                        const double* src = plane + iy * g.w;
                        for (Index ox = 0; ox < g.wo; ++ox) {
                            const Index ix = ox * g.stride - g.pad + kx;
                            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

void col2im(const RowMatrix& cols, const ConvGeometry& g, Index n0, Index count, double* grad_input) {
    for (Index c = 0; c < g.c; ++c) {
        for (Index ky = 0; ky < g.k; ++ky) {
            for (Index kx = 0; kx < g.k; ++kx) {
                const double* row = cols.row((c * g.k + ky) * g.k + kx).data();
                for (Index s = 0; s < count; ++s) {
                    double* plane = grad_input + ((n0 + s) * g.c + c) * g.h * g.w;
                    for (Index oy = 0; oy < g.ho; ++oy) {
                        const Index iy = oy * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= g.h) continue;
                        const double* src = row + (s * g.ho + oy) * g.wo;
                        double* dst = plane + iy * g.w;
                        for (Index ox = 0; ox < g.wo; ++ox) {
                            const Index ix = ox * g.stride - g.pad + kx;
                            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

Index chunk_size(const ConvGeometry& g) {
    constexpr Index kMaxColumnEntries = Index{1} << 17;
    const Index per_sample = std::max<Index>(1, g.patch() * g.out_plane());
    return std::clamp<Index>(kMaxColumnEntries / per_sample, 1, std::max<Index>(g.n, 1));
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const ConvSpec& spec) {
    spec.validate();
    if (input.rank() != 4) throw std::invalid_argument("conv2d: input must be [N,C,H,W], got " + to_string(input.shape()));
    const Index k = spec.kernel;
    if (weight.shape() != Shape{spec.out_channels, input.dim(1), k, k}) {
        throw std::invalid_argument("conv2d: weight shape " + to_string(weight.shape()) + " does not match input " +
                                    "channels " + std::to_string(input.dim(1)) + " and spec");
    }
    if (bias.shape() != Shape{spec.out_channels}) throw std::invalid_argument("conv2d: bias shape mismatch");
    ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), spec.out_channels, k, spec.stride,
                   spec.padding, 0, 0};
    if (g.h + 2 * g.pad < k || g.w + 2 * g.pad < k) {
        throw std::invalid_argument("conv2d: kernel larger than padded input " + to_string(input.shape()));
    }
    g.ho = spec.output_extent(g.h);
    g.wo = spec.output_extent(g.w);

    Array out(g.n * g.cout * g.out_plane());
    Eigen::Map<const RowMatrix> W(weight.data().data(), g.cout, g.patch());
    const Index chunk = chunk_size(g);
    RowMatrix cols, Y;
    for (Index n0 = 0; n0 < g.n; n0 += chunk) {
        const Index count = std::min(chunk, g.n - n0);
        im2col(input.data().data(), g, n0, count, cols);
        Y.noalias() = W * cols;
        for (Index s = 0; s < count; ++s) {
            for (Index co = 0; co < g.cout; ++co) {
                out.segment(((n0 + s) * g.cout + co) * g.out_plane(), g.out_plane()) =
                    Y.row(co).segment(s * g.out_plane(), g.out_plane()).array() + bias.data()[co];
            }
        }
    }

    NodePtr px = input.node(), pw = weight.node(), pb = bias.node();
    return make_result(Shape{g.n, g.cout, g.ho, g.wo}, std::move(out), {&input, &weight, &bias},
                       [px, pw, pb, g, chunk](const Array& grad) {
                           Eigen::Map<const RowMatrix> Wm(pw->value.data(), g.cout, g.patch());
                           Array dx;
                           if (px->requires_grad) dx = Array::Zero(px->value.size());
                           RowMatrix dW = RowMatrix::Zero(g.cout, g.patch());
                           Array db = Array::Zero(g.cout);
                           RowMatrix cols, G, dcols;
                           for (Index n0 = 0; n0 < g.n; n0 += chunk) {
                               const Index count = std::min(chunk, g.n - n0);
                               G.resize(g.cout, count * g.out_plane());
                               for (Index s = 0; s < count; ++s) {
                                   for (Index co = 0; co < g.cout; ++co) {
                                       G.row(co).segment(s * g.out_plane(), g.out_plane()) =
                                           grad.segment(((n0 + s) * g.cout + co) * g.out_plane(), g.out_plane())
                                               .matrix()
                                               .transpose();
                                   }
                               }
                               if (pb->requires_grad) db += G.rowwise().sum().array();
                               if (pw->requires_grad) {
                                   im2col(px->value.data(), g, n0, count, cols);
                                   dW.noalias() += G * cols.transpose();
                               }
                               if (px->requires_grad) {
                                   dcols.noalias() = Wm.transpose() * G;
                                   col2im(dcols, g, n0, count, dx.data());
                               }
                           }
                           if (px->requires_grad) px->accumulate(dx);
                           if (pw->requires_grad) pw->accumulate(Eigen::Map<Array>(dW.data(), dW.size()));
                           if (pb->requires_grad) pb->accumulate(db);
                       });
}

}  // namespace patchail
