#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace patchail {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    Array value;
    Array grad;  // empty until the first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Receives this node's gradient and pushes contributions into parents.
    std::function<void(const Array&)> backward;

    void accumulate(const Array& g);
};

}  // namespace detail

/// Dense row-major array of doubles with an optional reverse-mode tape.
///
/// Copies are shallow: two Tensor handles may refer to the same node. Use
/// clone() for an independent value copy and detach() to cut the tape.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, Array values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor constant(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    const Shape& shape() const { return node_->shape; }
    Index dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    Index size() const { return node_->value.size(); }

    Array& data() { return node_->value; }
    const Array& data() const { return node_->value; }
    double item() const;
    double operator[](Index i) const { return node_->value[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on);
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    /// Gradient array; zeros are materialized if nothing was accumulated yet.
    Array& grad();
    const Array& grad() const;
    void zero_grad();

    /// Reverse pass seeded with ones (scalar outputs) or with `seed`.
    void backward();
    void backward(const Array& seed);

    Tensor detach() const;
    Tensor clone() const;
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node);

private:
    std::shared_ptr<detail::Node> node_;
};

/// Disables tape recording on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

struct ConvSpec {
    int kernel = 1;
    int out_channels = 1;
    int stride = 1;
    int padding = 0;

    void validate() const;
    Index output_extent(Index input) const { return (input + 2 * padding - kernel) / stride + 1; }
    bool operator==(const ConvSpec&) const = default;
};

// Elementwise arithmetic; operands must share a shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Natural log. Throws std::domain_error on non-positive entries.
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
/// Clamps into [lo, hi]; the gradient is zero where clamping is active.
Tensor clamp(const Tensor& a, double lo, double hi);

// Full reductions to a scalar tensor of shape {}.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor min(const Tensor& a);
Tensor max(const Tensor& a);
/// Even counts average the two middle order statistics.
Tensor median(const Tensor& a);

/// Per-sample mean over every non-batch axis: [N, ...] -> [N].
Tensor mean_per_sample(const Tensor& a);

/// Softmax over all entries of each sample: [N, ...] normalized per n.
Tensor softmax_flat(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
/// [N, ...] -> [N, prod(...)]
Tensor flatten(const Tensor& a);
/// Concatenates along axis 1; leading and trailing extents must agree.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// x[N, in] * W[out, in]^T + b[out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Normalizes the last axis of [N, D], then applies gain and offset.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps = 1e-5);

/// Zero-padded cross-correlation; weight [C', C, k, k], bias [C'].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const ConvSpec& spec);

}  // namespace patchail
