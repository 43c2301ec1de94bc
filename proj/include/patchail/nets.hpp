#pragma once

#include "patchail/checkpoint.hpp"
#include "patchail/tensor.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace patchail {

enum class Activation { none, relu, leaky_relu, tanh, sigmoid };

Tensor apply(Activation act, const Tensor& x);

struct MlpHead {
    std::vector<Index> hidden;
    Index output = 1;
    bool operator==(const MlpHead&) const = default;
};

struct ArchSpec {
    std::vector<ConvSpec> layers;
    Activation terminal = Activation::sigmoid;
    std::optional<MlpHead> mlp_head;

    void validate() const;
    /// Accepts "[(4,32,2,1),(4,64,1,1)]" or "[[4,32,2,1],[4,64,1,1]]": 4-tuples of
    /// [size, channels, stride, padding].
    static ArchSpec parse(const std::string& text);
    std::string to_string() const;
    bool operator==(const ArchSpec&) const = default;
};

namespace arch {
/// Four 4x4 layers; 39x39 patches on 84x84 input.
ArchSpec dmc_discriminator();
/// Second layer strided; 19x19 patches on 84x84 input.
ArchSpec atari_discriminator();
/// DMC discriminator with every kernel replaced by `kernel`.
ArchSpec kernel_ablation(int kernel);
/// Four 1x1 layers, one patch per pixel.
ArchSpec pixel_level();
/// Policy/critic encoder: four 3x3x32 layers, 35x35 features on 84x84 input.
ArchSpec encoder();
}  // namespace arch

struct Footprint {
    Index top = 0;
    Index left = 0;
    Index height = 0;
    Index width = 0;

    bool contains(Index row, Index col) const {
        return row >= top && row < top + height && col >= left && col < left + width;
    }
};

/// Where each output cell of a conv stack looks in the input image.
struct PatchGeometry {
    Index grid_h = 0;
    Index grid_w = 0;
    Index input_h = 0;
    Index input_w = 0;
    Index receptive_field = 0;
    Index jump = 0;
    // Unclipped top/left of cell (0,0); may be negative because of padding.
    Index origin = 0;
    std::vector<Footprint> footprints;  // row-major over the grid, clipped to the image

    const Footprint& at(Index row, Index col) const { return footprints.at(static_cast<std::size_t>(row * grid_w + col)); }
};

/// Throws std::invalid_argument if some layer's output extent is not positive.
PatchGeometry patch_geometry(const ArchSpec& spec, Index input_h, Index input_w);

struct ConvLayer {
    ConvSpec spec;
    Tensor weight;
    Tensor bias;
};

/// A stack of convolutions. Hidden layers use `hidden`; the last layer uses
/// `output` (none for logits).
class ConvNet {
public:
    ConvNet() = default;
    ConvNet(const ArchSpec& spec, Index in_channels, Index input_h, Index input_w, std::uint64_t seed,
            Activation hidden = Activation::leaky_relu, Activation output = Activation::none);

    Tensor forward(const Tensor& x) const;
    /// Output after the first `layers` layers, activation included.
    Tensor forward_prefix(const Tensor& x, std::size_t layers) const;
    /// forward() followed by the architecture's terminal activation.
    Tensor predict(const Tensor& x) const;

    const ArchSpec& spec() const { return spec_; }
    Index in_channels() const { return in_channels_; }
    Index input_h() const { return input_h_; }
    Index input_w() const { return input_w_; }
    Shape output_shape(Index batch) const;
    const std::vector<ConvLayer>& layers() const { return layers_; }

    std::vector<Tensor> parameters() const;
    NamedTensors named_parameters(const std::string& prefix) const;
    /// Independent parameter storage with equal values.
    ConvNet clone() const;

private:
    ArchSpec spec_;
    Index in_channels_ = 0;
    Index input_h_ = 0;
    Index input_w_ = 0;
    Activation hidden_ = Activation::leaky_relu;
    Activation output_ = Activation::none;
    std::vector<ConvLayer> layers_;
};

ConvNet build_network(const ArchSpec& spec, Index in_channels, Index input_hw, std::uint64_t seed);

struct Linear {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]

    Linear() = default;
    Linear(Index in, Index out, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

/// ReLU between layers, identity after the last.
class Mlp {
public:
    Mlp() = default;
    Mlp(Index in, const std::vector<Index>& hidden, Index out, std::mt19937_64& rng);

    Tensor forward(const Tensor& x) const;
    std::vector<Tensor> parameters() const;
    NamedTensors named_parameters(const std::string& prefix) const;
    Mlp clone() const;

private:
    std::vector<Linear> layers_;
};

/// Linear projection to the feature size, layer norm, tanh.
class Trunk {
public:
    Trunk() = default;
    Trunk(Index in, Index feature_dim, std::mt19937_64& rng);

    Tensor forward(const Tensor& x) const;
    std::vector<Tensor> parameters() const;
    NamedTensors named_parameters(const std::string& prefix) const;
    Trunk clone() const;

private:
    Linear proj_;
    Tensor gain_;
    Tensor offset_;
};

/// Conv encoder over centred frames; output is flattened [N, features].
class Encoder {
public:
    Encoder() = default;
    Encoder(const ArchSpec& spec, Index in_channels, Index input_hw, std::uint64_t seed);

    Tensor forward(const Tensor& obs) const;
    Index feature_size() const { return feature_size_; }
    const ConvNet& net() const { return net_; }
    std::vector<Tensor> parameters() const { return net_.parameters(); }
    NamedTensors named_parameters(const std::string& prefix) const { return net_.named_parameters(prefix); }
    Encoder clone() const;

private:
    ConvNet net_;
    Index feature_size_ = 0;
};

Encoder build_encoder(Index input_hw = 84, Index frame_stack = 3, std::uint64_t seed = 0);

struct PolicyDims {
    Index feature_in = 0;   // encoder feature size
    Index feature_dim = 50;
    Index hidden = 1024;
    Index action_dim = 2;
};

class Actor {
public:
    Actor() = default;
    Actor(const PolicyDims& dims, std::uint64_t seed);

    /// Deterministic action in [-1, 1]^action_dim.
    Tensor forward(const Tensor& features) const;
    std::vector<Tensor> parameters() const;
    NamedTensors named_parameters(const std::string& prefix) const;
    Index action_dim() const { return action_dim_; }
    Actor clone() const;

private:
    Trunk trunk_;
    Mlp head_;
    Index action_dim_ = 0;
};

class Critic {
public:
    Critic() = default;
    Critic(const PolicyDims& dims, std::uint64_t seed);

    /// Q(features, action) with shape [N, 1].
    Tensor forward(const Tensor& features, const Tensor& action) const;
    std::vector<Tensor> parameters() const;
    NamedTensors named_parameters(const std::string& prefix) const;
    Critic clone() const;

private:
    Trunk trunk_;
    Mlp head_;
};

Actor build_actor(const PolicyDims& dims, std::uint64_t seed);
Critic build_critic(const PolicyDims& dims, std::uint64_t seed);

/// Orthogonal rows or columns (whichever fits), scaled by `gain`.
RowMatrix orthogonal_matrix(Index rows, Index cols, std::mt19937_64& rng, double gain = 1.0);

}  // namespace patchail
