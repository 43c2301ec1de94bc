#include "patchail/nets.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace patchail {

Tensor apply(Activation act, const Tensor& x) {
    switch (act) {
        case Activation::none: return x;
        case Activation::relu: return relu(x);
        case Activation::leaky_relu: return leaky_relu(x, 0.2);
        case Activation::tanh: return tanh(x);
        case Activation::sigmoid: return sigmoid(x);
    }
    throw std::logic_error("unknown activation");
}

// ---------------------------------------------------------------- ArchSpec

void ArchSpec::validate() const {
    if (layers.empty()) throw std::invalid_argument("ArchSpec: empty layer list");
    for (const ConvSpec& l : layers) l.validate();
    if (mlp_head) {
        for (Index h : mlp_head->hidden) {
            if (h < 1) throw std::invalid_argument("ArchSpec: MLP hidden sizes must be positive");
        }
        if (mlp_head->output < 1) throw std::invalid_argument("ArchSpec: MLP output size must be positive");
    }
}

ArchSpec ArchSpec::parse(const std::string& text) {
    // Grammar: '[' tuple (',' tuple)* ']' with tuple = '(' int ',' int ',' int ',' int ')' or the same in
    // square brackets; blanks anywhere.
    std::size_t pos = 0;
    const auto fail = [&](const std::string& what) {
        throw std::invalid_argument("ArchSpec: " + what + " at offset " + std::to_string(pos) + " in '" + text + "'");
    };
    const auto skip = [&] {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    };
    const auto expect = [&](char c) {
        skip();
        if (pos >= text.size() || text[pos] != c) fail(std::string("expected '") + c + "'");
        ++pos;
    };
    const auto number = [&] {
        skip();
        int v = 0;
        const auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), v);
        if (ec != std::errc()) fail("expected an integer");
        pos = static_cast<std::size_t>(ptr - text.data());
        return v;
    };
    ArchSpec spec;
    expect('[');
    do {
        skip();
        const char close = pos < text.size() && text[pos] == '[' ? ']' : ')';
        expect(close == ']' ? '[' : '(');
        ConvSpec l{};
        l.kernel = number();
        expect(',');
        l.out_channels = number();
        expect(',');
        l.stride = number();
        expect(',');
        l.padding = number();
        expect(close);
        spec.layers.push_back(l);
        skip();
    } while (pos < text.size() && text[pos] == ',' && ++pos);
    expect(']');
    skip();
    if (pos != text.size()) fail("trailing characters");
    spec.validate();
    return spec;
}

std::string ArchSpec::to_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const ConvSpec& l = layers[i];
        os << (i ? "," : "") << '(' << l.kernel << ',' << l.out_channels << ',' << l.stride << ',' << l.padding << ')';
    }
    os << ']';
    return os.str();
}

namespace arch {

namespace {
ArchSpec layers_only(std::vector<ConvSpec> layers) {
    ArchSpec spec;
    spec.layers = std::move(layers);
    return spec;
}
}  // namespace

ArchSpec dmc_discriminator() { return layers_only({{4, 32, 2, 1}, {4, 64, 1, 1}, {4, 128, 1, 1}, {4, 1, 1, 1}}); }

ArchSpec atari_discriminator() { return layers_only({{4, 32, 2, 1}, {4, 64, 2, 1}, {4, 128, 1, 1}, {4, 1, 1, 1}}); }

ArchSpec kernel_ablation(int kernel) {
    ArchSpec spec = dmc_discriminator();
    for (ConvSpec& l : spec.layers) l.kernel = kernel;
    return spec;
}

ArchSpec pixel_level() { return layers_only({{1, 32, 1, 0}, {1, 64, 1, 0}, {1, 128, 1, 0}, {1, 1, 1, 0}}); }

ArchSpec encoder() {
    return ArchSpec{{{3, 32, 2, 0}, {3, 32, 1, 0}, {3, 32, 1, 0}, {3, 32, 1, 0}}, Activation::relu, std::nullopt};
}

}  // namespace arch

// ---------------------------------------------------------------- geometry

PatchGeometry patch_geometry(const ArchSpec& spec, Index input_h, Index input_w) {
    spec.validate();
    PatchGeometry g;
    g.input_h = input_h;
    g.input_w = input_w;
    Index h = input_h, w = input_w;
    Index rf = 1, jump = 1, pad = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const ConvSpec& l = spec.layers[i];
        if (h + 2 * l.padding < l.kernel || w + 2 * l.padding < l.kernel) {
            throw std::invalid_argument("ArchSpec " + spec.to_string() + " gives a non-positive extent at layer " +
                                        std::to_string(i) + " for input " + std::to_string(input_h) + "x" +
                                        std::to_string(input_w));
        }
        h = l.output_extent(h);
        w = l.output_extent(w);
        rf += (l.kernel - 1) * jump;
        pad += l.padding * jump;
        jump *= l.stride;
    }
    g.grid_h = h;
    g.grid_w = w;
    g.receptive_field = rf;
    g.jump = jump;
    g.origin = -pad;
    g.footprints.reserve(static_cast<std::size_t>(h * w));
    for (Index r = 0; r < h; ++r) {
        const Index top = std::max<Index>(0, r * jump - pad);
        const Index bottom = std::min<Index>(input_h, r * jump - pad + rf);
        for (Index c = 0; c < w; ++c) {
            const Index left = std::max<Index>(0, c * jump - pad);
            const Index right = std::min<Index>(input_w, c * jump - pad + rf);
            g.footprints.push_back(Footprint{top, left, std::max<Index>(0, bottom - top), std::max<Index>(0, right - left)});
        }
    }
    return g;
}

// ---------------------------------------------------------------- init helpers

RowMatrix orthogonal_matrix(Index rows, Index cols, std::mt19937_64& rng, double gain) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const bool wide = rows < cols;
    const Index m = wide ? cols : rows;
    const Index n = wide ? rows : cols;
    Eigen::MatrixXd a(m, n);
    for (Index j = 0; j < n; ++j) {
        for (Index i = 0; i < m; ++i) a(i, j) = normal(rng);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m, n);
    const Eigen::MatrixXd r = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
    for (Index j = 0; j < n; ++j) {
        if (r(j, j) < 0.0) q.col(j) *= -1.0;
    }
    RowMatrix out = wide ? RowMatrix(q.transpose()) : RowMatrix(q);
    return gain * out;
}

namespace {

Tensor param(Shape shape, Array values) { return Tensor(std::move(shape), std::move(values), true); }

Tensor kaiming_uniform(Shape shape, Index fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / double(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Array values(numel(shape));
    for (Index i = 0; i < values.size(); ++i) values[i] = u(rng);
    return param(std::move(shape), std::move(values));
}

Tensor deep(const Tensor& t) { return Tensor(t.shape(), t.data(), t.requires_grad()); }

void append(NamedTensors& out, const NamedTensors& more) { out.insert(out.end(), more.begin(), more.end()); }

}  // namespace

// ---------------------------------------------------------------- ConvNet

ConvNet::ConvNet(const ArchSpec& spec, Index in_channels, Index input_h, Index input_w, std::uint64_t seed,
                 Activation hidden, Activation output)
    : spec_(spec), in_channels_(in_channels), input_h_(input_h), input_w_(input_w), hidden_(hidden), output_(output) {
    if (in_channels < 1) throw std::invalid_argument("ConvNet: in_channels must be positive");
    patch_geometry(spec, input_h, input_w);  // validates extents
    std::mt19937_64 rng(seed);
    Index c = in_channels;
    for (const ConvSpec& l : spec.layers) {
        const Index fan_in = c * l.kernel * l.kernel;
        ConvLayer layer{l, kaiming_uniform(Shape{l.out_channels, c, l.kernel, l.kernel}, fan_in, rng),
                        param(Shape{l.out_channels}, Array::Zero(l.out_channels))};
        layers_.push_back(std::move(layer));
        c = l.out_channels;
    }
}

Tensor ConvNet::forward_prefix(const Tensor& x, std::size_t count) const {
    if (x.rank() != 4 || x.dim(1) != in_channels_ || x.dim(2) != input_h_ || x.dim(3) != input_w_) {
        throw std::invalid_argument("ConvNet: expected input [N," + std::to_string(in_channels_) + "," +
                                    std::to_string(input_h_) + "," + std::to_string(input_w_) + "], got " +
                                    patchail::to_string(x.shape()));
    }
    count = std::min(count, layers_.size());
    Tensor h = x;
    for (std::size_t i = 0; i < count; ++i) {
        const ConvLayer& l = layers_[i];
        h = conv2d(h, l.weight, l.bias, l.spec);
        h = apply(i + 1 == layers_.size() ? output_ : hidden_, h);
    }
    return h;
}

Tensor ConvNet::forward(const Tensor& x) const { return forward_prefix(x, layers_.size()); }

Tensor ConvNet::predict(const Tensor& x) const { return apply(spec_.terminal, forward(x)); }

Shape ConvNet::output_shape(Index batch) const {
    const PatchGeometry g = patch_geometry(spec_, input_h_, input_w_);
    return Shape{batch, spec_.layers.back().out_channels, g.grid_h, g.grid_w};
}

std::vector<Tensor> ConvNet::parameters() const {
    std::vector<Tensor> out;
    for (const ConvLayer& l : layers_) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    return out;
}

NamedTensors ConvNet::named_parameters(const std::string& prefix) const {
    NamedTensors out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::string base = prefix + ".conv" + std::to_string(i);
        out.emplace_back(base + ".weight", layers_[i].weight);
        out.emplace_back(base + ".bias", layers_[i].bias);
    }
    return out;
}

ConvNet ConvNet::clone() const {
    ConvNet copy = *this;
    for (ConvLayer& l : copy.layers_) {
        l.weight = deep(l.weight);
        l.bias = deep(l.bias);
    }
    return copy;
}

ConvNet build_network(const ArchSpec& spec, Index in_channels, Index input_hw, std::uint64_t seed) {
    if (spec.mlp_head) throw std::invalid_argument("build_network: patch networks have no MLP head");
    return ConvNet(spec, in_channels, input_hw, input_hw, seed);
}

// ---------------------------------------------------------------- dense parts

Linear::Linear(Index in, Index out, std::mt19937_64& rng) {
    RowMatrix w = orthogonal_matrix(out, in, rng);
    weight = param(Shape{out, in}, Eigen::Map<Array>(w.data(), w.size()));
    bias = param(Shape{out}, Array::Zero(out));
}

Mlp::Mlp(Index in, const std::vector<Index>& hidden, Index out, std::mt19937_64& rng) {
    Index prev = in;
    for (Index h : hidden) {
        layers_.emplace_back(prev, h, rng);
        prev = h;
    }
    layers_.emplace_back(prev, out, rng);
}

Tensor Mlp::forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i](h);
        if (i + 1 < layers_.size()) h = relu(h);
    }
    return h;
}

std::vector<Tensor> Mlp::parameters() const {
    std::vector<Tensor> out;
    for (const Linear& l : layers_) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    return out;
}

NamedTensors Mlp::named_parameters(const std::string& prefix) const {
    NamedTensors out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        out.emplace_back(prefix + ".fc" + std::to_string(i) + ".weight", layers_[i].weight);
        out.emplace_back(prefix + ".fc" + std::to_string(i) + ".bias", layers_[i].bias);
    }
    return out;
}

Mlp Mlp::clone() const {
    Mlp copy = *this;
    for (Linear& l : copy.layers_) {
        l.weight = deep(l.weight);
        l.bias = deep(l.bias);
    }
    return copy;
}

Trunk::Trunk(Index in, Index feature_dim, std::mt19937_64& rng)
    : proj_(in, feature_dim, rng),
      gain_(param(Shape{feature_dim}, Array::Ones(feature_dim))),
      offset_(param(Shape{feature_dim}, Array::Zero(feature_dim))) {}

Tensor Trunk::forward(const Tensor& x) const { return tanh(layer_norm(proj_(x), gain_, offset_)); }

std::vector<Tensor> Trunk::parameters() const { return {proj_.weight, proj_.bias, gain_, offset_}; }

NamedTensors Trunk::named_parameters(const std::string& prefix) const {
    return {{prefix + ".proj.weight", proj_.weight},
            {prefix + ".proj.bias", proj_.bias},
            {prefix + ".norm.gain", gain_},
            {prefix + ".norm.offset", offset_}};
}

Trunk Trunk::clone() const {
    Trunk copy = *this;
    copy.proj_.weight = deep(proj_.weight);
    copy.proj_.bias = deep(proj_.bias);
    copy.gain_ = deep(gain_);
    copy.offset_ = deep(offset_);
    return copy;
}

// ---------------------------------------------------------------- encoder / actor / critic

Encoder::Encoder(const ArchSpec& spec, Index in_channels, Index input_hw, std::uint64_t seed)
    : net_(spec, in_channels, input_hw, input_hw, seed, Activation::relu, Activation::relu) {
    const Shape out = net_.output_shape(1);
    feature_size_ = out[1] * out[2] * out[3];
}

Tensor Encoder::forward(const Tensor& obs) const { return flatten(net_.forward(add_scalar(obs, -0.5))); }

Encoder Encoder::clone() const {
    Encoder copy = *this;
    copy.net_ = net_.clone();
    return copy;
}

Encoder build_encoder(Index input_hw, Index frame_stack, std::uint64_t seed) {
    if (input_hw != 84) {
        throw std::invalid_argument("build_encoder: the reference encoder expects 84x84 input, got " +
                                    std::to_string(input_hw));
    }
    return Encoder(arch::encoder(), frame_stack, input_hw, seed);
}

namespace {

void check_dims(const PolicyDims& dims) {
    if (dims.action_dim <= 0) throw std::invalid_argument("action_dim must be positive");
    if (dims.feature_in <= 0 || dims.feature_dim <= 0 || dims.hidden <= 0) {
        throw std::invalid_argument("policy dimensions must be positive");
    }
}

}  // namespace

Actor::Actor(const PolicyDims& dims, std::uint64_t seed) : action_dim_(dims.action_dim) {
    check_dims(dims);
    std::mt19937_64 rng(seed);
    trunk_ = Trunk(dims.feature_in, dims.feature_dim, rng);
    head_ = Mlp(dims.feature_dim, {dims.hidden, dims.hidden}, dims.action_dim, rng);
}

Tensor Actor::forward(const Tensor& features) const { return tanh(head_.forward(trunk_.forward(features))); }

std::vector<Tensor> Actor::parameters() const {
    std::vector<Tensor> out = trunk_.parameters();
    for (const Tensor& t : head_.parameters()) out.push_back(t);
    return out;
}

NamedTensors Actor::named_parameters(const std::string& prefix) const {
    NamedTensors out = trunk_.named_parameters(prefix + ".trunk");
    append(out, head_.named_parameters(prefix + ".head"));
    return out;
}

Actor Actor::clone() const {
    Actor copy = *this;
    copy.trunk_ = trunk_.clone();
    copy.head_ = head_.clone();
    return copy;
}

Critic::Critic(const PolicyDims& dims, std::uint64_t seed) {
    check_dims(dims);
    std::mt19937_64 rng(seed);
    trunk_ = Trunk(dims.feature_in, dims.feature_dim, rng);
    head_ = Mlp(dims.feature_dim + dims.action_dim, {dims.hidden, dims.hidden}, 1, rng);
}

Tensor Critic::forward(const Tensor& features, const Tensor& action) const {
    return head_.forward(concat_channels(trunk_.forward(features), action));
}

std::vector<Tensor> Critic::parameters() const {
    std::vector<Tensor> out = trunk_.parameters();
    for (const Tensor& t : head_.parameters()) out.push_back(t);
    return out;
}

NamedTensors Critic::named_parameters(const std::string& prefix) const {
    NamedTensors out = trunk_.named_parameters(prefix + ".trunk");
    append(out, head_.named_parameters(prefix + ".head"));
    return out;
}

Critic Critic::clone() const {
    Critic copy = *this;
    copy.trunk_ = trunk_.clone();
    copy.head_ = head_.clone();
    return copy;
}

Actor build_actor(const PolicyDims& dims, std::uint64_t seed) { return Actor(dims, seed); }

Critic build_critic(const PolicyDims& dims, std::uint64_t seed) { return Critic(dims, seed); }

}  // namespace patchail
