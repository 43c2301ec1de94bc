#include "patchail/nets.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace patchail;
using namespace patchail::testing;

namespace {

// Receptive field measured directly: the input pixels that can change the
// centre output cell, found by perturbing one pixel at a time.
Index measured_receptive_field(const ArchSpec& spec, Index size) {
    ConvNet net(spec, 1, size, size, 3, Activation::none);
    // Positive weights so no perturbation can cancel out.
    for (const ConvLayer& l : net.layers()) {
        Tensor(l.weight).data() = l.weight.data().abs() + 0.1;
    }
    NoGradGuard g;
    const Tensor base = Tensor::zeros({1, 1, size, size});
    const Tensor y0 = net.forward(base);
    const Index gh = y0.dim(2), gw = y0.dim(3);
    const Index cell = (gh / 2) * gw + gw / 2;
    Index lo = size, hi = -1;
    for (Index c = 0; c < size; ++c) {
        Tensor x = base.clone();
        x.data()[(size / 2) * size + c] = 1.0;
        if (net.forward(x).data()[cell] != y0.data()[cell]) {
            lo = std::min(lo, c);
            hi = std::max(hi, c);
        }
    }
    return hi - lo + 1;
}

}  // namespace

TEST_CASE("reference architectures: grid and receptive field") {
    const PatchGeometry dmc = patch_geometry(arch::dmc_discriminator(), 84, 84);
    CHECK(dmc.grid_h == 39);
    CHECK(dmc.grid_w == 39);
    CHECK(dmc.receptive_field == 22);
    const PatchGeometry atari = patch_geometry(arch::atari_discriminator(), 84, 84);
    CHECK(atari.grid_h == 19);
    CHECK(atari.receptive_field == 34);
    const PatchGeometry pixel = patch_geometry(ArchSpec::parse("[(1,1,1,0)]"), 84, 84);
    CHECK(pixel.grid_h == 84);
    CHECK(pixel.receptive_field == 1);
    const PatchGeometry enc = patch_geometry(arch::encoder(), 84, 84);
    CHECK(enc.grid_h == 35);
    CHECK(enc.receptive_field == 15);
    CHECK(build_encoder(84, 3, 0).feature_size() == 39200);

    const int kernels[] = {2, 3, 5, 8};
    const Index grids[] = {46, 42, 35, 25};
    const Index fields[] = {8, 15, 29, 50};
    for (int i = 0; i < 4; ++i) {
        const PatchGeometry g = patch_geometry(arch::kernel_ablation(kernels[i]), 84, 84);
        CHECK(g.grid_h == grids[i]);
        CHECK(g.grid_w == grids[i]);
        CHECK(g.receptive_field == fields[i]);
    }
}

TEST_CASE("receptive field agrees with an impulse probe") {
    for (const char* text : {"[(4,2,2,1),(4,2,1,1),(4,1,1,1)]", "[(3,2,2,0),(3,1,1,0)]", "[(5,2,1,2),(2,1,2,0)]",
                             "[(4,2,2,1),(4,2,2,1),(4,1,1,1)]"}) {
        const ArchSpec spec = ArchSpec::parse(text);
        INFO(text);
        CHECK(measured_receptive_field(spec, 48) == patch_geometry(spec, 48, 48).receptive_field);
    }
}

TEST_CASE("geometry grid equals the network's forward output") {
    std::mt19937_64 rng(1);
    for (const char* text : {"[(4,4,2,1),(4,4,1,1),(4,4,1,1),(4,1,1,1)]", "[(4,4,2,1),(4,4,2,1),(4,4,1,1),(4,1,1,1)]",
                             "[(1,1,1,0)]", "[(8,2,2,1),(8,1,1,1)]"}) {
        const ArchSpec spec = ArchSpec::parse(text);
        for (Index size : {32, 41}) {
            const ConvNet net = build_network(spec, 6, size, 0);
            const Tensor y = net.forward(random_tensor({2, 6, size, size}, rng));
            const PatchGeometry g = patch_geometry(spec, size, size);
            CHECK(y.dim(2) == g.grid_h);
            CHECK(y.dim(3) == g.grid_w);
            CHECK(net.output_shape(2) == y.shape());
        }
    }
}

TEST_CASE("footprints lie in the image and cover it") {
    const PatchGeometry g = patch_geometry(arch::dmc_discriminator(), 84, 84);
    REQUIRE(g.footprints.size() == 39u * 39u);
    Eigen::ArrayXXi hits = Eigen::ArrayXXi::Zero(84, 84);
    for (const Footprint& f : g.footprints) {
        CHECK(f.top >= 0);
        CHECK(f.left >= 0);
        CHECK(f.top + f.height <= 84);
        CHECK(f.left + f.width <= 84);
        hits.block(f.top, f.left, f.height, f.width) += 1;
    }
    CHECK((hits > 0).all());
    CHECK(g.at(0, 0).height == g.receptive_field + g.origin);  // clipped by the padding
}

TEST_CASE("arch spec parsing and validation") {
    const ArchSpec a = ArchSpec::parse("[(4,32,2,1),(4,64,1,1)]");
    const ArchSpec b = ArchSpec::parse("[[4,32,2,1],[4,64,1,1]]");
    CHECK(a == b);
    REQUIRE(a.layers.size() == 2);
    CHECK(a.layers[0] == ConvSpec{4, 32, 2, 1});
    CHECK(ArchSpec::parse(a.to_string()) == a);
    CHECK_THROWS_AS(ArchSpec::parse("[]"), std::invalid_argument);
    CHECK_THROWS_AS(ArchSpec::parse("[(4,32,2)]"), std::invalid_argument);
    CHECK_THROWS_AS(ArchSpec::parse("[(4,32,0,1)]"), std::invalid_argument);
    CHECK_THROWS_AS(ArchSpec::parse("nonsense"), std::invalid_argument);
    CHECK_THROWS_AS(ArchSpec::parse("[(4,8,2,1)"), std::invalid_argument);
    CHECK_THROWS_AS(ArchSpec::parse("[(4,8,2,1)] x"), std::invalid_argument);
    CHECK_THROWS_AS(ArchSpec::parse("[(4,8,2,1]"), std::invalid_argument);
    CHECK_THROWS_AS(ArchSpec::parse("[(4,8,2)]"), std::invalid_argument);
    CHECK_THROWS_AS(patch_geometry(arch::dmc_discriminator(), 4, 4), std::invalid_argument);
}

TEST_CASE("actor is bounded and critics are independent") {
    std::mt19937_64 rng(2);
    const PolicyDims dims{64, 16, 32, 2};
    const Actor actor = build_actor(dims, 1);
    const Tensor f = random_tensor({5, 64}, rng, -50, 50);
    const Tensor a = actor.forward(f);
    CHECK(a.shape() == Shape{5, 2});
    CHECK((a.data().abs() <= 1.0).all());

    const Critic c1 = build_critic(dims, 1), c2 = build_critic(dims, 2);
    const Tensor q1 = c1.forward(f, a), q2 = c2.forward(f, a);
    CHECK(q1.shape() == Shape{5, 1});
    CHECK((q1.data() - q2.data()).abs().maxCoeff() > 1e-6);
}

TEST_CASE("orthogonal init has orthonormal rows or columns") {
    std::mt19937_64 rng(3);
    const RowMatrix tall = orthogonal_matrix(7, 3, rng);
    CHECK((tall.transpose() * tall - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-12);
    const RowMatrix wide = orthogonal_matrix(3, 7, rng, 2.0);
    CHECK((wide * wide.transpose() - 4.0 * Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-12);
}

TEST_CASE("networks are deterministic per seed and clones are independent") {
    const ConvNet a = build_network(arch::dmc_discriminator(), 6, 84, 5);
    const ConvNet b = build_network(arch::dmc_discriminator(), 6, 84, 5);
    const auto pa = a.parameters(), pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK((pa[i].data() == pb[i].data()).all());
    const ConvNet c = a.clone();
    Tensor(c.parameters()[0]).data()[0] += 1.0;
    CHECK(a.parameters()[0].data()[0] != c.parameters()[0].data()[0]);
}
