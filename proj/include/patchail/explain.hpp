#pragma once

#include "patchail/discriminator.hpp"
#include "patchail/reward.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

namespace patchail {

/// Channel-wise L2 norm of the network's penultimate feature map for one pair
/// ([C,H,W] or [1,C,H,W]), nearest-neighbour upsampled to HxW and min-max
/// normalized. A constant map becomes 0.5 everywhere.
Eigen::ArrayXXd attention_map(const ConvNet& net, const Tensor& pair);

/// Spreads every patch reward over its clipped footprint in proportion to the
/// attention inside it (uniformly where that attention sums to zero) and sums
/// the contributions. The pixel total equals the patch total.
Eigen::ArrayXXd patch_to_pixels(const Eigen::ArrayXXd& rewards, const PatchGeometry& geometry,
                                const Eigen::ArrayXXd& attention);

struct Explanation {
    Eigen::ArrayXXd logits;     // [P, P]
    Eigen::ArrayXXd rewards;    // h(D) per patch
    Eigen::ArrayXXd attention;  // [H, W]
    Eigen::ArrayXXd pixels;     // [H, W]
};

Explanation explain_pair(const PatchDiscriminator& disc, const Tensor& pair, Transform transform);

enum class HeatmapFormat { csv, pgm, ppm };
HeatmapFormat parse_heatmap_format(const std::string& s);

/// Blue (-bound) through white (0) to red (+bound).
std::array<std::uint8_t, 3> diverging_color(double value, double bound);

/// csv: row-major values, no header. pgm: P5, min-max to 0..255. ppm: P6,
/// diverging colours symmetric about 0.
void export_heatmap(const Eigen::ArrayXXd& map, const std::filesystem::path& path, HeatmapFormat format);
Eigen::ArrayXXd read_heatmap_csv(const std::filesystem::path& path);

}  // namespace patchail
