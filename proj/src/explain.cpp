#include "patchail/explain.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace patchail {

namespace {

Tensor as_batch(const Tensor& pair) {
    if (pair.rank() == 4) {
        if (pair.dim(0) != 1) throw std::invalid_argument("expected a single observation pair");
        return pair;
    }
    if (pair.rank() != 3) throw std::invalid_argument("expected an observation pair [C,H,W], got " + to_string(pair.shape()));
    return reshape(pair, Shape{1, pair.dim(0), pair.dim(1), pair.dim(2)});
}

Eigen::ArrayXXd min_max(const Eigen::ArrayXXd& m) {
    const double lo = m.minCoeff();
    const double hi = m.maxCoeff();
    if (!(hi > lo)) return Eigen::ArrayXXd::Constant(m.rows(), m.cols(), 0.5);
    return (m - lo) / (hi - lo);
}

}  // namespace

Eigen::ArrayXXd attention_map(const ConvNet& net, const Tensor& pair) {
    NoGradGuard no_grad;
    const Tensor x = as_batch(pair);
    const std::size_t depth = net.layers().size();
    const Tensor features = net.forward_prefix(x, depth - 1);
    const Index c = features.dim(1), fh = features.dim(2), fw = features.dim(3);
    const Index h = x.dim(2), w = x.dim(3);

    Eigen::ArrayXXd norms = Eigen::ArrayXXd::Zero(fh, fw);
    for (Index ch = 0; ch < c; ++ch) {
        for (Index r = 0; r < fh; ++r) {
            for (Index col = 0; col < fw; ++col) {
                const double v = features.data()[(ch * fh + r) * fw + col];
                norms(r, col) += v * v;
            }
        }
    }
    norms = norms.sqrt();

    Eigen::ArrayXXd up(h, w);
    for (Index r = 0; r < h; ++r) {
        const Index fr = std::min(fh - 1, r * fh / h);
        for (Index col = 0; col < w; ++col) up(r, col) = norms(fr, std::min(fw - 1, col * fw / w));
    }
    return min_max(up);
}

Eigen::ArrayXXd patch_to_pixels(const Eigen::ArrayXXd& rewards, const PatchGeometry& geometry,
                                const Eigen::ArrayXXd& attention) {
    if (rewards.rows() != geometry.grid_h || rewards.cols() != geometry.grid_w) {
        throw std::invalid_argument("patch_to_pixels: reward grid " + std::to_string(rewards.rows()) + "x" +
                                    std::to_string(rewards.cols()) + " does not match geometry " +
                                    std::to_string(geometry.grid_h) + "x" + std::to_string(geometry.grid_w));
    }
    if (attention.rows() != geometry.input_h || attention.cols() != geometry.input_w) {
        throw std::invalid_argument("patch_to_pixels: attention map does not match the input size");
    }
    Eigen::ArrayXXd pixels = Eigen::ArrayXXd::Zero(geometry.input_h, geometry.input_w);
    for (Index i = 0; i < geometry.grid_h; ++i) {
        for (Index j = 0; j < geometry.grid_w; ++j) {
            const Footprint& f = geometry.at(i, j);
            if (f.height <= 0 || f.width <= 0) throw std::logic_error("patch_to_pixels: empty footprint");
            auto window = pixels.block(f.top, f.left, f.height, f.width);
            const auto weight = attention.block(f.top, f.left, f.height, f.width);
            const double mass = weight.sum();
            if (mass > 0.0) {
                window += rewards(i, j) * weight / mass;
            } else {
                window += rewards(i, j) / double(f.height * f.width);
            }
        }
    }
    return pixels;
}

Explanation explain_pair(const PatchDiscriminator& disc, const Tensor& pair, Transform transform_kind) {
    const Tensor x = as_batch(pair);
    Explanation e;
    e.logits = disc.logit_grids(x).front();
    e.rewards = transform(clamped_probs(e.logits, kProbClamp), transform_kind);
    e.attention = attention_map(disc.net(), x);
    e.pixels = patch_to_pixels(e.rewards, disc.geometry(), e.attention);
    return e;
}

HeatmapFormat parse_heatmap_format(const std::string& s) {
    if (s == "csv") return HeatmapFormat::csv;
    if (s == "pgm") return HeatmapFormat::pgm;
    if (s == "ppm") return HeatmapFormat::ppm;
    throw std::invalid_argument("unknown heatmap format '" + s + "' (csv|pgm|ppm)");
}

std::array<std::uint8_t, 3> diverging_color(double value, double bound) {
    if (!(bound > 0.0)) return {255, 255, 255};
    const double t = std::clamp(value / bound, -1.0, 1.0);
    const auto level = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * v)); };
    if (t < 0.0) return {level(1.0 + t), level(1.0 + t), 255};
    return {255, level(1.0 - t), level(1.0 - t)};
}

void export_heatmap(const Eigen::ArrayXXd& map, const std::filesystem::path& path, HeatmapFormat format) {
    if (!map.allFinite()) throw std::invalid_argument("export_heatmap: map has non-finite values");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const Index h = map.rows(), w = map.cols();
    switch (format) {
        case HeatmapFormat::csv: {
            char buf[64];
            for (Index r = 0; r < h; ++r) {
                for (Index c = 0; c < w; ++c) {
                    const auto res = std::to_chars(buf, buf + sizeof buf, map(r, c));
                    if (c) out << ',';
                    out.write(buf, res.ptr - buf);
                }
                out << '\n';
            }
            break;
        }
        case HeatmapFormat::pgm: {
            out << "P5\n" << w << ' ' << h << "\n255\n";
            const double lo = map.minCoeff(), hi = map.maxCoeff();
            for (Index r = 0; r < h; ++r) {
                for (Index c = 0; c < w; ++c) {
                    const double t = hi > lo ? (map(r, c) - lo) / (hi - lo) : 0.5;
                    out.put(static_cast<char>(std::lround(255.0 * t)));
                }
            }
            break;
        }
        case HeatmapFormat::ppm: {
            out << "P6\n" << w << ' ' << h << "\n255\n";
            const double bound = map.abs().maxCoeff();
            for (Index r = 0; r < h; ++r) {
                for (Index c = 0; c < w; ++c) {
                    const auto rgb = diverging_color(map(r, c), bound);
                    out.write(reinterpret_cast<const char*>(rgb.data()), 3);
                }
            }
            break;
        }
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

Eigen::ArrayXXd read_heatmap_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<std::vector<double>> rows;
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) {
            double v = 0.0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
                throw std::runtime_error("bad number '" + cell + "' in " + path.string());
            }
            row.push_back(v);
        }
        if (!rows.empty() && row.size() != rows.front().size()) throw std::runtime_error("ragged rows in " + path.string());
        rows.push_back(std::move(row));
    }
    Eigen::ArrayXXd out(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
    for (Index r = 0; r < out.rows(); ++r) {
        for (Index c = 0; c < out.cols(); ++c) out(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
    return out;
}

}  // namespace patchail
