#include "realdepth/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace realdepth {

Grid2D::Grid2D(int height, int width, double fill) : height_(height), width_(width) {
    require(height >= 1 && width >= 1, "grid dimensions must be positive");
    values_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
}

Grid2D::Grid2D(int height, int width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
    require(height >= 1 && width >= 1, "grid dimensions must be positive");
    require(values_.size() == static_cast<std::size_t>(height) * static_cast<std::size_t>(width),
            "grid value count does not match " + std::to_string(height) + "x" +
                std::to_string(width));
}

double Grid2D::max() const { return *std::max_element(values_.begin(), values_.end()); }
double Grid2D::min() const { return *std::min_element(values_.begin(), values_.end()); }

bool Grid2D::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

FeatureMap::FeatureMap(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
    require(channels >= 1 && height >= 1 && width >= 1, "feature map dimensions must be positive");
    values_.assign(static_cast<std::size_t>(channels) * plane(), fill);
}

Grid2D FeatureMap::channel(int c) const {
    auto src = channel_span(c);
    return Grid2D(height_, width_, std::vector<double>(src.begin(), src.end()));
}

void FeatureMap::set_channel(int c, const Grid2D& g) {
    require(same_spatial(g), "set_channel: spatial mismatch");
    std::copy(g.values().begin(), g.values().end(), channel_span(c).begin());
}

FeatureMap FeatureMap::from_grid(const Grid2D& g) {
    FeatureMap out(1, g.height(), g.width());
    out.set_channel(0, g);
    return out;
}

FeatureMap FeatureMap::concat(std::span<const FeatureMap> parts) {
    require(!parts.empty(), "concat: no inputs");
    int total = 0;
    for (const auto& p : parts) {
        require(p.same_spatial(parts.front()), "concat: spatial mismatch");
        total += p.channels();
    }
    FeatureMap out(total, parts.front().height(), parts.front().width());
    auto dst = out.values_.begin();
    for (const auto& p : parts) dst = std::copy(p.values_.begin(), p.values_.end(), dst);
    return out;
}

bool FeatureMap::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string_view to_string(Interp mode) {
    switch (mode) {
        case Interp::nearest: return "nearest";
        case Interp::bilinear: return "bilinear";
        case Interp::bicubic: return "bicubic";
    }
    return "?";
}

Interp parse_interp(std::string_view name) {
    if (name == "nearest") return Interp::nearest;
    if (name == "bilinear") return Interp::bilinear;
    if (name == "bicubic") return Interp::bicubic;
    throw ParameterError("unknown interpolation '" + std::string(name) + "'");
}

std::vector<double> gaussian_kernel(double sigma) {
    require(sigma > 0.0 && std::isfinite(sigma), "gaussian sigma must be positive");
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> taps(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        taps[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        total += taps[i + radius];
    }
    for (double& t : taps) t /= total;
    return taps;
}

Grid2D gaussian_blur(const Grid2D& g, double sigma) {
    const auto taps = gaussian_kernel(sigma);
    const int radius = static_cast<int>(taps.size() / 2);
    const int h = g.height();
    const int w = g.width();

    Grid2D tmp(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                acc += taps[k + radius] * g(y, std::clamp(x + k, 0, w - 1));
            }
            tmp(y, x) = acc;
        }
    }
    Grid2D out(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                acc += taps[k + radius] * tmp(std::clamp(y + k, 0, h - 1), x);
            }
            out(y, x) = acc;
        }
    }
    return out;
}

namespace {

struct Tap {
    int index;
    double weight;
};

double catmull_rom(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

// One row of the separable resampling matrix per output index.
std::vector<std::vector<Tap>> axis_taps(int in, int out, Interp mode) {
    std::vector<std::vector<Tap>> rows(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int o = 0; o < out; ++o) {
        const double src = (o + 0.5) * scale - 0.5;
        auto& row = rows[o];
        switch (mode) {
            case Interp::nearest: {
                const int i = static_cast<int>(std::floor(src + 0.5));
                row.push_back({std::clamp(i, 0, in - 1), 1.0});
                break;
            }
            case Interp::bilinear: {
                const double s = std::clamp(src, 0.0, static_cast<double>(in - 1));
                const int i0 = static_cast<int>(std::floor(s));
                const double t = s - i0;
                row.push_back({i0, 1.0 - t});
                row.push_back({std::min(i0 + 1, in - 1), t});
                break;
            }
            case Interp::bicubic: {
                const int i0 = static_cast<int>(std::floor(src));
                const double t = src - i0;
                for (int k = -1; k <= 2; ++k) {
                    row.push_back({std::clamp(i0 + k, 0, in - 1), catmull_rom(k - t)});
                }
                break;
            }
        }
    }
    return rows;
}

}  // namespace

Grid2D resize(const Grid2D& g, int out_h, int out_w, Interp mode) {
    require(out_h >= 1 && out_w >= 1, "resize target must be at least 1x1");
    const int in_h = g.height();
    const int in_w = g.width();
    const auto xt = axis_taps(in_w, out_w, mode);
    const auto yt = axis_taps(in_h, out_h, mode);

    Grid2D horiz(in_h, out_w);
    for (int y = 0; y < in_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (const Tap& t : xt[x]) acc += t.weight * g(y, t.index);
            horiz(y, x) = acc;
        }
    }
    Grid2D out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (const Tap& t : yt[y]) acc += t.weight * horiz(t.index, x);
            out(y, x) = acc;
        }
    }
    return out;
}

Grid2D resize_adjoint(const Grid2D& grad_out, int in_h, int in_w, Interp mode) {
    require(in_h >= 1 && in_w >= 1, "resize_adjoint: input dims must be positive");
    const int out_h = grad_out.height();
    const int out_w = grad_out.width();
    const auto xt = axis_taps(in_w, out_w, mode);
    const auto yt = axis_taps(in_h, out_h, mode);

    Grid2D horiz(in_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        for (const Tap& t : yt[y]) {
            for (int x = 0; x < out_w; ++x) horiz(t.index, x) += t.weight * grad_out(y, x);
        }
    }
    Grid2D out(in_h, in_w);
    for (int y = 0; y < in_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            for (const Tap& t : xt[x]) out(y, t.index) += t.weight * horiz(y, x);
        }
    }
    return out;
}

double sample_at(const Grid2D& g, double x, double y, Interp mode) {
    const double cx = std::clamp(x, 0.0, static_cast<double>(g.width() - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(g.height() - 1));
    if (mode == Interp::nearest) {
        return g(static_cast<int>(std::floor(cy + 0.5)), static_cast<int>(std::floor(cx + 0.5)));
    }
    require(mode == Interp::bilinear, "sample_at supports nearest and bilinear only");
    const int x0 = static_cast<int>(std::floor(cx));
    const int y0 = static_cast<int>(std::floor(cy));
    const int x1 = std::min(x0 + 1, g.width() - 1);
    const int y1 = std::min(y0 + 1, g.height() - 1);
    const double tx = cx - x0;
    const double ty = cy - y0;
    // Integer positions reproduce the stored value exactly.
    if (tx == 0.0 && ty == 0.0) return g(y0, x0);
    // std::lerp keeps constants exact and stays within the neighbour range.
    const double top = std::lerp(g(y0, x0), g(y0, x1), tx);
    const double bottom = std::lerp(g(y1, x0), g(y1, x1), tx);
    return std::lerp(top, bottom, ty);
}

double pairwise_sum(std::span<const double> values) {
    if (values.size() <= 8) {
        double acc = 0.0;
        for (double v : values) acc += v;
        return acc;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

}  // namespace realdepth
