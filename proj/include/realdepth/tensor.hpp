#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "realdepth/error.hpp"

namespace realdepth {

// Pixel centers sit at integer coordinates, origin top-left, x = column.
class Grid2D {
public:
    Grid2D() = default;
    Grid2D(int height, int width, double fill = 0.0);
    Grid2D(int height, int width, std::vector<double> values);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    double& operator()(int y, int x) { return values_[index(y, x)]; }
    double operator()(int y, int x) const { return values_[index(y, x)]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::vector<double>& storage() { return values_; }

    bool same_shape(const Grid2D& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

    double max() const;
    double min() const;
    bool all_finite() const;

    friend bool operator==(const Grid2D&, const Grid2D&) = default;

private:
    std::size_t index(int y, int x) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<double> values_;
};

// Channel-major C x H x W activation tensor.
class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(int channels, int height, int width, double fill = 0.0);

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t plane() const {
        return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
    }
    std::size_t size() const { return values_.size(); }

    double& operator()(int c, int y, int x) { return values_[index(c, y, x)]; }
    double operator()(int c, int y, int x) const { return values_[index(c, y, x)]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::span<double> channel_span(int c) { return values().subspan(c * plane(), plane()); }
    std::span<const double> channel_span(int c) const {
        return values().subspan(c * plane(), plane());
    }

    Grid2D channel(int c) const;
    void set_channel(int c, const Grid2D& g);
    static FeatureMap from_grid(const Grid2D& g);
    // Stacks maps along the channel axis; all spatial dims must agree.
    static FeatureMap concat(std::span<const FeatureMap> parts);

    bool same_spatial(const FeatureMap& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }
    bool same_spatial(const Grid2D& g) const {
        return height_ == g.height() && width_ == g.width();
    }
    bool all_finite() const;

    friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

private:
    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * static_cast<std::size_t>(height_) +
                static_cast<std::size_t>(y)) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<double> values_;
};

enum class Interp { nearest, bilinear, bicubic };

std::string_view to_string(Interp mode);
Interp parse_interp(std::string_view name);

/// Normalized Gaussian taps for radius ceil(3 sigma); size 2r+1.
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur with clamp-to-edge borders.
Grid2D gaussian_blur(const Grid2D& g, double sigma);

/// Resize with pixel-center alignment: src = (dst + 0.5) * in / out - 0.5.
/// Bicubic uses the Catmull-Rom kernel. Borders clamp.
Grid2D resize(const Grid2D& g, int out_h, int out_w, Interp mode);

/// Adjoint (transpose) of resize(., out_h, out_w, mode) for an input of
/// in_h x in_w, applied to a gradient of shape out_h x out_w.
Grid2D resize_adjoint(const Grid2D& grad_out, int in_h, int in_w, Interp mode);

/// Point sample with coordinates clamped to the grid. Only nearest and
/// bilinear are accepted.
double sample_at(const Grid2D& g, double x, double y, Interp mode);

// Sum with pairwise reduction; result independent of thread count.
double pairwise_sum(std::span<const double> values);

}  // namespace realdepth
