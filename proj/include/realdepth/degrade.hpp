#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "realdepth/keyvalue.hpp"
#include "realdepth/rng.hpp"
#include "realdepth/tensor.hpp"

namespace realdepth {

struct DisplacementField {
    Grid2D dx;
    Grid2D dy;
};

struct Interval {
    double lo;
    double hi;
};

struct RectMask {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;

    bool contains(int y, int x) const {
        return y >= top && y < top + height && x >= left && x < left + width;
    }
    long area() const { return static_cast<long>(height) * width; }
    friend bool operator==(const RectMask&, const RectMask&) = default;
};

/// Every random choice of one raw-depth generation run. Identical recipes
/// (seed included) give bit-identical outputs.
struct DegradeRecipe {
    static constexpr int kVersion = 1;

    std::uint64_t seed = 0;
    double elastic_sigma = 10.0;
    double elastic_amplitude = 60.0;  // pixels
    Interp elastic_sampling = Interp::nearest;
    double gaussian_noise_frac = 0.01;  // of max depth
    double sp_prob = 0.01;
    Interval scale_range{4.0, 16.0};
    std::vector<Interp> interp_choices{Interp::nearest, Interp::bilinear, Interp::bicubic};
    Interp restore = Interp::bilinear;
    Interval mask_area_range{0.1, 0.6};
    bool use_mask = true;

    void validate() const;
    KeyValues to_keyvalues() const;
    static DegradeRecipe from_keyvalues(const KeyValues& kv);

    /// Recipe whose pipeline reproduces the input exactly.
    static DegradeRecipe identity(std::uint64_t seed = 0);
};

DisplacementField gen_displacement(int h, int w, double sigma, double amplitude, Rng& rng);

Grid2D elastic_transform(const Grid2D& depth, const DisplacementField& field, Interp sampling);

Grid2D apply_noise(const Grid2D& depth, double gaussian_noise_frac, double sp_prob, Rng& rng);

Grid2D degrade_resolution(const Grid2D& depth, double rate, Interp method,
                          Interp restore = Interp::bilinear);

RectMask gen_rect_mask(int h, int w, Interval area_range, Rng& rng);

struct RawDepthSample {
    Grid2D raw;
    DisplacementField field;
    std::optional<RectMask> mask;
    double rate = 1.0;
    Interp method = Interp::nearest;
};

/// Sub-streams forked from recipe.seed, in draw order:
///   1 displacement noise, 2 resolution rate and method, 3 additive and
///   salt-and-pepper noise, 4 rectangular mask.
/// Pipeline: elastic -> resolution -> noise -> clamp to [0, max(gt)], then
/// composited into gt through the mask when recipe.use_mask.
RawDepthSample generate_raw(const Grid2D& gt, const DegradeRecipe& recipe);

struct SyntheticScene {
    FeatureMap rgb;  // 3 channels in [0, 1]
    Grid2D gt;       // depth units in [500, 5000]
};

SyntheticScene gen_synthetic_scene(int h, int w, Rng& rng);

}  // namespace realdepth
