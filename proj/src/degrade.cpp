#include "realdepth/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace realdepth {

namespace {

enum Stream : std::uint64_t {
    kDisplacementStream = 1,
    kResolutionStream = 2,
    kNoiseStream = 3,
    kMaskStream = 4,
};

Grid2D normal_grid(int h, int w, Rng& rng) {
    Grid2D g(h, w);
    for (double& v : g.values()) v = rng.normal();
    return g;
}

void scale_to_amplitude(Grid2D& g, double amplitude) {
    double peak = 0.0;
    for (double v : g.values()) peak = std::max(peak, std::abs(v));
    const double factor = peak > 0.0 ? amplitude / peak : 0.0;
    for (double& v : g.values()) v *= factor;
    // Rounding in factor can overshoot by one ulp.
    for (double& v : g.values()) v = std::clamp(v, -amplitude, amplitude);
}

}  // namespace

void DegradeRecipe::validate() const {
    require(elastic_sigma > 0.0, "recipe: elastic_sigma must be positive");
    require(elastic_amplitude >= 0.0, "recipe: elastic_amplitude must be non-negative");
    require(elastic_sampling != Interp::bicubic, "recipe: elastic_sampling must be nearest or bilinear");
    require(gaussian_noise_frac >= 0.0 && gaussian_noise_frac < 1.0,
            "recipe: gaussian_noise_frac must lie in [0, 1)");
    require(sp_prob >= 0.0 && sp_prob < 1.0, "recipe: sp_prob must lie in [0, 1)");
    require(scale_range.lo >= 1.0 && scale_range.hi >= scale_range.lo,
            "recipe: scale_range must satisfy 1 <= lo <= hi");
    require(!interp_choices.empty(), "recipe: interp_choices is empty");
    require(mask_area_range.lo > 0.0 && mask_area_range.hi <= 1.0 &&
                mask_area_range.lo <= mask_area_range.hi,
            "recipe: mask_area_range must be a sub-interval of (0, 1]");
}

KeyValues DegradeRecipe::to_keyvalues() const {
    KeyValues kv;
    kv.set("recipe_version", kVersion);
    kv.set("seed", seed);
    kv.set("elastic_sigma", elastic_sigma);
    kv.set("elastic_amplitude", elastic_amplitude);
    kv.set("elastic_sampling", std::string(to_string(elastic_sampling)));
    kv.set("gaussian_noise_frac", gaussian_noise_frac);
    kv.set("sp_prob", sp_prob);
    kv.set("scale_range", std::vector<double>{scale_range.lo, scale_range.hi});
    std::vector<std::string> names;
    for (Interp m : interp_choices) names.emplace_back(to_string(m));
    kv.set("interp_choices", names);
    kv.set("restore", std::string(to_string(restore)));
    kv.set("mask_area_range", std::vector<double>{mask_area_range.lo, mask_area_range.hi});
    kv.set("use_mask", use_mask);
    return kv;
}

DegradeRecipe DegradeRecipe::from_keyvalues(const KeyValues& kv) {
    const auto version = kv.get_int("recipe_version", kVersion);
    require(version == kVersion, "unsupported recipe_version " + std::to_string(version));

    DegradeRecipe r;
    r.seed = kv.get_uint("seed", r.seed);
    r.elastic_sigma = kv.get_double("elastic_sigma", r.elastic_sigma);
    r.elastic_amplitude = kv.get_double("elastic_amplitude", r.elastic_amplitude);
    r.elastic_sampling =
        parse_interp(kv.get_string("elastic_sampling", std::string(to_string(r.elastic_sampling))));
    r.gaussian_noise_frac = kv.get_double("gaussian_noise_frac", r.gaussian_noise_frac);
    r.sp_prob = kv.get_double("sp_prob", r.sp_prob);
    const auto scale = kv.get_doubles("scale_range", {r.scale_range.lo, r.scale_range.hi});
    require(scale.size() == 2, "recipe: scale_range needs two values");
    r.scale_range = {scale[0], scale[1]};
    if (auto names = kv.get_strings("interp_choices", {}); kv.contains("interp_choices")) {
        r.interp_choices.clear();
        for (const auto& n : names) r.interp_choices.push_back(parse_interp(n));
    }
    r.restore = parse_interp(kv.get_string("restore", std::string(to_string(r.restore))));
    const auto area =
        kv.get_doubles("mask_area_range", {r.mask_area_range.lo, r.mask_area_range.hi});
    require(area.size() == 2, "recipe: mask_area_range needs two values");
    r.mask_area_range = {area[0], area[1]};
    r.use_mask = kv.get_bool("use_mask", r.use_mask);
    r.validate();
    return r;
}

DegradeRecipe DegradeRecipe::identity(std::uint64_t seed) {
    DegradeRecipe r;
    r.seed = seed;
    r.elastic_amplitude = 0.0;
    r.gaussian_noise_frac = 0.0;
    r.sp_prob = 0.0;
    r.scale_range = {1.0, 1.0};
    r.use_mask = false;
    return r;
}

DisplacementField gen_displacement(int h, int w, double sigma, double amplitude, Rng& rng) {
    require(h >= 1 && w >= 1, "gen_displacement: dimensions must be positive");
    require(amplitude >= 0.0, "gen_displacement: amplitude must be non-negative");
    Grid2D ex = normal_grid(h, w, rng);
    Grid2D ey = normal_grid(h, w, rng);
    DisplacementField f{gaussian_blur(ex, sigma), gaussian_blur(ey, sigma)};
    scale_to_amplitude(f.dx, amplitude);
    scale_to_amplitude(f.dy, amplitude);
    return f;
}

Grid2D elastic_transform(const Grid2D& depth, const DisplacementField& field, Interp sampling) {
    require(depth.same_shape(field.dx) && depth.same_shape(field.dy),
            "elastic_transform: displacement field does not match depth dimensions");
    require(sampling != Interp::bicubic, "elastic_transform: sampling must be nearest or bilinear");
    Grid2D out(depth.height(), depth.width());
    for (int y = 0; y < depth.height(); ++y) {
        for (int x = 0; x < depth.width(); ++x) {
            out(y, x) = sample_at(depth, x + field.dx(y, x), y + field.dy(y, x), sampling);
        }
    }
    return out;
}

Grid2D apply_noise(const Grid2D& depth, double gaussian_noise_frac, double sp_prob, Rng& rng) {
    require(gaussian_noise_frac >= 0.0 && gaussian_noise_frac < 1.0,
            "apply_noise: gaussian_noise_frac must lie in [0, 1)");
    require(sp_prob >= 0.0 && sp_prob <= 1.0, "apply_noise: sp_prob must lie in [0, 1]");
    const double peak = depth.max();
    const double stddev = gaussian_noise_frac * peak;
    Grid2D out = depth;
    if (stddev > 0.0) {
        for (double& v : out.values()) {
            if (v > 0.0) v += stddev * rng.normal();
        }
    }
    if (sp_prob > 0.0) {
        for (double& v : out.values()) {
            const double u = rng.uniform();
            if (u < 0.5 * sp_prob) {
                v = 0.0;
            } else if (u < sp_prob) {
                v = peak;
            }
        }
    }
    for (double& v : out.values()) v = std::max(v, 0.0);
    return out;
}

Grid2D degrade_resolution(const Grid2D& depth, double rate, Interp method, Interp restore) {
    require(rate >= 1.0, "degrade_resolution: rate must be >= 1");
    const int lh = std::max(1, static_cast<int>(std::lround(depth.height() / rate)));
    const int lw = std::max(1, static_cast<int>(std::lround(depth.width() / rate)));
    return resize(resize(depth, lh, lw, method), depth.height(), depth.width(), restore);
}

RectMask gen_rect_mask(int h, int w, Interval area_range, Rng& rng) {
    require(h >= 1 && w >= 1, "gen_rect_mask: dimensions must be positive");
    require(area_range.lo > 0.0 && area_range.hi <= 1.0 && area_range.lo <= area_range.hi,
            "gen_rect_mask: area range must be a sub-interval of (0, 1]");
    const double total = static_cast<double>(h) * w;
    const long min_area = static_cast<long>(std::ceil(area_range.lo * total - 1e-9));
    const long max_area = static_cast<long>(std::floor(area_range.hi * total + 1e-9));

    // Feasible widths for a given rectangle height.
    auto width_bounds = [&](int rh) {
        const long lo = std::max<long>(1, (min_area + rh - 1) / rh);
        const long hi = std::min<long>(w, max_area / rh);
        return std::pair<long, long>{lo, hi};
    };
    std::vector<int> heights;
    for (int rh = 1; rh <= h; ++rh) {
        auto [lo, hi] = width_bounds(rh);
        if (lo <= hi) heights.push_back(rh);
    }
    if (heights.empty()) {
        throw ParameterError("gen_rect_mask: no integer rectangle in " + std::to_string(h) + "x" +
                             std::to_string(w) + " has an area fraction in [" +
                             std::to_string(area_range.lo) + ", " + std::to_string(area_range.hi) +
                             "]");
    }
    RectMask m;
    m.height = heights[rng.below(heights.size())];
    auto [lo, hi] = width_bounds(m.height);
    m.width = static_cast<int>(lo + static_cast<long>(rng.below(hi - lo + 1)));
    m.top = static_cast<int>(rng.below(h - m.height + 1));
    m.left = static_cast<int>(rng.below(w - m.width + 1));
    return m;
}

RawDepthSample generate_raw(const Grid2D& gt, const DegradeRecipe& recipe) {
    recipe.validate();
    require(gt.all_finite() && gt.min() >= 0.0, "generate_raw: gt must be finite and non-negative");
    const Rng root(recipe.seed);
    Rng displacement_rng = root.fork(kDisplacementStream);
    Rng resolution_rng = root.fork(kResolutionStream);
    Rng noise_rng = root.fork(kNoiseStream);
    Rng mask_rng = root.fork(kMaskStream);

    RawDepthSample out;
    out.field = gen_displacement(gt.height(), gt.width(), recipe.elastic_sigma,
                                 recipe.elastic_amplitude, displacement_rng);
    Grid2D d = elastic_transform(gt, out.field, recipe.elastic_sampling);

    out.rate = resolution_rng.uniform(recipe.scale_range.lo, recipe.scale_range.hi);
    out.method = recipe.interp_choices[resolution_rng.below(recipe.interp_choices.size())];
    d = degrade_resolution(d, out.rate, out.method, recipe.restore);

    d = apply_noise(d, recipe.gaussian_noise_frac, recipe.sp_prob, noise_rng);
    const double ceiling = gt.max();
    for (double& v : d.values()) v = std::clamp(v, 0.0, ceiling);

    if (recipe.use_mask) {
        const RectMask mask = gen_rect_mask(gt.height(), gt.width(), recipe.mask_area_range, mask_rng);
        for (int y = 0; y < gt.height(); ++y) {
            for (int x = 0; x < gt.width(); ++x) {
                if (!mask.contains(y, x)) d(y, x) = gt(y, x);
            }
        }
        out.mask = mask;
    }
    out.raw = std::move(d);
    return out;
}

namespace {

struct Shape {
    bool ellipse;
    double cy, cx, ry, rx;
    double depth;
    double albedo[3];

    bool covers(int y, int x) const {
        const double dy = (y - cy) / ry;
        const double dx = (x - cx) / rx;
        if (ellipse) return dx * dx + dy * dy <= 1.0;
        return std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
    }
};

double color_distance(const double* a, const double* b) {
    return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
}

}  // namespace

SyntheticScene gen_synthetic_scene(int h, int w, Rng& rng) {
    require(h >= 64 && w >= 64, "gen_synthetic_scene: scenes must be at least 64x64");

    // Planar background, far away; total tilt at most 600 units.
    const double base = rng.uniform(3200.0, 4300.0);
    const double gx = rng.uniform(-300.0, 300.0) / w;
    const double gy = rng.uniform(-300.0, 300.0) / h;
    double background[3];
    for (double& c : background) c = rng.uniform(0.15, 0.85);

    const int count = 3 + static_cast<int>(rng.below(6));
    std::vector<Shape> shapes;
    std::vector<const double*> palette{background};
    for (int i = 0; i < count; ++i) {
        Shape s{};
        s.ellipse = rng.uniform() < 0.5;
        s.ry = rng.uniform(0.08, 0.22) * h;
        s.rx = rng.uniform(0.08, 0.22) * w;
        s.cy = rng.uniform(0.1, 0.9) * h;
        s.cx = rng.uniform(0.1, 0.9) * w;
        // Depth levels stay at least 150 units apart from each other.
        for (int attempt = 0; attempt < 200; ++attempt) {
            s.depth = std::round(rng.uniform(600.0, 2800.0));
            bool distinct = true;
            for (const auto& o : shapes) distinct = distinct && std::abs(o.depth - s.depth) >= 150.0;
            if (distinct) break;
        }
        for (int attempt = 0; attempt < 200; ++attempt) {
            for (double& c : s.albedo) c = rng.uniform(0.05, 0.95);
            bool distinct = color_distance(s.albedo, background) >= 0.45;
            for (const auto& o : shapes) distinct = distinct && color_distance(s.albedo, o.albedo) >= 0.45;
            if (distinct) break;
        }
        shapes.push_back(s);
    }
    // Painter order: far shapes first so nearer ones occlude them.
    std::stable_sort(shapes.begin(), shapes.end(),
                     [](const Shape& a, const Shape& b) { return a.depth > b.depth; });

    SyntheticScene scene{FeatureMap(3, h, w), Grid2D(h, w)};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double depth = base + gx * (x - 0.5 * w) + gy * (y - 0.5 * h);
            const double* albedo = background;
            for (const auto& s : shapes) {
                if (s.covers(y, x)) {
                    depth = s.depth;
                    albedo = s.albedo;
                }
            }
            scene.gt(y, x) = depth;
            for (int c = 0; c < 3; ++c) {
                const double texture = 0.02 * (2.0 * rng.uniform() - 1.0);
                scene.rgb(c, y, x) = std::clamp(albedo[c] + texture, 0.0, 1.0);
            }
        }
    }
    return scene;
}

}  // namespace realdepth
