#include "realdepth/recover.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "realdepth/crop.hpp"

namespace realdepth {

// ----------------------------------------------------------------- FamConfig

void FamConfig::validate() const {
    require(channels >= 1, "fam: channels must be >= 1");
    require(query_distance >= 1, "fam: query_distance must be >= 1");
    for (int w : mlp_hidden) require(w >= 1, "fam: mlp_hidden widths must be positive");
    reg.validate();
}

std::vector<int> FamConfig::mlp_widths() const {
    std::vector<int> widths{channels + 2};
    widths.insert(widths.end(), mlp_hidden.begin(), mlp_hidden.end());
    widths.push_back(2);
    return widths;
}

KeyValues FamConfig::to_keyvalues() const {
    KeyValues kv;
    kv.set("channels", channels);
    kv.set("query_distance", query_distance);
    kv.set("mlp_hidden", std::vector<double>(mlp_hidden.begin(), mlp_hidden.end()));
    kv.set("reg.kind", std::string(nn::to_string(reg.kind)));
    kv.set("reg.rate", reg.rate);
    kv.set("reg.block_size", reg.block_size);
    return kv;
}

FamConfig FamConfig::from_keyvalues(const KeyValues& kv) {
    FamConfig c;
    c.channels = static_cast<int>(kv.get_int("channels", c.channels));
    c.query_distance = static_cast<int>(kv.get_int("query_distance", c.query_distance));
    if (kv.contains("mlp_hidden")) {
        c.mlp_hidden.clear();
        for (double w : kv.get_doubles("mlp_hidden", {})) {
            require(w == static_cast<int>(w), "fam: mlp_hidden entries must be integers");
            c.mlp_hidden.push_back(static_cast<int>(w));
        }
    }
    c.reg.kind = nn::parse_reg_kind(kv.get_string("reg.kind", std::string(nn::to_string(c.reg.kind))));
    c.reg.rate = kv.get_double("reg.rate", c.reg.rate);
    c.reg.block_size = static_cast<int>(kv.get_int("reg.block_size", c.reg.block_size));
    c.validate();
    return c;
}

// ---------------------------------------------------------------- ToyEncoder

void EncoderConfig::validate() const {
    require(!dilations.empty(), "encoder: needs at least one layer");
    for (int d : dilations) require(d >= 1, "encoder: dilations must be positive");
}

KeyValues EncoderConfig::to_keyvalues() const {
    KeyValues kv;
    kv.set("dilations", std::vector<double>(dilations.begin(), dilations.end()));
    kv.set("joint_rgbd", joint_rgbd);
    return kv;
}

EncoderConfig EncoderConfig::from_keyvalues(const KeyValues& kv) {
    EncoderConfig c;
    if (kv.contains("dilations")) {
        c.dilations.clear();
        for (double d : kv.get_doubles("dilations", {})) {
            require(d == static_cast<int>(d), "encoder: dilations must be integers");
            c.dilations.push_back(static_cast<int>(d));
        }
    }
    c.joint_rgbd = kv.get_bool("joint_rgbd", c.joint_rgbd);
    c.validate();
    return c;
}

ToyEncoder::ToyEncoder(int rgb_channels, int channels, int layers)
    : ToyEncoder(rgb_channels, channels,
                 EncoderConfig{std::vector<int>(static_cast<std::size_t>(std::max(layers, 0)), 1),
                               false}) {}

ToyEncoder::ToyEncoder(int rgb_channels, int channels, EncoderConfig cfg)
    : rgb_channels_(rgb_channels), channels_(channels), cfg_(std::move(cfg)) {
    require(cfg_.layers() >= 1, "encoder: layers must be positive");
    cfg_.validate();
    const int rgb_in = rgb_channels + (cfg_.joint_rgbd ? 1 : 0);
    for (int i = 0; i < cfg_.layers(); ++i) {
        const int d = cfg_.dilations[static_cast<std::size_t>(i)];
        rgb_layers_.emplace_back("enc.rgb." + std::to_string(i), i == 0 ? rgb_in : channels,
                                 channels, d);
        depth_layers_.emplace_back("enc.depth." + std::to_string(i), i == 0 ? 1 : channels,
                                   channels, d);
    }
}

void ToyEncoder::init(nn::ParamStore& store, Rng& rng) const {
    for (const auto& l : rgb_layers_) l.init(store, rng);
    for (const auto& l : depth_layers_) l.init(store, rng);
}

namespace {

FeatureMap run_stack(const std::vector<nn::Conv3x3>& layers, const nn::ParamStore& store,
                     const FeatureMap& input, std::vector<FeatureMap>* activations) {
    FeatureMap x = input;
    for (const auto& l : layers) {
        x = nn::relu(l.forward(store, x));
        if (activations) activations->push_back(x);
    }
    return x;
}

FeatureMap backprop_stack(const std::vector<nn::Conv3x3>& layers, nn::ParamStore& store,
                          const FeatureMap& input, const std::vector<FeatureMap>& activations,
                          const FeatureMap& grad_out) {
    FeatureMap g = grad_out;
    for (std::size_t i = layers.size(); i-- > 0;) {
        g = nn::relu_backward(activations[i], g);
        g = layers[i].backward(store, i == 0 ? input : activations[i - 1], g);
    }
    return g;
}

}  // namespace

EncodedFeatures ToyEncoder::forward(const nn::ParamStore& store, const FeatureMap& rgb_input,
                                    const FeatureMap& depth_input, Cache* cache) const {
    require(rgb_input.same_spatial(depth_input), "encoder: rgb and depth dimensions differ");
    require(rgb_input.channels() == rgb_channels_ && depth_input.channels() == 1,
            "encoder: unexpected input channel count");
    FeatureMap rgb_stack_input = rgb_input;
    if (cfg_.joint_rgbd) {
        const FeatureMap parts[] = {rgb_input, depth_input};
        rgb_stack_input = FeatureMap::concat(parts);
    }
    if (cache) {
        cache->rgb_input = rgb_stack_input;
        cache->depth_input = depth_input;
        cache->rgb_activations.clear();
        cache->depth_activations.clear();
    }
    return {run_stack(rgb_layers_, store, rgb_stack_input,
                      cache ? &cache->rgb_activations : nullptr),
            run_stack(depth_layers_, store, depth_input,
                      cache ? &cache->depth_activations : nullptr)};
}

std::pair<FeatureMap, FeatureMap> ToyEncoder::backward(nn::ParamStore& store, const Cache& cache,
                                                       const FeatureMap& grad_rgb,
                                                       const FeatureMap& grad_depth) const {
    FeatureMap g_rgb =
        backprop_stack(rgb_layers_, store, cache.rgb_input, cache.rgb_activations, grad_rgb);
    FeatureMap g_depth = backprop_stack(depth_layers_, store, cache.depth_input,
                                        cache.depth_activations, grad_depth);
    if (!cfg_.joint_rgbd) return {std::move(g_rgb), std::move(g_depth)};
    // Split the joint input gradient: last channel belongs to the depth input.
    FeatureMap g_image(rgb_channels_, g_rgb.height(), g_rgb.width());
    for (int c = 0; c < rgb_channels_; ++c) g_image.set_channel(c, g_rgb.channel(c));
    const Grid2D extra = g_rgb.channel(rgb_channels_);
    for (std::size_t i = 0; i < extra.size(); ++i) g_depth[i] += extra[i];
    return {std::move(g_image), std::move(g_depth)};
}

KeyValues ToyEncoder::describe() const {
    KeyValues kv;
    kv.set("kind", std::string("toy"));
    kv.set("layers", static_cast<int>(rgb_layers_.size()));
    kv.set("rgb_channels", rgb_channels_);
    kv.set("channels", channels_);
    kv.merge("", cfg_.to_keyvalues());
    return kv;
}

// ------------------------------------------------------------------- queries

std::array<QuerySample, 4> sample_queries(const FeatureMap& e_rgb, int f) {
    require(f >= 1, "sample_queries: query distance must be >= 1");
    const int c = e_rgb.channels();
    const int h = e_rgb.height();
    const int w = e_rgb.width();
    std::array<QuerySample, 4> out;
    for (std::size_t j = 0; j < kQueryOffsets.size(); ++j) {
        QuerySample& q = out[j];
        q.sampled = FeatureMap(c, h, w);
        q.coord_x = Grid2D(h, w);
        q.coord_y = Grid2D(h, w);
        q.source.resize(static_cast<std::size_t>(h) * w);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const int qx = std::clamp(x + kQueryOffsets[j][0] * f, 0, w - 1);
                const int qy = std::clamp(y + kQueryOffsets[j][1] * f, 0, h - 1);
                q.coord_x(y, x) = static_cast<double>(qx - x) / f;
                q.coord_y(y, x) = static_cast<double>(qy - y) / f;
                q.source[static_cast<std::size_t>(y) * w + x] = qy * w + qx;
            }
        }
        for (int ci = 0; ci < c; ++ci) {
            const auto src = e_rgb.channel_span(ci);
            auto dst = q.sampled.channel_span(ci);
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[q.source[i]];
        }
    }
    return out;
}

// ---------------------------------------------------------- FeatureAlignment

FeatureAlignment::FeatureAlignment(FamConfig cfg)
    : cfg_(std::move(cfg)),
      reduce_rgb_("fam.reduce_rgb", cfg_.channels, 1),
      reduce_depth_("fam.reduce_depth", cfg_.channels, 1),
      mlp_("fam.query_mlp", cfg_.mlp_widths()) {
    cfg_.validate();
}

void FeatureAlignment::init(nn::ParamStore& store, Rng& rng) const {
    reduce_rgb_.init(store, rng);
    reduce_depth_.init(store, rng);
    mlp_.init(store, rng);
}

FeatureAlignment::Output FeatureAlignment::forward(const nn::ParamStore& store,
                                                   const FeatureMap& e_rgb,
                                                   const FeatureMap& e_depth, bool training,
                                                   Rng& rng, Cache* cache) const {
    require(e_rgb.channels() == cfg_.channels && e_depth.channels() == cfg_.channels,
            "fam: feature channels do not match config");
    require(e_rgb.same_spatial(e_depth), "fam: rgb and depth features differ in size");
    const int c = cfg_.channels;
    const int h = e_rgb.height();
    const int w = e_rgb.width();
    const std::size_t plane = e_rgb.plane();

    Output out;
    out.reduced_rgb = reduce_rgb_.forward(store, e_rgb).channel(0);
    out.reduced_depth = reduce_depth_.forward(store, e_depth).channel(0);

    // All four queries go through the shared MLP as one 4H x W batch.
    auto queries = sample_queries(e_rgb, cfg_.query_distance);
    FeatureMap stacked(c + 2, 4 * h, w);
    for (std::size_t j = 0; j < 4; ++j) {
        for (int ci = 0; ci < c; ++ci) {
            const auto src = queries[j].sampled.channel_span(ci);
            std::copy(src.begin(), src.end(), stacked.channel_span(ci).begin() + j * plane);
        }
        const auto cx = queries[j].coord_x.values();
        const auto cy = queries[j].coord_y.values();
        std::copy(cx.begin(), cx.end(), stacked.channel_span(c).begin() + j * plane);
        std::copy(cy.begin(), cy.end(), stacked.channel_span(c + 1).begin() + j * plane);
    }
    nn::PixelMlp::Cache mlp_cache;
    const FeatureMap ab = mlp_.forward(store, stacked, cache ? &mlp_cache : nullptr);

    std::vector<Grid2D> logits(4, Grid2D(h, w));
    std::vector<Grid2D> residuals(4, Grid2D(h, w));
    for (std::size_t j = 0; j < 4; ++j) {
        const auto a = ab.channel_span(0).subspan(j * plane, plane);
        const auto b = ab.channel_span(1).subspan(j * plane, plane);
        std::copy(a.begin(), a.end(), logits[j].values().begin());
        std::copy(b.begin(), b.end(), residuals[j].values().begin());
    }
    out.weights = nn::softmax_over_queries(logits);

    FeatureMap branch(1, h, w);
    for (std::size_t i = 0; i < plane; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < 4; ++j) acc += out.weights[j][i] * residuals[j][i];
        branch[i] = acc;
    }
    nn::RegOutput reg = nn::apply_regularizer(cfg_.reg, branch, training, rng);
    out.residual = reg.out.channel(0);

    out.depth = Grid2D(h, w);
    for (std::size_t i = 0; i < plane; ++i) {
        out.depth[i] = out.reduced_rgb[i] + out.reduced_depth[i] + out.residual[i];
    }

    if (cache) {
        cache->e_rgb = e_rgb;
        cache->e_depth = e_depth;
        cache->queries = std::move(queries);
        cache->mlp = std::move(mlp_cache);
        cache->weights = out.weights;
        cache->residuals = std::move(residuals);
        cache->reg_scale = std::move(reg.scale);
    }
    return out;
}

std::pair<FeatureMap, FeatureMap> FeatureAlignment::backward(nn::ParamStore& store,
                                                             const Cache& cache,
                                                             const Grid2D& grad_depth) const {
    const int c = cfg_.channels;
    const int h = cache.e_rgb.height();
    const int w = cache.e_rgb.width();
    const std::size_t plane = cache.e_rgb.plane();
    require(grad_depth.height() == h && grad_depth.width() == w, "fam: gradient shape mismatch");

    const FeatureMap g_reduced = FeatureMap::from_grid(grad_depth);
    FeatureMap g_rgb = reduce_rgb_.backward(store, cache.e_rgb, g_reduced);
    FeatureMap g_depth = reduce_depth_.backward(store, cache.e_depth, g_reduced);

    std::vector<Grid2D> g_weights(4, Grid2D(h, w));
    FeatureMap g_ab(2, 4 * h, w);
    for (std::size_t i = 0; i < plane; ++i) {
        const double g_branch = grad_depth[i] * cache.reg_scale[i];
        for (std::size_t j = 0; j < 4; ++j) {
            g_weights[j][i] = g_branch * cache.residuals[j][i];
            g_ab.channel_span(1)[j * plane + i] = g_branch * cache.weights[j][i];
        }
    }
    const auto g_logits = nn::softmax_backward(cache.weights, g_weights);
    for (std::size_t j = 0; j < 4; ++j) {
        std::copy(g_logits[j].values().begin(), g_logits[j].values().end(),
                  g_ab.channel_span(0).begin() + j * plane);
    }

    const FeatureMap g_stacked = mlp_.backward(store, cache.mlp, g_ab);
    // Coordinate channels are constants; only the sampled features carry
    // gradient back to E(I).
    for (std::size_t j = 0; j < 4; ++j) {
        const auto& source = cache.queries[j].source;
        for (int ci = 0; ci < c; ++ci) {
            const auto g = g_stacked.channel_span(ci).subspan(j * plane, plane);
            auto dst = g_rgb.channel_span(ci);
            for (std::size_t i = 0; i < plane; ++i) dst[source[i]] += g[i];
        }
    }
    return {std::move(g_rgb), std::move(g_depth)};
}

// ------------------------------------------------------------- RecoveryModel

RecoveryModel::RecoveryModel(FamConfig cfg, bool use_relative_depth, EncoderConfig encoder)
    : encoder_cfg_(std::move(encoder)),
      encoder_(std::make_shared<ToyEncoder>(use_relative_depth ? 4 : 3, cfg.channels,
                                            encoder_cfg_)),
      fam_(cfg),
      use_relative_depth_(use_relative_depth) {}

void RecoveryModel::init(std::uint64_t seed) {
    params_ = nn::ParamStore{};
    Rng rng(seed);
    Rng enc_rng = rng.fork(1);
    Rng fam_rng = rng.fork(2);
    encoder_->init(params_, enc_rng);
    fam_.init(params_, fam_rng);
}

FeatureMap RecoveryModel::rgb_input(const FeatureMap& rgb,
                                    const std::optional<Grid2D>& rel_depth) const {
    require(rgb.channels() == 3, "recovery: rgb must have 3 channels");
    require(rel_depth.has_value() == use_relative_depth_,
            use_relative_depth_ ? "recovery: relative depth channel required"
                                : "recovery: relative depth given but not configured");
    if (!rel_depth) return rgb;
    require(rgb.same_spatial(*rel_depth), "recovery: relative depth dimensions differ");
    const FeatureMap parts[] = {rgb, FeatureMap::from_grid(normalize_relative_depth(*rel_depth))};
    return FeatureMap::concat(parts);
}

FeatureAlignment::Output RecoveryModel::forward(const FeatureMap& rgb, const Grid2D& raw_normalized,
                                                const std::optional<Grid2D>& rel_depth,
                                                bool training, Rng& rng, Cache* cache) const {
    require(rgb.same_spatial(raw_normalized), "recovery: rgb and raw dimensions differ");
    const EncodedFeatures features =
        encoder_->forward(params_, rgb_input(rgb, rel_depth), FeatureMap::from_grid(raw_normalized),
                          cache ? &cache->encoder : nullptr);
    return fam_.forward(params_, features.rgb, features.depth, training, rng,
                        cache ? &cache->fam : nullptr);
}

void RecoveryModel::backward(const Cache& cache, const Grid2D& grad_depth) {
    auto [g_rgb, g_depth] = fam_.backward(params_, cache.fam, grad_depth);
    encoder_->backward(params_, cache.encoder, g_rgb, g_depth);
}

double depth_scale(const Grid2D& raw_masked) {
    const double peak = raw_masked.max();
    return peak > 0.0 ? peak : 1.0;
}

Grid2D RecoveryModel::recover(const FeatureMap& rgb, const Grid2D& raw_masked,
                              const std::optional<Grid2D>& rel_depth) const {
    const double scale = depth_scale(raw_masked);
    Grid2D normalized = raw_masked;
    for (double& v : normalized.values()) v /= scale;
    Rng unused(0);
    Grid2D out = forward(rgb, normalized, rel_depth, false, unused).depth;
    for (double& v : out.values()) v = std::max(0.0, v * scale);
    return out;
}

std::filesystem::path RecoveryModel::sidecar_path(const std::filesystem::path& params_path) {
    auto p = params_path;
    p += ".cfg";
    return p;
}

void RecoveryModel::save(const std::filesystem::path& params_path, nn::Dtype dtype) const {
    nn::save_params(params_, params_path, dtype);
    KeyValues kv;
    kv.set("model", std::string("recovery"));
    kv.set("precision", dtype == nn::Dtype::f32 ? 32 : 64);
    kv.merge("fam", config().to_keyvalues());
    kv.merge("encoder", encoder_->describe());
    kv.set("encoder.use_relative_depth", use_relative_depth_);
    kv.save(sidecar_path(params_path));
}

RecoveryModel RecoveryModel::load(const std::filesystem::path& params_path) {
    const KeyValues kv = KeyValues::load(sidecar_path(params_path));
    require(kv.get_string("model", "") == "recovery",
            sidecar_path(params_path).string() + ": not a recovery model sidecar");
    require(kv.get_string("encoder.kind", "toy") == "toy", "unsupported encoder kind");
    const KeyValues enc = kv.section("encoder");
    RecoveryModel model(FamConfig::from_keyvalues(kv.section("fam")),
                        kv.get_bool("encoder.use_relative_depth", false),
                        EncoderConfig::from_keyvalues(enc));
    nn::ParamStore loaded = nn::load_params(params_path);
    model.init(0);
    for (const auto& name : model.params_.names()) {
        auto& dst = model.params_.at(name);
        const auto& src = loaded.at(name);
        require(src.shape == dst.shape, "checkpoint tensor '" + name + "' has the wrong shape");
        dst.value = src.value;
    }
    require(loaded.tensor_count() == model.params_.tensor_count(),
            "checkpoint has unexpected extra tensors");
    return model;
}

// ----------------------------------------------------------------- training

TrainHistory train_toy(std::span<const RecoverySample> dataset, RecoveryModel& model,
                       const RecoverySchedule& schedule) {
    if (dataset.empty()) throw RuntimeFailure("train_toy: empty dataset");
    require(schedule.epochs >= 1, "train_toy: epochs must be positive");
    Rng rng(schedule.seed);
    Rng order_rng = rng.fork(1);
    Rng crop_rng = rng.fork(2);
    Rng reg_rng = rng.fork(3);

    struct Prepared {
        FeatureMap rgb_input;
        Grid2D raw;  // normalized
        Grid2D gt;   // normalized
    };
    std::vector<Prepared> prepared;
    for (const auto& s : dataset) {
        require(s.rgb.same_spatial(s.raw) && s.raw.same_shape(s.gt),
                "train_toy: sample dimensions differ");
        Grid2D raw = s.uncertainty ? mask_raw(s.raw, *s.uncertainty) : s.raw;
        const double scale = depth_scale(raw);
        Grid2D gt = s.gt;
        for (double& v : raw.values()) v /= scale;
        for (double& v : gt.values()) v /= scale;
        prepared.push_back({model.rgb_input(s.rgb, s.rel_depth), std::move(raw), std::move(gt)});
    }

    TrainHistory history;
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
        const nn::AdamOptions adam{
            nn::step_lr(schedule.lr, epoch, schedule.decay_every, schedule.decay)};
        shuffle(order, order_rng);
        std::vector<double> losses;
        for (std::size_t idx : order) {
            const Prepared& p = prepared[idx];
            const CropWindow win = random_crop(p.raw.height(), p.raw.width(), schedule.crop, crop_rng);
            const FeatureMap rgb_in = crop(p.rgb_input, win);
            const Grid2D raw = crop(p.raw, win);
            const Grid2D gt = crop(p.gt, win);

            RecoveryModel::Cache cache;
            const EncodedFeatures features = model.encoder().forward(
                model.params(), rgb_in, FeatureMap::from_grid(raw), &cache.encoder);
            const auto out = model.fam().forward(model.params(), features.rgb, features.depth,
                                                 true, reg_rng, &cache.fam);
            const TotalLoss loss = loss_total(out.depth, gt, schedule.loss, schedule.msg_form);
            model.params().zero_grad();
            model.backward(cache, loss.grad);
            nn::adam_step(model.params(), adam);
            if (schedule.float32) model.params().round_to_float();
            losses.push_back(loss.total);
        }
        history.epoch_loss.push_back(pairwise_sum(losses) / static_cast<double>(losses.size()));
    }
    return history;
}

}  // namespace realdepth
