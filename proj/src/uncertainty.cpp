#include "realdepth/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "realdepth/crop.hpp"

namespace realdepth {

UncertaintyMap make_label(const Grid2D& raw, const Grid2D& gt, double tau_frac) {
    require(raw.same_shape(gt), "make_label: raw and gt shapes differ");
    require(tau_frac > 0.0, "make_label: tau_frac must be positive");
    const double peak = gt.max();
    if (!(peak > 0.0)) throw ParameterError("make_label: gt has no valid (> 0) pixel");
    const double tau = tau_frac * peak;
    UncertaintyMap u{Grid2D(raw.height(), raw.width())};
    for (std::size_t i = 0; i < raw.size(); ++i) {
        u.labels[i] = (gt[i] > 0.0 && std::abs(raw[i] - gt[i]) < tau) ? 1.0 : 0.0;
    }
    return u;
}

Grid2D mask_raw(const Grid2D& raw, const UncertaintyMap& u) {
    require(raw.same_shape(u.labels), "mask_raw: raw and label shapes differ");
    Grid2D out = raw;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (u.labels[i] != 1.0) out[i] = 0.0;
    }
    return out;
}

Grid2D normalize_relative_depth(const Grid2D& rel) {
    const double lo = rel.min();
    const double span = rel.max() - lo;
    Grid2D out(rel.height(), rel.width());
    if (span > 0.0) {
        for (std::size_t i = 0; i < rel.size(); ++i) out[i] = (rel[i] - lo) / span;
    }
    return out;
}

void ClassifierConfig::validate() const {
    require(hidden_channels >= 1, "classifier: hidden_channels must be positive");
    require(depth_layers >= 1, "classifier: depth_layers must be positive");
}

KeyValues ClassifierConfig::to_keyvalues() const {
    KeyValues kv;
    kv.set("hidden_channels", hidden_channels);
    kv.set("depth_layers", depth_layers);
    kv.set("use_relative_depth", use_relative_depth);
    return kv;
}

ClassifierConfig ClassifierConfig::from_keyvalues(const KeyValues& kv) {
    ClassifierConfig c;
    c.hidden_channels = static_cast<int>(kv.get_int("hidden_channels", c.hidden_channels));
    c.depth_layers = static_cast<int>(kv.get_int("depth_layers", c.depth_layers));
    c.use_relative_depth = kv.get_bool("use_relative_depth", c.use_relative_depth);
    c.validate();
    return c;
}

TrustClassifier::TrustClassifier(ClassifierConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    int in = cfg_.in_channels();
    for (int i = 0; i < cfg_.depth_layers; ++i) {
        const int out = i + 1 == cfg_.depth_layers ? 2 : cfg_.hidden_channels;
        layers_.emplace_back("cls." + std::to_string(i), in, out);
        in = out;
    }
}

void TrustClassifier::init(nn::ParamStore& store, Rng& rng) const {
    for (const auto& layer : layers_) layer.init(store, rng);
}

FeatureMap TrustClassifier::assemble_input(const FeatureMap& rgb, const Grid2D& raw,
                                           const std::optional<Grid2D>& rel_depth) const {
    require(rgb.channels() == 3, "classifier: rgb must have 3 channels");
    require(rgb.same_spatial(raw), "classifier: rgb and raw dimensions differ");
    require(rel_depth.has_value() == cfg_.use_relative_depth,
            cfg_.use_relative_depth ? "classifier: relative depth channel required"
                                    : "classifier: relative depth given but not configured");
    FeatureMap input(cfg_.in_channels(), raw.height(), raw.width());
    for (int c = 0; c < 3; ++c) {
        std::copy(rgb.channel_span(c).begin(), rgb.channel_span(c).end(),
                  input.channel_span(c).begin());
    }
    const double peak = raw.max();
    auto dst = input.channel_span(3);
    for (std::size_t i = 0; i < raw.size(); ++i) dst[i] = peak > 0.0 ? raw[i] / peak : 0.0;
    if (rel_depth) {
        require(rgb.same_spatial(*rel_depth), "classifier: relative depth dimensions differ");
        input.set_channel(4, normalize_relative_depth(*rel_depth));
    }
    return input;
}

FeatureMap TrustClassifier::forward(const nn::ParamStore& store, const FeatureMap& input,
                                    Cache* cache) const {
    if (cache) {
        cache->input = input;
        cache->activations.clear();
    }
    FeatureMap x = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        x = layers_[i].forward(store, x);
        if (i + 1 < layers_.size()) {
            x = nn::relu(x);
            if (cache) cache->activations.push_back(x);
        }
    }
    return x;
}

FeatureMap TrustClassifier::backward(nn::ParamStore& store, const Cache& cache,
                                     const FeatureMap& grad_logits) const {
    FeatureMap g = grad_logits;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const FeatureMap& in = i == 0 ? cache.input : cache.activations[i - 1];
        g = layers_[i].backward(store, in, g);
        if (i > 0) g = nn::relu_backward(cache.activations[i - 1], g);
    }
    return g;
}

FeatureMap classifier_forward(const ClassifierConfig& cfg, const nn::ParamStore& params,
                              const FeatureMap& rgb, const Grid2D& raw,
                              const std::optional<Grid2D>& rel_depth) {
    const TrustClassifier net(cfg);
    return net.forward(params, net.assemble_input(rgb, raw, rel_depth));
}

UncertaintyMap predict_labels(const FeatureMap& logits) {
    require(logits.channels() == 2, "predict_labels: expected 2 logit channels");
    UncertaintyMap u{Grid2D(logits.height(), logits.width())};
    const auto l0 = logits.channel_span(0);
    const auto l1 = logits.channel_span(1);
    for (std::size_t i = 0; i < u.labels.size(); ++i) u.labels[i] = l1[i] > l0[i] ? 1.0 : 0.0;
    return u;
}

CrossEntropy cross_entropy(const FeatureMap& logits, const Grid2D& labels, const Grid2D& valid) {
    require(logits.channels() == 2 && logits.same_spatial(labels) && labels.same_shape(valid),
            "cross_entropy: shape mismatch");
    CrossEntropy ce{0.0, FeatureMap(2, logits.height(), logits.width()), 0};
    for (std::size_t i = 0; i < labels.size(); ++i) ce.counted += valid[i] != 0.0;
    if (ce.counted == 0) return ce;
    const double inv = 1.0 / static_cast<double>(ce.counted);
    const auto l0 = logits.channel_span(0);
    const auto l1 = logits.channel_span(1);
    auto g0 = ce.grad.channel_span(0);
    auto g1 = ce.grad.channel_span(1);
    std::vector<double> terms;
    terms.reserve(ce.counted);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (valid[i] == 0.0) continue;
        const double peak = std::max(l0[i], l1[i]);
        const double e0 = std::exp(l0[i] - peak);
        const double e1 = std::exp(l1[i] - peak);
        const double lse = peak + std::log(e0 + e1);
        const bool trusted = labels[i] == 1.0;
        terms.push_back(lse - (trusted ? l1[i] : l0[i]));
        const double p1 = e1 / (e0 + e1);
        g0[i] = ((1.0 - p1) - (trusted ? 0.0 : 1.0)) * inv;
        g1[i] = (p1 - (trusted ? 1.0 : 0.0)) * inv;
    }
    ce.loss = pairwise_sum(terms) * inv;
    return ce;
}

ClassifierTraining classifier_train(const ClassifierConfig& cfg,
                                    std::span<const ClassifierSample> dataset,
                                    const ClassifierSchedule& schedule) {
    if (dataset.empty()) throw RuntimeFailure("classifier_train: empty dataset");
    require(schedule.epochs >= 1, "classifier_train: epochs must be positive");
    const TrustClassifier net(cfg);
    Rng rng(schedule.seed);
    Rng init_rng = rng.fork(1);
    Rng order_rng = rng.fork(2);
    Rng crop_rng = rng.fork(3);

    ClassifierTraining result;
    net.init(result.params, init_rng);

    // Inputs are assembled once; crops slice the stacked tensors.
    std::vector<FeatureMap> inputs;
    for (const auto& s : dataset) {
        require(s.labels.labels.same_shape(s.raw) && s.valid.same_shape(s.raw),
                "classifier_train: label or validity map does not match raw");
        inputs.push_back(net.assemble_input(s.rgb, s.raw, s.rel_depth));
    }

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
        const nn::AdamOptions adam{nn::step_lr(schedule.lr, epoch, schedule.decay_every,
                                               schedule.decay)};
        shuffle(order, order_rng);
        std::vector<double> losses;
        for (std::size_t idx : order) {
            const auto& s = dataset[idx];
            const CropWindow win = random_crop(s.raw.height(), s.raw.width(), schedule.crop, crop_rng);
            const FeatureMap input = crop(inputs[idx], win);
            TrustClassifier::Cache cache;
            const FeatureMap logits = net.forward(result.params, input, &cache);
            const CrossEntropy ce =
                cross_entropy(logits, crop(s.labels.labels, win), crop(s.valid, win));
            if (ce.counted == 0) continue;
            result.params.zero_grad();
            net.backward(result.params, cache, ce.grad);
            nn::adam_step(result.params, adam);
            if (schedule.float32) result.params.round_to_float();
            losses.push_back(ce.loss);
        }
        const double mean =
            losses.empty() ? 0.0 : pairwise_sum(losses) / static_cast<double>(losses.size());
        result.epoch_loss.push_back(mean);
    }
    return result;
}

UncertaintyMap ClassifierModel::predict(const FeatureMap& rgb, const Grid2D& raw,
                                        const std::optional<Grid2D>& rel_depth) const {
    return predict_labels(classifier_forward(cfg, params, rgb, raw, rel_depth));
}

void ClassifierModel::save(const std::filesystem::path& path, nn::Dtype dtype) const {
    nn::save_params(params, path, dtype);
    KeyValues kv;
    kv.set("model", std::string("classifier"));
    kv.set("precision", dtype == nn::Dtype::f32 ? 32 : 64);
    kv.merge("classifier", cfg.to_keyvalues());
    auto sidecar = path;
    sidecar += ".cfg";
    kv.save(sidecar);
}

ClassifierModel ClassifierModel::load(const std::filesystem::path& path) {
    auto sidecar = path;
    sidecar += ".cfg";
    const KeyValues kv = KeyValues::load(sidecar);
    require(kv.get_string("model", "") == "classifier",
            sidecar.string() + ": not a classifier sidecar");
    ClassifierModel m{ClassifierConfig::from_keyvalues(kv.section("classifier")),
                      nn::load_params(path)};
    // Shape check against a freshly initialized store.
    nn::ParamStore expected;
    Rng rng(0);
    TrustClassifier(m.cfg).init(expected, rng);
    require(expected.tensor_count() == m.params.tensor_count(),
            path.string() + ": tensor count does not match the classifier config");
    for (const auto& name : expected.names()) {
        require(m.params.at(name).shape == expected.at(name).shape,
                path.string() + ": tensor '" + name + "' has the wrong shape");
    }
    return m;
}

}  // namespace realdepth
