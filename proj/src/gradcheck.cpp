#include "realdepth/gradcheck.hpp"

#include <optional>

#include "realdepth/losses.hpp"
#include "realdepth/recover.hpp"
#include "realdepth/uncertainty.hpp"

namespace realdepth {

namespace {

void fill_uniform(std::span<double> values, Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (double& v : values) v = rng.uniform(lo, hi);
}

FeatureMap random_map(int c, int h, int w, Rng& rng) {
    FeatureMap f(c, h, w);
    fill_uniform(f.values(), rng);
    return f;
}

double weighted_sum(std::span<const double> w, std::span<const double> out) {
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += w[i] * out[i];
    return acc;
}

// Randomize every parameter, including biases which init leaves at zero.
void randomize(nn::ParamStore& store, Rng& rng, double scale = 0.5) {
    for (auto& [name, p] : store) fill_uniform(p.value, rng, -scale, scale);
}

void add_param_targets(nn::ParamStore& store, std::vector<nn::GradTarget>& targets) {
    for (auto& [name, p] : store) targets.push_back({name, p.value, p.grad});
}

std::vector<double> to_vector(const FeatureMap& f) {
    return {f.values().begin(), f.values().end()};
}

}  // namespace

nn::GradCheckResult gradcheck_conv3x3(std::uint64_t seed) {
    Rng rng(seed);
    const nn::Conv3x3 conv("conv", 4, 3);
    nn::ParamStore store;
    conv.init(store, rng);
    randomize(store, rng);
    FeatureMap input = random_map(4, 6, 6, rng);
    const FeatureMap w = random_map(3, 6, 6, rng);

    store.zero_grad();
    const FeatureMap g_in = conv.backward(store, input, w);
    std::vector<nn::GradTarget> targets;
    add_param_targets(store, targets);
    targets.push_back({"input", input.values(), to_vector(g_in)});
    return nn::grad_check(
        [&] { return weighted_sum(w.values(), conv.forward(store, input).values()); }, targets);
}

nn::GradCheckResult gradcheck_mlp(std::uint64_t seed) {
    Rng rng(seed);
    const nn::PixelMlp mlp("mlp", {5, 7, 6, 2});
    nn::ParamStore store;
    mlp.init(store, rng);
    randomize(store, rng);
    FeatureMap input = random_map(5, 4, 5, rng);
    const FeatureMap w = random_map(2, 4, 5, rng);

    nn::PixelMlp::Cache cache;
    mlp.forward(store, input, &cache);
    store.zero_grad();
    const FeatureMap g_in = mlp.backward(store, cache, w);
    std::vector<nn::GradTarget> targets;
    add_param_targets(store, targets);
    targets.push_back({"input", input.values(), to_vector(g_in)});
    return nn::grad_check(
        [&] { return weighted_sum(w.values(), mlp.forward(store, input).values()); }, targets);
}

nn::GradCheckResult gradcheck_softmax(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Grid2D> logits(4, Grid2D(5, 5));
    std::vector<Grid2D> w(4, Grid2D(5, 5));
    for (auto& g : logits) fill_uniform(g.values(), rng, -3.0, 3.0);
    for (auto& g : w) fill_uniform(g.values(), rng);
    const auto weights = nn::softmax_over_queries(logits);
    const auto grads = nn::softmax_backward(weights, w);
    std::vector<nn::GradTarget> targets;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        targets.push_back({"logits." + std::to_string(j), logits[j].values(),
                           {grads[j].values().begin(), grads[j].values().end()}});
    }
    return nn::grad_check(
        [&] {
            const auto out = nn::softmax_over_queries(logits);
            double acc = 0.0;
            for (std::size_t j = 0; j < out.size(); ++j) acc += weighted_sum(w[j].values(), out[j].values());
            return acc;
        },
        targets);
}

nn::GradCheckResult gradcheck_fam(std::uint64_t seed) {
    Rng rng(seed);
    FamConfig cfg;
    cfg.channels = 4;
    cfg.query_distance = 2;
    cfg.mlp_hidden = {8, 8};
    cfg.reg = {nn::RegKind::stochastic_depth, 0.1, 3};
    const FeatureAlignment fam(cfg);
    nn::ParamStore store;
    fam.init(store, rng);
    randomize(store, rng);
    FeatureMap e_rgb = random_map(4, 7, 6, rng);
    FeatureMap e_depth = random_map(4, 7, 6, rng);
    Grid2D w(7, 6);
    fill_uniform(w.values(), rng);

    // Inference mode keeps the regularizer deterministic (survival scaling).
    Rng unused(0);
    FeatureAlignment::Cache cache;
    fam.forward(store, e_rgb, e_depth, false, unused, &cache);
    store.zero_grad();
    const auto [g_rgb, g_depth] = fam.backward(store, cache, w);
    std::vector<nn::GradTarget> targets;
    add_param_targets(store, targets);
    targets.push_back({"e_rgb", e_rgb.values(), to_vector(g_rgb)});
    targets.push_back({"e_depth", e_depth.values(), to_vector(g_depth)});
    return nn::grad_check(
        [&] {
            Rng r(0);
            return weighted_sum(w.values(), fam.forward(store, e_rgb, e_depth, false, r).depth.values());
        },
        targets);
}

nn::GradCheckResult gradcheck_encoder(std::uint64_t seed) {
    Rng rng(seed);
    // Odd seeds cover the joint RGB-D input and dilated taps.
    const ToyEncoder encoder = seed % 2 == 0 ? ToyEncoder(4, 3)
                                             : ToyEncoder(4, 3, EncoderConfig{{1, 2, 3}, true});
    nn::ParamStore store;
    encoder.init(store, rng);
    randomize(store, rng);
    FeatureMap rgb = random_map(4, 6, 5, rng);
    FeatureMap depth = random_map(1, 6, 5, rng);
    const FeatureMap w_rgb = random_map(3, 6, 5, rng);
    const FeatureMap w_depth = random_map(3, 6, 5, rng);

    FeatureEncoder::Cache cache;
    encoder.forward(store, rgb, depth, &cache);
    store.zero_grad();
    const auto [g_rgb, g_depth] = encoder.backward(store, cache, w_rgb, w_depth);
    std::vector<nn::GradTarget> targets;
    add_param_targets(store, targets);
    targets.push_back({"rgb", rgb.values(), to_vector(g_rgb)});
    targets.push_back({"depth", depth.values(), to_vector(g_depth)});
    return nn::grad_check(
        [&] {
            const auto out = encoder.forward(store, rgb, depth, nullptr);
            return weighted_sum(w_rgb.values(), out.rgb.values()) +
                   weighted_sum(w_depth.values(), out.depth.values());
        },
        targets);
}

nn::GradCheckResult gradcheck_loss_total(std::uint64_t seed) {
    Rng rng(seed);
    const MsgForm form = seed % 2 == 0 ? MsgForm::standard : MsgForm::paper_literal;
    Grid2D d(16, 16);
    Grid2D dstar(16, 16);
    fill_uniform(d.values(), rng, 0.5, 2.0);
    fill_uniform(dstar.values(), rng, 0.5, 2.0);
    // A few invalid target pixels exercise the validity mask.
    for (int i = 0; i < 8; ++i) dstar[rng.below(dstar.size())] = 0.0;
    const TotalLoss ref = loss_total(d, dstar, {}, form);
    std::vector<nn::GradTarget> targets;
    targets.push_back({"D", d.values(), {ref.grad.values().begin(), ref.grad.values().end()}});
    return nn::grad_check([&] { return loss_total(d, dstar, {}, form).total; }, targets);
}

nn::GradCheckResult gradcheck_classifier(std::uint64_t seed) {
    Rng rng(seed);
    ClassifierConfig cfg;
    cfg.hidden_channels = 4;
    cfg.depth_layers = 3;
    cfg.use_relative_depth = true;
    const TrustClassifier net(cfg);
    nn::ParamStore store;
    net.init(store, rng);
    randomize(store, rng);
    FeatureMap input = random_map(cfg.in_channels(), 5, 6, rng);
    Grid2D labels(5, 6);
    Grid2D valid(5, 6, 1.0);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<double>(rng.below(2));
    valid[3] = 0.0;

    TrustClassifier::Cache cache;
    const FeatureMap logits = net.forward(store, input, &cache);
    const CrossEntropy ce = cross_entropy(logits, labels, valid);
    store.zero_grad();
    const FeatureMap g_in = net.backward(store, cache, ce.grad);
    std::vector<nn::GradTarget> targets;
    add_param_targets(store, targets);
    targets.push_back({"input", input.values(), to_vector(g_in)});
    return nn::grad_check(
        [&] { return cross_entropy(net.forward(store, input), labels, valid).loss; }, targets);
}

nn::GradCheckResult gradcheck_recovery(std::uint64_t seed) {
    Rng rng(seed);
    FamConfig cfg;
    cfg.channels = 3;
    cfg.query_distance = 3;
    cfg.mlp_hidden = {6};
    cfg.reg = {nn::RegKind::stochastic_depth, 0.1, 3};
    RecoveryModel model(cfg, false);
    model.init(seed);
    randomize(model.params(), rng, 0.4);
    const FeatureMap rgb = random_map(3, 16, 16, rng);
    Grid2D raw(16, 16);
    Grid2D gt(16, 16);
    fill_uniform(raw.values(), rng, 0.0, 1.0);
    fill_uniform(gt.values(), rng, 0.2, 1.0);

    Rng unused(0);
    RecoveryModel::Cache cache;
    const auto out = model.forward(rgb, raw, std::nullopt, false, unused, &cache);
    const TotalLoss loss = loss_total(out.depth, gt);
    model.params().zero_grad();
    model.backward(cache, loss.grad);
    std::vector<nn::GradTarget> targets;
    add_param_targets(model.params(), targets);
    return nn::grad_check(
        [&] {
            Rng r(0);
            return loss_total(model.forward(rgb, raw, std::nullopt, false, r).depth, gt).total;
        },
        targets);
}

std::vector<GradCase> gradcheck_suite() {
    return {
        {"conv3x3", gradcheck_conv3x3},     {"mlp", gradcheck_mlp},
        {"softmax", gradcheck_softmax},     {"fam", gradcheck_fam},
        {"encoder", gradcheck_encoder},     {"loss_total", gradcheck_loss_total},
        {"classifier", gradcheck_classifier}, {"recovery", gradcheck_recovery},
    };
}

}  // namespace realdepth
