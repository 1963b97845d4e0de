#include <cmath>

#include "doctest.h"
#include "realdepth/degrade.hpp"
#include "realdepth/gradcheck.hpp"
#include "realdepth/recover.hpp"
#include "test_util.hpp"

using namespace realdepth;

namespace {

FamConfig small_config(int channels = 4, int f = 2) {
    FamConfig cfg;
    cfg.channels = channels;
    cfg.query_distance = f;
    cfg.mlp_hidden = {8, 8};
    return cfg;
}

// Zero the MLP's residual output row so every b_j is exactly 0.
void zero_residual_head(nn::ParamStore& store, const FeatureAlignment& fam) {
    const std::string last = fam.mlp().layer_name(fam.mlp().layers() - 1);
    auto& w = store.at(last + ".weight");
    const int in = w.shape[1];
    for (int i = 0; i < in; ++i) w.value[in + i] = 0.0;
    store.at(last + ".bias").value[1] = 0.0;
}

}  // namespace

TEST_CASE("fam config validation and round trip") {
    FamConfig cfg = small_config();
    cfg.reg = {nn::RegKind::dropblock, 0.2, 5};
    CHECK(cfg.mlp_widths() == std::vector<int>{6, 8, 8, 2});
    const FamConfig back = FamConfig::from_keyvalues(KeyValues::parse(cfg.to_keyvalues().to_string()));
    CHECK(back.channels == 4);
    CHECK(back.query_distance == 2);
    CHECK(back.mlp_hidden == cfg.mlp_hidden);
    CHECK(back.reg.kind == nn::RegKind::dropblock);
    CHECK(back.reg.rate == 0.2);
    CHECK(back.reg.block_size == 5);
    FamConfig bad;
    bad.query_distance = 0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    bad = FamConfig{};
    bad.channels = 0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("query sampling: constants, interior coordinates, clamped lookup") {
    Rng rng(1);
    const FeatureMap flat(3, 10, 10, 2.5);
    for (const QuerySample& q : sample_queries(flat, 3)) CHECK(q.sampled == flat);

    FeatureMap ramp(1, 12, 12);
    for (int y = 0; y < 12; ++y) {
        for (int x = 0; x < 12; ++x) ramp(0, y, x) = 100.0 * y + x;
    }
    const int f = 5;
    const auto queries = sample_queries(ramp, f);
    for (std::size_t j = 0; j < 4; ++j) {
        const int ox = kQueryOffsets[j][0] * f;
        const int oy = kQueryOffsets[j][1] * f;
        for (int y = 0; y < 12; ++y) {
            for (int x = 0; x < 12; ++x) {
                const int sx = std::clamp(x + ox, 0, 11);
                const int sy = std::clamp(y + oy, 0, 11);
                CHECK(queries[j].sampled(0, y, x) == ramp(0, sy, sx));
                CHECK(queries[j].coord_x(y, x) == static_cast<double>(sx - x) / f);
                CHECK(queries[j].coord_y(y, x) == static_cast<double>(sy - y) / f);
            }
        }
        // Interior pixel: unclamped diagonal.
        CHECK(queries[j].coord_x(6, 6) == kQueryOffsets[j][0]);
        CHECK(queries[j].coord_y(6, 6) == kQueryOffsets[j][1]);
    }
    // The four offsets are distinct diagonals.
    for (std::size_t a = 0; a < 4; ++a) {
        for (std::size_t b = a + 1; b < 4; ++b) CHECK(kQueryOffsets[a] != kQueryOffsets[b]);
    }
}

TEST_CASE("encoder shapes and zero parameters") {
    const ToyEncoder enc(4, 5);
    nn::ParamStore store;
    Rng rng(2);
    enc.init(store, rng);
    const FeatureMap rgb = testutil::random_features(4, 7, 9, rng);
    const FeatureMap depth = testutil::random_features(1, 7, 9, rng);
    const auto out = enc.forward(store, rgb, depth, nullptr);
    CHECK(out.rgb.channels() == 5);
    CHECK(out.depth.channels() == 5);
    CHECK(out.rgb.same_spatial(rgb));
    CHECK(out.depth.same_spatial(rgb));
    store.zero_values();
    const auto zero = enc.forward(store, rgb, depth, nullptr);
    for (double v : zero.rgb.values()) CHECK(v == 0.0);
    for (double v : zero.depth.values()) CHECK(v == 0.0);
    CHECK_THROWS_AS(enc.forward(store, rgb, FeatureMap(1, 7, 8), nullptr), ParameterError);
    CHECK_THROWS_AS(enc.forward(store, FeatureMap(3, 7, 9), depth, nullptr), ParameterError);
}

TEST_CASE("encoder config round trip and joint rgb-d input") {
    const EncoderConfig cfg{{1, 2, 4}, true};
    CHECK(cfg.layers() == 3);
    const EncoderConfig back =
        EncoderConfig::from_keyvalues(KeyValues::parse(cfg.to_keyvalues().to_string()));
    CHECK(back.dilations == cfg.dilations);
    CHECK(back.joint_rgbd);
    EncoderConfig bad;
    bad.dilations = {};
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    bad.dilations = {1, 0};
    CHECK_THROWS_AS(bad.validate(), ParameterError);

    const ToyEncoder enc(3, 4, cfg);
    nn::ParamStore store;
    Rng rng(8);
    enc.init(store, rng);
    // The rgb stack's first conv sees the depth channel too.
    CHECK(store.at("enc.rgb.0.weight").shape[1] == 4);
    const FeatureMap rgb = testutil::random_features(3, 9, 9, rng);
    const FeatureMap depth = testutil::random_features(1, 9, 9, rng);
    const auto out = enc.forward(store, rgb, depth, nullptr);
    CHECK(out.rgb.channels() == 4);
    CHECK(out.depth.channels() == 4);
    // Changing depth changes the rgb branch only in joint mode.
    FeatureMap depth2 = depth;
    depth2(0, 4, 4) += 1.0;
    CHECK(enc.forward(store, rgb, depth2, nullptr).rgb != out.rgb);
    const ToyEncoder plain(3, 4);
    nn::ParamStore plain_store;
    plain.init(plain_store, rng);
    CHECK(plain.forward(plain_store, rgb, depth2, nullptr).rgb ==
          plain.forward(plain_store, rgb, depth, nullptr).rgb);
}

TEST_CASE("zero residual leaves exactly the reduced features") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        FamConfig cfg = small_config();
        cfg.reg = {nn::RegKind::stochastic_depth, 0.5, 3};
        const FeatureAlignment fam(cfg);
        nn::ParamStore store;
        fam.init(store, rng);
        for (auto& [name, p] : store) {
            for (double& v : p.value) v = rng.uniform(-1, 1);
        }
        zero_residual_head(store, fam);
        const FeatureMap e_rgb = testutil::random_features(4, 9, 8, rng);
        const FeatureMap e_depth = testutil::random_features(4, 9, 8, rng);
        for (bool training : {false, true}) {
            const auto out = fam.forward(store, e_rgb, e_depth, training, rng);
            for (std::size_t i = 0; i < out.depth.size(); ++i) {
                CHECK(out.depth[i] == out.reduced_rgb[i] + out.reduced_depth[i]);
                double sum = 0.0;
                for (const Grid2D& w : out.weights) {
                    CHECK(w[i] > 0.0);
                    sum += w[i];
                }
                CHECK(std::abs(sum - 1.0) < 1e-6);
            }
        }
    }
}

TEST_CASE("inference is deterministic and rate zero makes the regularizer irrelevant") {
    Rng rng(3);
    const FeatureMap e_rgb = testutil::random_features(4, 8, 8, rng);
    const FeatureMap e_depth = testutil::random_features(4, 8, 8, rng);
    std::optional<Grid2D> reference;
    for (nn::RegKind kind : {nn::RegKind::none, nn::RegKind::dropout, nn::RegKind::dropblock,
                             nn::RegKind::stochastic_depth}) {
        FamConfig cfg = small_config();
        cfg.reg = {kind, 0.0, 3};
        const FeatureAlignment fam(cfg);
        nn::ParamStore store;
        Rng init(77);
        fam.init(store, init);
        Rng r1(1), r2(2);
        const Grid2D a = fam.forward(store, e_rgb, e_depth, false, r1).depth;
        const Grid2D b = fam.forward(store, e_rgb, e_depth, false, r2).depth;
        CHECK(a == b);
        Rng r3(3);
        CHECK(fam.forward(store, e_rgb, e_depth, true, r3).depth == a);
        if (!reference) reference = a;
        CHECK(a == *reference);
    }
}

TEST_CASE("end-to-end gradient of the total loss over 20 seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto r = gradcheck_recovery(seed);
        INFO("seed ", seed, " worst ", r.worst, " analytic ", r.worst_analytic, " numeric ",
             r.worst_numeric);
        CHECK(r.max_rel_error < 1e-3);
        CHECK(r.kinks * 20 < r.checked);
    }
}

TEST_CASE("checkpoint round trip with sidecar") {
    testutil::TempDir dir("ckpt");
    FamConfig cfg = small_config(3, 4);
    cfg.reg = {nn::RegKind::dropout, 0.25, 3};
    RecoveryModel model(cfg, true);
    model.init(11);
    model.save(dir / "model.bin");
    CHECK(std::filesystem::exists(RecoveryModel::sidecar_path(dir / "model.bin")));
    const RecoveryModel back = RecoveryModel::load(dir / "model.bin");
    CHECK(back.uses_relative_depth());
    CHECK(back.config().channels == 3);
    CHECK(back.config().query_distance == 4);
    CHECK(back.config().reg.kind == nn::RegKind::dropout);
    for (const auto& [name, p] : model.params()) CHECK(back.params().at(name).value == p.value);

    Rng rng(4);
    const FeatureMap rgb = testutil::random_features(3, 12, 12, rng, 0, 1);
    const Grid2D raw = testutil::random_grid(12, 12, rng, 500, 900);
    const Grid2D rel = testutil::random_grid(12, 12, rng);
    CHECK(model.recover(rgb, raw, rel) == back.recover(rgb, raw, rel));
    for (double v : model.recover(rgb, raw, rel).values()) CHECK(v >= 0.0);
    CHECK_THROWS_AS(model.recover(rgb, raw, std::nullopt), ParameterError);
    CHECK_THROWS_AS(RecoveryModel::load(dir / "absent.bin"), IoError);

    RecoveryModel joint(small_config(3, 2), false, EncoderConfig{{1, 2}, true});
    joint.init(12);
    joint.save(dir / "joint.bin");
    const RecoveryModel joint_back = RecoveryModel::load(dir / "joint.bin");
    CHECK(joint_back.encoder_config().dilations == std::vector<int>{1, 2});
    CHECK(joint_back.encoder_config().joint_rgbd);
    CHECK(joint.recover(rgb, raw, std::nullopt) == joint_back.recover(rgb, raw, std::nullopt));
}

TEST_CASE("toy training reduces loss and is deterministic") {
    Rng rng(5);
    const SyntheticScene scene = gen_synthetic_scene(64, 64, rng);
    DegradeRecipe recipe;
    recipe.seed = 3;
    recipe.elastic_amplitude = 4.0;
    recipe.scale_range = {4.0, 4.0};
    const auto raw = generate_raw(scene.gt, recipe);
    RecoverySample sample{scene.rgb, raw.raw, std::nullopt, make_label(raw.raw, scene.gt), scene.gt};
    const std::vector<RecoverySample> data{sample};

    FamConfig cfg = small_config(6, 3);
    RecoverySchedule sched;
    sched.epochs = 50;
    sched.crop = 32;
    sched.seed = 8;
    RecoveryModel a(cfg, false);
    a.init(1);
    const TrainHistory ha = train_toy(data, a, sched);
    REQUIRE(ha.epoch_loss.size() == 50);
    CHECK(ha.epoch_loss.back() < ha.epoch_loss.front());

    RecoveryModel b(cfg, false);
    b.init(1);
    const TrainHistory hb = train_toy(data, b, sched);
    CHECK(ha.epoch_loss == hb.epoch_loss);

    CHECK(nn::step_lr(sched.lr, 20, sched.decay_every, sched.decay) == doctest::Approx(5e-4));
    CHECK_THROWS_AS(train_toy({}, a, sched), RuntimeFailure);
}
