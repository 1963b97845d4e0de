#include <cmath>

#include "doctest.h"
#include "realdepth/degrade.hpp"
#include "realdepth/uncertainty.hpp"
#include "test_util.hpp"

using namespace realdepth;

TEST_CASE("labels follow the strict threshold rule") {
    Grid2D gt(1, 4, std::vector<double>{100.0, 50.0, 50.0, 0.0});
    Grid2D raw(1, 4, std::vector<double>{100.0, 55.0, 65.0, 0.0});
    const UncertaintyMap u = make_label(raw, gt);
    // tau = 10: |0| -> 1, |5| -> 1, |15| -> 0, invalid gt -> 0.
    CHECK(u.labels == Grid2D(1, 4, std::vector<double>{1, 1, 0, 0}));

    Grid2D tie(1, 2, std::vector<double>{100.0, 60.0});
    CHECK(make_label(tie, Grid2D(1, 2, std::vector<double>{100.0, 50.0})).labels[1] == 0.0);
    CHECK_THROWS_AS(make_label(Grid2D(2, 2), Grid2D(2, 2)), ParameterError);
    CHECK_THROWS_AS(make_label(Grid2D(2, 2), Grid2D(2, 3, 1.0)), ParameterError);
}

TEST_CASE("raw equal to gt is trusted wherever gt is valid") {
    Rng rng(1);
    Grid2D gt = testutil::random_grid(10, 10, rng, 0, 5);
    gt(2, 2) = 0.0;
    const UncertaintyMap u = make_label(gt, gt);
    for (std::size_t i = 0; i < gt.size(); ++i) CHECK(u.labels[i] == (gt[i] > 0 ? 1.0 : 0.0));
    const Grid2D masked = mask_raw(gt, u);
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] > 0) CHECK(masked[i] == gt[i]);
    }
}

TEST_CASE("labels are invariant to a common positive scale") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const Grid2D gt = testutil::random_grid(8, 8, rng, 1, 10);
        const Grid2D raw = testutil::random_grid(8, 8, rng, 0, 11);
        // Powers of two keep the comparison exact in binary floating point.
        const double a = std::ldexp(1.0, static_cast<int>(rng.below(20)) - 10);
        Grid2D gt2 = gt, raw2 = raw;
        for (double& v : gt2.values()) v *= a;
        for (double& v : raw2.values()) v *= a;
        CHECK(make_label(raw, gt).labels == make_label(raw2, gt2).labels);
    }
}

TEST_CASE("mask_raw zeroes exactly the untrusted pixels") {
    const Grid2D raw(2, 2, std::vector<double>{5, 6, 7, 8});
    CHECK(mask_raw(raw, {Grid2D(2, 2, std::vector<double>{1, 0, 0, 1})}) ==
          Grid2D(2, 2, std::vector<double>{5, 0, 0, 8}));
    CHECK(mask_raw(raw, {Grid2D(2, 2, 1.0)}) == raw);
    CHECK(mask_raw(raw, {Grid2D(2, 2, 0.0)}) == Grid2D(2, 2, 0.0));
    CHECK_THROWS_AS(mask_raw(raw, {Grid2D(1, 2, 1.0)}), ParameterError);
}

TEST_CASE("relative depth normalization") {
    const Grid2D rel(1, 3, std::vector<double>{2.0, 4.0, 3.0});
    CHECK(normalize_relative_depth(rel) == Grid2D(1, 3, std::vector<double>{0.0, 1.0, 0.5}));
    CHECK(normalize_relative_depth(Grid2D(2, 2, 7.0)) == Grid2D(2, 2, 0.0));
}

TEST_CASE("classifier shapes, zero parameters and determinism") {
    for (bool rel : {false, true}) {
        ClassifierConfig cfg;
        cfg.hidden_channels = 6;
        cfg.use_relative_depth = rel;
        CHECK(cfg.in_channels() == (rel ? 5 : 4));
        const TrustClassifier net(cfg);
        nn::ParamStore store;
        Rng rng(2);
        net.init(store, rng);
        const FeatureMap rgb = testutil::random_features(3, 9, 11, rng, 0, 1);
        const Grid2D raw = testutil::random_grid(9, 11, rng, 0, 100);
        const std::optional<Grid2D> rd =
            rel ? std::optional<Grid2D>(testutil::random_grid(9, 11, rng)) : std::nullopt;
        const FeatureMap logits = classifier_forward(cfg, store, rgb, raw, rd);
        CHECK(logits.channels() == 2);
        CHECK(logits.height() == 9);
        CHECK(logits.width() == 11);
        CHECK(classifier_forward(cfg, store, rgb, raw, rd) == logits);

        const UncertaintyMap pred = predict_labels(logits);
        for (double v : pred.labels.values()) CHECK((v == 0.0 || v == 1.0));

        store.zero_values();
        const FeatureMap zero = classifier_forward(cfg, store, rgb, raw, rd);
        for (double v : zero.values()) CHECK(v == 0.0);
        // Equal logits resolve to label 0.
        const UncertaintyMap tied = predict_labels(zero);
        for (double v : tied.labels.values()) CHECK(v == 0.0);

        const std::optional<Grid2D> wrong =
            rel ? std::nullopt : std::optional<Grid2D>(testutil::random_grid(9, 11, rng));
        CHECK_THROWS_AS(classifier_forward(cfg, store, rgb, raw, wrong), ParameterError);
        CHECK_THROWS_AS(classifier_forward(cfg, store, rgb, Grid2D(9, 10), rd), ParameterError);
    }
}

TEST_CASE("argmax picks the larger logit") {
    FeatureMap logits(2, 1, 3);
    logits(0, 0, 0) = 1.0;
    logits(1, 0, 0) = 2.0;
    logits(0, 0, 1) = 3.0;
    logits(1, 0, 1) = -1.0;
    CHECK(predict_labels(logits).labels == Grid2D(1, 3, std::vector<double>{1, 0, 0}));
}

TEST_CASE("cross entropy falls towards zero as the correct margin grows") {
    const Grid2D labels(1, 2, std::vector<double>{1, 0});
    const Grid2D valid(1, 2, 1.0);
    double previous = INFINITY;
    for (double margin : {0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 40.0}) {
        FeatureMap logits(2, 1, 2);
        logits(1, 0, 0) = margin;
        logits(0, 0, 1) = margin;
        const double loss = cross_entropy(logits, labels, valid).loss;
        CHECK(loss < previous);
        previous = loss;
    }
    CHECK(previous < 1e-15);
    FeatureMap even(2, 1, 2);
    CHECK(cross_entropy(even, labels, valid).loss == doctest::Approx(std::log(2.0)));
    const auto none = cross_entropy(even, labels, Grid2D(1, 2, 0.0));
    CHECK(none.counted == 0);
    CHECK(none.loss == 0.0);
}

TEST_CASE("classifier config round trip") {
    ClassifierConfig cfg;
    cfg.hidden_channels = 12;
    cfg.depth_layers = 5;
    cfg.use_relative_depth = true;
    const ClassifierConfig back =
        ClassifierConfig::from_keyvalues(KeyValues::parse(cfg.to_keyvalues().to_string()));
    CHECK(back.hidden_channels == 12);
    CHECK(back.depth_layers == 5);
    CHECK(back.use_relative_depth);
    ClassifierConfig bad;
    bad.depth_layers = 0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("classifier training sanity") {
    ClassifierConfig cfg;
    cfg.hidden_channels = 8;
    cfg.depth_layers = 3;

    SUBCASE("constant labels are learned") {
        std::vector<ClassifierSample> data;
        for (std::uint64_t s = 0; s < 3; ++s) {
            Rng rng(s);
            ClassifierSample sample;
            sample.rgb = testutil::random_features(3, 16, 16, rng, 0, 1);
            sample.raw = testutil::random_grid(16, 16, rng, 100, 1000);
            sample.labels.labels = Grid2D(16, 16, 1.0);
            sample.valid = Grid2D(16, 16, 1.0);
            data.push_back(sample);
        }
        ClassifierSchedule sched;
        sched.epochs = 30;
        sched.lr = 1e-2;
        const auto trained = classifier_train(cfg, data, sched);
        std::size_t correct = 0, total = 0;
        for (const auto& s : data) {
            const auto pred = predict_labels(classifier_forward(cfg, trained.params, s.rgb, s.raw, {}));
            for (double v : pred.labels.values()) {
                correct += v == 1.0;
                ++total;
            }
        }
        CHECK(static_cast<double>(correct) >= 0.99 * static_cast<double>(total));
    }

    SUBCASE("loss decreases on a synthetic task and training is deterministic") {
        std::vector<ClassifierSample> data;
        for (std::uint64_t s = 0; s < 3; ++s) {
            Rng rng(100 + s);
            const SyntheticScene scene = gen_synthetic_scene(64, 64, rng);
            DegradeRecipe recipe;
            recipe.seed = s;
            recipe.elastic_amplitude = 6.0;
            const auto raw = generate_raw(scene.gt, recipe);
            ClassifierSample sample{scene.rgb, raw.raw, std::nullopt,
                                    make_label(raw.raw, scene.gt), Grid2D(64, 64, 1.0)};
            data.push_back(sample);
        }
        ClassifierSchedule sched;
        sched.epochs = 8;
        sched.lr = 3e-3;
        sched.crop = 32;
        sched.seed = 9;
        const auto a = classifier_train(cfg, data, sched);
        REQUIRE(a.epoch_loss.size() == 8);
        for (double l : a.epoch_loss) CHECK(std::isfinite(l));
        CHECK(a.epoch_loss.back() <= a.epoch_loss.front());
        const auto b = classifier_train(cfg, data, sched);
        CHECK(a.epoch_loss == b.epoch_loss);
    }

    SUBCASE("empty dataset is rejected") {
        CHECK_THROWS_AS(classifier_train(cfg, {}, ClassifierSchedule{}), RuntimeFailure);
    }
}
