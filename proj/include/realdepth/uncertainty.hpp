#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "realdepth/keyvalue.hpp"
#include "realdepth/nn.hpp"
#include "realdepth/tensor.hpp"

namespace realdepth {

/// Per-pixel trust labels: 1 = raw agrees with gt, 0 = wrong or no gt.
struct UncertaintyMap {
    Grid2D labels;
};

/// label = 1 where gt > 0 and |raw - gt| < tau_frac * max(gt), else 0.
UncertaintyMap make_label(const Grid2D& raw, const Grid2D& gt, double tau_frac = 0.1);

/// Zeroes every raw pixel whose label is 0.
Grid2D mask_raw(const Grid2D& raw, const UncertaintyMap& u);

/// Min-max normalization to [0, 1]; a constant map becomes all zeros.
Grid2D normalize_relative_depth(const Grid2D& rel);

struct ClassifierConfig {
    int hidden_channels = 32;
    int depth_layers = 4;
    bool use_relative_depth = false;

    int in_channels() const { return 4 + (use_relative_depth ? 1 : 0); }
    void validate() const;
    KeyValues to_keyvalues() const;
    static ClassifierConfig from_keyvalues(const KeyValues& kv);
};

/// Lightweight per-pixel two-class network: depth_layers 3x3 convolutions,
/// rectifier after every layer except the last, 2 output channels.
class TrustClassifier {
public:
    struct Cache {
        FeatureMap input;
        std::vector<FeatureMap> activations;
    };

    explicit TrustClassifier(ClassifierConfig cfg);

    const ClassifierConfig& config() const { return cfg_; }
    void init(nn::ParamStore& store, Rng& rng) const;

    /// Stacks RGB, raw / max(raw) and the optional min-max relative depth.
    FeatureMap assemble_input(const FeatureMap& rgb, const Grid2D& raw,
                              const std::optional<Grid2D>& rel_depth) const;

    FeatureMap forward(const nn::ParamStore& store, const FeatureMap& input,
                       Cache* cache = nullptr) const;
    /// Accumulates parameter gradients; returns the gradient of the input.
    FeatureMap backward(nn::ParamStore& store, const Cache& cache,
                        const FeatureMap& grad_logits) const;

private:
    ClassifierConfig cfg_;
    std::vector<nn::Conv3x3> layers_;
};

/// Per-pixel 2-class logits for the given inputs.
FeatureMap classifier_forward(const ClassifierConfig& cfg, const nn::ParamStore& params,
                              const FeatureMap& rgb, const Grid2D& raw,
                              const std::optional<Grid2D>& rel_depth);

/// Argmax over the two logit channels; ties resolve to label 0.
UncertaintyMap predict_labels(const FeatureMap& logits);

struct CrossEntropy {
    double loss = 0.0;
    FeatureMap grad;
    std::size_t counted = 0;
};

/// Mean 2-class cross-entropy over pixels with valid != 0.
CrossEntropy cross_entropy(const FeatureMap& logits, const Grid2D& labels, const Grid2D& valid);

struct ClassifierSample {
    FeatureMap rgb;
    Grid2D raw;
    std::optional<Grid2D> rel_depth;
    UncertaintyMap labels;
    Grid2D valid;  // 1 where gt > 0
};

struct ClassifierSchedule {
    int epochs = 20;
    double lr = 1e-3;
    int decay_every = 20;
    double decay = 0.5;
    int crop = 0;  // 0 = full image
    std::uint64_t seed = 0;
    bool float32 = false;
};

struct ClassifierTraining {
    nn::ParamStore params;
    std::vector<double> epoch_loss;
};

ClassifierTraining classifier_train(const ClassifierConfig& cfg,
                                    std::span<const ClassifierSample> dataset,
                                    const ClassifierSchedule& schedule);

/// Trained classifier with its checkpoint format: the nn parameter container
/// plus a key-value sidecar at `<path>.cfg`.
struct ClassifierModel {
    ClassifierConfig cfg;
    nn::ParamStore params;

    UncertaintyMap predict(const FeatureMap& rgb, const Grid2D& raw,
                           const std::optional<Grid2D>& rel_depth) const;
    void save(const std::filesystem::path& path, nn::Dtype dtype = nn::Dtype::f64) const;
    static ClassifierModel load(const std::filesystem::path& path);
};

}  // namespace realdepth
