#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "realdepth/keyvalue.hpp"
#include "realdepth/losses.hpp"
#include "realdepth/nn.hpp"
#include "realdepth/uncertainty.hpp"

namespace realdepth {

struct FamConfig {
    int channels = 64;
    int query_distance = 5;
    std::vector<int> mlp_hidden{64, 64};
    nn::RegStrategy reg{nn::RegKind::stochastic_depth, 0.1, 3};

    void validate() const;
    std::vector<int> mlp_widths() const;  // {C + 2, hidden..., 2}
    KeyValues to_keyvalues() const;
    static FamConfig from_keyvalues(const KeyValues& kv);
};

/// Toy encoder layout. The defaults give two independent 3-layer stacks.
/// joint_rgbd feeds the masked raw depth into the RGB stack as an extra input
/// channel so E(I) carries depth context, as an RGB-D backbone would.
struct EncoderConfig {
    std::vector<int> dilations{1, 1, 1};  // one entry per layer
    bool joint_rgbd = false;

    int layers() const { return static_cast<int>(dilations.size()); }
    void validate() const;
    KeyValues to_keyvalues() const;
    static EncoderConfig from_keyvalues(const KeyValues& kv);
};

struct EncodedFeatures {
    FeatureMap rgb;    // E(I), C x H x W
    FeatureMap depth;  // E(D_r), C x H x W
};

/// Backbone producing the two C-channel feature maps the alignment head
/// consumes. Parameters live in the caller's ParamStore.
class FeatureEncoder {
public:
    struct Cache {
        FeatureMap rgb_input;
        FeatureMap depth_input;
        std::vector<FeatureMap> rgb_activations;
        std::vector<FeatureMap> depth_activations;
    };

    virtual ~FeatureEncoder() = default;
    virtual void init(nn::ParamStore& store, Rng& rng) const = 0;
    virtual EncodedFeatures forward(const nn::ParamStore& store, const FeatureMap& rgb_input,
                                    const FeatureMap& depth_input, Cache* cache) const = 0;
    /// Accumulates parameter gradients; returns input gradients.
    virtual std::pair<FeatureMap, FeatureMap> backward(nn::ParamStore& store, const Cache& cache,
                                                       const FeatureMap& grad_rgb,
                                                       const FeatureMap& grad_depth) const = 0;
    virtual KeyValues describe() const = 0;
};

/// Two parallel stacks of conv3x3 + rectifier (stride 1, width C): one over
/// RGB (plus relative depth when present, plus raw depth when joint), one
/// over masked raw depth.
class ToyEncoder final : public FeatureEncoder {
public:
    ToyEncoder(int rgb_channels, int channels, int layers = 3);
    ToyEncoder(int rgb_channels, int channels, EncoderConfig cfg);

    void init(nn::ParamStore& store, Rng& rng) const override;
    EncodedFeatures forward(const nn::ParamStore& store, const FeatureMap& rgb_input,
                            const FeatureMap& depth_input, Cache* cache) const override;
    std::pair<FeatureMap, FeatureMap> backward(nn::ParamStore& store, const Cache& cache,
                                               const FeatureMap& grad_rgb,
                                               const FeatureMap& grad_depth) const override;
    KeyValues describe() const override;

    const EncoderConfig& config() const { return cfg_; }

private:
    int rgb_channels_;
    int channels_;
    EncoderConfig cfg_;
    std::vector<nn::Conv3x3> rgb_layers_;
    std::vector<nn::Conv3x3> depth_layers_;
};

struct QuerySample {
    FeatureMap sampled;  // E(I) at the query pixel, C x H x W
    Grid2D coord_x;      // realized x offset / f
    Grid2D coord_y;      // realized y offset / f
    std::vector<int> source;  // flat source pixel per target pixel
};

/// Diagonal query offsets (dx, dy) in units of f, in query order.
inline constexpr std::array<std::array<int, 2>, 4> kQueryOffsets{
    {{-1, -1}, {+1, -1}, {-1, +1}, {+1, +1}}};

/// Clamped nearest sampling of E(I) at the four diagonal queries.
std::array<QuerySample, 4> sample_queries(const FeatureMap& e_rgb, int f);

/// Robust feature alignment head:
///   D = conv(E(I)) + conv(E(D_r)) + reg(sum_j softmax_j(a_j) * b_j)
/// with (a_j, b_j) = MLP(concat(E_qj(I), X_qj, Y_qj)).
class FeatureAlignment {
public:
    struct Cache {
        FeatureMap e_rgb;
        FeatureMap e_depth;
        std::array<QuerySample, 4> queries;
        nn::PixelMlp::Cache mlp;
        std::vector<Grid2D> weights;   // softmax over a_j
        std::vector<Grid2D> residuals; // b_j
        FeatureMap reg_scale;
    };

    struct Output {
        Grid2D depth;
        Grid2D reduced_rgb;    // E'(I)
        Grid2D reduced_depth;  // E'(D_r)
        std::vector<Grid2D> weights;
        Grid2D residual;  // after the regularizer
    };

    explicit FeatureAlignment(FamConfig cfg);

    void init(nn::ParamStore& store, Rng& rng) const;
    Output forward(const nn::ParamStore& store, const FeatureMap& e_rgb, const FeatureMap& e_depth,
                   bool training, Rng& rng, Cache* cache = nullptr) const;
    /// Returns gradients with respect to (E(I), E(D_r)).
    std::pair<FeatureMap, FeatureMap> backward(nn::ParamStore& store, const Cache& cache,
                                               const Grid2D& grad_depth) const;

    const FamConfig& config() const { return cfg_; }
    const nn::PixelMlp& mlp() const { return mlp_; }

private:
    FamConfig cfg_;
    nn::Conv3x3 reduce_rgb_;
    nn::Conv3x3 reduce_depth_;
    nn::PixelMlp mlp_;
};

/// Encoder + alignment head over depth normalized by the per-image maximum of
/// the masked raw input. Output is in the same normalized units.
class RecoveryModel {
public:
    struct Cache {
        FeatureEncoder::Cache encoder;
        FeatureAlignment::Cache fam;
    };

    RecoveryModel(FamConfig cfg, bool use_relative_depth, EncoderConfig encoder = {});

    void init(std::uint64_t seed);

    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    const FamConfig& config() const { return fam_.config(); }
    bool uses_relative_depth() const { return use_relative_depth_; }
    const FeatureEncoder& encoder() const { return *encoder_; }
    const EncoderConfig& encoder_config() const { return encoder_cfg_; }
    const FeatureAlignment& fam() const { return fam_; }

    FeatureMap rgb_input(const FeatureMap& rgb, const std::optional<Grid2D>& rel_depth) const;

    /// raw_normalized: masked raw divided by its scale.
    FeatureAlignment::Output forward(const FeatureMap& rgb, const Grid2D& raw_normalized,
                                     const std::optional<Grid2D>& rel_depth, bool training,
                                     Rng& rng, Cache* cache = nullptr) const;
    void backward(const Cache& cache, const Grid2D& grad_depth);

    /// Inference in physical depth units.
    Grid2D recover(const FeatureMap& rgb, const Grid2D& raw_masked,
                   const std::optional<Grid2D>& rel_depth) const;

    void save(const std::filesystem::path& params_path, nn::Dtype dtype = nn::Dtype::f64) const;
    static RecoveryModel load(const std::filesystem::path& params_path);
    static std::filesystem::path sidecar_path(const std::filesystem::path& params_path);

private:
    EncoderConfig encoder_cfg_;
    std::shared_ptr<const FeatureEncoder> encoder_;
    FeatureAlignment fam_;
    bool use_relative_depth_;
    nn::ParamStore params_;
};

/// Scale used to normalize a masked raw map (its maximum, or 1 when empty).
double depth_scale(const Grid2D& raw_masked);

struct RecoverySample {
    FeatureMap rgb;
    Grid2D raw;
    std::optional<Grid2D> rel_depth;
    std::optional<UncertaintyMap> uncertainty;  // applied with mask_raw when present
    Grid2D gt;
};

struct RecoverySchedule {
    int epochs = 40;
    double lr = 1e-3;
    int decay_every = 20;
    double decay = 0.5;
    int crop = 64;
    std::uint64_t seed = 0;
    LossWeights loss;
    MsgForm msg_form = MsgForm::standard;
    bool float32 = false;
};

struct TrainHistory {
    std::vector<double> epoch_loss;
};

/// Adam on loss_total with step decay, random square crops, one sample per
/// step in a seeded shuffled order.
TrainHistory train_toy(std::span<const RecoverySample> dataset, RecoveryModel& model,
                       const RecoverySchedule& schedule);

}  // namespace realdepth
