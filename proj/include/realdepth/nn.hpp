#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "realdepth/rng.hpp"
#include "realdepth/tensor.hpp"

namespace realdepth::nn {

struct Parameter {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    // Adam first and second moments.
    std::vector<double> m;
    std::vector<double> v;

    std::size_t size() const { return value.size(); }
};

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

/// Named parameters in insertion order. Every parameter owns gradient and
/// moment slots of the same shape.
class ParamStore {
public:
    Parameter& add(const std::string& name, std::vector<int> shape);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;

    std::vector<std::string> names() const;
    std::size_t parameter_count() const;
    std::size_t tensor_count() const { return params_.size(); }

    void zero_grad();
    void zero_values();
    // Rounds every value through binary32 (32-bit training mode).
    void round_to_float();

    long step() const { return step_; }
    void set_step(long s) { step_ = s; }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<std::pair<std::string, Parameter>> params_;
    std::map<std::string, std::size_t> index_;
    long step_ = 0;
};

/// Binary container: "RDPARAMS" magic, u32 version, u32 tensor count, then per
/// tensor u16 name length, name bytes, u8 dtype, u8 rank, u32 dims, payload
/// (little-endian); trailing u32 CRC-32 of every preceding byte.
void save_params(const ParamStore& store, const std::filesystem::path& path,
                 Dtype dtype = Dtype::f64);
ParamStore load_params(const std::filesystem::path& path);

FeatureMap relu(const FeatureMap& x);
/// Gradient through max(0, x) given the forward output; zero at the kink.
FeatureMap relu_backward(const FeatureMap& activated, const FeatureMap& grad_out);

/// 3x3 convolution, stride 1, zero padding equal to the dilation so the
/// output keeps the input size. Taps sit `dilation` pixels apart.
/// Parameters: <name>.weight [out, in, 3, 3] and <name>.bias [out].
class Conv3x3 {
public:
    Conv3x3() = default;
    Conv3x3(std::string name, int in_channels, int out_channels, int dilation = 1);

    void init(ParamStore& store, Rng& rng) const;
    FeatureMap forward(const ParamStore& store, const FeatureMap& input) const;
    /// Accumulates weight and bias gradients into the store and returns the
    /// gradient with respect to the input.
    FeatureMap backward(ParamStore& store, const FeatureMap& input,
                        const FeatureMap& grad_out) const;

    const std::string& name() const { return name_; }
    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    int dilation() const { return dilation_; }

private:
    std::string name_;
    int in_ = 0;
    int out_ = 0;
    int dilation_ = 1;
};

/// Per-pixel fully connected stack, applied identically at every pixel.
/// widths = {in, hidden..., out}; rectifier between layers, last linear.
/// Parameters: <name>.<i>.weight [w(i+1), w(i)] and <name>.<i>.bias.
class PixelMlp {
public:
    struct Cache {
        std::vector<FeatureMap> layer_inputs;
    };

    PixelMlp() = default;
    PixelMlp(std::string name, std::vector<int> widths);

    void init(ParamStore& store, Rng& rng) const;
    FeatureMap forward(const ParamStore& store, const FeatureMap& input,
                       Cache* cache = nullptr) const;
    FeatureMap backward(ParamStore& store, const Cache& cache, const FeatureMap& grad_out) const;

    const std::vector<int>& widths() const { return widths_; }
    std::string layer_name(std::size_t i) const;
    std::size_t layers() const { return widths_.size() - 1; }

private:
    std::string name_;
    std::vector<int> widths_;
};

/// Per-pixel softmax across J stacked maps, with max subtraction.
std::vector<Grid2D> softmax_over_queries(std::span<const Grid2D> logits);
std::vector<Grid2D> softmax_backward(std::span<const Grid2D> weights,
                                     std::span<const Grid2D> grad_weights);

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam. Throws RuntimeFailure naming the first parameter with
/// a non-finite gradient; the store is left untouched in that case.
void adam_step(ParamStore& store, const AdamOptions& options = {});

/// Learning rate after halving-style decay: base * factor^floor(epoch / every).
double step_lr(double base_lr, int epoch, int every = 20, double factor = 0.5);

enum class RegKind { none, dropout, dropblock, stochastic_depth };

std::string_view to_string(RegKind kind);
RegKind parse_reg_kind(std::string_view name);

struct RegStrategy {
    RegKind kind = RegKind::none;
    double rate = 0.0;
    int block_size = 3;

    void validate() const;
};

struct RegOutput {
    FeatureMap out;
    // out = branch * scale elementwise; also the backward multiplier.
    FeatureMap scale;
};

/// Training: dropout zeroes i.i.d. elements and rescales survivors by
/// 1/(1-rate); dropblock zeroes block_size^2 squares per channel and rescales
/// by numel/kept; stochastic depth drops the whole branch without rescale.
/// Inference: dropout and dropblock are the identity, stochastic depth
/// scales by 1-rate.
RegOutput apply_regularizer(const RegStrategy& strategy, const FeatureMap& branch, bool training,
                            Rng& rng);

struct GradTarget {
    std::string name;
    std::span<double> values;
    std::vector<double> analytic;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
    // Entries whose +-eps interval straddles a non-differentiable point.
    std::size_t kinks = 0;
};

/// Relative error used by grad_check: |a - n| / max(|a|, |n|, floor). The
/// floor sits above central-difference roundoff (~1e-16 |f| / eps).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central differences (f(x+eps) - f(x-eps)) / (2 eps) on every entry of every
/// target, compared against the supplied analytic gradients. When the forward
/// and backward one-sided slopes disagree by more than kink_tol relative, the
/// interval contains a kink (rectifier or absolute value) and the analytic
/// value is compared against the closest of the three estimates instead.
GradCheckResult grad_check(const std::function<double()>& objective,
                           std::vector<GradTarget>& targets, double eps = 1e-5,
                           double kink_tol = 1e-3);

}  // namespace realdepth::nn
