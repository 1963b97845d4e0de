#include "realdepth/nn.hpp"

#include <zlib.h>

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "realdepth/error.hpp"

namespace realdepth::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// ---------------------------------------------------------------- ParamStore

Parameter& ParamStore::add(const std::string& name, std::vector<int> shape) {
    require(!contains(name), "parameter '" + name + "' already exists");
    std::size_t n = 1;
    for (int d : shape) {
        require(d >= 1, "parameter '" + name + "' has a non-positive dimension");
        n *= static_cast<std::size_t>(d);
    }
    Parameter p;
    p.shape = std::move(shape);
    p.value.assign(n, 0.0);
    p.grad.assign(n, 0.0);
    p.m.assign(n, 0.0);
    p.v.assign(n, 0.0);
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(p));
    return params_.back().second;
}

Parameter& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("unknown parameter '" + name + "'");
    return params_[it->second].second;
}

const Parameter& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("unknown parameter '" + name + "'");
    return params_[it->second].second;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    for (const auto& [name, p] : params_) out.push_back(name);
    return out;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [name, p] : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

void ParamStore::zero_values() {
    for (auto& [name, p] : params_) std::fill(p.value.begin(), p.value.end(), 0.0);
}

void ParamStore::round_to_float() {
    for (auto& [name, p] : params_) {
        for (double& v : p.value) v = static_cast<double>(static_cast<float>(v));
    }
}

// ------------------------------------------------------------- serialization

namespace {

constexpr char kMagic[8] = {'R', 'D', 'P', 'A', 'R', 'A', 'M', 'S'};
constexpr std::uint32_t kContainerVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "container IO assumes a little-endian host");

class ByteWriter {
public:
    template <typename T>
    void put(T v) {
        const auto* p = reinterpret_cast<const unsigned char*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        bytes_.insert(bytes_.end(), p, p + n);
    }
    std::vector<unsigned char>& bytes() { return bytes_; }

private:
    std::vector<unsigned char> bytes_;
};

class ByteReader {
public:
    ByteReader(const std::vector<unsigned char>& bytes, std::size_t limit, std::string path)
        : bytes_(bytes), limit_(limit), path_(std::move(path)) {}

    template <typename T>
    T get() {
        T v;
        get_bytes(&v, sizeof(T));
        return v;
    }
    void get_bytes(void* out, std::size_t n) {
        if (offset_ + n > limit_) {
            throw IoError(path_ + ": truncated parameter container at byte offset " +
                          std::to_string(offset_));
        }
        std::memcpy(out, bytes_.data() + offset_, n);
        offset_ += n;
    }
    std::size_t offset() const { return offset_; }

private:
    const std::vector<unsigned char>& bytes_;
    std::size_t limit_;
    std::string path_;
    std::size_t offset_ = 0;
};

std::uint32_t crc_of(const unsigned char* data, std::size_t n) {
    return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

}  // namespace

void save_params(const ParamStore& store, const std::filesystem::path& path, Dtype dtype) {
    ByteWriter w;
    w.put_bytes(kMagic, sizeof(kMagic));
    w.put<std::uint32_t>(kContainerVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(store.tensor_count()));
    for (const auto& [name, p] : store) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
        w.put_bytes(name.data(), name.size());
        w.put<std::uint8_t>(static_cast<std::uint8_t>(dtype));
        w.put<std::uint8_t>(static_cast<std::uint8_t>(p.shape.size()));
        for (int d : p.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        for (double v : p.value) {
            if (dtype == Dtype::f32) {
                w.put<float>(static_cast<float>(v));
            } else {
                w.put<double>(v);
            }
        }
    }
    const std::uint32_t crc = crc_of(w.bytes().data(), w.bytes().size());
    w.put<std::uint32_t>(crc);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write parameter container " + path.string());
    out.write(reinterpret_cast<const char*>(w.bytes().data()),
              static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("write failed for " + path.string());
}

ParamStore load_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open parameter container " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    const std::string where = path.string();
    if (bytes.size() < sizeof(kMagic) + 12) throw IoError(where + ": file too short");
    const std::size_t body = bytes.size() - 4;
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + body, 4);
    if (stored_crc != crc_of(bytes.data(), body)) {
        throw IoError(where + ": CRC mismatch at byte offset " + std::to_string(body));
    }

    ByteReader r(bytes, body, where);
    char magic[8];
    r.get_bytes(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError(where + ": bad magic at byte offset 0");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kContainerVersion) {
        throw IoError(where + ": unsupported container version " + std::to_string(version));
    }
    const auto count = r.get<std::uint32_t>();
    ParamStore store;
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = r.get<std::uint16_t>();
        std::string name(name_len, '\0');
        r.get_bytes(name.data(), name_len);
        const auto dtype_offset = r.offset();
        const auto dtype = r.get<std::uint8_t>();
        if (dtype > 1) {
            throw IoError(where + ": unknown dtype " + std::to_string(dtype) + " at byte offset " +
                          std::to_string(dtype_offset));
        }
        const auto rank = r.get<std::uint8_t>();
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(r.get<std::uint32_t>());
        Parameter& p = store.add(name, shape);
        for (double& v : p.value) {
            v = dtype == 0 ? static_cast<double>(r.get<float>()) : r.get<double>();
        }
    }
    if (r.offset() != body) {
        throw IoError(where + ": trailing bytes at byte offset " + std::to_string(r.offset()));
    }
    return store;
}

// ---------------------------------------------------------------- rectifier

FeatureMap relu(const FeatureMap& x) {
    FeatureMap out = x;
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return out;
}

FeatureMap relu_backward(const FeatureMap& activated, const FeatureMap& grad_out) {
    require(activated.size() == grad_out.size(), "relu_backward: size mismatch");
    FeatureMap g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(activated[i] > 0.0)) g[i] = 0.0;
    }
    return g;
}

namespace {

void he_uniform(Parameter& p, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / fan_in);
    for (double& v : p.value) v = rng.uniform(-bound, bound);
}

// Rows are (channel, ky, kx); columns are output pixels. Tap (ky, kx) reads
// the input at offset ((ky - 1) * d, (kx - 1) * d).
RowMatrix im2col(const FeatureMap& in, int d) {
    const int c = in.channels();
    const int h = in.height();
    const int w = in.width();
    RowMatrix cols = RowMatrix::Zero(c * 9, static_cast<Eigen::Index>(h) * w);
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                double* row = cols.row(ci * 9 + ky * 3 + kx).data();
                const int oy = (ky - 1) * d;
                const int ox = (kx - 1) * d;
                const int x_lo = std::max(0, -ox);
                const int x_hi = std::min(w, w - ox);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + oy;
                    if (sy < 0 || sy >= h) continue;
                    for (int x = x_lo; x < x_hi; ++x) row[y * w + x] = in(ci, sy, x + ox);
                }
            }
        }
    }
    return cols;
}

FeatureMap col2im(const RowMatrix& cols, int c, int h, int w, int d) {
    FeatureMap out(c, h, w);
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const double* row = cols.row(ci * 9 + ky * 3 + kx).data();
                const int oy = (ky - 1) * d;
                const int ox = (kx - 1) * d;
                const int x_lo = std::max(0, -ox);
                const int x_hi = std::min(w, w - ox);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + oy;
                    if (sy < 0 || sy >= h) continue;
                    for (int x = x_lo; x < x_hi; ++x) out(ci, sy, x + ox) += row[y * w + x];
                }
            }
        }
    }
    return out;
}

ConstMatrixMap as_matrix(const FeatureMap& f) {
    return ConstMatrixMap(f.values().data(), f.channels(), static_cast<Eigen::Index>(f.plane()));
}

MatrixMap as_matrix(FeatureMap& f) {
    return MatrixMap(f.values().data(), f.channels(), static_cast<Eigen::Index>(f.plane()));
}

}  // namespace

// ------------------------------------------------------------------- Conv3x3

Conv3x3::Conv3x3(std::string name, int in_channels, int out_channels, int dilation)
    : name_(std::move(name)), in_(in_channels), out_(out_channels), dilation_(dilation) {
    require(in_ >= 1 && out_ >= 1, "conv3x3: channel counts must be positive");
    require(dilation_ >= 1, "conv3x3: dilation must be positive");
}

void Conv3x3::init(ParamStore& store, Rng& rng) const {
    he_uniform(store.add(name_ + ".weight", {out_, in_, 3, 3}), in_ * 9, rng);
    store.add(name_ + ".bias", {out_});
}

FeatureMap Conv3x3::forward(const ParamStore& store, const FeatureMap& input) const {
    require(input.channels() == in_, "conv3x3 '" + name_ + "': expected " + std::to_string(in_) +
                                         " input channels, got " +
                                         std::to_string(input.channels()));
    const Parameter& weight = store.at(name_ + ".weight");
    const Parameter& bias = store.at(name_ + ".bias");
    require(weight.size() == static_cast<std::size_t>(out_ * in_ * 9) &&
                bias.size() == static_cast<std::size_t>(out_),
            "conv3x3 '" + name_ + "': parameter shape mismatch");

    const RowMatrix cols = im2col(input, dilation_);
    const ConstMatrixMap wm(weight.value.data(), out_, in_ * 9);
    FeatureMap out(out_, input.height(), input.width());
    auto om = as_matrix(out);
    om.noalias() = wm * cols;
    for (int o = 0; o < out_; ++o) om.row(o).array() += bias.value[o];
    return out;
}

FeatureMap Conv3x3::backward(ParamStore& store, const FeatureMap& input,
                             const FeatureMap& grad_out) const {
    require(input.channels() == in_ && grad_out.channels() == out_ &&
                grad_out.same_spatial(input),
            "conv3x3 '" + name_ + "': backward shape mismatch");
    Parameter& weight = store.at(name_ + ".weight");
    Parameter& bias = store.at(name_ + ".bias");
    const RowMatrix cols = im2col(input, dilation_);
    const auto gm = as_matrix(grad_out);

    MatrixMap gw(weight.grad.data(), out_, in_ * 9);
    gw.noalias() += gm * cols.transpose();
    for (int o = 0; o < out_; ++o) bias.grad[o] += gm.row(o).sum();

    const ConstMatrixMap wm(weight.value.data(), out_, in_ * 9);
    const RowMatrix gcols = wm.transpose() * gm;
    return col2im(gcols, in_, input.height(), input.width(), dilation_);
}

// ------------------------------------------------------------------ PixelMlp

PixelMlp::PixelMlp(std::string name, std::vector<int> widths)
    : name_(std::move(name)), widths_(std::move(widths)) {
    require(widths_.size() >= 2, "mlp: needs at least input and output widths");
    for (int w : widths_) require(w >= 1, "mlp: widths must be positive");
}

std::string PixelMlp::layer_name(std::size_t i) const { return name_ + "." + std::to_string(i); }

void PixelMlp::init(ParamStore& store, Rng& rng) const {
    for (std::size_t i = 0; i < layers(); ++i) {
        he_uniform(store.add(layer_name(i) + ".weight", {widths_[i + 1], widths_[i]}), widths_[i],
                   rng);
        store.add(layer_name(i) + ".bias", {widths_[i + 1]});
    }
}

FeatureMap PixelMlp::forward(const ParamStore& store, const FeatureMap& input, Cache* cache) const {
    require(input.channels() == widths_.front(),
            "mlp '" + name_ + "': expected input width " + std::to_string(widths_.front()) +
                ", got " + std::to_string(input.channels()));
    if (cache) cache->layer_inputs.clear();
    FeatureMap x = input;
    for (std::size_t i = 0; i < layers(); ++i) {
        const Parameter& weight = store.at(layer_name(i) + ".weight");
        const Parameter& bias = store.at(layer_name(i) + ".bias");
        require(weight.shape == std::vector<int>{widths_[i + 1], widths_[i]},
                "mlp '" + name_ + "': weight shape mismatch in layer " + std::to_string(i));
        const ConstMatrixMap wm(weight.value.data(), widths_[i + 1], widths_[i]);
        FeatureMap y(widths_[i + 1], input.height(), input.width());
        auto ym = as_matrix(y);
        ym.noalias() = wm * as_matrix(x);
        for (int o = 0; o < widths_[i + 1]; ++o) ym.row(o).array() += bias.value[o];
        if (i + 1 < layers()) y = relu(y);
        if (cache) cache->layer_inputs.push_back(std::move(x));
        x = std::move(y);
    }
    return x;
}

FeatureMap PixelMlp::backward(ParamStore& store, const Cache& cache,
                              const FeatureMap& grad_out) const {
    require(cache.layer_inputs.size() == layers(), "mlp '" + name_ + "': missing forward cache");
    FeatureMap g = grad_out;
    for (std::size_t li = layers(); li-- > 0;) {
        Parameter& weight = store.at(layer_name(li) + ".weight");
        Parameter& bias = store.at(layer_name(li) + ".bias");
        const FeatureMap& x = cache.layer_inputs[li];
        const auto gm = as_matrix(g);
        MatrixMap gw(weight.grad.data(), widths_[li + 1], widths_[li]);
        gw.noalias() += gm * as_matrix(x).transpose();
        for (int o = 0; o < widths_[li + 1]; ++o) bias.grad[o] += gm.row(o).sum();

        const ConstMatrixMap wm(weight.value.data(), widths_[li + 1], widths_[li]);
        FeatureMap gx(widths_[li], x.height(), x.width());
        as_matrix(gx).noalias() = wm.transpose() * gm;
        // Hidden-layer inputs are rectifier outputs.
        g = li > 0 ? relu_backward(x, gx) : std::move(gx);
    }
    return g;
}

// ------------------------------------------------------------------- softmax

std::vector<Grid2D> softmax_over_queries(std::span<const Grid2D> logits) {
    require(!logits.empty(), "softmax_over_queries: needs at least one map");
    for (const auto& l : logits) require(l.same_shape(logits.front()), "softmax: shape mismatch");
    const std::size_t j_count = logits.size();
    const std::size_t n = logits.front().size();
    std::vector<Grid2D> out(j_count, Grid2D(logits.front().height(), logits.front().width()));
    for (std::size_t i = 0; i < n; ++i) {
        double peak = logits[0][i];
        for (std::size_t j = 1; j < j_count; ++j) peak = std::max(peak, logits[j][i]);
        double total = 0.0;
        for (std::size_t j = 0; j < j_count; ++j) {
            out[j][i] = std::exp(logits[j][i] - peak);
            total += out[j][i];
        }
        for (std::size_t j = 0; j < j_count; ++j) out[j][i] /= total;
    }
    return out;
}

std::vector<Grid2D> softmax_backward(std::span<const Grid2D> weights,
                                     std::span<const Grid2D> grad_weights) {
    require(weights.size() == grad_weights.size() && !weights.empty(),
            "softmax_backward: size mismatch");
    const std::size_t n = weights.front().size();
    std::vector<Grid2D> out(weights.size(),
                            Grid2D(weights.front().height(), weights.front().width()));
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < weights.size(); ++j) dot += weights[j][i] * grad_weights[j][i];
        for (std::size_t j = 0; j < weights.size(); ++j) {
            out[j][i] = weights[j][i] * (grad_weights[j][i] - dot);
        }
    }
    return out;
}

// ---------------------------------------------------------------------- Adam

void adam_step(ParamStore& store, const AdamOptions& options) {
    for (const auto& [name, p] : store) {
        for (double g : p.grad) {
            if (!std::isfinite(g)) {
                throw RuntimeFailure("adam_step: non-finite gradient in parameter '" + name + "'");
            }
        }
    }
    const long t = store.step() + 1;
    const double correction1 = 1.0 - std::pow(options.beta1, static_cast<double>(t));
    const double correction2 = 1.0 - std::pow(options.beta2, static_cast<double>(t));
    for (auto& [name, p] : store) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = p.grad[i];
            p.m[i] = options.beta1 * p.m[i] + (1.0 - options.beta1) * g;
            p.v[i] = options.beta2 * p.v[i] + (1.0 - options.beta2) * g * g;
            const double m_hat = p.m[i] / correction1;
            const double v_hat = p.v[i] / correction2;
            p.value[i] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
            if (!std::isfinite(p.value[i])) {
                throw RuntimeFailure("adam_step: parameter '" + name + "' became non-finite");
            }
        }
    }
    store.set_step(t);
}

double step_lr(double base_lr, int epoch, int every, double factor) {
    require(every >= 1, "step_lr: decay interval must be positive");
    return base_lr * std::pow(factor, epoch / every);
}

// ------------------------------------------------------------ regularization

std::string_view to_string(RegKind kind) {
    switch (kind) {
        case RegKind::none: return "none";
        case RegKind::dropout: return "dropout";
        case RegKind::dropblock: return "dropblock";
        case RegKind::stochastic_depth: return "stochastic_depth";
    }
    return "?";
}

RegKind parse_reg_kind(std::string_view name) {
    if (name == "none") return RegKind::none;
    if (name == "dropout") return RegKind::dropout;
    if (name == "dropblock") return RegKind::dropblock;
    if (name == "stochastic_depth") return RegKind::stochastic_depth;
    throw ParameterError("unknown regularizer '" + std::string(name) + "'");
}

void RegStrategy::validate() const {
    require(rate >= 0.0 && rate < 1.0, "regularizer rate must lie in [0, 1)");
    require(block_size >= 1, "dropblock block_size must be >= 1");
}

RegOutput apply_regularizer(const RegStrategy& strategy, const FeatureMap& branch, bool training,
                            Rng& rng) {
    strategy.validate();
    FeatureMap scale(branch.channels(), branch.height(), branch.width(), 1.0);
    const double keep = 1.0 - strategy.rate;

    if (strategy.rate > 0.0) {
        switch (strategy.kind) {
            case RegKind::none:
                break;
            case RegKind::dropout:
                if (training) {
                    for (double& s : scale.values()) s = rng.uniform() < strategy.rate ? 0.0 : 1.0 / keep;
                }
                break;
            case RegKind::dropblock:
                if (training) {
                    const int h = branch.height();
                    const int w = branch.width();
                    const int bs = std::min({strategy.block_size, h, w});
                    const double valid = static_cast<double>(h - bs + 1) * (w - bs + 1);
                    const double gamma = strategy.rate * h * w / (bs * bs * valid);
                    for (int c = 0; c < branch.channels(); ++c) {
                        for (int y = 0; y + bs <= h; ++y) {
                            for (int x = 0; x + bs <= w; ++x) {
                                if (rng.uniform() >= gamma) continue;
                                for (int dy = 0; dy < bs; ++dy) {
                                    for (int dx = 0; dx < bs; ++dx) scale(c, y + dy, x + dx) = 0.0;
                                }
                            }
                        }
                    }
                    const double kept = std::accumulate(scale.values().begin(), scale.values().end(), 0.0);
                    const double factor = kept > 0.0 ? static_cast<double>(scale.size()) / kept : 0.0;
                    for (double& s : scale.values()) s *= factor;
                }
                break;
            case RegKind::stochastic_depth:
                if (training) {
                    if (rng.uniform() < strategy.rate) {
                        std::fill(scale.values().begin(), scale.values().end(), 0.0);
                    }
                } else {
                    std::fill(scale.values().begin(), scale.values().end(), keep);
                }
                break;
        }
    }
    FeatureMap out = branch;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= scale[i];
    return {std::move(out), std::move(scale)};
}

// ---------------------------------------------------------------- grad check

double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) /
           std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradCheckResult grad_check(const std::function<double()>& objective,
                           std::vector<GradTarget>& targets, double eps, double kink_tol) {
    GradCheckResult result;
    const double base = objective();
    for (auto& target : targets) {
        require(target.analytic.size() == target.values.size(),
                "grad_check: analytic gradient size mismatch for '" + target.name + "'");
        for (std::size_t i = 0; i < target.values.size(); ++i) {
            const double saved = target.values[i];
            target.values[i] = saved + eps;
            const double plus = objective();
            target.values[i] = saved - eps;
            const double minus = objective();
            target.values[i] = saved;

            const double analytic = target.analytic[i];
            double numeric = (plus - minus) / (2.0 * eps);
            double err = relative_error(analytic, numeric);
            const double forward = (plus - base) / eps;
            const double backward = (base - minus) / eps;
            if (relative_error(forward, backward) > kink_tol) {
                ++result.kinks;
                for (double side : {forward, backward}) {
                    const double e = relative_error(analytic, side);
                    if (e < err) {
                        err = e;
                        numeric = side;
                    }
                }
            }
            ++result.checked;
            if (err > result.max_rel_error) {
                result.max_rel_error = err;
                result.worst = target.name + "[" + std::to_string(i) + "]";
                result.worst_analytic = analytic;
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace realdepth::nn
