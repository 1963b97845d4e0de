#include "realdepth/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace realdepth {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

std::vector<std::size_t> valid_indices(const Grid2D& dstar) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < dstar.size(); ++i) {
        if (dstar[i] > 0.0) idx.push_back(i);
    }
    return idx;
}

struct Standardized {
    double mean = 0.0;
    double stddev = 0.0;
};

Standardized standardize(const Grid2D& g, const std::vector<std::size_t>& idx) {
    std::vector<double> vals;
    vals.reserve(idx.size());
    for (std::size_t i : idx) vals.push_back(g[i]);
    const double n = static_cast<double>(idx.size());
    Standardized s;
    s.mean = pairwise_sum(vals) / n;
    for (double& v : vals) v = (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(pairwise_sum(vals) / n);
    return s;
}

}  // namespace

std::string_view to_string(MsgForm form) {
    return form == MsgForm::standard ? "standard" : "paper_literal";
}

MsgForm parse_msg_form(std::string_view name) {
    if (name == "standard") return MsgForm::standard;
    if (name == "paper_literal") return MsgForm::paper_literal;
    throw ParameterError("unknown msg_form '" + std::string(name) + "'");
}

LossValue loss_l1(const Grid2D& d, const Grid2D& dstar) {
    require(d.same_shape(dstar), "loss_l1: shape mismatch");
    const auto idx = valid_indices(dstar);
    if (idx.empty()) throw ParameterError("loss_l1: target has no valid pixel");
    const double inv = 1.0 / static_cast<double>(idx.size());
    LossValue out{0.0, Grid2D(d.height(), d.width())};
    std::vector<double> terms;
    terms.reserve(idx.size());
    for (std::size_t i : idx) {
        const double r = d[i] - dstar[i];
        terms.push_back(std::abs(r));
        out.grad[i] = sign(r) * inv;
    }
    out.value = pairwise_sum(terms) * inv;
    return out;
}

LossValue loss_relative(const Grid2D& d, const Grid2D& dstar) {
    require(d.same_shape(dstar), "loss_relative: shape mismatch");
    const auto idx = valid_indices(dstar);
    if (idx.size() < 2) throw ParameterError("loss_relative: needs at least two valid pixels");
    LossValue out{0.0, Grid2D(d.height(), d.width())};
    const Standardized sd = standardize(d, idx);
    const Standardized st = standardize(dstar, idx);
    if (!(sd.stddev > 0.0) || !(st.stddev > 0.0)) {
        out.degenerate = true;
        return out;
    }
    const double n = static_cast<double>(idx.size());
    std::vector<double> z(idx.size());
    std::vector<double> s(idx.size());
    std::vector<double> terms(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        z[k] = (d[idx[k]] - sd.mean) / sd.stddev;
        const double diff = z[k] - (dstar[idx[k]] - st.mean) / st.stddev;
        terms[k] = std::abs(diff);
        s[k] = sign(diff) / n;
    }
    out.value = pairwise_sum(terms) / n;

    // Through z_i = (D_i - mean) / std with population std:
    // dL/dD_k = (s_k - sum(s)/n) / std - z_k * sum(s z) / (n std).
    double sum_s = 0.0;
    double sum_sz = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        sum_s += s[k];
        sum_sz += s[k] * z[k];
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.grad[idx[k]] = (s[k] - sum_s / n) / sd.stddev - z[k] * sum_sz / (n * sd.stddev);
    }
    return out;
}

LossValue loss_msg(const Grid2D& d, const Grid2D& dstar, MsgForm form, int scales) {
    require(d.same_shape(dstar), "loss_msg: shape mismatch");
    require(scales >= 1, "loss_msg: scales must be positive");
    const int min_side = 2 << (scales - 1);  // 16 for four scales
    if (d.height() < min_side || d.width() < min_side) {
        throw ParameterError("loss_msg: map must be at least " + std::to_string(min_side) +
                             " px per side for " + std::to_string(scales) + " scales");
    }
    const int h = d.height();
    const int w = d.width();
    Grid2D residual(h, w);
    for (std::size_t i = 0; i < residual.size(); ++i) residual[i] = d[i] - dstar[i];

    LossValue out{0.0, Grid2D(h, w)};
    for (int k = 0; k < scales; ++k) {
        const double factor = static_cast<double>(1 << k);
        const int hk = std::max(1, static_cast<int>(std::lround(h / factor)));
        const int wk = std::max(1, static_cast<int>(std::lround(w / factor)));
        const Grid2D rk = k == 0 ? residual : resize(residual, hk, wk, Interp::bilinear);
        const double norm = 1.0 / (static_cast<double>(scales) * hk * wk);

        Grid2D grad_k(hk, wk);
        std::vector<double> terms;
        terms.reserve(rk.size());
        for (int y = 0; y < hk; ++y) {
            for (int x = 0; x < wk; ++x) {
                const double gx = x + 1 < wk ? rk(y, x + 1) - rk(y, x) : 0.0;
                const double gy = y + 1 < hk ? rk(y + 1, x) - rk(y, x) : 0.0;
                if (form == MsgForm::standard) {
                    terms.push_back(std::abs(gx) + std::abs(gy));
                    const double sx = sign(gx) * norm;
                    const double sy = sign(gy) * norm;
                    if (x + 1 < wk) {
                        grad_k(y, x + 1) += sx;
                        grad_k(y, x) -= sx;
                    }
                    if (y + 1 < hk) {
                        grad_k(y + 1, x) += sy;
                        grad_k(y, x) -= sy;
                    }
                } else {
                    terms.push_back(std::abs(gx - gy));
                    const double s = sign(gx - gy) * norm;
                    if (x + 1 < wk) {
                        grad_k(y, x + 1) += s;
                        grad_k(y, x) -= s;
                    }
                    if (y + 1 < hk) {
                        grad_k(y + 1, x) -= s;
                        grad_k(y, x) += s;
                    }
                }
            }
        }
        out.value += pairwise_sum(terms) * norm;
        const Grid2D back = k == 0 ? grad_k : resize_adjoint(grad_k, h, w, Interp::bilinear);
        for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += back[i];
    }
    return out;
}

TotalLoss loss_total(const Grid2D& d, const Grid2D& dstar, const LossWeights& weights,
                     MsgForm form) {
    require(weights.lambda_msg >= 0.0, "loss_total: lambda_msg must be non-negative");
    const LossValue l1 = loss_l1(d, dstar);
    const LossValue rel = loss_relative(d, dstar);
    const LossValue msg = loss_msg(d, dstar, form);
    TotalLoss out;
    out.l1 = l1.value;
    out.relative = rel.value;
    out.msg = msg.value;
    out.total = l1.value + rel.value + weights.lambda_msg * msg.value;
    out.degenerate = rel.degenerate;
    out.grad = Grid2D(d.height(), d.width());
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
        out.grad[i] = l1.grad[i] + rel.grad[i] + weights.lambda_msg * msg.grad[i];
    }
    return out;
}

}  // namespace realdepth
