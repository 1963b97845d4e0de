#pragma once

#include <string_view>

#include "realdepth/tensor.hpp"

namespace realdepth {

struct LossWeights {
    double lambda_msg = 0.5;
};

/// Gradient penalty used by the multi-scale gradient loss.
/// standard:      |dR/dx| + |dR/dy|
/// paper_literal: |dR/dx - dR/dy|
enum class MsgForm { standard, paper_literal };

std::string_view to_string(MsgForm form);
MsgForm parse_msg_form(std::string_view name);

struct LossValue {
    double value = 0.0;
    Grid2D grad;  // d value / d D
    // Set when a standardization hit a zero standard deviation.
    bool degenerate = false;
};

/// Mean |D - D*| over pixels with D* > 0.
LossValue loss_l1(const Grid2D& d, const Grid2D& dstar);

/// Mean |zD - zD*| where z standardizes each map by its own mean and
/// population standard deviation over the valid (D* > 0) pixels. Returns 0
/// with `degenerate` set when either deviation is zero.
LossValue loss_relative(const Grid2D& d, const Grid2D& dstar);

/// Residual R = D - D* resampled (bilinear) by 2^(k-1), k = 1..scales; the
/// per-pixel penalty is averaged per scale and the scale means averaged.
/// Forward differences, zero on the last row and column.
LossValue loss_msg(const Grid2D& d, const Grid2D& dstar, MsgForm form = MsgForm::standard,
                   int scales = 4);

struct TotalLoss {
    double l1 = 0.0;
    double relative = 0.0;
    double msg = 0.0;
    double total = 0.0;
    Grid2D grad;
    bool degenerate = false;
};

/// L1 + L_r + lambda * L_msg.
TotalLoss loss_total(const Grid2D& d, const Grid2D& dstar, const LossWeights& weights = {},
                     MsgForm form = MsgForm::standard);

}  // namespace realdepth
