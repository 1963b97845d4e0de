#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "realdepth/tensor.hpp"

namespace realdepth {

struct MetricReport {
    double abs_rel = 0.0;
    double rmse = 0.0;     // depth units
    double irmse = 0.0;    // inverse depth units
    double delta = 0.0;    // percent of ratio-valid pixels under the threshold
    std::size_t n_valid = 0;        // pixels with D* > 0
    std::size_t n_ratio_valid = 0;  // pixels with D* > 0 and D > 0
    std::string unit_label = "depth";
};

/// AbsRel and RMSE over D* > 0; iRMSE and delta over D* > 0 and D > 0.
/// delta counts max(D/D*, D*/D) < threshold (strict).
MetricReport evaluate_pair(const Grid2D& d, const Grid2D& dstar, double delta_threshold = 1.05,
                           const std::string& unit_label = "depth");

struct SampleResult {
    std::string id;
    bool ok = false;
    std::string error;
    MetricReport report;
};

struct DatasetReport {
    std::vector<SampleResult> samples;
    MetricReport aggregate;
    std::size_t failed = 0;
};

struct PairInput {
    std::string id;
    Grid2D d;
    Grid2D dstar;
};

/// Per-sample reports plus the mean over successful samples. Unweighted by
/// default; pixel_weighted weights each sample by its valid pixel count.
/// Failing samples are recorded and excluded from the mean.
DatasetReport evaluate_dataset(std::span<const PairInput> pairs, double delta_threshold = 1.05,
                               bool pixel_weighted = false,
                               const std::string& unit_label = "depth");

/// Tab-separated table: id, AbsRel, RMSE, iRMSE, delta, n_valid, status;
/// one row per sample and a final `mean` row.
void write_report_table(std::ostream& out, const DatasetReport& report);

}  // namespace realdepth
