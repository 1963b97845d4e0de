#include "realdepth/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <exception>

namespace realdepth {

MetricReport evaluate_pair(const Grid2D& d, const Grid2D& dstar, double delta_threshold,
                           const std::string& unit_label) {
    require(d.same_shape(dstar), "evaluate_pair: prediction and target shapes differ");
    require(delta_threshold > 1.0, "evaluate_pair: delta threshold must exceed 1");
    std::vector<double> rel;
    std::vector<double> sq;
    std::vector<double> inv_sq;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!(dstar[i] > 0.0)) continue;
        const double diff = d[i] - dstar[i];
        rel.push_back(std::abs(diff) / dstar[i]);
        sq.push_back(diff * diff);
        if (d[i] > 0.0) {
            const double inv = 1.0 / d[i] - 1.0 / dstar[i];
            inv_sq.push_back(inv * inv);
            const double ratio = std::max(d[i] / dstar[i], dstar[i] / d[i]);
            if (ratio < delta_threshold) ++hits;
        }
    }
    if (rel.empty()) throw ParameterError("evaluate_pair: target has no valid pixel");

    MetricReport r;
    r.unit_label = unit_label;
    r.n_valid = rel.size();
    r.n_ratio_valid = inv_sq.size();
    const double n = static_cast<double>(r.n_valid);
    r.abs_rel = pairwise_sum(rel) / n;
    r.rmse = std::sqrt(pairwise_sum(sq) / n);
    if (r.n_ratio_valid > 0) {
        const double m = static_cast<double>(r.n_ratio_valid);
        r.irmse = std::sqrt(pairwise_sum(inv_sq) / m);
        r.delta = 100.0 * static_cast<double>(hits) / m;
    }
    return r;
}

DatasetReport evaluate_dataset(std::span<const PairInput> pairs, double delta_threshold,
                               bool pixel_weighted, const std::string& unit_label) {
    require(!pairs.empty(), "evaluate_dataset: no samples");
    DatasetReport out;
    std::vector<double> abs_rel, rmse, irmse, delta, weights;
    for (const auto& p : pairs) {
        SampleResult row;
        row.id = p.id;
        try {
            row.report = evaluate_pair(p.d, p.dstar, delta_threshold, unit_label);
            row.ok = true;
            const double wgt = pixel_weighted ? static_cast<double>(row.report.n_valid) : 1.0;
            abs_rel.push_back(wgt * row.report.abs_rel);
            rmse.push_back(wgt * row.report.rmse);
            irmse.push_back(wgt * row.report.irmse);
            delta.push_back(wgt * row.report.delta);
            weights.push_back(wgt);
            out.aggregate.n_valid += row.report.n_valid;
            out.aggregate.n_ratio_valid += row.report.n_ratio_valid;
        } catch (const std::exception& e) {
            row.error = e.what();
            ++out.failed;
        }
        out.samples.push_back(std::move(row));
    }
    out.aggregate.unit_label = unit_label;
    if (!weights.empty()) {
        const double total = pairwise_sum(weights);
        out.aggregate.abs_rel = pairwise_sum(abs_rel) / total;
        out.aggregate.rmse = pairwise_sum(rmse) / total;
        out.aggregate.irmse = pairwise_sum(irmse) / total;
        out.aggregate.delta = pairwise_sum(delta) / total;
    }
    return out;
}

namespace {

void write_row(std::ostream& out, const std::string& id, const MetricReport& r,
               const std::string& status) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "\t%.9g\t%.9g\t%.9g\t%.9g\t%zu\t", r.abs_rel, r.rmse, r.irmse,
                  r.delta, r.n_valid);
    out << id << buf << status << '\n';
}

}  // namespace

void write_report_table(std::ostream& out, const DatasetReport& report) {
    const std::string unit = report.aggregate.unit_label;
    out << "id\tAbsRel\tRMSE[" << unit << "]\tiRMSE[1/" << unit << "]\tdelta[%]\tn_valid\tstatus\n";
    for (const auto& s : report.samples) {
        if (s.ok) {
            write_row(out, s.id, s.report, "ok");
        } else {
            out << s.id << "\tnan\tnan\tnan\tnan\t0\tfailed: " << s.error << '\n';
        }
    }
    write_row(out, "mean", report.aggregate, report.failed ? "partial" : "ok");
}

}  // namespace realdepth
