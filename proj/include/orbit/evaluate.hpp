#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "orbit/common.hpp"
#include "orbit/degrade.hpp"
#include "orbit/image.hpp"
#include "orbit/image_io.hpp"
#include "orbit/jsonio.hpp"
#include "orbit/metrics.hpp"

namespace orbit {

// ---------------------------------------------------------------------------
// Metric reports
// ---------------------------------------------------------------------------

struct PairMetrics {
    std::string pair;  // degraded path, the row key
    double psnr_in = 0, ssim_in = 0, psnr_out = 0, ssim_out = 0;
};

struct ColumnAggregate {
    double mean = 0;
    double median = 0;
    std::int64_t excluded_infinite = 0;  // +inf PSNR sentinels left out of mean/median
};

struct MetricsReport {
    std::vector<PairMetrics> per_pair;
    ColumnAggregate psnr_in, ssim_in, psnr_out, ssim_out;
};

namespace detail {

inline ColumnAggregate aggregate_column(const std::vector<double>& values) {
    ColumnAggregate agg;
    std::vector<double> finite;
    for (double v : values) {
        if (std::isinf(v))
            ++agg.excluded_infinite;
        else
            finite.push_back(v);
    }
    if (finite.empty()) {
        agg.mean = agg.median = std::numeric_limits<double>::quiet_NaN();
        return agg;
    }
    double sum = 0;
    for (double v : finite) sum += v;
    agg.mean = sum / static_cast<double>(finite.size());
    std::sort(finite.begin(), finite.end());
    const std::size_t n = finite.size();
    agg.median = n % 2 ? finite[n / 2] : (finite[n / 2 - 1] + finite[n / 2]) / 2.0;
    return agg;
}

inline Json metric_value(double v) {
    // JSON has no infinity literal; the sentinel serializes as null.
    if (std::isinf(v) || std::isnan(v)) return Json(nullptr);
    return Json(v);
}

}  // namespace detail

using Enhancer = std::function<ImageTensor(const ImageTensor&)>;

// Runs the enhancer over every manifest pair and reports PSNR/SSIM of both
// the degraded input and the enhanced output against the target. Writes
// report.json and report.csv under out_dir.
inline MetricsReport evaluate(const Enhancer& enhance, const std::filesystem::path& manifest_path,
                              const std::filesystem::path& out_dir) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    if (manifest.pairs.empty()) throw EmptyDatasetError("manifest has no pairs");
    const std::filesystem::path root = manifest_path.parent_path();

    MetricsReport report;
    std::vector<double> c_psnr_in, c_ssim_in, c_psnr_out, c_ssim_out;
    for (const ManifestPair& p : manifest.pairs) {
        const ImageTensor degraded = load_image(root / p.degraded);
        const ImageTensor target = load_image(root / p.target);
        const ImageTensor enhanced = enhance(degraded);

        PairMetrics m;
        m.pair = p.degraded;
        m.psnr_in = psnr(degraded, target);
        m.ssim_in = ssim(degraded, target);
        m.psnr_out = psnr(enhanced, target);
        m.ssim_out = ssim(enhanced, target);
        report.per_pair.push_back(m);
        c_psnr_in.push_back(m.psnr_in);
        c_ssim_in.push_back(m.ssim_in);
        c_psnr_out.push_back(m.psnr_out);
        c_ssim_out.push_back(m.ssim_out);
    }
    report.psnr_in = detail::aggregate_column(c_psnr_in);
    report.ssim_in = detail::aggregate_column(c_ssim_in);
    report.psnr_out = detail::aggregate_column(c_psnr_out);
    report.ssim_out = detail::aggregate_column(c_ssim_out);

    std::filesystem::create_directories(out_dir);

    Json rows = Json::array();
    for (const PairMetrics& m : report.per_pair) {
        rows.push_back(Json{{"pair", m.pair},
                            {"psnr_in", detail::metric_value(m.psnr_in)},
                            {"ssim_in", detail::metric_value(m.ssim_in)},
                            {"psnr_out", detail::metric_value(m.psnr_out)},
                            {"ssim_out", detail::metric_value(m.ssim_out)}});
    }
    auto agg_json = [](const ColumnAggregate& a) {
        return Json{{"mean", detail::metric_value(a.mean)},
                    {"median", detail::metric_value(a.median)},
                    {"excluded_infinite", a.excluded_infinite}};
    };
    write_json_file(out_dir / "report.json", Json{{"version", 1},
                                                  {"per_pair", rows},
                                                  {"aggregates",
                                                   {{"psnr_in", agg_json(report.psnr_in)},
                                                    {"ssim_in", agg_json(report.ssim_in)},
                                                    {"psnr_out", agg_json(report.psnr_out)},
                                                    {"ssim_out", agg_json(report.ssim_out)}}}});

    std::ostringstream csv;
    csv << "pair,psnr_in,ssim_in,psnr_out,ssim_out\n";
    char buf[256];
    for (const PairMetrics& m : report.per_pair) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g\n", m.pair.c_str(), m.psnr_in, m.ssim_in,
                      m.psnr_out, m.ssim_out);
        csv << buf;
    }
    write_file_atomic(out_dir / "report.csv", csv.str());
    return report;
}

// ---------------------------------------------------------------------------
// Comparison grids
// ---------------------------------------------------------------------------

// Tiles rows x cols cells, each letterboxed to cell_h x cell_w on a black
// background. Output is (rows*cell_h) x (cols*cell_w).
inline ImageTensor make_grid(const std::vector<std::vector<ImageTensor>>& rows, int cell_h, int cell_w) {
    if (rows.empty() || rows.front().empty()) throw ShapeError("make_grid: empty grid");
    const std::size_t cols = rows.front().size();
    for (const auto& row : rows)
        if (row.size() != cols) throw ShapeError("make_grid: ragged rows");

    ImageTensor out(static_cast<int>(rows.size()) * cell_h, static_cast<int>(cols) * cell_w, 0.0f);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const ImageTensor cell = letterbox(rows[r][c], cell_h, cell_w);
            const int oy = static_cast<int>(r) * cell_h;
            const int ox = static_cast<int>(c) * cell_w;
            for (int y = 0; y < cell_h; ++y)
                for (int x = 0; x < cell_w; ++x)
                    for (int ch = 0; ch < 3; ++ch) out.at(oy + y, ox + x, ch) = cell.at(y, x, ch);
        }
    }
    return out;
}

}  // namespace orbit
