#pragma once

// Exploratory statistics: per-feature histograms, Pearson correlation
// matrices, and binned "gradient maps" of mean total score over a feature pair.

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "core_data.hpp"
#include "error.hpp"
#include "ingest.hpp"

namespace scorecast {

// Sample Pearson coefficient, clamped to [-1, 1] against rounding.
inline double pearson(std::span<const double> xs, std::span<const double> ys)
{
    if (xs.size() != ys.size()) throw UsageError("pearson: length mismatch");
    if (xs.size() < 2) throw UsageError("pearson: need at least 2 samples");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw NumericError("pearson: correlation undefined for zero-variance input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct CorrelationMatrix {
    std::vector<std::string> labels;
    Matrix values;
};

// Pairwise Pearson over the view's features followed by the target ("total").
inline CorrelationMatrix correlation_matrix(const DatasetView& view)
{
    if (view.n_samples() == 0) throw DataError("correlation_matrix: empty view");
    std::vector<Vector> columns;
    CorrelationMatrix out;
    for (std::size_t c = 0; c < view.n_features(); ++c) {
        Vector col(view.n_samples());
        for (std::size_t r = 0; r < view.n_samples(); ++r) col[r] = view.matrix(r, c);
        columns.push_back(std::move(col));
        out.labels.emplace_back(feature_name(view.features[c]));
    }
    if (!view.targets.empty()) {
        columns.push_back(view.targets);
        out.labels.emplace_back("total");
    }
    const std::size_t k = columns.size();
    for (std::size_t i = 0; i < k; ++i) {
        const auto& c = columns[i];
        if (std::all_of(c.begin(), c.end(), [&](double v) { return v == c.front(); }))
            throw NumericError("correlation undefined: column " + out.labels[i] + " has zero variance");
    }
    out.values = Matrix(k, k);
    for (std::size_t i = 0; i < k; ++i) {
        out.values(i, i) = 1.0;
        for (std::size_t j = i + 1; j < k; ++j) out.values(i, j) = out.values(j, i) = pearson(columns[i], columns[j]);
    }
    return out;
}

struct Histogram {
    std::string feature_name;
    Vector bin_edges;
    std::vector<std::size_t> counts;
};

namespace detail {

// Equal-width bins over [lo, hi], each closed on the right: [e0, e1], (e1, e2], ...
inline std::size_t bin_index(double v, double lo, double hi, std::size_t n_bins)
{
    if (!(hi > lo)) return 0;
    const double t = (v - lo) / (hi - lo) * static_cast<double>(n_bins);
    if (t <= 1.0) return 0;
    return std::min(static_cast<std::size_t>(std::ceil(t)) - 1, n_bins - 1);
}

inline Vector equal_edges(double lo, double hi, std::size_t n_bins)
{
    Vector edges(n_bins + 1);
    for (std::size_t i = 0; i <= n_bins; ++i)
        edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_bins);
    edges.back() = hi;
    return edges;
}

} // namespace detail

// Equal-width bins over [min, max]. Constant input gets a unit-wide range
// centred on the value, so every sample lands in one bin.
inline Histogram histogram(std::span<const double> values, std::size_t n_bins, std::string name = {})
{
    if (values.empty()) throw DataError("histogram: empty input");
    if (n_bins < 1) throw UsageError("histogram: need at least one bin");
    auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    double lo = *mn, hi = *mx;
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    Histogram h{std::move(name), detail::equal_edges(lo, hi, n_bins), std::vector<std::size_t>(n_bins, 0)};
    for (double v : values) ++h.counts[detail::bin_index(v, lo, hi, n_bins)];
    return h;
}

struct GradientMap {
    std::string x_feature;
    std::string y_feature;
    Vector x_edges;
    Vector y_edges;
    // [x_bin][y_bin]; empty cells have no mean.
    std::vector<std::vector<std::optional<double>>> cell_mean;
    std::vector<std::vector<std::size_t>> cell_count;
};

// Mean total per cell of an n_bins x n_bins grid over two features.
// Uses records with both features and the total present.
inline GradientMap gradient_map(std::span<const AssessmentRecord> records, Feature x_feature, Feature y_feature,
                                std::size_t n_bins = 10)
{
    if (n_bins < 2) throw UsageError("gradient_map: need at least 2 bins per axis");
    std::vector<double> xs, ys, ts;
    for (const auto& r : records) {
        if (!r.has(x_feature) || !r.has(y_feature) || !r.total) continue;
        xs.push_back(*r[x_feature]);
        ys.push_back(*r[y_feature]);
        ts.push_back(*r.total);
    }
    if (xs.empty()) throw DataError("gradient_map: empty input");
    const auto [xmn, xmx] = std::minmax_element(xs.begin(), xs.end());
    const auto [ymn, ymx] = std::minmax_element(ys.begin(), ys.end());
    GradientMap g;
    g.x_feature = std::string(feature_name(x_feature));
    g.y_feature = std::string(feature_name(y_feature));
    g.x_edges = detail::equal_edges(*xmn, *xmx, n_bins);
    g.y_edges = detail::equal_edges(*ymn, *ymx, n_bins);
    std::vector<std::vector<double>> sums(n_bins, std::vector<double>(n_bins, 0.0));
    g.cell_count.assign(n_bins, std::vector<std::size_t>(n_bins, 0));
    g.cell_mean.assign(n_bins, std::vector<std::optional<double>>(n_bins));
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const auto bx = detail::bin_index(xs[i], *xmn, *xmx, n_bins);
        const auto by = detail::bin_index(ys[i], *ymn, *ymx, n_bins);
        sums[bx][by] += ts[i];
        ++g.cell_count[bx][by];
    }
    for (std::size_t a = 0; a < n_bins; ++a)
        for (std::size_t b = 0; b < n_bins; ++b)
            if (g.cell_count[a][b] > 0) g.cell_mean[a][b] = sums[a][b] / static_cast<double>(g.cell_count[a][b]);
    return g;
}

// Pearson between a cell's x-bin index and its mean total, over occupied cells.
// Large values mean the total rises steadily along the x axis of the map.
inline double gradient_map_trend(const GradientMap& g)
{
    std::vector<double> idx, means;
    for (std::size_t a = 0; a < g.cell_mean.size(); ++a)
        for (std::size_t b = 0; b < g.cell_mean[a].size(); ++b)
            if (g.cell_mean[a][b]) {
                idx.push_back(static_cast<double>(a));
                means.push_back(*g.cell_mean[a][b]);
            }
    return pearson(idx, means);
}

// --- CSV emitters ---------------------------------------------------------

// header: feature,bin,lower,upper,count
inline void write_histograms(std::ostream& out, std::span<const Histogram> hists)
{
    out << "feature,bin,lower,upper,count\n";
    for (const auto& h : hists)
        for (std::size_t i = 0; i < h.counts.size(); ++i)
            out << h.feature_name << ',' << i << ',' << detail::format_fixed(h.bin_edges[i]) << ','
                << detail::format_fixed(h.bin_edges[i + 1]) << ',' << h.counts[i] << '\n';
}

// header: label,<labels...>
inline void write_correlation(std::ostream& out, const CorrelationMatrix& cm)
{
    out << "label";
    for (const auto& l : cm.labels) out << ',' << l;
    out << '\n';
    for (std::size_t i = 0; i < cm.labels.size(); ++i) {
        out << cm.labels[i];
        for (std::size_t j = 0; j < cm.labels.size(); ++j) out << ',' << detail::format_fixed(cm.values(i, j));
        out << '\n';
    }
}

// header: x_feature,y_feature,x_bin,y_bin,x_lower,x_upper,y_lower,y_upper,count,mean_total
// Empty cells carry "NA" for mean_total. Several maps share one table.
inline void write_gradient_maps(std::ostream& out, std::span<const GradientMap> maps)
{
    out << "x_feature,y_feature,x_bin,y_bin,x_lower,x_upper,y_lower,y_upper,count,mean_total\n";
    for (const auto& g : maps)
        for (std::size_t a = 0; a < g.cell_count.size(); ++a)
            for (std::size_t b = 0; b < g.cell_count[a].size(); ++b) {
                out << g.x_feature << ',' << g.y_feature << ',' << a << ',' << b << ','
                    << detail::format_fixed(g.x_edges[a]) << ',' << detail::format_fixed(g.x_edges[a + 1]) << ','
                    << detail::format_fixed(g.y_edges[b]) << ',' << detail::format_fixed(g.y_edges[b + 1]) << ','
                    << g.cell_count[a][b] << ',';
                if (g.cell_mean[a][b])
                    out << detail::format_fixed(*g.cell_mean[a][b]);
                else
                    out << "NA";
                out << '\n';
            }
}

inline void write_gradient_map(std::ostream& out, const GradientMap& g) { write_gradient_maps(out, {&g, 1}); }

} // namespace scorecast
