#pragma once

// Assessment records, the weighted composite score, and the feature views
// used for training (D1 = in-semester tests + classwork, D2 = classwork plus
// one of the term exams).

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "tensor.hpp"

namespace scorecast {

enum class Feature : std::size_t { t1 = 0, t2, cw, mte, ete };

inline constexpr std::size_t kNumFeatures = 5;
inline constexpr std::array<Feature, kNumFeatures> kAllFeatures{Feature::t1, Feature::t2, Feature::cw,
                                                                Feature::mte, Feature::ete};

constexpr std::string_view feature_name(Feature f)
{
    constexpr std::array<std::string_view, kNumFeatures> names{"t1", "t2", "cw", "mte", "ete"};
    return names[static_cast<std::size_t>(f)];
}

inline std::optional<Feature> parse_feature(std::string_view name)
{
    for (Feature f : kAllFeatures)
        if (feature_name(f) == name) return f;
    return std::nullopt;
}

// Maximum attainable points per feature. The source data never states them,
// so they come from configuration; 100 means "already on a percent scale".
struct ScoreMaxima {
    std::array<double, kNumFeatures> max{100.0, 100.0, 100.0, 100.0, 100.0};

    double operator[](Feature f) const { return max[static_cast<std::size_t>(f)]; }
    double& operator[](Feature f) { return max[static_cast<std::size_t>(f)]; }
};

struct AssessmentRecord {
    std::string student_id;
    std::array<std::optional<double>, kNumFeatures> features{};
    // Absent when the final score is not yet known (prediction input).
    std::optional<double> total;

    const std::optional<double>& operator[](Feature f) const { return features[static_cast<std::size_t>(f)]; }
    std::optional<double>& operator[](Feature f) { return features[static_cast<std::size_t>(f)]; }

    bool has(Feature f) const { return (*this)[f].has_value(); }

    friend bool operator==(const AssessmentRecord&, const AssessmentRecord&) = default;
};

// Throws DataError with a short reason if the record breaks a range invariant.
inline void validate_record(const AssessmentRecord& r, const ScoreMaxima& maxima = {})
{
    for (Feature f : kAllFeatures) {
        const auto& v = r[f];
        if (!v) continue;
        if (!std::isfinite(*v)) throw DataError(std::string(feature_name(f)) + " is not finite");
        if (*v < 0.0 || *v > maxima[f]) throw DataError(std::string(feature_name(f)) + " out of range");
    }
    if (r.total) {
        if (!std::isfinite(*r.total)) throw DataError("total is not finite");
        if (*r.total < 0.0 || *r.total > 100.0) throw DataError("total out of range");
    }
}

// Non-negative weights summing to one.
class WeightVector {
public:
    explicit WeightVector(std::vector<double> weights) : w_(std::move(weights))
    {
        if (w_.empty()) throw UsageError("weight vector is empty");
        for (double v : w_)
            if (!std::isfinite(v) || v < 0.0) throw UsageError("weights must be finite and non-negative");
        const double sum = std::accumulate(w_.begin(), w_.end(), 0.0);
        if (std::abs(sum - 1.0) > 1e-9)
            throw UsageError("weights must sum to 1 (got " + std::to_string(sum) + ")");
    }

    // (0.15, 0.15, 0.20, 0.20, 0.30) over (t1, t2, cw, mte, ete).
    static WeightVector institutional_default() { return WeightVector({0.15, 0.15, 0.20, 0.20, 0.30}); }

    std::size_t size() const noexcept { return w_.size(); }
    double operator[](std::size_t i) const { return w_[i]; }
    std::span<const double> values() const noexcept { return w_; }

private:
    std::vector<double> w_;
};

// Weighted sum of the listed features.
inline double composite_score(const AssessmentRecord& record, const WeightVector& weights,
                              std::span<const Feature> features)
{
    if (weights.size() != features.size())
        throw UsageError("weight vector has " + std::to_string(weights.size()) + " entries but " +
                         std::to_string(features.size()) + " features were listed");
    double y = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto& v = record[features[i]];
        if (!v) throw DataError("missing feature " + std::string(feature_name(features[i])));
        y += weights[i] * *v;
    }
    return y;
}

inline double composite_score(const AssessmentRecord& record, const WeightVector& weights)
{
    return composite_score(record, weights, kAllFeatures);
}

enum class ViewKind { d1, d2_mte, d2_ete };

inline constexpr std::array<ViewKind, 3> kAllViews{ViewKind::d1, ViewKind::d2_mte, ViewKind::d2_ete};

constexpr std::string_view view_name(ViewKind v)
{
    switch (v) {
    case ViewKind::d1: return "d1";
    case ViewKind::d2_mte: return "d2-mte";
    case ViewKind::d2_ete: return "d2-ete";
    }
    return "?";
}

inline std::optional<ViewKind> parse_view(std::string_view name)
{
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    for (ViewKind v : kAllViews)
        if (view_name(v) == lower) return v;
    return std::nullopt;
}

// Features in chronological assessment order; recurrent models consume them in this order.
inline std::vector<Feature> view_features(ViewKind v)
{
    switch (v) {
    case ViewKind::d1: return {Feature::t1, Feature::t2, Feature::cw};
    case ViewKind::d2_mte: return {Feature::cw, Feature::mte};
    case ViewKind::d2_ete: return {Feature::cw, Feature::ete};
    }
    return {};
}

struct DatasetView {
    std::string name;
    std::vector<Feature> features;
    Matrix matrix;                      // n_samples x n_features, points
    Vector targets;                     // n_samples, empty when built without targets
    std::vector<std::string> row_ids;   // student ids, parallel to rows
    std::size_t excluded = 0;           // input rows dropped for missing values

    std::size_t n_samples() const noexcept { return matrix.rows(); }
    std::size_t n_features() const noexcept { return matrix.cols(); }

    std::vector<std::string> feature_names() const
    {
        std::vector<std::string> out;
        for (Feature f : features) out.emplace_back(feature_name(f));
        return out;
    }
};

// Keeps only rows with every selected feature (and the total, if required)
// present, in input order. Throws DataError on an empty result.
inline DatasetView select_features(std::span<const AssessmentRecord> records, std::vector<Feature> features,
                                   std::string name, bool require_target = true)
{
    if (features.empty()) throw UsageError("view " + name + " selects no features");
    DatasetView view;
    view.name = std::move(name);
    std::vector<double> cells;
    for (const auto& r : records) {
        const bool complete = std::all_of(features.begin(), features.end(), [&](Feature f) { return r.has(f); }) &&
                              (!require_target || r.total.has_value());
        if (!complete) {
            ++view.excluded;
            continue;
        }
        for (Feature f : features) cells.push_back(*r[f]);
        if (require_target) view.targets.push_back(*r.total);
        view.row_ids.push_back(r.student_id);
    }
    if (view.row_ids.empty())
        throw DataError("view " + view.name + " is empty (" + std::to_string(view.excluded) + " rows excluded)");
    view.matrix = Matrix(view.row_ids.size(), features.size(), std::move(cells));
    view.features = std::move(features);
    return view;
}

inline DatasetView build_view(std::span<const AssessmentRecord> records, ViewKind kind, bool require_target = true)
{
    return select_features(records, view_features(kind), std::string(view_name(kind)), require_target);
}

inline DatasetView build_view(std::span<const AssessmentRecord> records, std::string_view name,
                              bool require_target = true)
{
    const auto kind = parse_view(name);
    if (!kind) throw UsageError("unknown view '" + std::string(name) + "' (expected d1, d2-mte or d2-ete)");
    return build_view(records, *kind, require_target);
}

// Row subset of a view, in the order given.
inline DatasetView take_rows(const DatasetView& view, std::span<const std::size_t> rows)
{
    DatasetView out;
    out.name = view.name;
    out.features = view.features;
    out.matrix = Matrix(rows.size(), view.n_features());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = view.matrix.row(rows[i]);
        std::copy(src.begin(), src.end(), out.matrix.row(i).begin());
        if (!view.targets.empty()) out.targets.push_back(view.targets[rows[i]]);
        if (!view.row_ids.empty()) out.row_ids.push_back(view.row_ids[rows[i]]);
    }
    return out;
}

} // namespace scorecast
