#pragma once

// Cohort CSV files, flat key-value configuration, and the seeded synthetic
// cohort generator.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "core_data.hpp"
#include "error.hpp"
#include "random.hpp"

namespace scorecast {

inline constexpr std::string_view kCohortHeader = "student_id,t1,t2,cw,mte,ete,total";

struct RowRejection {
    std::size_t line = 0; // 1-based, header is line 1
    std::string reason;
};

struct CohortFile {
    std::filesystem::path path;
    std::string course_id;
    std::vector<AssessmentRecord> records;
    std::vector<RowRejection> rejections;
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::optional<double> parse_double(std::string_view s)
{
    double v = 0.0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end) return std::nullopt;
    return v;
}

// Shortest representation that parses back to the same double.
inline std::string format_double(double v)
{
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

inline std::string format_fixed(double v, int precision = 6)
{
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed, precision);
    return std::string(buf.data(), ptr);
}

} // namespace detail

// Parses a cohort from CSV text. Bad rows become line-numbered rejections;
// only a malformed header is fatal.
inline CohortFile parse_cohort(std::istream& in, const ScoreMaxima& maxima = {})
{
    CohortFile cohort;
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty cohort file (missing header)");
    if (detail::trim(line) != kCohortHeader)
        throw DataError("malformed header: expected '" + std::string(kCohortHeader) + "'");

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const auto text = detail::trim(line);
        if (text.empty()) continue;
        const auto cells = detail::split_commas(text);
        if (cells.size() != 7) {
            cohort.rejections.push_back({line_no, "expected 7 fields, got " + std::to_string(cells.size())});
            continue;
        }
        AssessmentRecord rec;
        rec.student_id = std::string(detail::trim(cells[0]));
        std::optional<std::string> problem;
        auto read_cell = [&](std::string_view cell, std::string_view name) -> std::optional<double> {
            cell = detail::trim(cell);
            if (cell.empty()) return std::nullopt;
            auto v = detail::parse_double(cell);
            if (!v && !problem) problem = "non-numeric " + std::string(name);
            return v;
        };
        for (Feature f : kAllFeatures)
            rec[f] = read_cell(cells[1 + static_cast<std::size_t>(f)], feature_name(f));
        rec.total = read_cell(cells[6], "total");
        if (!problem) {
            try {
                validate_record(rec, maxima);
            } catch (const DataError& e) {
                problem = e.what();
            }
        }
        if (problem)
            cohort.rejections.push_back({line_no, *problem});
        else
            cohort.records.push_back(std::move(rec));
    }
    return cohort;
}

inline CohortFile parse_cohort(const std::filesystem::path& path, const ScoreMaxima& maxima = {})
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open cohort file " + path.string());
    auto cohort = parse_cohort(in, maxima);
    cohort.path = path;
    cohort.course_id = path.stem().string();
    return cohort;
}

inline void write_cohort(std::ostream& out, std::span<const AssessmentRecord> records)
{
    out << kCohortHeader << '\n';
    for (const auto& r : records) {
        out << r.student_id;
        for (Feature f : kAllFeatures) {
            out << ',';
            if (r[f]) out << detail::format_double(*r[f]);
        }
        out << ',';
        if (r.total) out << detail::format_double(*r.total);
        out << '\n';
    }
}

inline void write_cohort(const std::filesystem::path& path, std::span<const AssessmentRecord> records)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    write_cohort(out, records);
    if (!out) throw DataError("write failed for " + path.string());
}

// Flat `key = value` text; `#` starts a comment. Later assignments win.
class Config {
public:
    static Config parse(std::istream& in)
    {
        Config cfg;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            auto text = std::string_view(line);
            if (const auto hash = text.find('#'); hash != std::string_view::npos) text = text.substr(0, hash);
            text = detail::trim(text);
            if (text.empty()) continue;
            const auto eq = text.find('=');
            if (eq == std::string_view::npos)
                throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
            cfg.set(std::string(detail::trim(text.substr(0, eq))), std::string(detail::trim(text.substr(eq + 1))));
        }
        return cfg;
    }

    static Config load(const std::filesystem::path& path)
    {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open config file " + path.string());
        return parse(in);
    }

    void set(std::string key, std::string value)
    {
        if (key.empty()) throw UsageError("config key is empty");
        values_[std::move(key)] = std::move(value);
    }

    // Accepts "key=value".
    void set_assignment(std::string_view assignment)
    {
        const auto eq = assignment.find('=');
        if (eq == std::string_view::npos) throw UsageError("expected key=value, got '" + std::string(assignment) + "'");
        set(std::string(detail::trim(assignment.substr(0, eq))), std::string(detail::trim(assignment.substr(eq + 1))));
    }

    bool contains(const std::string& key) const { return values_.count(key) != 0; }

    std::optional<std::string> get(const std::string& key) const
    {
        const auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        return it->second;
    }

    std::string get_string(const std::string& key, std::string fallback) const
    {
        return get(key).value_or(std::move(fallback));
    }

    double get_double(const std::string& key, double fallback) const
    {
        const auto v = get(key);
        if (!v) return fallback;
        const auto parsed = detail::parse_double(detail::trim(*v));
        if (!parsed) throw UsageError("config key " + key + ": '" + *v + "' is not a number");
        return *parsed;
    }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) const
    {
        const auto v = get(key);
        if (!v) return fallback;
        std::int64_t out = 0;
        const auto s = detail::trim(*v);
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        if (ec != std::errc{} || ptr != s.data() + s.size())
            throw UsageError("config key " + key + ": '" + *v + "' is not an integer");
        return out;
    }

    const std::map<std::string, std::string>& entries() const noexcept { return values_; }

private:
    std::map<std::string, std::string> values_;
};

inline ScoreMaxima maxima_from_config(const Config& cfg)
{
    ScoreMaxima m;
    for (Feature f : kAllFeatures) {
        m[f] = cfg.get_double("maxima." + std::string(feature_name(f)), m[f]);
        if (!(m[f] > 0.0)) throw UsageError("maxima." + std::string(feature_name(f)) + " must be positive");
    }
    return m;
}

inline WeightVector weights_from_config(const Config& cfg)
{
    const auto def = WeightVector::institutional_default();
    std::vector<double> w;
    for (Feature f : kAllFeatures)
        w.push_back(cfg.get_double("weights." + std::string(feature_name(f)), def[static_cast<std::size_t>(f)]));
    return WeightVector(std::move(w));
}

// Synthetic cohort generator.
//
// Each student draws one latent ability a ~ N(0,1). Feature f is
//   x_f = clip(mean_f + sd_f * (l_f * a + sqrt(1 - l_f^2) * e_f), 0, max_f),  e_f ~ N(0,1)
// and the total is the weighted composite of the features plus N(0, noise_sd^2),
// clipped to [0, 100]. Loadings l_f for features with a target correlation are
// solved so that corr(x_f, total) hits the target in the unclipped model;
// other features use `default_loading`.
struct SynthSpec {
    std::size_t n_students = 1000;
    std::uint64_t seed = 7;
    std::map<Feature, double> target_correlations{
        {Feature::t1, 0.69}, {Feature::t2, 0.64}, {Feature::mte, 0.88}, {Feature::ete, 0.96}};
    WeightVector weights = WeightVector::institutional_default();
    double noise_sd = 1.0;
    std::array<double, kNumFeatures> means{60.0, 58.0, 72.0, 56.0, 55.0};
    std::array<double, kNumFeatures> sds{15.0, 16.0, 10.0, 15.0, 20.0};
    double default_loading = 0.75;
    ScoreMaxima maxima{};
};

inline void validate(const SynthSpec& spec)
{
    if (spec.n_students < 2) throw UsageError("synth: n_students must be at least 2");
    if (!(spec.noise_sd >= 0.0)) throw UsageError("synth: noise_sd must be non-negative");
    if (spec.weights.size() != kNumFeatures) throw UsageError("synth: need one weight per feature");
    if (!(std::abs(spec.default_loading) <= 1.0)) throw UsageError("synth: default_loading must lie in [-1, 1]");
    for (const auto& [f, r] : spec.target_correlations)
        if (!(std::abs(r) <= 1.0))
            throw UsageError("synth: invalid correlation " + std::string(feature_name(f)) + "=" +
                             detail::format_double(r) + " (must lie in [-1, 1])");
    for (Feature f : kAllFeatures) {
        const auto i = static_cast<std::size_t>(f);
        if (!(spec.sds[i] >= 0.0) || !std::isfinite(spec.means[i]))
            throw UsageError("synth: bad mean/sd for " + std::string(feature_name(f)));
    }
}

inline SynthSpec synth_spec_from_config(const Config& cfg)
{
    SynthSpec s;
    const auto n = cfg.get_int("synth.n", static_cast<std::int64_t>(s.n_students));
    if (n < 2) throw UsageError("synth.n must be at least 2");
    s.n_students = static_cast<std::size_t>(n);
    s.seed = static_cast<std::uint64_t>(cfg.get_int("synth.seed", static_cast<std::int64_t>(s.seed)));
    s.noise_sd = cfg.get_double("synth.noise_sd", s.noise_sd);
    s.default_loading = cfg.get_double("synth.default_loading", s.default_loading);
    s.weights = weights_from_config(cfg);
    s.maxima = maxima_from_config(cfg);
    for (Feature f : kAllFeatures) {
        const auto name = std::string(feature_name(f));
        const auto i = static_cast<std::size_t>(f);
        s.means[i] = cfg.get_double("synth.mean." + name, s.means[i]);
        s.sds[i] = cfg.get_double("synth.sd." + name, s.sds[i]);
        if (const auto r = cfg.get("synth.corr." + name)) {
            if (detail::trim(*r) == "none")
                s.target_correlations.erase(f);
            else
                s.target_correlations[f] = cfg.get_double("synth.corr." + name, 0.0);
        }
    }
    validate(s);
    return s;
}

namespace detail {

// corr(x_f, total) for every feature under the unclipped latent-factor model.
inline std::array<double, kNumFeatures> implied_correlations(const std::array<double, kNumFeatures>& loading,
                                                              const SynthSpec& spec)
{
    std::array<double, kNumFeatures> c{};
    double common = 0.0;
    double var = spec.noise_sd * spec.noise_sd;
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
        c[i] = spec.weights[i] * spec.sds[i];
        common += c[i] * loading[i];
        var += c[i] * c[i] * (1.0 - loading[i] * loading[i]);
    }
    var += common * common;
    std::array<double, kNumFeatures> r{};
    const double sd = std::sqrt(var);
    for (std::size_t i = 0; i < kNumFeatures; ++i)
        r[i] = sd > 0.0 ? (loading[i] * common + c[i] * (1.0 - loading[i] * loading[i])) / sd : 0.0;
    return r;
}

// Gaussian elimination with partial pivoting; small dense systems only.
inline bool solve_general(std::vector<std::vector<double>> a, std::vector<double>& b)
{
    const std::size_t n = b.size();
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t p = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(a[i][k]) > std::abs(a[p][k])) p = i;
        if (std::abs(a[p][k]) < 1e-14) return false;
        std::swap(a[p], a[k]);
        std::swap(b[p], b[k]);
        for (std::size_t i = k + 1; i < n; ++i) {
            const double m = a[i][k] / a[k][k];
            for (std::size_t j = k; j < n; ++j) a[i][j] -= m * a[k][j];
            b[i] -= m * b[k];
        }
    }
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t j = i + 1; j < n; ++j) s -= a[i][j] * b[j];
        b[i] = s / a[i][i];
    }
    return true;
}

} // namespace detail

// Solves the per-feature loadings. Throws UsageError when the requested
// correlations need a loading outside [-1, 1], i.e. no valid latent covariance exists.
inline std::array<double, kNumFeatures> solve_loadings(const SynthSpec& spec)
{
    std::array<double, kNumFeatures> loading;
    loading.fill(spec.default_loading);
    std::vector<Feature> free;
    for (const auto& [f, r] : spec.target_correlations) {
        free.push_back(f);
        loading[static_cast<std::size_t>(f)] = std::clamp(r, -0.99, 0.99);
    }
    if (free.empty()) return loading;

    auto residual = [&](const std::array<double, kNumFeatures>& l) {
        const auto r = detail::implied_correlations(l, spec);
        std::vector<double> out;
        for (Feature f : free) out.push_back(r[static_cast<std::size_t>(f)] - spec.target_correlations.at(f));
        return out;
    };
    auto norm = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    };

    const std::size_t k = free.size();
    auto res = residual(loading);
    for (int iter = 0; iter < 200 && norm(res) > 1e-13; ++iter) {
        std::vector<std::vector<double>> jac(k, std::vector<double>(k));
        for (std::size_t j = 0; j < k; ++j) {
            const auto idx = static_cast<std::size_t>(free[j]);
            const double h = 1e-7;
            auto hi = loading, lo = loading;
            hi[idx] += h;
            lo[idx] -= h;
            const auto rh = residual(hi), rl = residual(lo);
            for (std::size_t i = 0; i < k; ++i) jac[i][j] = (rh[i] - rl[i]) / (2 * h);
        }
        std::vector<double> step = res;
        if (!detail::solve_general(jac, step)) break;
        // Backtracking keeps the iterate inside a bounded box.
        double t = 1.0;
        bool improved = false;
        for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
            auto trial = loading;
            for (std::size_t j = 0; j < k; ++j) {
                const auto idx = static_cast<std::size_t>(free[j]);
                trial[idx] = std::clamp(trial[idx] - t * step[j], -1.5, 1.5);
            }
            const auto r2 = residual(trial);
            if (norm(r2) < norm(res)) {
                loading = trial;
                res = r2;
                improved = true;
                break;
            }
        }
        if (!improved) break;
    }

    const bool converged = norm(res) <= 1e-9;
    const bool admissible =
        std::all_of(free.begin(), free.end(), [&](Feature f) { return std::abs(loading[static_cast<std::size_t>(f)]) <= 1.0; });
    if (!converged || !admissible) {
        std::string msg = "synth: infeasible correlation set (";
        for (std::size_t j = 0; j < k; ++j) {
            if (j) msg += ", ";
            msg += std::string(feature_name(free[j])) + "=" + detail::format_double(spec.target_correlations.at(free[j]));
        }
        msg += "): no latent loading in [-1, 1] reproduces it with the configured weights, spreads and noise";
        throw UsageError(msg);
    }
    return loading;
}

// Deterministic in spec.seed. Draw order per student: ability, then one
// normal per feature in t1..ete order, then the total's noise.
inline std::vector<AssessmentRecord> generate_synthetic(const SynthSpec& spec)
{
    validate(spec);
    const auto loading = solve_loadings(spec);
    Rng rng(spec.seed);
    std::vector<AssessmentRecord> out;
    out.reserve(spec.n_students);
    const int width = static_cast<int>(std::to_string(spec.n_students).size());
    for (std::size_t s = 0; s < spec.n_students; ++s) {
        AssessmentRecord rec;
        std::string id = std::to_string(s + 1);
        rec.student_id = "S" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(id.size()))), '0') + id;
        const double ability = rng.normal();
        for (Feature f : kAllFeatures) {
            const auto i = static_cast<std::size_t>(f);
            const double u = loading[i] * ability + std::sqrt(std::max(0.0, 1.0 - loading[i] * loading[i])) * rng.normal();
            rec[f] = std::clamp(spec.means[i] + spec.sds[i] * u, 0.0, spec.maxima[f]);
        }
        const double noise = rng.normal();
        rec.total = std::clamp(composite_score(rec, spec.weights) + spec.noise_sd * noise, 0.0, 100.0);
        out.push_back(std::move(rec));
    }
    return out;
}

} // namespace scorecast
