#pragma once

// Regression metrics, shuffle-split cross-validation, end-to-end pipelines
// (raw features, VAE latents, or recurrent cells), and the experiment matrix.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "checkpoint.hpp"
#include "core_data.hpp"
#include "error.hpp"
#include "ingest.hpp"
#include "nn.hpp"
#include "random.hpp"
#include "recurrent.hpp"
#include "regressors.hpp"
#include "tensor.hpp"
#include "vae.hpp"

namespace scorecast {

// --- metrics --------------------------------------------------------------

struct Metrics {
    std::optional<double> r2; // absent when y_true is constant
    double mae = 0.0;
    double mse = 0.0;
    double rmse = 0.0;
};

// All averages divide by the sample count K.
inline Metrics compute_metrics(std::span<const double> y_true, std::span<const double> y_pred)
{
    if (y_true.size() != y_pred.size())
        throw UsageError("compute_metrics: length mismatch (" + std::to_string(y_true.size()) + " vs " +
                         std::to_string(y_pred.size()) + ")");
    if (y_true.size() < 2) throw DataError("compute_metrics: need at least 2 samples");
    require_finite(y_true, "compute_metrics y_true");
    require_finite(y_pred, "compute_metrics y_pred");
    const double k = static_cast<double>(y_true.size());
    double mean = 0.0;
    for (double v : y_true) mean += v;
    mean /= k;
    double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const double e = y_true[i] - y_pred[i];
        ss_res += e * e;
        abs_sum += std::abs(e);
        ss_tot += (y_true[i] - mean) * (y_true[i] - mean);
    }
    Metrics m;
    if (ss_tot > 0.0) m.r2 = 1.0 - ss_res / ss_tot;
    m.mae = abs_sum / k;
    m.mse = ss_res / k;
    m.rmse = std::sqrt(m.mse);
    return m;
}

struct MetricSummary {
    Vector per_fold;
    double mean = 0.0;
    double std = 0.0; // population (divides by the fold count)
};

inline MetricSummary summarize(Vector values)
{
    MetricSummary s;
    s.per_fold = std::move(values);
    if (s.per_fold.empty()) return s;
    const double n = static_cast<double>(s.per_fold.size());
    for (double v : s.per_fold) s.mean += v;
    s.mean /= n;
    double var = 0.0;
    for (double v : s.per_fold) var += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(var / n);
    return s;
}

// --- pipelines ------------------------------------------------------------

enum class FeatureSource { raw, vae, recurrent };

struct PipelineSpec {
    FeatureSource source = FeatureSource::raw;
    RegressorKind regressor = RegressorKind::lr; // unused for recurrent
    CellKind cell = CellKind::lstm;              // recurrent only

    std::string name() const
    {
        switch (source) {
        case FeatureSource::raw: return std::string(regressor_name(regressor));
        case FeatureSource::vae: return "vae+" + std::string(regressor_name(regressor));
        case FeatureSource::recurrent: return std::string(cell_name(cell));
        }
        return "?";
    }

    friend bool operator==(const PipelineSpec& a, const PipelineSpec& b) { return a.name() == b.name(); }
};

inline PipelineSpec parse_pipeline(std::string_view text)
{
    std::string s(text);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "lstm") return {FeatureSource::recurrent, RegressorKind::lr, CellKind::lstm};
    if (s == "gru") return {FeatureSource::recurrent, RegressorKind::lr, CellKind::gru};
    FeatureSource src = FeatureSource::raw;
    std::string_view rest = s;
    if (rest.starts_with("vae+")) {
        src = FeatureSource::vae;
        rest.remove_prefix(4);
    }
    if (const auto k = parse_regressor(rest)) return {src, *k, CellKind::lstm};
    throw UsageError("unknown pipeline '" + std::string(text) +
                     "' (expected vae+<model>, <model>, lstm or gru; model = mlp|lr|et|rf|xgb|knn)");
}

// Row set of the D1 results table: VAE-fed regressors plus the recurrent cells.
inline std::vector<PipelineSpec> latent_pipeline_set()
{
    std::vector<PipelineSpec> out;
    for (auto k : kAllRegressors) out.push_back({FeatureSource::vae, k, CellKind::lstm});
    out.push_back({FeatureSource::recurrent, RegressorKind::lr, CellKind::lstm});
    out.push_back({FeatureSource::recurrent, RegressorKind::lr, CellKind::gru});
    return out;
}

// Row set of the D2 results tables: bare regressors plus the recurrent cells.
inline std::vector<PipelineSpec> raw_pipeline_set()
{
    std::vector<PipelineSpec> out;
    for (auto k : kAllRegressors) out.push_back({FeatureSource::raw, k, CellKind::lstm});
    out.push_back({FeatureSource::recurrent, RegressorKind::lr, CellKind::lstm});
    out.push_back({FeatureSource::recurrent, RegressorKind::lr, CellKind::gru});
    return out;
}

inline std::vector<PipelineSpec> default_pipelines(ViewKind view)
{
    return view == ViewKind::d1 ? latent_pipeline_set() : raw_pipeline_set();
}

struct PipelineConfig {
    VaeConfig vae;
    TrainConfig vae_train;
    RecurrentConfig recurrent;
    TrainConfig recurrent_train = default_recurrent_train_config();
    std::map<RegressorKind, std::map<std::string, double>> hyper;
};

inline void save_vae(CheckpointWriter& w, const FittedVae& v)
{
    v.inputs.save(w, "vae.inputs");
    v.model.save(w);
}

inline FittedVae load_vae(CheckpointReader& r)
{
    FittedVae v;
    v.inputs = Standardizer::load(r, "vae.inputs");
    v.model = VaeModel::load(r);
    if (v.model.input_dim() != v.inputs.dims()) throw DataError("checkpoint: inconsistent VAE shapes");
    return v;
}

inline void save_recurrent(CheckpointWriter& w, const FittedRecurrent& f)
{
    f.inputs.save(w, "recurrent.inputs");
    f.target.save(w, "recurrent.target");
    f.net.save(w);
}

inline FittedRecurrent load_recurrent(CheckpointReader& r)
{
    FittedRecurrent f;
    f.inputs = Standardizer::load(r, "recurrent.inputs");
    f.target = Standardizer::load(r, "recurrent.target");
    f.net = RecurrentNet::load(r);
    return f;
}

class FittedPipeline {
public:
    FittedPipeline() = default;

    const PipelineSpec& spec() const noexcept { return spec_; }
    std::size_t n_features() const noexcept { return n_features_; }
    const std::optional<FittedVae>& vae() const noexcept { return vae_; }
    const Regressor* regressor() const noexcept { return regressor_.get(); }
    const std::optional<FittedRecurrent>& recurrent() const noexcept { return recurrent_; }

    Vector predict(const Matrix& x) const
    {
        if (x.cols() != n_features_)
            throw UsageError("expected " + std::to_string(n_features_) + " features, got " + std::to_string(x.cols()));
        Vector out;
        switch (spec_.source) {
        case FeatureSource::raw: out = regressor_->predict(x); break;
        case FeatureSource::vae: out = regressor_->predict(extract_latent(*vae_, x).mu); break;
        case FeatureSource::recurrent: out = recurrent_->predict(x); break;
        }
        require_finite(out, "pipeline prediction");
        return out;
    }

    void save(CheckpointWriter& w) const
    {
        w.kv("pipeline.name", spec_.name());
        w.kv("pipeline.features", n_features_);
        if (vae_) save_vae(w, *vae_);
        if (regressor_) regressor_->save(w);
        if (recurrent_) save_recurrent(w, *recurrent_);
    }

    static FittedPipeline load(CheckpointReader& r)
    {
        FittedPipeline p;
        p.spec_ = parse_pipeline(r.kv("pipeline.name"));
        p.n_features_ = r.kv_size("pipeline.features");
        if (p.spec_.source == FeatureSource::vae) {
            p.vae_ = load_vae(r);
            if (p.vae_->model.input_dim() != p.n_features_) throw DataError("checkpoint: VAE input size mismatch");
        }
        if (p.spec_.source == FeatureSource::recurrent) {
            p.recurrent_ = load_recurrent(r);
            if (p.recurrent_->inputs.dims() != p.n_features_) throw DataError("checkpoint: recurrent input size mismatch");
        } else {
            p.regressor_ = load_regressor(r);
            if (p.regressor_->kind() != p.spec_.regressor) throw DataError("checkpoint: regressor kind mismatch");
        }
        return p;
    }

private:
    friend FittedPipeline fit_pipeline(const PipelineSpec&, const Matrix&, std::span<const double>,
                                       const PipelineConfig&, std::uint64_t);

    PipelineSpec spec_;
    std::size_t n_features_ = 0;
    std::optional<FittedVae> vae_;
    std::unique_ptr<Regressor> regressor_;
    std::optional<FittedRecurrent> recurrent_;
};

// Every learned statistic (scalers, VAE, model) comes from (x, y) alone.
inline FittedPipeline fit_pipeline(const PipelineSpec& spec, const Matrix& x, std::span<const double> y,
                                   const PipelineConfig& cfg, std::uint64_t seed)
{
    if (x.rows() == 0 || x.rows() != y.size()) throw DataError("fit_pipeline: empty or mismatched training data");
    FittedPipeline p;
    p.spec_ = spec;
    p.n_features_ = x.cols();
    if (spec.source == FeatureSource::recurrent) {
        auto tc = cfg.recurrent_train;
        tc.seed = derive_seed(seed, 3);
        p.recurrent_ = train_recurrent(x, y, spec.cell, cfg.recurrent, tc);
        return p;
    }
    RegressorSpec rs;
    rs.kind = spec.regressor;
    rs.seed = derive_seed(seed, 1);
    if (const auto it = cfg.hyper.find(spec.regressor); it != cfg.hyper.end()) rs.hyper = it->second;
    if (spec.source == FeatureSource::vae) {
        auto tc = cfg.vae_train;
        tc.seed = derive_seed(seed, 2);
        p.vae_ = vae_train(x, cfg.vae, tc);
        p.regressor_ = fit_regressor(extract_latent(*p.vae_, x).mu, y, rs);
    } else {
        p.regressor_ = fit_regressor(x, y, rs);
    }
    return p;
}

// --- cross-validation -----------------------------------------------------

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

struct CvConfig {
    std::size_t n_folds = 5;
    double test_fraction = 0.2;
    std::uint64_t seed = 0;
};

inline void validate(const CvConfig& c)
{
    if (c.n_folds < 1) throw UsageError("cv: n_folds must be at least 1");
    if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) throw UsageError("cv: test_fraction must lie in (0, 1)");
}

// Fold i shuffles 0..n-1 with seed + i; the first ceil(test_fraction * n)
// indices are the test set and the remainder (in shuffled order) the train set.
inline std::vector<Fold> shuffle_split_indices(std::size_t n, const CvConfig& cfg)
{
    validate(cfg);
    if (n < 10) throw DataError("cv: need at least 10 samples, got " + std::to_string(n));
    const auto n_test = static_cast<std::size_t>(std::ceil(cfg.test_fraction * static_cast<double>(n) - 1e-9));
    if (n_test < 2 || n_test >= n) throw DataError("cv: fold too small to evaluate");
    std::vector<Fold> folds;
    for (std::size_t i = 0; i < cfg.n_folds; ++i) {
        Rng rng(cfg.seed + i);
        auto perm = rng.permutation(n);
        Fold f;
        f.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
        f.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
        folds.push_back(std::move(f));
    }
    return folds;
}

struct MetricsReport {
    std::string pipeline;
    std::string view;
    std::size_t n_folds = 0;
    std::uint64_t seed = 0;
    MetricSummary r2, mae, mse, rmse;
};

inline Matrix take_matrix_rows(const Matrix& x, std::span<const std::size_t> rows)
{
    Matrix out(rows.size(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = x.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

inline Vector take_values(std::span<const double> v, std::span<const std::size_t> rows)
{
    Vector out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = v[rows[i]];
    return out;
}

// Fits on each fold's training rows and predicts its test rows. `fold_index`
// lets a fit seed itself per fold.
using FoldFit = std::function<Vector(const Matrix& train_x, std::span<const double> train_y, const Matrix& test_x,
                                     std::size_t fold_index)>;

inline MetricsReport cross_validate(const Matrix& x, std::span<const double> y, std::span<const Fold> folds,
                                    const FoldFit& fit)
{
    if (x.rows() != y.size()) throw DataError("cross_validate: feature/target length mismatch");
    Vector r2, mae, mse, rmse;
    for (std::size_t i = 0; i < folds.size(); ++i) {
        const auto& f = folds[i];
        const Matrix train_x = take_matrix_rows(x, f.train);
        const Vector train_y = take_values(y, f.train);
        const Matrix test_x = take_matrix_rows(x, f.test);
        const Vector test_y = take_values(y, f.test);
        const Vector pred = fit(train_x, train_y, test_x, i);
        const auto m = compute_metrics(test_y, pred);
        if (!m.r2) throw NumericError("cv: r2 undefined on fold " + std::to_string(i) + " (constant test targets)");
        r2.push_back(*m.r2);
        mae.push_back(m.mae);
        mse.push_back(m.mse);
        rmse.push_back(m.rmse);
    }
    MetricsReport rep;
    rep.n_folds = folds.size();
    rep.r2 = summarize(std::move(r2));
    rep.mae = summarize(std::move(mae));
    rep.mse = summarize(std::move(mse));
    rep.rmse = summarize(std::move(rmse));
    return rep;
}

inline MetricsReport shuffle_split_cv(const Matrix& x, std::span<const double> y, const PipelineSpec& spec,
                                      const PipelineConfig& pcfg, const CvConfig& cv)
{
    const auto folds = shuffle_split_indices(x.rows(), cv);
    auto rep = cross_validate(x, y, folds, [&](const Matrix& tx, std::span<const double> ty, const Matrix& vx, std::size_t i) {
        return fit_pipeline(spec, tx, ty, pcfg, cv.seed + i).predict(vx);
    });
    rep.pipeline = spec.name();
    rep.seed = cv.seed;
    return rep;
}

inline MetricsReport shuffle_split_cv(const DatasetView& view, const PipelineSpec& spec, const PipelineConfig& pcfg,
                                      const CvConfig& cv)
{
    auto rep = shuffle_split_cv(view.matrix, view.targets, spec, pcfg, cv);
    rep.view = view.name;
    return rep;
}

// --- experiment matrix ----------------------------------------------------

struct ExperimentCell {
    std::string pipeline;
    std::string view;
    std::size_t n_samples = 0;
    std::size_t excluded = 0;
    std::optional<MetricsReport> report;
    std::string error; // set when the cell failed
};

struct ExperimentConfig {
    CvConfig cv;
    PipelineConfig pipeline;
};

// Views x pipelines; an empty pipeline list uses each view's default row set.
// Cell failures are recorded rather than thrown.
inline std::vector<ExperimentCell> run_experiment_matrix(std::span<const AssessmentRecord> cohort,
                                                         std::span<const ViewKind> views,
                                                         std::span<const PipelineSpec> pipelines,
                                                         const ExperimentConfig& cfg,
                                                         const std::function<void(const ExperimentCell&)>& on_cell = {})
{
    std::vector<ExperimentCell> cells;
    for (ViewKind vk : views) {
        const auto row_set = pipelines.empty() ? default_pipelines(vk)
                                               : std::vector<PipelineSpec>(pipelines.begin(), pipelines.end());
        std::optional<DatasetView> view;
        std::string view_error;
        try {
            view = build_view(cohort, vk);
        } catch (const Error& e) {
            view_error = e.what();
        }
        for (const auto& spec : row_set) {
            ExperimentCell cell;
            cell.pipeline = spec.name();
            cell.view = std::string(view_name(vk));
            if (!view) {
                cell.error = view_error;
            } else {
                cell.n_samples = view->n_samples();
                cell.excluded = view->excluded;
                try {
                    cell.report = shuffle_split_cv(*view, spec, cfg.pipeline, cfg.cv);
                } catch (const Error& e) {
                    cell.error = e.what();
                }
            }
            if (on_cell) on_cell(cell);
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

inline constexpr std::string_view kResultsHeader =
    "pipeline,view,r2_mean,r2_std,mae_mean,mae_std,mse_mean,mse_std,rmse_mean,rmse_std";

// Failed cells keep their row with empty metric fields.
inline void write_results_csv(std::ostream& out, std::span<const ExperimentCell> cells)
{
    out << kResultsHeader << '\n';
    for (const auto& c : cells) {
        out << c.pipeline << ',' << c.view;
        if (c.report) {
            for (const auto* s : {&c.report->r2, &c.report->mae, &c.report->mse, &c.report->rmse})
                out << ',' << detail::format_fixed(s->mean, 6) << ',' << detail::format_fixed(s->std, 6);
        } else {
            out << ",,,,,,,,";
        }
        out << '\n';
    }
}

inline void write_results_text(std::ostream& out, std::span<const ExperimentCell> cells)
{
    std::string current_view;
    char buf[160];
    for (const auto& c : cells) {
        if (c.view != current_view) {
            current_view = c.view;
            out << "\nview " << c.view;
            if (c.report || c.n_samples) out << " (n = " << c.n_samples << ", excluded = " << c.excluded << ")";
            out << '\n';
            std::snprintf(buf, sizeof buf, "%-10s %-17s %-17s %-19s %-17s\n", "pipeline", "R2", "MAE", "MSE", "RMSE");
            out << buf;
        }
        if (!c.report) {
            out << c.pipeline << "  FAILED: " << c.error << '\n';
            continue;
        }
        const auto& r = *c.report;
        std::snprintf(buf, sizeof buf, "%-10s %.3f +/- %.3f    %.3f +/- %.3f    %.3f +/- %.3f    %.3f +/- %.3f\n",
                      c.pipeline.c_str(), r.r2.mean, r.r2.std, r.mae.mean, r.mae.std, r.mse.mean, r.mse.std,
                      r.rmse.mean, r.rmse.std);
        out << buf;
    }
}

// --- configuration --------------------------------------------------------

inline PipelineConfig pipeline_config_from_config(const Config& cfg)
{
    PipelineConfig p;
    auto size_key = [&](const std::string& key, std::size_t fallback) {
        const auto v = cfg.get_int(key, static_cast<std::int64_t>(fallback));
        if (v < 1) throw UsageError("config key " + key + " must be >= 1");
        return static_cast<std::size_t>(v);
    };
    p.vae.latent_dim = size_key("vae.latent_dim", p.vae.latent_dim);
    if (cfg.contains("vae.hidden")) p.vae.hidden = {size_key("vae.hidden", 16)};
    p.vae.kl_weight = cfg.get_double("vae.kl_weight", p.vae.kl_weight);
    if (!(p.vae.kl_weight >= 0.0)) throw UsageError("vae.kl_weight must be >= 0");
    p.vae_train.epochs = size_key("vae.epochs", p.vae_train.epochs);
    p.vae_train.batch_size = size_key("vae.batch_size", p.vae_train.batch_size);
    p.vae_train.learning_rate = cfg.get_double("vae.learning_rate", p.vae_train.learning_rate);
    validate(p.vae_train);

    p.recurrent.hidden_size = size_key("recurrent.hidden", p.recurrent.hidden_size);
    p.recurrent_train.epochs = size_key("recurrent.epochs", p.recurrent_train.epochs);
    p.recurrent_train.batch_size = size_key("recurrent.batch_size", p.recurrent_train.batch_size);
    p.recurrent_train.learning_rate = cfg.get_double("recurrent.learning_rate", p.recurrent_train.learning_rate);
    if (cfg.contains("recurrent.clip_norm")) {
        const double c = cfg.get_double("recurrent.clip_norm", 5.0);
        if (c > 0.0)
            p.recurrent_train.clip_norm = c;
        else
            p.recurrent_train.clip_norm.reset();
    }
    validate(p.recurrent_train);

    for (auto k : kAllRegressors) {
        const std::string prefix = std::string(regressor_name(k)) + ".";
        for (const auto& key : allowed_hyperparameters(k))
            if (cfg.contains(prefix + key)) p.hyper[k][key] = cfg.get_double(prefix + key, 0.0);
        RegressorSpec rs{k, p.hyper[k], 0};
        validate(rs);
    }
    return p;
}

inline CvConfig cv_config_from_config(const Config& cfg, std::uint64_t seed)
{
    CvConfig c;
    const auto folds = cfg.get_int("cv.folds", 5);
    if (folds < 1) throw UsageError("cv.folds must be >= 1");
    c.n_folds = static_cast<std::size_t>(folds);
    c.test_fraction = cfg.get_double("cv.test_fraction", 0.2);
    c.seed = seed;
    validate(c);
    return c;
}

// True for every key the toolkit reads from a config file or --set.
inline bool is_known_config_key(std::string_view key)
{
    static const std::vector<std::string> exact{
        "vae.latent_dim", "vae.hidden", "vae.kl_weight", "vae.epochs", "vae.batch_size", "vae.learning_rate",
        "recurrent.hidden", "recurrent.epochs", "recurrent.batch_size", "recurrent.learning_rate", "recurrent.clip_norm",
        "cv.folds", "cv.test_fraction", "synth.n", "synth.seed", "synth.noise_sd", "synth.default_loading"};
    if (std::find(exact.begin(), exact.end(), key) != exact.end()) return true;
    for (std::string_view prefix : {"maxima.", "weights.", "synth.mean.", "synth.sd.", "synth.corr."}) {
        if (key.starts_with(prefix)) return parse_feature(key.substr(prefix.size())).has_value();
    }
    for (auto k : kAllRegressors) {
        const std::string prefix = std::string(regressor_name(k)) + ".";
        if (key.starts_with(prefix)) return allowed_hyperparameters(k).count(std::string(key.substr(prefix.size()))) != 0;
    }
    return false;
}

} // namespace scorecast
