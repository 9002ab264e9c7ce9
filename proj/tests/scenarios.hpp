#pragma once

// Shared experiment fixtures for the harness tests and the acceptance binary.

#include <vector>

#include <scorecast/harness.hpp>

namespace scorecast::testing {

// Reduced training budgets so full pipeline sweeps stay fast.
inline PipelineConfig quick_pipeline_config()
{
    PipelineConfig cfg;
    cfg.vae_train.epochs = 20;
    cfg.recurrent_train.epochs = 20;
    cfg.hyper[RegressorKind::mlp] = {{"epochs", 20}};
    cfg.hyper[RegressorKind::rf] = {{"n_trees", 10}};
    cfg.hyper[RegressorKind::et] = {{"n_trees", 10}};
    cfg.hyper[RegressorKind::xgb] = {{"n_stages", 20}};
    return cfg;
}

// Every standardization statistic a fitted pipeline learned, flattened.
inline Vector learned_statistics(const FittedPipeline& p)
{
    Vector out;
    auto add = [&](const Standardizer& s) {
        out.insert(out.end(), s.mean.begin(), s.mean.end());
        out.insert(out.end(), s.scale.begin(), s.scale.end());
    };
    if (p.vae()) add(p.vae()->inputs);
    if (p.recurrent()) {
        add(p.recurrent()->inputs);
        add(p.recurrent()->target);
    }
    if (const auto* r = p.regressor()) {
        if (const auto* m = dynamic_cast<const MlpRegressor*>(r)) add(m->inputs());
        if (const auto* k = dynamic_cast<const KnnRegressor*>(r)) add(k->inputs());
        if (const auto* l = dynamic_cast<const LinearRegression*>(r)) {
            out.insert(out.end(), l->coefficients().begin(), l->coefficients().end());
            out.push_back(l->intercept());
        }
    }
    return out;
}

// Per-fold training statistics of `spec` under cross-validation on (x, y).
inline std::vector<Vector> fold_statistics(const Matrix& x, std::span<const double> y, std::span<const Fold> folds,
                                           const PipelineSpec& spec, const PipelineConfig& cfg, std::uint64_t seed)
{
    std::vector<Vector> stats(folds.size());
    cross_validate(x, y, folds, [&](const Matrix& tx, std::span<const double> ty, const Matrix& vx, std::size_t i) {
        const auto p = fit_pipeline(spec, tx, ty, cfg, seed + i);
        stats[i] = learned_statistics(p);
        return p.predict(vx);
    });
    return stats;
}

struct CanaryResult {
    bool statistics_unchanged = true;
    std::size_t folds_checked = 0;
};

// Fits each fold, then refits after adding `shift` to that fold's test-row
// features. Training-derived statistics must not move.
inline CanaryResult leakage_canary(const Matrix& x, std::span<const double> y, const PipelineSpec& spec,
                                   const PipelineConfig& cfg, const CvConfig& cv, double shift = 1000.0)
{
    const auto folds = shuffle_split_indices(x.rows(), cv);
    const auto base = fold_statistics(x, y, folds, spec, cfg, cv.seed);
    CanaryResult res;
    for (std::size_t i = 0; i < folds.size(); ++i) {
        Matrix shifted = x;
        for (auto r : folds[i].test)
            for (double& v : shifted.row(r)) v += shift;
        const std::vector<Fold> one{folds[i]};
        const auto again = fold_statistics(shifted, y, one, spec, cfg, cv.seed + i);
        if (base[i].empty() || again[0] != base[i]) res.statistics_unchanged = false;
        ++res.folds_checked;
    }
    return res;
}

} // namespace scorecast::testing
