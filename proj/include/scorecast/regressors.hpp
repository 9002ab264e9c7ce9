#pragma once

// Downstream regressors sharing one fit/predict contract: multilayer
// perceptron, linear regression, extra trees, random forest, squared-loss
// gradient boosting, and k-nearest neighbours.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "checkpoint.hpp"
#include "error.hpp"
#include "nn.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace scorecast {

enum class RegressorKind { mlp, lr, et, rf, xgb, knn };

inline constexpr std::array<RegressorKind, 6> kAllRegressors{RegressorKind::mlp, RegressorKind::lr, RegressorKind::et,
                                                             RegressorKind::rf, RegressorKind::xgb, RegressorKind::knn};

constexpr std::string_view regressor_name(RegressorKind k)
{
    switch (k) {
    case RegressorKind::mlp: return "mlp";
    case RegressorKind::lr: return "lr";
    case RegressorKind::et: return "et";
    case RegressorKind::rf: return "rf";
    case RegressorKind::xgb: return "xgb";
    case RegressorKind::knn: return "knn";
    }
    return "?";
}

inline std::optional<RegressorKind> parse_regressor(std::string_view s)
{
    for (auto k : kAllRegressors)
        if (regressor_name(k) == s) return k;
    return std::nullopt;
}

// Kind plus a flat map of numeric hyperparameters (unset keys take defaults).
//
//   knn: k = 5
//   rf:  n_trees = 100, max_depth = 10, min_leaf = 2, bootstrap = 1, max_features = ceil(d/3)
//   et:  n_trees = 100, max_depth = 10, min_leaf = 2, bootstrap = 0, max_features = d
//   xgb: n_stages = 100, learning_rate = 0.1, max_depth = 3, min_leaf = 2
//   mlp: hidden1 = 32, hidden2 = 16, learning_rate = 1e-3, epochs = 200, batch_size = 32
//   lr:  (none)
//
// max_depth < 0 means unlimited.
struct RegressorSpec {
    RegressorKind kind = RegressorKind::lr;
    std::map<std::string, double> hyper;
    std::uint64_t seed = 0;

    double get(const std::string& key, double fallback) const
    {
        const auto it = hyper.find(key);
        return it == hyper.end() ? fallback : it->second;
    }
};

inline const std::set<std::string>& allowed_hyperparameters(RegressorKind k)
{
    static const std::set<std::string> knn{"k"};
    static const std::set<std::string> forest{"n_trees", "max_depth", "min_leaf", "bootstrap", "max_features"};
    static const std::set<std::string> gbt{"n_stages", "learning_rate", "max_depth", "min_leaf"};
    static const std::set<std::string> mlp{"hidden1", "hidden2", "learning_rate", "epochs", "batch_size"};
    static const std::set<std::string> none{};
    switch (k) {
    case RegressorKind::knn: return knn;
    case RegressorKind::rf:
    case RegressorKind::et: return forest;
    case RegressorKind::xgb: return gbt;
    case RegressorKind::mlp: return mlp;
    case RegressorKind::lr: return none;
    }
    return none;
}

inline void validate(const RegressorSpec& spec)
{
    const auto& allowed = allowed_hyperparameters(spec.kind);
    for (const auto& [key, value] : spec.hyper) {
        if (!allowed.count(key))
            throw UsageError("unknown hyperparameter '" + key + "' for " + std::string(regressor_name(spec.kind)));
        if (!std::isfinite(value)) throw UsageError("hyperparameter '" + key + "' is not finite");
    }
    auto at_least = [&](const char* key, double fallback, double lo) {
        if (spec.get(key, fallback) < lo)
            throw UsageError(std::string(key) + " must be >= " + std::to_string(static_cast<long long>(lo)));
    };
    switch (spec.kind) {
    case RegressorKind::knn: at_least("k", 5, 1); break;
    case RegressorKind::rf:
    case RegressorKind::et:
        at_least("n_trees", 100, 1);
        at_least("min_leaf", 2, 1);
        if (spec.hyper.count("max_depth") && spec.get("max_depth", 10) >= 0) at_least("max_depth", 10, 1);
        if (spec.hyper.count("max_features")) at_least("max_features", 1, 1);
        break;
    case RegressorKind::xgb:
        at_least("n_stages", 100, 1);
        at_least("min_leaf", 2, 1);
        if (spec.hyper.count("max_depth") && spec.get("max_depth", 3) >= 0) at_least("max_depth", 3, 1);
        if (spec.get("learning_rate", 0.1) < 0.0) throw UsageError("learning_rate must be >= 0");
        break;
    case RegressorKind::mlp:
        at_least("hidden1", 32, 1);
        at_least("hidden2", 16, 1);
        at_least("epochs", 200, 1);
        at_least("batch_size", 32, 1);
        if (!(spec.get("learning_rate", 1e-3) > 0.0)) throw UsageError("learning_rate must be > 0");
        break;
    case RegressorKind::lr: break;
    }
}

class Regressor {
public:
    virtual ~Regressor() = default;

    virtual RegressorKind kind() const = 0;
    virtual std::size_t n_features() const = 0;
    virtual void save(CheckpointWriter& w) const = 0;

    double predict(std::span<const double> x) const
    {
        check_dims(x.size());
        return predict_row(x);
    }

    Vector predict(const Matrix& x) const
    {
        check_dims(x.cols());
        Vector out(x.rows());
        for (std::size_t r = 0; r < x.rows(); ++r) out[r] = predict_row(x.row(r));
        require_finite(out, "regressor prediction");
        return out;
    }

protected:
    virtual double predict_row(std::span<const double> x) const = 0;

private:
    void check_dims(std::size_t got) const
    {
        if (got != n_features())
            throw UsageError("feature dimension mismatch: expected " + std::to_string(n_features()) + ", got " +
                             std::to_string(got));
    }
};

// --- linear regression ----------------------------------------------------

class LinearRegression final : public Regressor {
public:
    LinearRegression(Vector coefficients, double intercept, bool used_ridge = false)
        : coef_(std::move(coefficients)), intercept_(intercept), used_ridge_(used_ridge) {}

    RegressorKind kind() const override { return RegressorKind::lr; }
    std::size_t n_features() const override { return coef_.size(); }

    const Vector& coefficients() const noexcept { return coef_; }
    double intercept() const noexcept { return intercept_; }
    bool used_ridge_fallback() const noexcept { return used_ridge_; }

    void save(CheckpointWriter& w) const override
    {
        w.kv("regressor.kind", "lr");
        w.tensor("lr.coefficients", coef_);
        w.kv_double("lr.intercept", intercept_);
    }

    static std::unique_ptr<LinearRegression> load(CheckpointReader& r)
    {
        auto coef = r.vector("lr.coefficients");
        const double b = r.kv_double("lr.intercept");
        return std::make_unique<LinearRegression>(std::move(coef), b);
    }

protected:
    double predict_row(std::span<const double> x) const override { return intercept_ + dot(coef_, x); }

private:
    Vector coef_;
    double intercept_;
    bool used_ridge_;
};

// Ordinary least squares via the normal equations on z-scored columns.
// A singular system is retried with ridge lambda = 1e-8 on the diagonal.
inline std::unique_ptr<LinearRegression> fit_linear_regression(const Matrix& x, std::span<const double> y)
{
    const std::size_t n = x.rows(), d = x.cols();
    if (n == 0 || n != y.size()) throw DataError("linear regression: empty or mismatched data");
    if (n < d) throw DataError("linear regression: need at least as many rows as features");
    require_finite(x.flat(), "linear regression input");
    require_finite(y, "linear regression target");
    const auto stats = Standardizer::fit(x);
    const double y_mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    Matrix gram(d, d);
    Vector rhs(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const Vector z = stats.transform(x.row(r));
        const double yc = y[r] - y_mean;
        for (std::size_t i = 0; i < d; ++i) {
            rhs[i] += z[i] * yc;
            for (std::size_t j = 0; j < d; ++j) gram(i, j) += z[i] * z[j];
        }
    }
    for (double& v : gram.flat()) v /= static_cast<double>(n);
    for (double& v : rhs) v /= static_cast<double>(n);

    Vector beta = rhs;
    bool ridge = false;
    if (!cholesky_solve(gram, beta)) {
        ridge = true;
        for (std::size_t i = 0; i < d; ++i) gram(i, i) += 1e-8;
        beta = rhs;
        if (!cholesky_solve(gram, beta)) throw NumericError("linear regression: rank-deficient even with ridge fallback");
    }
    Vector coef(d);
    double intercept = y_mean;
    for (std::size_t i = 0; i < d; ++i) {
        coef[i] = beta[i] / stats.scale[i];
        intercept -= coef[i] * stats.mean[i];
    }
    require_finite(coef, "linear regression coefficients");
    return std::make_unique<LinearRegression>(std::move(coef), intercept, ridge);
}

// --- k nearest neighbours -------------------------------------------------

class KnnRegressor final : public Regressor {
public:
    KnnRegressor(Matrix train_z, Vector targets, Standardizer stats, std::size_t k)
        : x_(std::move(train_z)), y_(std::move(targets)), stats_(std::move(stats)), k_(k)
    {
        if (k_ < 1) throw UsageError("knn: k must be at least 1");
        if (k_ > y_.size())
            throw UsageError("knn: k = " + std::to_string(k_) + " exceeds training size " + std::to_string(y_.size()));
    }

    RegressorKind kind() const override { return RegressorKind::knn; }
    std::size_t n_features() const override { return x_.cols(); }
    std::size_t k() const noexcept { return k_; }
    const Standardizer& inputs() const noexcept { return stats_; }

    void save(CheckpointWriter& w) const override
    {
        w.kv("regressor.kind", "knn");
        w.kv("knn.k", k_);
        stats_.save(w, "knn.standardizer");
        w.tensor("knn.train", x_);
        w.tensor("knn.targets", y_);
    }

    static std::unique_ptr<KnnRegressor> load(CheckpointReader& r)
    {
        const auto k = r.kv_size("knn.k");
        auto stats = Standardizer::load(r, "knn.standardizer");
        auto x = r.tensor("knn.train");
        auto y = r.vector("knn.targets");
        return std::make_unique<KnnRegressor>(std::move(x), std::move(y), std::move(stats), k);
    }

protected:
    // Mean target of the k closest training rows (Euclidean on z-scores);
    // equal distances resolve to the lower training index.
    double predict_row(std::span<const double> x) const override
    {
        const Vector q = stats_.transform(x);
        std::vector<std::pair<double, std::size_t>> dist(x_.rows());
        for (std::size_t r = 0; r < x_.rows(); ++r) {
            double s = 0.0;
            const auto row = x_.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) s += (row[c] - q[c]) * (row[c] - q[c]);
            dist[r] = {s, r};
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_), dist.end());
        double sum = 0.0;
        for (std::size_t i = 0; i < k_; ++i) sum += y_[dist[i].second];
        return sum / static_cast<double>(k_);
    }

private:
    Matrix x_;
    Vector y_;
    Standardizer stats_;
    std::size_t k_;
};

inline std::unique_ptr<KnnRegressor> fit_knn(const Matrix& x, std::span<const double> y, std::size_t k = 5)
{
    if (x.rows() == 0 || x.rows() != y.size()) throw DataError("knn: empty or mismatched data");
    auto stats = Standardizer::fit(x);
    auto z = stats.transform(x);
    return std::make_unique<KnnRegressor>(std::move(z), Vector(y.begin(), y.end()), std::move(stats), k);
}

// --- regression trees -----------------------------------------------------

enum class SplitPolicy {
    exhaustive,       // best midpoint between sorted distinct values
    random_threshold, // one uniform threshold in (min, max) per candidate feature
};

struct TreeParams {
    std::optional<std::size_t> max_depth = 10; // nullopt = unlimited
    std::size_t min_leaf = 2;
    SplitPolicy policy = SplitPolicy::exhaustive;
    std::size_t max_features = 0; // candidate features per split; 0 = all
};

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0; // mean target of the node's training rows
};

// CART regression tree, flattened; rows with x[feature] <= threshold go left.
class RegressionTree {
public:
    RegressionTree() = default;
    explicit RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

    const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
    const TreeNode& root() const { return nodes_.front(); }

    double predict(std::span<const double> x) const
    {
        std::size_t i = 0;
        while (nodes_[i].feature >= 0) {
            const auto& n = nodes_[i];
            i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
        }
        return nodes_[i].value;
    }

    std::size_t depth() const { return depth_from(0); }

    Matrix to_matrix() const
    {
        Matrix m(nodes_.size(), 5);
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const auto& n = nodes_[i];
            m(i, 0) = n.feature;
            m(i, 1) = n.threshold;
            m(i, 2) = n.left;
            m(i, 3) = n.right;
            m(i, 4) = n.value;
        }
        return m;
    }

    static RegressionTree from_matrix(const Matrix& m)
    {
        if (m.cols() != 5 || m.rows() == 0) throw DataError("checkpoint: bad tree node array");
        std::vector<TreeNode> nodes(m.rows());
        const auto n = static_cast<double>(m.rows());
        for (std::size_t i = 0; i < m.rows(); ++i) {
            nodes[i] = {static_cast<int>(m(i, 0)), m(i, 1), static_cast<int>(m(i, 2)), static_cast<int>(m(i, 3)), m(i, 4)};
            if (nodes[i].feature >= 0 &&
                (m(i, 2) <= static_cast<double>(i) || m(i, 3) <= static_cast<double>(i) || m(i, 2) >= n || m(i, 3) >= n))
                throw DataError("checkpoint: tree child index out of range");
        }
        return RegressionTree(std::move(nodes));
    }

private:
    std::size_t depth_from(std::size_t i) const
    {
        const auto& n = nodes_[i];
        if (n.feature < 0) return 0;
        return 1 + std::max(depth_from(static_cast<std::size_t>(n.left)), depth_from(static_cast<std::size_t>(n.right)));
    }

    std::vector<TreeNode> nodes_;
};

namespace detail {

struct SplitChoice {
    int feature = -1;
    double threshold = 0.0;
    double score = 0.0; // sum_L^2/n_L + sum_R^2/n_R; larger = lower SSE
};

class TreeBuilder {
public:
    TreeBuilder(const Matrix& x, std::span<const double> y, const TreeParams& p, Rng& rng)
        : x_(x), y_(y), p_(p), rng_(rng) {}

    std::vector<TreeNode> build(std::vector<std::size_t> rows)
    {
        grow(rows, 0);
        return std::move(nodes_);
    }

private:
    int grow(std::vector<std::size_t>& rows, std::size_t depth)
    {
        const int id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        double sum = 0.0;
        for (auto r : rows) sum += y_[r];
        const double n = static_cast<double>(rows.size());
        nodes_[static_cast<std::size_t>(id)].value = sum / n;

        const bool depth_ok = !p_.max_depth || depth < *p_.max_depth;
        if (!depth_ok || rows.size() < 2 * p_.min_leaf || is_pure(rows)) return id;

        const auto split = best_split(rows, sum);
        if (split.feature < 0 || !(split.score > sum * sum / n + 1e-12 * std::max(1.0, std::abs(sum * sum / n))))
            return id;

        std::vector<std::size_t> left, right;
        for (auto r : rows)
            (x_(r, static_cast<std::size_t>(split.feature)) <= split.threshold ? left : right).push_back(r);
        rows.clear();
        rows.shrink_to_fit();
        nodes_[static_cast<std::size_t>(id)].feature = split.feature;
        nodes_[static_cast<std::size_t>(id)].threshold = split.threshold;
        const int l = grow(left, depth + 1);
        const int r = grow(right, depth + 1);
        nodes_[static_cast<std::size_t>(id)].left = l;
        nodes_[static_cast<std::size_t>(id)].right = r;
        return id;
    }

    bool is_pure(const std::vector<std::size_t>& rows) const
    {
        const double first = y_[rows.front()];
        return std::all_of(rows.begin(), rows.end(), [&](std::size_t r) { return y_[r] == first; });
    }

    // Candidate features come in random order; the first max_features are
    // scored, and further ones only if none of those admits a split.
    SplitChoice best_split(const std::vector<std::size_t>& rows, double total)
    {
        const std::size_t d = x_.cols();
        const std::size_t want = p_.max_features == 0 ? d : std::min(p_.max_features, d);
        std::vector<std::size_t> order;
        if (want == d) {
            order.resize(d);
            std::iota(order.begin(), order.end(), std::size_t{0});
        } else {
            order = rng_.permutation(d);
        }
        SplitChoice best;
        std::size_t tried = 0;
        for (std::size_t f : order) {
            if (tried >= want && best.feature >= 0) break;
            const bool usable = p_.policy == SplitPolicy::exhaustive ? scan_exhaustive(rows, f, total, best)
                                                                      : scan_random(rows, f, total, best);
            if (usable) ++tried;
        }
        return best;
    }

    // Returns false when the feature is constant over the node.
    bool scan_exhaustive(const std::vector<std::size_t>& rows, std::size_t f, double total, SplitChoice& best)
    {
        std::vector<std::pair<double, double>> vals;
        vals.reserve(rows.size());
        for (auto r : rows) vals.emplace_back(x_(r, f), y_[r]);
        std::sort(vals.begin(), vals.end());
        if (vals.front().first == vals.back().first) return false;
        const std::size_t n = vals.size();
        double left_sum = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            left_sum += vals[i].second;
            const std::size_t nl = i + 1, nr = n - nl;
            if (vals[i].first == vals[i + 1].first || nl < p_.min_leaf || nr < p_.min_leaf) continue;
            const double right_sum = total - left_sum;
            const double score = left_sum * left_sum / static_cast<double>(nl) + right_sum * right_sum / static_cast<double>(nr);
            if (best.feature < 0 || score > best.score) {
                double mid = 0.5 * (vals[i].first + vals[i + 1].first);
                if (!(mid < vals[i + 1].first)) mid = vals[i].first;
                best = {static_cast<int>(f), mid, score};
            }
        }
        return true;
    }

    bool scan_random(const std::vector<std::size_t>& rows, std::size_t f, double total, SplitChoice& best)
    {
        double lo = x_(rows.front(), f), hi = lo;
        for (auto r : rows) {
            lo = std::min(lo, x_(r, f));
            hi = std::max(hi, x_(r, f));
        }
        if (lo == hi) return false;
        const double thr = rng_.uniform(lo, hi);
        double left_sum = 0.0;
        std::size_t nl = 0;
        for (auto r : rows)
            if (x_(r, f) <= thr) {
                left_sum += y_[r];
                ++nl;
            }
        const std::size_t nr = rows.size() - nl;
        if (nl < p_.min_leaf || nr < p_.min_leaf) return true;
        const double right_sum = total - left_sum;
        const double score = left_sum * left_sum / static_cast<double>(nl) + right_sum * right_sum / static_cast<double>(nr);
        if (best.feature < 0 || score > best.score) best = {static_cast<int>(f), thr, score};
        return true;
    }

    const Matrix& x_;
    std::span<const double> y_;
    const TreeParams& p_;
    Rng& rng_;
    std::vector<TreeNode> nodes_;
};

} // namespace detail

// Fits a tree on the given rows (all rows when empty).
inline RegressionTree fit_tree(const Matrix& x, std::span<const double> y, const TreeParams& params, std::uint64_t seed,
                               std::vector<std::size_t> rows = {})
{
    if (x.rows() == 0 || x.rows() != y.size()) throw DataError("tree: empty or mismatched data");
    if (params.min_leaf < 1) throw UsageError("tree: min_leaf must be at least 1");
    if (rows.empty()) {
        rows.resize(x.rows());
        std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    Rng rng(seed);
    detail::TreeBuilder builder(x, y, params, rng);
    return RegressionTree(builder.build(std::move(rows)));
}

// --- forests --------------------------------------------------------------

class ForestRegressor final : public Regressor {
public:
    ForestRegressor(RegressorKind kind, std::size_t n_features, std::vector<RegressionTree> trees)
        : kind_(kind), d_(n_features), trees_(std::move(trees)) {}

    RegressorKind kind() const override { return kind_; }
    std::size_t n_features() const override { return d_; }
    const std::vector<RegressionTree>& trees() const noexcept { return trees_; }

    void save(CheckpointWriter& w) const override
    {
        w.kv("regressor.kind", regressor_name(kind_));
        w.kv("forest.features", d_);
        w.kv("forest.trees", trees_.size());
        for (std::size_t t = 0; t < trees_.size(); ++t) w.tensor("forest.tree." + std::to_string(t), trees_[t].to_matrix());
    }

    static std::unique_ptr<ForestRegressor> load(CheckpointReader& r, RegressorKind kind)
    {
        const auto d = r.kv_size("forest.features");
        const auto n = r.kv_size("forest.trees");
        std::vector<RegressionTree> trees;
        for (std::size_t t = 0; t < n; ++t) trees.push_back(RegressionTree::from_matrix(r.tensor("forest.tree." + std::to_string(t))));
        return std::make_unique<ForestRegressor>(kind, d, std::move(trees));
    }

protected:
    double predict_row(std::span<const double> x) const override
    {
        double s = 0.0;
        for (const auto& t : trees_) s += t.predict(x);
        return s / static_cast<double>(trees_.size());
    }

private:
    RegressorKind kind_;
    std::size_t d_;
    std::vector<RegressionTree> trees_;
};

inline std::optional<std::size_t> depth_param(const RegressorSpec& spec, double fallback)
{
    const double v = spec.get("max_depth", fallback);
    if (v < 0) return std::nullopt;
    return static_cast<std::size_t>(v);
}

// Random forest (bootstrap rows, exhaustive splits over ceil(d/3) candidate
// features) or extra trees (all rows, random thresholds over all features).
// Tree t is seeded with derive_seed(spec.seed, t).
inline std::unique_ptr<ForestRegressor> fit_forest(const Matrix& x, std::span<const double> y, const RegressorSpec& spec)
{
    if (spec.kind != RegressorKind::rf && spec.kind != RegressorKind::et)
        throw UsageError("fit_forest: kind must be rf or et");
    validate(spec);
    if (x.rows() == 0 || x.rows() != y.size()) throw DataError("forest: empty or mismatched data");
    const bool rf = spec.kind == RegressorKind::rf;
    const std::size_t d = x.cols();
    TreeParams tp;
    tp.max_depth = depth_param(spec, 10);
    tp.min_leaf = static_cast<std::size_t>(spec.get("min_leaf", 2));
    tp.policy = rf ? SplitPolicy::exhaustive : SplitPolicy::random_threshold;
    tp.max_features = static_cast<std::size_t>(spec.get("max_features", rf ? static_cast<double>((d + 2) / 3) : static_cast<double>(d)));
    const bool bootstrap = spec.get("bootstrap", rf ? 1.0 : 0.0) != 0.0;
    const auto n_trees = static_cast<std::size_t>(spec.get("n_trees", 100));
    std::vector<RegressionTree> trees;
    trees.reserve(n_trees);
    for (std::size_t t = 0; t < n_trees; ++t) {
        const auto seed = derive_seed(spec.seed, t);
        std::vector<std::size_t> rows;
        if (bootstrap) {
            Rng boot(derive_seed(seed, 0xb007));
            rows.resize(x.rows());
            for (auto& r : rows) r = boot.below(x.rows());
        }
        trees.push_back(fit_tree(x, y, tp, seed, std::move(rows)));
    }
    return std::make_unique<ForestRegressor>(spec.kind, d, std::move(trees));
}

// --- gradient boosting ----------------------------------------------------

// Squared-loss boosting: F0 = mean(y), F_m = F_{m-1} + shrinkage * tree_m,
// where tree_m is fit to the residuals y - F_{m-1}.
class BoostedRegressor final : public Regressor {
public:
    BoostedRegressor(std::size_t n_features, double base, double shrinkage, std::vector<RegressionTree> trees)
        : d_(n_features), base_(base), shrinkage_(shrinkage), trees_(std::move(trees)) {}

    RegressorKind kind() const override { return RegressorKind::xgb; }
    std::size_t n_features() const override { return d_; }
    double base() const noexcept { return base_; }
    const std::vector<RegressionTree>& trees() const noexcept { return trees_; }

    void save(CheckpointWriter& w) const override
    {
        w.kv("regressor.kind", "xgb");
        w.kv("gbt.features", d_);
        w.kv_double("gbt.base", base_);
        w.kv_double("gbt.shrinkage", shrinkage_);
        w.kv("gbt.stages", trees_.size());
        for (std::size_t t = 0; t < trees_.size(); ++t) w.tensor("gbt.tree." + std::to_string(t), trees_[t].to_matrix());
    }

    static std::unique_ptr<BoostedRegressor> load(CheckpointReader& r)
    {
        const auto d = r.kv_size("gbt.features");
        const double base = r.kv_double("gbt.base");
        const double nu = r.kv_double("gbt.shrinkage");
        const auto n = r.kv_size("gbt.stages");
        std::vector<RegressionTree> trees;
        for (std::size_t t = 0; t < n; ++t) trees.push_back(RegressionTree::from_matrix(r.tensor("gbt.tree." + std::to_string(t))));
        return std::make_unique<BoostedRegressor>(d, base, nu, std::move(trees));
    }

protected:
    double predict_row(std::span<const double> x) const override
    {
        double f = base_;
        for (const auto& t : trees_) f += shrinkage_ * t.predict(x);
        return f;
    }

private:
    std::size_t d_;
    double base_;
    double shrinkage_;
    std::vector<RegressionTree> trees_;
};

inline std::unique_ptr<BoostedRegressor> fit_gbt(const Matrix& x, std::span<const double> y, const RegressorSpec& spec)
{
    if (spec.kind != RegressorKind::xgb) throw UsageError("fit_gbt: kind must be xgb");
    validate(spec);
    const std::size_t n = x.rows();
    if (n == 0 || n != y.size()) throw DataError("gbt: empty or mismatched data");
    TreeParams tp;
    tp.max_depth = depth_param(spec, 3);
    tp.min_leaf = static_cast<std::size_t>(spec.get("min_leaf", 2));
    tp.policy = SplitPolicy::exhaustive;
    const double nu = spec.get("learning_rate", 0.1);
    const auto stages = static_cast<std::size_t>(spec.get("n_stages", 100));
    const double base = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    Vector f(n, base), residual(n);
    std::vector<RegressionTree> trees;
    trees.reserve(stages);
    for (std::size_t m = 0; m < stages; ++m) {
        for (std::size_t i = 0; i < n; ++i) residual[i] = y[i] - f[i];
        auto tree = fit_tree(x, residual, tp, derive_seed(spec.seed, m));
        for (std::size_t i = 0; i < n; ++i) f[i] += nu * tree.predict(x.row(i));
        trees.push_back(std::move(tree));
    }
    return std::make_unique<BoostedRegressor>(x.cols(), base, nu, std::move(trees));
}

// --- multilayer perceptron ------------------------------------------------

class MlpRegressor final : public Regressor {
public:
    MlpRegressor(DenseNet net, Standardizer inputs, Standardizer target, TrainTrace trace = {})
        : net_(std::move(net)), inputs_(std::move(inputs)), target_(std::move(target)), trace_(std::move(trace)) {}

    RegressorKind kind() const override { return RegressorKind::mlp; }
    std::size_t n_features() const override { return net_.input_size(); }
    const DenseNet& net() const noexcept { return net_; }
    const Standardizer& inputs() const noexcept { return inputs_; }
    const TrainTrace& trace() const noexcept { return trace_; }

    void save(CheckpointWriter& w) const override
    {
        w.kv("regressor.kind", "mlp");
        inputs_.save(w, "mlp.inputs");
        target_.save(w, "mlp.target");
        net_.save(w, "mlp.net");
    }

    static std::unique_ptr<MlpRegressor> load(CheckpointReader& r)
    {
        auto in = Standardizer::load(r, "mlp.inputs");
        auto tg = Standardizer::load(r, "mlp.target");
        auto net = DenseNet::load(r, "mlp.net");
        if (net.input_size() != in.dims() || net.output_size() != 1) throw DataError("checkpoint: inconsistent MLP shapes");
        return std::make_unique<MlpRegressor>(std::move(net), std::move(in), std::move(tg));
    }

protected:
    double predict_row(std::span<const double> x) const override
    {
        return target_.inverse(net_.forward(inputs_.transform(x))[0]);
    }

private:
    DenseNet net_;
    Standardizer inputs_;
    Standardizer target_;
    TrainTrace trace_;
};

// d -> hidden1 -> hidden2 -> 1 (relu, relu, identity) on z-scored inputs and targets.
inline std::unique_ptr<MlpRegressor> fit_mlp(const Matrix& x, std::span<const double> y, const RegressorSpec& spec)
{
    if (spec.kind != RegressorKind::mlp) throw UsageError("fit_mlp: kind must be mlp");
    validate(spec);
    if (x.rows() == 0 || x.rows() != y.size()) throw DataError("mlp: empty or mismatched data");
    auto inputs = Standardizer::fit(x);
    auto target = Standardizer::fit(y);
    const Matrix z = inputs.transform(x);
    Vector zy(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) zy[i] = target.forward(y[i]);

    const std::size_t h1 = static_cast<std::size_t>(spec.get("hidden1", 32));
    const std::size_t h2 = static_cast<std::size_t>(spec.get("hidden2", 16));
    DenseNet net({x.cols(), h1, h2, std::size_t{1}}, {Activation::relu, Activation::relu, Activation::identity});
    Rng init(derive_seed(spec.seed, 0x31f));
    net.randomize(init);

    TrainConfig tc;
    tc.seed = spec.seed;
    tc.learning_rate = spec.get("learning_rate", 1e-3);
    tc.epochs = static_cast<std::size_t>(spec.get("epochs", 200));
    tc.batch_size = static_cast<std::size_t>(spec.get("batch_size", 32));
    DenseCache cache;
    auto trace = fit_minibatch(net, x.rows(), tc, [&](std::span<const std::size_t> idx, DenseNet& grad) {
        const double scale = 1.0 / static_cast<double>(idx.size());
        double loss = 0.0;
        for (auto i : idx) {
            const double pred = net.forward(z.row(i), &cache)[0];
            const auto l = mse_loss(std::span<const double>(&pred, 1), std::span<const double>(&zy[i], 1));
            const Vector d{l.grad[0] * scale};
            net.backward(cache, d, grad);
            loss += l.value;
        }
        return loss * scale;
    });
    return std::make_unique<MlpRegressor>(std::move(net), std::move(inputs), std::move(target), std::move(trace));
}

// --- dispatch -------------------------------------------------------------

inline std::unique_ptr<Regressor> fit_regressor(const Matrix& x, std::span<const double> y, const RegressorSpec& spec)
{
    validate(spec);
    switch (spec.kind) {
    case RegressorKind::lr: return fit_linear_regression(x, y);
    case RegressorKind::knn: {
        const auto k = static_cast<std::size_t>(spec.get("k", 5));
        if (k > x.rows())
            throw UsageError("knn: k = " + std::to_string(k) + " exceeds training size " + std::to_string(x.rows()));
        return fit_knn(x, y, k);
    }
    case RegressorKind::rf:
    case RegressorKind::et: return fit_forest(x, y, spec);
    case RegressorKind::xgb: return fit_gbt(x, y, spec);
    case RegressorKind::mlp: return fit_mlp(x, y, spec);
    }
    throw UsageError("unknown regressor kind");
}

inline std::unique_ptr<Regressor> load_regressor(CheckpointReader& r)
{
    const auto name = r.kv("regressor.kind");
    const auto kind = parse_regressor(name);
    if (!kind) throw DataError("checkpoint: unknown regressor '" + name + "'");
    switch (*kind) {
    case RegressorKind::lr: return LinearRegression::load(r);
    case RegressorKind::knn: return KnnRegressor::load(r);
    case RegressorKind::rf:
    case RegressorKind::et: return ForestRegressor::load(r, *kind);
    case RegressorKind::xgb: return BoostedRegressor::load(r);
    case RegressorKind::mlp: return MlpRegressor::load(r);
    }
    throw DataError("checkpoint: unknown regressor");
}

} // namespace scorecast
