#pragma once

// Dense networks with hand-derived backprop, losses, optimizers, the
// finite-difference gradient checker, and the shared minibatch loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "checkpoint.hpp"
#include "error.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace scorecast {

enum class Activation { identity, sigmoid, tanh, relu };

constexpr std::string_view activation_name(Activation a)
{
    switch (a) {
    case Activation::identity: return "identity";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    }
    return "?";
}

inline Activation parse_activation(std::string_view s)
{
    for (auto a : {Activation::identity, Activation::sigmoid, Activation::tanh, Activation::relu})
        if (activation_name(a) == s) return a;
    throw DataError("unknown activation '" + std::string(s) + "'");
}

inline double activate(Activation a, double x)
{
    switch (a) {
    case Activation::identity: return x;
    case Activation::sigmoid: return sigmoid(x);
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    }
    return x;
}

// Derivative expressed through the activation's output y.
inline double activate_grad_from_output(Activation a, double y)
{
    switch (a) {
    case Activation::identity: return 1.0;
    case Activation::sigmoid: return y * (1.0 - y);
    case Activation::tanh: return 1.0 - y * y;
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
    }
    return 1.0;
}

// Mutable views over every parameter block of a model, in a fixed order.
using ParamRefs = std::vector<std::span<double>>;

inline std::size_t param_count(const ParamRefs& p)
{
    std::size_t n = 0;
    for (const auto& s : p) n += s.size();
    return n;
}

inline Vector flatten(const ParamRefs& p)
{
    Vector out;
    out.reserve(param_count(p));
    for (const auto& s : p) out.insert(out.end(), s.begin(), s.end());
    return out;
}

inline void zero(const ParamRefs& p)
{
    for (const auto& s : p) std::fill(s.begin(), s.end(), 0.0);
}

struct DenseLayer {
    Matrix weight; // out x in
    Vector bias;   // out
    Activation activation = Activation::identity;
};

struct DenseCache {
    std::vector<Vector> inputs;  // input to each layer
    std::vector<Vector> outputs; // activated output of each layer
};

class DenseNet {
public:
    DenseNet() = default;

    // Zero-initialised network; `sizes` has one more entry than `activations`.
    DenseNet(std::span<const std::size_t> sizes, std::span<const Activation> activations)
    {
        if (sizes.size() < 2 || activations.size() != sizes.size() - 1)
            throw UsageError("dense net needs n+1 layer sizes for n activations");
        for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
            if (sizes[i] == 0 || sizes[i + 1] == 0) throw UsageError("dense layer sizes must be positive");
            layers_.push_back({Matrix(sizes[i + 1], sizes[i]), Vector(sizes[i + 1], 0.0), activations[i]});
        }
    }

    DenseNet(std::initializer_list<std::size_t> sizes, std::initializer_list<Activation> activations)
        : DenseNet(std::span<const std::size_t>(sizes.begin(), sizes.size()),
                   std::span<const Activation>(activations.begin(), activations.size()))
    {}

    // Weights and biases uniform in +-1/sqrt(fan_in).
    void randomize(Rng& rng)
    {
        for (auto& l : layers_) {
            init_uniform_fan_in(l.weight, l.weight.cols(), rng);
            const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
            for (double& b : l.bias) b = rng.uniform(-bound, bound);
        }
    }

    std::size_t input_size() const { return layers_.empty() ? 0 : layers_.front().weight.cols(); }
    std::size_t output_size() const { return layers_.empty() ? 0 : layers_.back().weight.rows(); }
    std::size_t depth() const noexcept { return layers_.size(); }

    std::vector<DenseLayer>& layers() noexcept { return layers_; }
    const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

    Vector forward(std::span<const double> x, DenseCache* cache = nullptr) const
    {
        if (x.size() != input_size())
            throw UsageError("dense forward: expected input of length " + std::to_string(input_size()) + ", got " +
                             std::to_string(x.size()));
        if (cache) {
            cache->inputs.clear();
            cache->outputs.clear();
        }
        Vector h(x.begin(), x.end());
        for (const auto& l : layers_) {
            Vector z = matvec(l.weight, h);
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = activate(l.activation, z[i] + l.bias[i]);
            if (cache) {
                cache->inputs.push_back(std::move(h));
                cache->outputs.push_back(z);
            }
            h = std::move(z);
        }
        require_finite(h, "dense forward");
        return h;
    }

    // Accumulates dL/dparams into `grad` (same shapes) and returns dL/dx.
    Vector backward(const DenseCache& cache, std::span<const double> d_out, DenseNet& grad) const
    {
        Vector delta(d_out.begin(), d_out.end());
        for (std::size_t li = layers_.size(); li-- > 0;) {
            const auto& l = layers_[li];
            auto& g = grad.layers_[li];
            const auto& y = cache.outputs[li];
            for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= activate_grad_from_output(l.activation, y[i]);
            outer_acc(g.weight, delta, cache.inputs[li]);
            add_to(g.bias, delta);
            Vector d_in(l.weight.cols(), 0.0);
            matvec_transposed_acc(l.weight, delta, d_in);
            delta = std::move(d_in);
        }
        return delta;
    }

    DenseNet zeros_like() const
    {
        DenseNet z = *this;
        zero(z.params());
        return z;
    }

    ParamRefs params()
    {
        ParamRefs p;
        for (auto& l : layers_) {
            p.push_back(l.weight.flat());
            p.push_back(std::span<double>(l.bias));
        }
        return p;
    }

    void save(CheckpointWriter& w, std::string_view name) const
    {
        w.kv(std::string(name) + ".layers", layers_.size());
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const auto prefix = std::string(name) + "." + std::to_string(i);
            w.kv(prefix + ".activation", activation_name(layers_[i].activation));
            w.tensor(prefix + ".weight", layers_[i].weight);
            w.tensor(prefix + ".bias", layers_[i].bias);
        }
    }

    static DenseNet load(CheckpointReader& r, std::string_view name)
    {
        DenseNet net;
        const auto n = r.kv_size(std::string(name) + ".layers");
        for (std::size_t i = 0; i < n; ++i) {
            const auto prefix = std::string(name) + "." + std::to_string(i);
            DenseLayer l;
            l.activation = parse_activation(r.kv(prefix + ".activation"));
            l.weight = r.tensor(prefix + ".weight");
            l.bias = r.vector(prefix + ".bias");
            if (l.bias.size() != l.weight.rows()) throw DataError("checkpoint: bias/weight shape mismatch in " + prefix);
            if (!net.layers_.empty() && net.layers_.back().weight.rows() != l.weight.cols())
                throw DataError("checkpoint: layer dimensions do not chain in " + prefix);
            net.layers_.push_back(std::move(l));
        }
        return net;
    }

private:
    std::vector<DenseLayer> layers_;
};

struct LossResult {
    double value = 0.0;
    Vector grad;
};

// Mean squared error and its gradient 2(pred - target)/n.
inline LossResult mse_loss(std::span<const double> pred, std::span<const double> target)
{
    if (pred.size() != target.size())
        throw UsageError("mse_loss: length mismatch (" + std::to_string(pred.size()) + " vs " +
                         std::to_string(target.size()) + ")");
    if (pred.empty()) throw UsageError("mse_loss: empty input");
    const double n = static_cast<double>(pred.size());
    LossResult r;
    r.grad.resize(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        r.value += d * d;
        r.grad[i] = 2.0 * d / n;
    }
    r.value /= n;
    return r;
}

// --- optimisation ---------------------------------------------------------

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t epochs = 200;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // Rescale each minibatch gradient to at most this global L2 norm.
    std::optional<double> clip_norm;
};

inline void validate(const TrainConfig& c)
{
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) throw UsageError("learning_rate must be > 0");
    if (c.epochs < 1) throw UsageError("epochs must be at least 1");
    if (c.batch_size < 1) throw UsageError("batch_size must be at least 1");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
        throw UsageError("adam betas must lie in [0, 1)");
    if (!(c.epsilon > 0.0)) throw UsageError("adam epsilon must be > 0");
    if (c.clip_norm && !(*c.clip_norm > 0.0)) throw UsageError("clip_norm must be > 0");
}

inline void check_shapes(const ParamRefs& params, const ParamRefs& grads)
{
    if (params.size() != grads.size()) throw UsageError("optimizer: parameter/gradient block count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].size() != grads[i].size()) throw UsageError("optimizer: parameter/gradient shape mismatch");
    for (const auto& g : grads) require_finite(g, "gradient");
}

// p <- p - lr * g
inline void sgd_step(const ParamRefs& params, const ParamRefs& grads, double learning_rate)
{
    check_shapes(params, grads);
    for (std::size_t b = 0; b < params.size(); ++b)
        for (std::size_t i = 0; i < params[b].size(); ++i) params[b][i] -= learning_rate * grads[b][i];
}

// Bias-corrected Adam. State is sized lazily on the first step.
class Adam {
public:
    explicit Adam(double learning_rate = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
        : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

    void step(const ParamRefs& params, const ParamRefs& grads)
    {
        check_shapes(params, grads);
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.size(), 0.0);
                v_.emplace_back(p.size(), 0.0);
            }
        }
        if (m_.size() != params.size()) throw UsageError("adam: parameter layout changed between steps");
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t b = 0; b < params.size(); ++b) {
            for (std::size_t i = 0; i < params[b].size(); ++i) {
                const double g = grads[b][i];
                m_[b][i] = beta1_ * m_[b][i] + (1.0 - beta1_) * g;
                v_[b][i] = beta2_ * v_[b][i] + (1.0 - beta2_) * g * g;
                const double mhat = m_[b][i] / c1;
                const double vhat = v_[b][i] / c2;
                params[b][i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    std::size_t steps() const noexcept { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<Vector> m_, v_;
};

class Optimizer {
public:
    explicit Optimizer(const TrainConfig& c)
        : kind_(c.optimizer), lr_(c.learning_rate), adam_(c.learning_rate, c.beta1, c.beta2, c.epsilon) {}

    void step(const ParamRefs& params, const ParamRefs& grads)
    {
        if (kind_ == OptimizerKind::sgd)
            sgd_step(params, grads, lr_);
        else
            adam_.step(params, grads);
    }

private:
    OptimizerKind kind_;
    double lr_;
    Adam adam_;
};

// Scales grads in place so their global L2 norm is at most max_norm; returns the pre-clip norm.
inline double clip_global_norm(const ParamRefs& grads, double max_norm)
{
    double sq = 0.0;
    for (const auto& g : grads)
        for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (const auto& g : grads)
            for (double& v : g) v *= s;
    }
    return norm;
}

// --- gradient checking ----------------------------------------------------

// Central-difference check of `analytic` (flattened in ParamRefs order)
// against `loss()`, which must evaluate at the current parameter values.
// Returns max over coordinates of |a - n| / max(1, |a|, |n|).
inline double grad_check(const ParamRefs& params, std::span<const double> analytic,
                         const std::function<double()>& loss, double epsilon = 1e-5)
{
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) throw UsageError("grad_check: epsilon must lie in [1e-7, 1e-3]");
    if (analytic.size() != param_count(params)) throw UsageError("grad_check: gradient length mismatch");
    double worst = 0.0;
    std::size_t k = 0;
    for (const auto& block : params) {
        for (double& p : block) {
            const double saved = p;
            p = saved + epsilon;
            const double up = loss();
            p = saved - epsilon;
            const double down = loss();
            p = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("grad_check: non-finite loss");
            const double numeric = (up - down) / (2.0 * epsilon);
            const double a = analytic[k++];
            const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

// Convenience form for a plain function of a parameter vector.
inline double grad_check(const std::function<double(std::span<const double>)>& f, Vector params,
                         std::span<const double> analytic, double epsilon = 1e-5)
{
    ParamRefs refs{std::span<double>(params)};
    return grad_check(refs, analytic, [&] { return f(params); }, epsilon);
}

// --- standardisation ------------------------------------------------------

// Per-column z-scoring with statistics from the data it was fitted on.
// Zero-variance columns keep scale 1.
struct Standardizer {
    Vector mean;
    Vector scale;

    static Standardizer fit(const Matrix& x)
    {
        if (x.rows() == 0) throw DataError("standardizer: no rows");
        Standardizer s{Vector(x.cols(), 0.0), Vector(x.cols(), 0.0)};
        const double n = static_cast<double>(x.rows());
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) s.mean[c] += x(r, c);
        for (double& m : s.mean) m /= n;
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) {
                const double d = x(r, c) - s.mean[c];
                s.scale[c] += d * d;
            }
        for (double& v : s.scale) {
            v = std::sqrt(v / n);
            if (!(v > 1e-12)) v = 1.0;
        }
        return s;
    }

    static Standardizer fit(std::span<const double> column)
    {
        return fit(Matrix(column.size(), 1, Vector(column.begin(), column.end())));
    }

    std::size_t dims() const noexcept { return mean.size(); }

    Vector transform(std::span<const double> row) const
    {
        if (row.size() != mean.size())
            throw UsageError("standardizer: expected " + std::to_string(mean.size()) + " features, got " +
                             std::to_string(row.size()));
        Vector out(row.size());
        for (std::size_t i = 0; i < row.size(); ++i) out[i] = (row[i] - mean[i]) / scale[i];
        return out;
    }

    Matrix transform(const Matrix& x) const
    {
        Matrix out(x.rows(), x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const auto t = transform(x.row(r));
            std::copy(t.begin(), t.end(), out.row(r).begin());
        }
        return out;
    }

    double inverse(double z, std::size_t column = 0) const { return z * scale[column] + mean[column]; }
    double forward(double v, std::size_t column = 0) const { return (v - mean[column]) / scale[column]; }

    void save(CheckpointWriter& w, std::string_view name) const
    {
        w.tensor(std::string(name) + ".mean", mean);
        w.tensor(std::string(name) + ".scale", scale);
    }

    static Standardizer load(CheckpointReader& r, std::string_view name)
    {
        Standardizer s{r.vector(std::string(name) + ".mean"), r.vector(std::string(name) + ".scale")};
        if (s.mean.size() != s.scale.size()) throw DataError("checkpoint: standardizer shape mismatch");
        return s;
    }

    friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

// --- minibatch loop -------------------------------------------------------

struct TrainTrace {
    std::vector<double> epoch_loss; // sample-weighted mean loss per epoch
};

// Runs cfg.epochs passes of shuffled minibatches. `batch_grad(indices, grad)`
// must add the batch-mean gradient into `grad` (pre-zeroed) and return the
// batch-mean loss. Models supply params() and zeros_like().
template <class Model, class BatchGrad>
TrainTrace fit_minibatch(Model& model, std::size_t n, const TrainConfig& cfg, BatchGrad&& batch_grad)
{
    validate(cfg);
    if (n == 0) throw DataError("training set is empty");
    const std::size_t batch = std::min(cfg.batch_size, n);
    Optimizer opt(cfg);
    Rng rng(derive_seed(cfg.seed, 0xb47c));
    Model grad = model.zeros_like();
    TrainTrace trace;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = rng.permutation(n);
        double total = 0.0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t end = std::min(n, start + batch);
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            zero(grad.params());
            const double loss = batch_grad(idx, grad);
            if (!std::isfinite(loss))
                throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1));
            const auto gp = grad.params();
            for (const auto& g : gp)
                if (!all_finite(g))
                    throw NumericError("training diverged: non-finite gradient at epoch " + std::to_string(epoch + 1));
            if (cfg.clip_norm) clip_global_norm(gp, *cfg.clip_norm);
            opt.step(model.params(), gp);
            total += loss * static_cast<double>(idx.size());
        }
        trace.epoch_loss.push_back(total / static_cast<double>(n));
    }
    for (const auto& p : model.params())
        if (!all_finite(p)) throw NumericError("training diverged: non-finite parameters");
    return trace;
}

} // namespace scorecast
