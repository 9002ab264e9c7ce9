#pragma once

// LSTM and GRU cells, backpropagation through time, and sequence regressors
// that read each assessment as one scalar timestep and regress the total
// from the final hidden state through a small dense head.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "checkpoint.hpp"
#include "core_data.hpp"
#include "error.hpp"
#include "nn.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace scorecast {

using Sequence = std::vector<Vector>; // one input vector per timestep

// --- LSTM -----------------------------------------------------------------

struct GateParams {
    Matrix weight; // hidden x (hidden + input), acting on [z_prev, x]
    Vector bias;   // hidden
};

struct LstmParams {
    GateParams input_gate;
    GateParams forget_gate;
    GateParams output_gate;
    GateParams candidate;

    LstmParams() = default;
    LstmParams(std::size_t input_size, std::size_t hidden_size)
    {
        for (GateParams* g : gates()) *g = {Matrix(hidden_size, hidden_size + input_size), Vector(hidden_size, 0.0)};
    }

    std::size_t hidden_size() const { return input_gate.weight.rows(); }
    std::size_t input_size() const { return input_gate.weight.cols() - hidden_size(); }

    std::array<GateParams*, 4> gates() { return {&input_gate, &forget_gate, &output_gate, &candidate}; }
    std::array<const GateParams*, 4> gates() const { return {&input_gate, &forget_gate, &output_gate, &candidate}; }
};

struct LstmState {
    Vector z; // hidden state
    Vector s; // cell state
};

struct LstmCache {
    Vector joined; // [z_prev, x]
    Vector s_prev;
    Vector i, f, o, s_tilde, s, tanh_s;
};

inline LstmState lstm_cell_forward(const LstmParams& p, const LstmState& prev, std::span<const double> x,
                                   LstmCache* cache = nullptr)
{
    const std::size_t h = p.hidden_size();
    if (prev.z.size() != h || prev.s.size() != h)
        throw UsageError("lstm: state size " + std::to_string(prev.z.size()) + " does not match hidden size " +
                         std::to_string(h));
    if (x.size() != p.input_size())
        throw UsageError("lstm: expected input of length " + std::to_string(p.input_size()) + ", got " +
                         std::to_string(x.size()));
    const Vector joined = concat(prev.z, x);
    auto gate = [&](const GateParams& g, bool use_tanh) {
        Vector a = matvec(g.weight, joined);
        for (std::size_t k = 0; k < h; ++k) a[k] = use_tanh ? std::tanh(a[k] + g.bias[k]) : sigmoid(a[k] + g.bias[k]);
        return a;
    };
    Vector i = gate(p.input_gate, false);
    Vector f = gate(p.forget_gate, false);
    Vector o = gate(p.output_gate, false);
    Vector s_tilde = gate(p.candidate, true);
    LstmState next{Vector(h), Vector(h)};
    Vector tanh_s(h);
    for (std::size_t k = 0; k < h; ++k) {
        next.s[k] = f[k] * prev.s[k] + i[k] * s_tilde[k];
        tanh_s[k] = std::tanh(next.s[k]);
        next.z[k] = o[k] * tanh_s[k];
    }
    require_finite(next.z, "lstm cell");
    require_finite(next.s, "lstm cell");
    if (cache) *cache = {joined, prev.s, std::move(i), std::move(f), std::move(o), std::move(s_tilde), next.s, std::move(tanh_s)};
    return next;
}

// Backward through one LSTM step. Adds parameter gradients to `grad`, and
// replaces d_z / d_s (gradients wrt this step's outputs) with the gradients
// wrt the previous step's state.
inline void lstm_cell_backward(const LstmParams& p, const LstmCache& c, Vector& d_z, Vector& d_s, LstmParams& grad)
{
    const std::size_t h = p.hidden_size();
    Vector dpi(h), dpf(h), dpo(h), dps(h), d_s_prev(h);
    for (std::size_t k = 0; k < h; ++k) {
        const double ds = d_s[k] + d_z[k] * c.o[k] * (1.0 - c.tanh_s[k] * c.tanh_s[k]);
        const double d_o = d_z[k] * c.tanh_s[k];
        dpo[k] = d_o * c.o[k] * (1.0 - c.o[k]);
        dpf[k] = ds * c.s_prev[k] * c.f[k] * (1.0 - c.f[k]);
        dpi[k] = ds * c.s_tilde[k] * c.i[k] * (1.0 - c.i[k]);
        dps[k] = ds * c.i[k] * (1.0 - c.s_tilde[k] * c.s_tilde[k]);
        d_s_prev[k] = ds * c.f[k];
    }
    Vector d_joined(c.joined.size(), 0.0);
    const std::array<const Vector*, 4> pre{&dpi, &dpf, &dpo, &dps};
    const auto pg = p.gates();
    const auto gg = grad.gates();
    for (std::size_t g = 0; g < 4; ++g) {
        outer_acc(gg[g]->weight, *pre[g], c.joined);
        add_to(gg[g]->bias, *pre[g]);
        matvec_transposed_acc(pg[g]->weight, *pre[g], d_joined);
    }
    d_z.assign(d_joined.begin(), d_joined.begin() + static_cast<std::ptrdiff_t>(h));
    d_s = std::move(d_s_prev);
}

// --- GRU ------------------------------------------------------------------

// Bias-free GRU: update gate, reset gate, candidate state, each with an
// input matrix (hidden x input) and a recurrent matrix (hidden x hidden).
struct GruParams {
    Matrix update_input, update_hidden;
    Matrix reset_input, reset_hidden;
    Matrix candidate_input, candidate_hidden;

    GruParams() = default;
    GruParams(std::size_t input_size, std::size_t hidden_size)
        : update_input(hidden_size, input_size), update_hidden(hidden_size, hidden_size),
          reset_input(hidden_size, input_size), reset_hidden(hidden_size, hidden_size),
          candidate_input(hidden_size, input_size), candidate_hidden(hidden_size, hidden_size)
    {}

    std::size_t hidden_size() const { return update_hidden.rows(); }
    std::size_t input_size() const { return update_input.cols(); }

    std::array<Matrix*, 6> mats()
    {
        return {&update_input, &update_hidden, &reset_input, &reset_hidden, &candidate_input, &candidate_hidden};
    }
    std::array<const Matrix*, 6> mats() const
    {
        return {&update_input, &update_hidden, &reset_input, &reset_hidden, &candidate_input, &candidate_hidden};
    }
};

struct GruCache {
    Vector x, z_prev;
    Vector update, reset, recurrent_cand, candidate; // recurrent_cand = candidate_hidden * z_prev
};

inline Vector gru_cell_forward(const GruParams& p, std::span<const double> z_prev, std::span<const double> x,
                               GruCache* cache = nullptr)
{
    const std::size_t h = p.hidden_size();
    if (z_prev.size() != h)
        throw UsageError("gru: state size " + std::to_string(z_prev.size()) + " does not match hidden size " +
                         std::to_string(h));
    if (x.size() != p.input_size())
        throw UsageError("gru: expected input of length " + std::to_string(p.input_size()) + ", got " +
                         std::to_string(x.size()));
    Vector update = matvec(p.update_input, x);
    Vector reset = matvec(p.reset_input, x);
    Vector cand = matvec(p.candidate_input, x);
    const Vector uh = matvec(p.update_hidden, z_prev);
    const Vector rh = matvec(p.reset_hidden, z_prev);
    Vector ch = matvec(p.candidate_hidden, z_prev);
    Vector z(h);
    for (std::size_t k = 0; k < h; ++k) {
        update[k] = sigmoid(update[k] + uh[k]);
        reset[k] = sigmoid(reset[k] + rh[k]);
        cand[k] = std::tanh(cand[k] + reset[k] * ch[k]);
        z[k] = update[k] * z_prev[k] + (1.0 - update[k]) * cand[k];
    }
    require_finite(z, "gru cell");
    if (cache)
        *cache = {Vector(x.begin(), x.end()), Vector(z_prev.begin(), z_prev.end()), std::move(update), std::move(reset),
                  std::move(ch), std::move(cand)};
    return z;
}

// Replaces d_z (gradient wrt this step's output) with the gradient wrt z_prev.
inline void gru_cell_backward(const GruParams& p, const GruCache& c, Vector& d_z, GruParams& grad)
{
    const std::size_t h = p.hidden_size();
    Vector d_prev(h, 0.0), dpu(h), dpr(h), dpc(h), d_rec(h);
    for (std::size_t k = 0; k < h; ++k) {
        const double dz = d_z[k];
        d_prev[k] = dz * c.update[k];
        const double d_update = dz * (c.z_prev[k] - c.candidate[k]);
        const double d_cand = dz * (1.0 - c.update[k]);
        dpc[k] = d_cand * (1.0 - c.candidate[k] * c.candidate[k]);
        d_rec[k] = dpc[k] * c.reset[k];
        const double d_reset = dpc[k] * c.recurrent_cand[k];
        dpu[k] = d_update * c.update[k] * (1.0 - c.update[k]);
        dpr[k] = d_reset * c.reset[k] * (1.0 - c.reset[k]);
    }
    outer_acc(grad.update_input, dpu, c.x);
    outer_acc(grad.update_hidden, dpu, c.z_prev);
    outer_acc(grad.reset_input, dpr, c.x);
    outer_acc(grad.reset_hidden, dpr, c.z_prev);
    outer_acc(grad.candidate_input, dpc, c.x);
    outer_acc(grad.candidate_hidden, d_rec, c.z_prev);
    matvec_transposed_acc(p.update_hidden, dpu, d_prev);
    matvec_transposed_acc(p.reset_hidden, dpr, d_prev);
    matvec_transposed_acc(p.candidate_hidden, d_rec, d_prev);
    d_z = std::move(d_prev);
}

// --- sequence regressor ---------------------------------------------------

enum class CellKind { lstm, gru };

constexpr std::string_view cell_name(CellKind k) { return k == CellKind::lstm ? "lstm" : "gru"; }

inline CellKind parse_cell(std::string_view s)
{
    if (s == "lstm") return CellKind::lstm;
    if (s == "gru") return CellKind::gru;
    throw DataError("unknown recurrent cell '" + std::string(s) + "'");
}

// One recurrent layer (initial state zero) feeding a dense head on the final hidden state.
class RecurrentNet {
public:
    RecurrentNet() = default;
    RecurrentNet(CellKind kind, std::size_t input_size, std::size_t hidden_size, std::vector<std::size_t> head_hidden = {8})
        : kind_(kind)
    {
        if (hidden_size == 0 || input_size == 0) throw UsageError("recurrent: sizes must be positive");
        if (kind == CellKind::lstm)
            lstm_ = LstmParams(input_size, hidden_size);
        else
            gru_ = GruParams(input_size, hidden_size);
        std::vector<std::size_t> sizes{hidden_size};
        std::vector<Activation> acts;
        for (auto w : head_hidden) {
            sizes.push_back(w);
            acts.push_back(Activation::tanh);
        }
        sizes.push_back(1);
        acts.push_back(Activation::identity);
        head_ = DenseNet(sizes, acts);
    }

    // Uniform +-1/sqrt(fan_in) for every weight and bias.
    void randomize(Rng& rng)
    {
        if (kind_ == CellKind::lstm) {
            for (GateParams* g : lstm_.gates()) {
                init_uniform_fan_in(g->weight, g->weight.cols(), rng);
                const double bound = 1.0 / std::sqrt(static_cast<double>(g->weight.cols()));
                for (double& b : g->bias) b = rng.uniform(-bound, bound);
            }
        } else {
            for (Matrix* m : gru_.mats()) init_uniform_fan_in(*m, m->cols(), rng);
        }
        head_.randomize(rng);
    }

    CellKind kind() const noexcept { return kind_; }
    std::size_t hidden_size() const { return kind_ == CellKind::lstm ? lstm_.hidden_size() : gru_.hidden_size(); }
    std::size_t input_size() const { return kind_ == CellKind::lstm ? lstm_.input_size() : gru_.input_size(); }

    LstmParams& lstm() noexcept { return lstm_; }
    const LstmParams& lstm() const noexcept { return lstm_; }
    GruParams& gru() noexcept { return gru_; }
    const GruParams& gru() const noexcept { return gru_; }
    DenseNet& head() noexcept { return head_; }
    const DenseNet& head() const noexcept { return head_; }

    Vector final_hidden(const Sequence& seq) const
    {
        if (seq.empty()) throw UsageError("recurrent: empty sequence");
        const std::size_t h = hidden_size();
        if (kind_ == CellKind::lstm) {
            LstmState st{Vector(h, 0.0), Vector(h, 0.0)};
            for (const auto& x : seq) st = lstm_cell_forward(lstm_, st, x);
            return st.z;
        }
        Vector z(h, 0.0);
        for (const auto& x : seq) z = gru_cell_forward(gru_, z, x);
        return z;
    }

    double predict(const Sequence& seq) const { return head_.forward(final_hidden(seq))[0]; }

    // Squared error of one sample; adds scale * d(error)/d(params) into grad.
    double accumulate(const Sequence& seq, double target, double scale, RecurrentNet& grad) const
    {
        if (seq.empty()) throw UsageError("recurrent: empty sequence");
        const std::size_t h = hidden_size();
        Vector z;
        std::vector<LstmCache> lstm_caches;
        std::vector<GruCache> gru_caches;
        if (kind_ == CellKind::lstm) {
            LstmState st{Vector(h, 0.0), Vector(h, 0.0)};
            lstm_caches.resize(seq.size());
            for (std::size_t t = 0; t < seq.size(); ++t) st = lstm_cell_forward(lstm_, st, seq[t], &lstm_caches[t]);
            z = st.z;
        } else {
            z.assign(h, 0.0);
            gru_caches.resize(seq.size());
            for (std::size_t t = 0; t < seq.size(); ++t) z = gru_cell_forward(gru_, z, seq[t], &gru_caches[t]);
        }
        DenseCache head_cache;
        const double pred = head_.forward(z, &head_cache)[0];
        const double err = pred - target;
        const Vector d_out{scale * 2.0 * err};
        Vector d_z = head_.backward(head_cache, d_out, grad.head_);
        if (kind_ == CellKind::lstm) {
            Vector d_s(h, 0.0);
            for (std::size_t t = seq.size(); t-- > 0;) lstm_cell_backward(lstm_, lstm_caches[t], d_z, d_s, grad.lstm_);
        } else {
            for (std::size_t t = seq.size(); t-- > 0;) gru_cell_backward(gru_, gru_caches[t], d_z, grad.gru_);
        }
        return err * err;
    }

    RecurrentNet zeros_like() const
    {
        RecurrentNet z = *this;
        zero(z.params());
        return z;
    }

    ParamRefs params()
    {
        ParamRefs p;
        if (kind_ == CellKind::lstm) {
            for (GateParams* g : lstm_.gates()) {
                p.push_back(g->weight.flat());
                p.push_back(std::span<double>(g->bias));
            }
        } else {
            for (Matrix* m : gru_.mats()) p.push_back(m->flat());
        }
        for (auto s : head_.params()) p.push_back(s);
        return p;
    }

    void save(CheckpointWriter& w) const
    {
        w.kv("recurrent.cell", cell_name(kind_));
        if (kind_ == CellKind::lstm) {
            const char* names[] = {"input_gate", "forget_gate", "output_gate", "candidate"};
            const auto gs = lstm_.gates();
            for (std::size_t g = 0; g < 4; ++g) {
                w.tensor(std::string("lstm.") + names[g] + ".weight", gs[g]->weight);
                w.tensor(std::string("lstm.") + names[g] + ".bias", gs[g]->bias);
            }
        } else {
            const char* names[] = {"update_input", "update_hidden", "reset_input", "reset_hidden", "candidate_input", "candidate_hidden"};
            const auto ms = gru_.mats();
            for (std::size_t m = 0; m < 6; ++m) w.tensor(std::string("gru.") + names[m], *ms[m]);
        }
        head_.save(w, "head");
    }

    static RecurrentNet load(CheckpointReader& r)
    {
        RecurrentNet net;
        net.kind_ = parse_cell(r.kv("recurrent.cell"));
        if (net.kind_ == CellKind::lstm) {
            const char* names[] = {"input_gate", "forget_gate", "output_gate", "candidate"};
            const auto gs = net.lstm_.gates();
            for (std::size_t g = 0; g < 4; ++g) {
                gs[g]->weight = r.tensor(std::string("lstm.") + names[g] + ".weight");
                gs[g]->bias = r.vector(std::string("lstm.") + names[g] + ".bias");
            }
        } else {
            const char* names[] = {"update_input", "update_hidden", "reset_input", "reset_hidden", "candidate_input", "candidate_hidden"};
            const auto ms = net.gru_.mats();
            for (std::size_t m = 0; m < 6; ++m) *ms[m] = r.tensor(std::string("gru.") + names[m]);
        }
        net.head_ = DenseNet::load(r, "head");
        if (net.head_.input_size() != net.hidden_size()) throw DataError("checkpoint: head does not match hidden size");
        return net;
    }

private:
    CellKind kind_ = CellKind::gru;
    LstmParams lstm_;
    GruParams gru_;
    DenseNet head_;
};

// Mean squared error over the batch; adds its exact gradient into `grad`.
inline double bptt_gradients(const RecurrentNet& model, std::span<const Sequence> sequences,
                             std::span<const double> targets, RecurrentNet& grad)
{
    if (sequences.size() != targets.size() || sequences.empty())
        throw UsageError("bptt: need equal, non-zero numbers of sequences and targets");
    const double scale = 1.0 / static_cast<double>(sequences.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < sequences.size(); ++i) loss += model.accumulate(sequences[i], targets[i], scale, grad);
    for (const auto& g : grad.params())
        if (!all_finite(g)) throw NumericError("bptt: non-finite gradient");
    return loss * scale;
}

// Each feature of a row becomes one scalar timestep, in view order.
inline Sequence encode_sequence(std::span<const double> row)
{
    Sequence seq;
    for (double v : row) seq.push_back(Vector{v});
    return seq;
}

struct RecurrentConfig {
    std::size_t hidden_size = 16;
    std::vector<std::size_t> head_hidden{8};
};

inline TrainConfig default_recurrent_train_config()
{
    TrainConfig c;
    c.clip_norm = 5.0;
    return c;
}

// Trained sequence regressor together with the training-set scalings it needs.
struct FittedRecurrent {
    RecurrentNet net;
    Standardizer inputs;
    Standardizer target;
    TrainTrace trace;

    double predict(std::span<const double> row) const
    {
        return target.inverse(net.predict(encode_sequence(inputs.transform(row))));
    }

    Vector predict(const Matrix& x) const
    {
        Vector out(x.rows());
        for (std::size_t r = 0; r < x.rows(); ++r) out[r] = predict(x.row(r));
        return out;
    }
};

// Fits on standardized inputs and standardized targets (training rows only);
// predictions are mapped back to points.
inline FittedRecurrent train_recurrent(const Matrix& x, std::span<const double> y, CellKind kind,
                                       const RecurrentConfig& rc = {}, const TrainConfig& tc = default_recurrent_train_config())
{
    if (x.rows() == 0 || x.rows() != y.size()) throw DataError("train_recurrent: empty or mismatched training data");
    FittedRecurrent fit;
    fit.inputs = Standardizer::fit(x);
    fit.target = Standardizer::fit(y);
    std::vector<Sequence> seqs;
    Vector zy(y.size());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        seqs.push_back(encode_sequence(fit.inputs.transform(x.row(r))));
        zy[r] = fit.target.forward(y[r]);
    }
    fit.net = RecurrentNet(kind, 1, rc.hidden_size, rc.head_hidden);
    Rng init(derive_seed(tc.seed, 0x1417));
    fit.net.randomize(init);
    fit.trace = fit_minibatch(fit.net, x.rows(), tc, [&](std::span<const std::size_t> idx, RecurrentNet& grad) {
        const double scale = 1.0 / static_cast<double>(idx.size());
        double loss = 0.0;
        for (auto i : idx) loss += fit.net.accumulate(seqs[i], zy[i], scale, grad);
        return loss * scale;
    });
    return fit;
}

inline FittedRecurrent train_recurrent(const DatasetView& view, CellKind kind, const RecurrentConfig& rc = {},
                                       const TrainConfig& tc = default_recurrent_train_config())
{
    return train_recurrent(view.matrix, view.targets, kind, rc, tc);
}

} // namespace scorecast
