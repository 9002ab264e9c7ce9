#pragma once

// Variational auto-encoder over standardized feature vectors. The encoder
// emits (mu, log sigma) per latent coordinate; training minimises
// reconstruction MSE + kl_weight * KL(N(mu, sigma) || N(0, 1)) through the
// reparameterisation z = mu + sigma * eps.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "error.hpp"
#include "nn.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace scorecast {

// KL(N(mu_i, sigma_i) || N(mu_j, sigma_j)), summed over coordinates.
inline double kl_divergence_general(std::span<const double> mu_i, std::span<const double> sigma_i,
                                    std::span<const double> mu_j, std::span<const double> sigma_j)
{
    const std::size_t n = mu_i.size();
    if (sigma_i.size() != n || mu_j.size() != n || sigma_j.size() != n)
        throw UsageError("kl_divergence: dimension mismatch");
    double kl = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (!(sigma_i[k] > 0.0) || !(sigma_j[k] > 0.0)) throw UsageError("kl_divergence: sigma must be positive");
        const double dm = mu_i[k] - mu_j[k];
        kl += std::log(sigma_j[k] / sigma_i[k]) + (sigma_i[k] * sigma_i[k] + dm * dm) / (2.0 * sigma_j[k] * sigma_j[k]) - 0.5;
    }
    return kl;
}

struct KlResult {
    double value = 0.0;
    Vector d_mu;
    Vector d_log_sigma;
};

// KL against the standard normal prior in the log-sigma parameterisation:
// 0.5 * sum(sigma^2 + mu^2 - 1 - 2 log sigma).
inline KlResult kl_divergence_standard(std::span<const double> mu, std::span<const double> log_sigma)
{
    if (mu.size() != log_sigma.size()) throw UsageError("kl_divergence_standard: dimension mismatch");
    KlResult r{0.0, Vector(mu.size()), Vector(mu.size())};
    for (std::size_t k = 0; k < mu.size(); ++k) {
        const double s2 = std::exp(2.0 * log_sigma[k]);
        r.value += 0.5 * (s2 + mu[k] * mu[k] - 1.0 - 2.0 * log_sigma[k]);
        r.d_mu[k] = mu[k];
        r.d_log_sigma[k] = s2 - 1.0;
    }
    return r;
}

struct VaeConfig {
    std::size_t latent_dim = 2;
    std::vector<std::size_t> hidden{16}; // tanh layers on both sides; empty = linear maps
    double kl_weight = 1.0;
};

struct VaeEncoding {
    Vector mu;
    Vector log_sigma;
};

class VaeModel {
public:
    VaeModel() = default;

    VaeModel(std::size_t input_dim, const VaeConfig& cfg) : latent_dim_(cfg.latent_dim), kl_weight_(cfg.kl_weight)
    {
        if (input_dim == 0 || cfg.latent_dim == 0) throw UsageError("vae: dimensions must be positive");
        if (!(cfg.kl_weight >= 0.0)) throw UsageError("vae: kl_weight must be non-negative");
        std::vector<std::size_t> enc{input_dim}, dec{cfg.latent_dim};
        std::vector<Activation> acts;
        for (auto h : cfg.hidden) {
            enc.push_back(h);
            dec.push_back(h);
            acts.push_back(Activation::tanh);
        }
        enc.push_back(2 * cfg.latent_dim);
        dec.push_back(input_dim);
        acts.push_back(Activation::identity);
        encoder_ = DenseNet(enc, acts);
        decoder_ = DenseNet(dec, acts);
    }

    void randomize(Rng& rng)
    {
        encoder_.randomize(rng);
        decoder_.randomize(rng);
    }

    std::size_t input_dim() const { return encoder_.input_size(); }
    std::size_t latent_dim() const noexcept { return latent_dim_; }
    double kl_weight() const noexcept { return kl_weight_; }

    DenseNet& encoder() noexcept { return encoder_; }
    const DenseNet& encoder() const noexcept { return encoder_; }
    DenseNet& decoder() noexcept { return decoder_; }
    const DenseNet& decoder() const noexcept { return decoder_; }

    VaeEncoding encode(std::span<const double> x) const
    {
        const Vector out = encoder_.forward(x);
        const auto k = static_cast<std::ptrdiff_t>(latent_dim_);
        return {Vector(out.begin(), out.begin() + k), Vector(out.begin() + k, out.end())};
    }

    Vector decode(std::span<const double> z) const { return decoder_.forward(z); }

    // Loss of one sample for a fixed noise draw; adds scale * gradient into grad.
    double accumulate(std::span<const double> x, std::span<const double> eps, double scale, VaeModel& grad) const
    {
        if (eps.size() != latent_dim_) throw UsageError("vae: noise draw has wrong dimension");
        DenseCache enc_cache, dec_cache;
        const Vector enc = encoder_.forward(x, &enc_cache);
        const std::size_t k = latent_dim_;
        const std::span<const double> mu(enc.data(), k), log_sigma(enc.data() + k, k);
        Vector z(k), sigma(k);
        for (std::size_t i = 0; i < k; ++i) {
            sigma[i] = std::exp(log_sigma[i]);
            z[i] = mu[i] + sigma[i] * eps[i];
        }
        const Vector recon = decoder_.forward(z, &dec_cache);
        const auto rec = mse_loss(recon, x);
        const auto kl = kl_divergence_standard(mu, log_sigma);

        Vector d_recon = rec.grad;
        for (double& g : d_recon) g *= scale;
        const Vector d_z = decoder_.backward(dec_cache, d_recon, grad.decoder_);
        Vector d_enc(2 * k);
        for (std::size_t i = 0; i < k; ++i) {
            d_enc[i] = d_z[i] + scale * kl_weight_ * kl.d_mu[i];
            d_enc[k + i] = d_z[i] * sigma[i] * eps[i] + scale * kl_weight_ * kl.d_log_sigma[i];
        }
        encoder_.backward(enc_cache, d_enc, grad.encoder_);
        return rec.value + kl_weight_ * kl.value;
    }

    VaeModel zeros_like() const
    {
        VaeModel z = *this;
        zero(z.params());
        return z;
    }

    ParamRefs params()
    {
        ParamRefs p = encoder_.params();
        for (auto s : decoder_.params()) p.push_back(s);
        return p;
    }

    void save(CheckpointWriter& w) const
    {
        w.kv("vae.latent_dim", latent_dim_);
        w.kv_double("vae.kl_weight", kl_weight_);
        encoder_.save(w, "vae.encoder");
        decoder_.save(w, "vae.decoder");
    }

    static VaeModel load(CheckpointReader& r)
    {
        VaeModel m;
        m.latent_dim_ = r.kv_size("vae.latent_dim");
        m.kl_weight_ = r.kv_double("vae.kl_weight");
        m.encoder_ = DenseNet::load(r, "vae.encoder");
        m.decoder_ = DenseNet::load(r, "vae.decoder");
        if (m.encoder_.output_size() != 2 * m.latent_dim_ || m.decoder_.input_size() != m.latent_dim_ ||
            m.decoder_.output_size() != m.encoder_.input_size())
            throw DataError("checkpoint: inconsistent VAE shapes");
        return m;
    }

private:
    DenseNet encoder_;
    DenseNet decoder_;
    std::size_t latent_dim_ = 0;
    double kl_weight_ = 1.0;
};

// Batch-mean VAE loss for fixed noise draws (one row of `eps` per row of `x`);
// adds the exact gradient into `grad` when given.
inline double vae_loss(const VaeModel& model, const Matrix& x, const Matrix& eps, VaeModel* grad = nullptr)
{
    if (x.rows() != eps.rows() || x.rows() == 0) throw UsageError("vae_loss: need one noise row per sample");
    const double scale = 1.0 / static_cast<double>(x.rows());
    VaeModel scratch;
    VaeModel& g = grad ? *grad : (scratch = model.zeros_like());
    double loss = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) loss += model.accumulate(x.row(r), eps.row(r), scale, g);
    return loss * scale;
}

struct FittedVae {
    VaeModel model;
    Standardizer inputs; // training-set statistics
    TrainTrace trace;
};

// Trains on the standardized rows of x. Noise draws come from a stream seeded by tc.seed.
inline FittedVae vae_train(const Matrix& x, const VaeConfig& vc = {}, const TrainConfig& tc = {})
{
    if (x.rows() == 0) throw DataError("vae_train: no training rows");
    FittedVae fit;
    fit.inputs = Standardizer::fit(x);
    const Matrix z = fit.inputs.transform(x);
    fit.model = VaeModel(x.cols(), vc);
    Rng init(derive_seed(tc.seed, 0x7ae1));
    fit.model.randomize(init);
    Rng noise(derive_seed(tc.seed, 0x7ae2));
    const std::size_t k = vc.latent_dim;
    Vector eps(k);
    fit.trace = fit_minibatch(fit.model, x.rows(), tc, [&](std::span<const std::size_t> idx, VaeModel& grad) {
        const double scale = 1.0 / static_cast<double>(idx.size());
        double loss = 0.0;
        for (auto i : idx) {
            for (double& e : eps) e = noise.normal();
            loss += fit.model.accumulate(z.row(i), eps, scale, grad);
        }
        return loss * scale;
    });
    return fit;
}

enum class LatentMode { mean, sample };

struct VaeLatent {
    Matrix mu;
    Matrix log_sigma;
    Matrix z;   // equals mu in mean mode
    Matrix eps; // recorded draws; zeros in mean mode
};

// Encodes raw rows (standardized with the training statistics).
inline VaeLatent extract_latent(const FittedVae& vae, const Matrix& x, LatentMode mode = LatentMode::mean,
                                std::uint64_t seed = 0)
{
    if (x.cols() != vae.model.input_dim())
        throw UsageError("extract_latent: expected " + std::to_string(vae.model.input_dim()) + " features, got " +
                         std::to_string(x.cols()));
    const std::size_t k = vae.model.latent_dim();
    VaeLatent out{Matrix(x.rows(), k), Matrix(x.rows(), k), Matrix(x.rows(), k), Matrix(x.rows(), k)};
    Rng rng(seed);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto enc = vae.model.encode(vae.inputs.transform(x.row(r)));
        for (std::size_t i = 0; i < k; ++i) {
            out.mu(r, i) = enc.mu[i];
            out.log_sigma(r, i) = enc.log_sigma[i];
            const double e = mode == LatentMode::sample ? rng.normal() : 0.0;
            out.eps(r, i) = e;
            out.z(r, i) = enc.mu[i] + std::exp(enc.log_sigma[i]) * e;
        }
    }
    return out;
}

// Mean reconstruction MSE of raw rows, decoding mu (no sampling), in standardized units.
inline double reconstruction_mse(const FittedVae& vae, const Matrix& x)
{
    double total = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto xs = vae.inputs.transform(x.row(r));
        const auto enc = vae.model.encode(xs);
        total += mse_loss(vae.model.decode(enc.mu), xs).value;
    }
    return total / static_cast<double>(x.rows());
}

} // namespace scorecast
