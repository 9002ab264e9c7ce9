#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include <scorecast/checkpoint.hpp>
#include <scorecast/nn.hpp>

#include "test_util.hpp"

using namespace scorecast;
using scorecast::testing::random_matrix;
using scorecast::testing::random_vector;

TEST(Activations, KnownValues)
{
    EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
    EXPECT_DOUBLE_EQ(std::tanh(0.0), 0.0);
    EXPECT_NEAR(sigmoid(std::log(3.0)), 0.75, 1e-15);
}

TEST(Activations, StableAtExtremes)
{
    for (double x : {-700.0, -40.0, 40.0, 700.0}) {
        const double s = sigmoid(x);
        EXPECT_TRUE(std::isfinite(s));
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);
    }
    EXPECT_GT(sigmoid(-40.0), 0.0);
    EXPECT_LT(sigmoid(30.0), 1.0);
    EXPECT_NEAR(sigmoid(-3.0) + sigmoid(3.0), 1.0, 1e-15);
}

TEST(Matrix, BasicsAndErrors)
{
    Matrix m{{1, 2}, {3, 4}};
    EXPECT_EQ(m.rows(), 2u);
    EXPECT_DOUBLE_EQ(m(1, 0), 3.0);
    EXPECT_EQ(matvec(m, Vector{1, 1}), (Vector{3, 7}));
    EXPECT_THROW(matvec(m, Vector{1, 1, 1}), UsageError);
    EXPECT_THROW(Matrix(2, 2, Vector{1, 2, 3}), UsageError);
    EXPECT_THROW(require_finite(Vector{1, NAN}, "x"), NumericError);
}

TEST(Matrix, CholeskySolve)
{
    Matrix a{{4, 2}, {2, 3}};
    Vector b{2, 1};
    ASSERT_TRUE(cholesky_solve(a, b));
    EXPECT_NEAR(4 * b[0] + 2 * b[1], 2.0, 1e-12);
    EXPECT_NEAR(2 * b[0] + 3 * b[1], 1.0, 1e-12);
    Vector c{1, 1};
    EXPECT_FALSE(cholesky_solve(Matrix{{1, 1}, {1, 1}}, c));
}

TEST(DenseNet, ZeroWeightsGiveZero)
{
    DenseNet net({3, 4, 2}, {Activation::identity, Activation::identity});
    EXPECT_EQ(net.forward(Vector{1, -2, 3}), (Vector{0, 0}));
}

TEST(DenseNet, IdentityPlusBias)
{
    DenseNet net({1, 1}, {Activation::identity});
    net.layers()[0].weight(0, 0) = 1.0;
    net.layers()[0].bias[0] = 2.5;
    EXPECT_DOUBLE_EQ(net.forward(Vector{4.0})[0], 6.5);
}

TEST(DenseNet, MatchesHandComposedChain)
{
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        DenseNet net({3, 4, 1}, {Activation::tanh, Activation::identity});
        net.randomize(rng);
        const auto x = random_vector(3, rng, -2, 2);
        const auto& l0 = net.layers()[0];
        const auto& l1 = net.layers()[1];
        double out = l1.bias[0];
        for (std::size_t j = 0; j < 4; ++j) {
            double h = l0.bias[j];
            for (std::size_t i = 0; i < 3; ++i) h += l0.weight(j, i) * x[i];
            out += l1.weight(0, j) * std::tanh(h);
        }
        EXPECT_NEAR(net.forward(x)[0], out, 1e-12);
    }
}

TEST(DenseNet, DimensionMismatch)
{
    DenseNet net({3, 1}, {Activation::relu});
    EXPECT_THROW(net.forward(Vector{1, 2}), UsageError);
    EXPECT_THROW(DenseNet({3, 1}, {Activation::relu, Activation::relu}), UsageError);
}

TEST(DenseNet, NonFiniteActivationTrips)
{
    DenseNet net({1, 1}, {Activation::identity});
    net.layers()[0].weight(0, 0) = 1e308;
    EXPECT_THROW(net.forward(Vector{1e10}), NumericError);
}

TEST(DenseNet, UniformFanInInit)
{
    DenseNet net({16, 4}, {Activation::identity});
    Rng rng(3);
    net.randomize(rng);
    for (double w : net.layers()[0].weight.flat()) EXPECT_LE(std::abs(w), 0.25);
}

TEST(MseLoss, Cases)
{
    auto r = mse_loss(Vector{1, 2}, Vector{1, 2});
    EXPECT_DOUBLE_EQ(r.value, 0.0);
    EXPECT_EQ(r.grad, (Vector{0, 0}));
    r = mse_loss(Vector{3}, Vector{1});
    EXPECT_DOUBLE_EQ(r.value, 4.0);
    EXPECT_DOUBLE_EQ(r.grad[0], 4.0);
    EXPECT_DOUBLE_EQ(mse_loss(Vector{1, 2}, Vector{0, 0}).value, 2.5);
    EXPECT_THROW(mse_loss(Vector{1}, Vector{1, 2}), UsageError);
}

TEST(Optimizers, SgdStep)
{
    Vector p{1.0}, g{1.0};
    sgd_step({std::span<double>(p)}, {std::span<double>(g)}, 0.1);
    EXPECT_DOUBLE_EQ(p[0], 0.9);
    Vector z{0.0};
    sgd_step({std::span<double>(p)}, {std::span<double>(z)}, 0.1);
    EXPECT_DOUBLE_EQ(p[0], 0.9);
}

TEST(Optimizers, AdamFirstStepIsLearningRate)
{
    for (double c : {-5.0, -0.01, 0.3, 42.0}) {
        Vector p{1.0}, g{c};
        Adam adam(0.01);
        adam.step({std::span<double>(p)}, {std::span<double>(g)});
        EXPECT_NEAR(std::abs(p[0] - 1.0), 0.01, 1e-6);
    }
    Vector p{1.0}, g{0.0};
    Adam adam;
    adam.step({std::span<double>(p)}, {std::span<double>(g)});
    EXPECT_DOUBLE_EQ(p[0], 1.0);
}

TEST(Optimizers, ShapeAndFiniteChecks)
{
    Vector p{1.0, 2.0}, g{1.0}, bad{NAN, 0.0};
    EXPECT_THROW(sgd_step({std::span<double>(p)}, {std::span<double>(g)}, 0.1), UsageError);
    EXPECT_THROW(sgd_step({std::span<double>(p)}, {std::span<double>(bad)}, 0.1), NumericError);
    Adam adam;
    EXPECT_THROW(adam.step({std::span<double>(p)}, {std::span<double>(bad)}), NumericError);
}

TEST(Optimizers, ClipGlobalNorm)
{
    Vector a{3.0}, b{4.0};
    const ParamRefs g{std::span<double>(a), std::span<double>(b)};
    EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
    EXPECT_NEAR(a[0], 0.6, 1e-15);
    EXPECT_NEAR(b[0], 0.8, 1e-15);
}

TEST(TrainConfig, Validation)
{
    TrainConfig c;
    EXPECT_NO_THROW(validate(c));
    c.learning_rate = 0;
    EXPECT_THROW(validate(c), UsageError);
    c = {};
    c.epochs = 0;
    EXPECT_THROW(validate(c), UsageError);
    c = {};
    c.batch_size = 0;
    EXPECT_THROW(validate(c), UsageError);
}

TEST(GradCheck, Polynomial)
{
    const Vector p{3.0}, analytic{6.0};
    EXPECT_LT(grad_check([](std::span<const double> q) { return q[0] * q[0]; }, p, analytic), 1e-6);
}

TEST(GradCheck, Linear)
{
    const Vector p{1.0, -2.0, 0.5}, analytic{2.0, -3.0, 7.0};
    auto f = [](std::span<const double> q) { return 2 * q[0] - 3 * q[1] + 7 * q[2] + 1; };
    EXPECT_LT(grad_check(f, p, analytic), 1e-9);
    EXPECT_GT(grad_check(f, p, Vector{2.0, -3.0, 6.0}), 0.1);
    EXPECT_THROW(grad_check(f, p, analytic, 1e-2), UsageError);
}

namespace {

double net_loss(const DenseNet& net, const Matrix& x, const Matrix& y, DenseNet* grad)
{
    const double scale = 1.0 / static_cast<double>(x.rows());
    double loss = 0.0;
    DenseCache cache;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto out = net.forward(x.row(r), &cache);
        const auto l = mse_loss(out, y.row(r));
        loss += l.value * scale;
        if (grad) {
            Vector d = l.grad;
            for (double& v : d) v *= scale;
            net.backward(cache, d, *grad);
        }
    }
    return loss;
}

} // namespace

TEST(GradCheck, TwoLayerNetUnderMse)
{
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        for (auto act : {Activation::tanh, Activation::sigmoid, Activation::relu}) {
            DenseNet net({3, 5, 2}, {act, Activation::identity});
            net.randomize(rng);
            const auto x = random_matrix(6, 3, rng, -2, 2);
            const auto y = random_matrix(6, 2, rng, -1, 1);
            DenseNet grad = net.zeros_like();
            net_loss(net, x, y, &grad);
            const double d = grad_check(net.params(), flatten(grad.params()), [&] { return net_loss(net, x, y, nullptr); });
            EXPECT_LT(d, 1e-4) << "seed " << seed << " " << activation_name(act);
        }
    }
}

TEST(FitMinibatch, ZeroLearningRateLeavesParameters)
{
    Rng rng(4);
    DenseNet net({2, 3, 1}, {Activation::tanh, Activation::identity});
    net.randomize(rng);
    const DenseNet before = net;
    const auto x = random_matrix(10, 2, rng);
    const auto y = random_matrix(10, 1, rng);
    TrainConfig cfg;
    cfg.learning_rate = 1e-300;
    cfg.optimizer = OptimizerKind::sgd;
    cfg.epochs = 3;
    fit_minibatch(net, 10, cfg, [&](std::span<const std::size_t> idx, DenseNet& g) {
        Matrix bx(idx.size(), 2), by(idx.size(), 1);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            bx(i, 0) = x(idx[i], 0);
            bx(i, 1) = x(idx[i], 1);
            by(i, 0) = y(idx[i], 0);
        }
        return net_loss(net, bx, by, &g);
    });
    EXPECT_EQ(flatten(net.params()), flatten(const_cast<DenseNet&>(before).params()));
}

TEST(FitMinibatch, SgdDescendsConvexQuadratic)
{
    struct Quad {
        Vector w{3.0, -2.0};
        ParamRefs params() { return {std::span<double>(w)}; }
        Quad zeros_like() const { return Quad{{0.0, 0.0}}; }
    } q;
    auto loss = [&] { return q.w[0] * q.w[0] + 4 * q.w[1] * q.w[1]; };
    const double before = loss();
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::sgd;
    cfg.learning_rate = 0.01;
    cfg.epochs = 1;
    cfg.batch_size = 1;
    fit_minibatch(q, 1, cfg, [&](std::span<const std::size_t>, Quad& g) {
        g.w = {2 * q.w[0], 8 * q.w[1]};
        return loss();
    });
    EXPECT_LT(loss(), before);
}

TEST(FitMinibatch, DivergenceAborts)
{
    struct Blow {
        Vector w{1.0};
        ParamRefs params() { return {std::span<double>(w)}; }
        Blow zeros_like() const { return Blow{{0.0}}; }
    } b;
    TrainConfig cfg;
    cfg.epochs = 2;
    EXPECT_THROW(fit_minibatch(b, 4, cfg, [](std::span<const std::size_t>, Blow&) { return NAN; }), NumericError);
}

TEST(FitMinibatch, DeterministicGivenSeed)
{
    auto run = [](std::uint64_t seed) {
        Rng rng(8);
        DenseNet net({2, 4, 1}, {Activation::tanh, Activation::identity});
        net.randomize(rng);
        const auto x = random_matrix(40, 2, rng);
        Matrix y(40, 1);
        for (std::size_t i = 0; i < 40; ++i) y(i, 0) = x(i, 0) - 0.5 * x(i, 1);
        TrainConfig cfg;
        cfg.seed = seed;
        cfg.epochs = 20;
        cfg.batch_size = 8;
        fit_minibatch(net, 40, cfg, [&](std::span<const std::size_t> idx, DenseNet& g) {
            double l = 0.0;
            DenseCache c;
            for (auto i : idx) {
                const auto r = mse_loss(net.forward(x.row(i), &c), y.row(i));
                Vector d{r.grad[0] / static_cast<double>(idx.size())};
                net.backward(c, d, g);
                l += r.value / static_cast<double>(idx.size());
            }
            return l;
        });
        return flatten(net.params());
    };
    EXPECT_EQ(run(1), run(1));
    EXPECT_NE(run(1), run(2));
}

TEST(Standardizer, FitTransformInverse)
{
    Matrix x{{1, 10}, {3, 10}, {5, 10}};
    const auto s = Standardizer::fit(x);
    EXPECT_DOUBLE_EQ(s.mean[0], 3.0);
    EXPECT_NEAR(s.scale[0], std::sqrt(8.0 / 3.0), 1e-15);
    EXPECT_DOUBLE_EQ(s.scale[1], 1.0);
    const auto z = s.transform(x);
    EXPECT_NEAR(z(0, 0) + z(2, 0), 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(s.inverse(s.forward(4.2)), 4.2);
    EXPECT_THROW(s.transform(Vector{1.0}), UsageError);
}

TEST(Checkpoint, DenseNetRoundTripIsExact)
{
    Rng rng(12);
    DenseNet net({3, 7, 2}, {Activation::relu, Activation::sigmoid});
    net.randomize(rng);
    const auto s = Standardizer::fit(random_matrix(9, 3, rng));
    std::stringstream io;
    CheckpointWriter w(io);
    w.kv_double("pi", M_PI);
    net.save(w, "net");
    s.save(w, "std");
    w.finish();
    CheckpointReader r(io);
    EXPECT_EQ(r.kv_double("pi"), M_PI);
    auto back = DenseNet::load(r, "net");
    EXPECT_EQ(Standardizer::load(r, "std"), s);
    r.finish();
    EXPECT_EQ(flatten(back.params()), flatten(net.params()));
    EXPECT_EQ(back.layers()[1].activation, Activation::sigmoid);
}

TEST(Checkpoint, RejectsWrongKeyOrMagic)
{
    std::stringstream io;
    CheckpointWriter w(io);
    w.kv("a", "1");
    w.finish();
    CheckpointReader r(io);
    EXPECT_THROW(r.kv("b"), DataError);
    std::istringstream junk("not a checkpoint\n");
    EXPECT_THROW({ CheckpointReader bad(junk); }, DataError);
}

TEST(Checkpoint, HexRoundTripsSpecialValues)
{
    for (double v : {0.0, -0.0, 1e-310, 1.0 / 3.0, -123456.789, 1e300})
        EXPECT_EQ(CheckpointReader::parse_hex(CheckpointWriter::hex(v)), v);
}

TEST(Rng, PortableAndDeterministic)
{
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
    Rng u(1);
    for (int i = 0; i < 1000; ++i) {
        const double x = u.uniform();
        EXPECT_GE(x, 0.0);
        EXPECT_LT(x, 1.0);
        EXPECT_LT(u.below(7), 7u);
    }
    auto p = Rng(3).permutation(50);
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(p[i], i);
    EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
    Rng mt(5489);
    EXPECT_EQ(mt.next_u64(), 14514284786278117030ull);
}

TEST(Rng, NormalMoments)
{
    Rng rng(77);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.01);
}
