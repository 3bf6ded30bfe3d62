#include "bcpnn/probe.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <random>

using namespace bcpnn;

namespace {

struct Toy {
    Eigen::MatrixXd x;
    std::vector<int> labels;
};

// Class c lights feature c (plus small noise on the others), for classes 0..9.
Toy separable(int per_class, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 0.2);
    Toy t{Eigen::MatrixXd(10 * per_class, 12), {}};
    for (int k = 0; k < 10 * per_class; ++k) {
        const int c = k % 10;
        for (Eigen::Index f = 0; f < 12; ++f) t.x(k, f) = u(rng);
        t.x(k, c) = 1.0;
        t.labels.push_back(c);
    }
    return t;
}

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST(Probe, LearnsSeparableClasses) {
    const auto t = separable(20, 1);
    ProbeConfig cfg;
    cfg.passes = 30;
    cfg.step = 0.1;
    const auto probes = train_probes(t.x, t.labels, cfg);
    ASSERT_EQ(probes.size(), 5u);
    const auto test = separable(10, 2);
    for (const auto& p : probes) EXPECT_EQ(accuracy(p, test.x, test.labels), 1.0);
    EXPECT_EQ(probes[0].seed, 7u);
    EXPECT_EQ(probes[4].seed, 11u);
}

TEST(Probe, SingleStepMatchesHandComputedSgd) {
    // Two samples, one pass: replay the same shuffle and apply the logistic gradient by hand.
    Eigen::MatrixXd x(2, 3);
    x << 1.0, 0.5, 0.0, 0.0, 2.0, 1.0;
    const std::vector<int> labels{3, 8};
    ProbeConfig cfg;
    cfg.passes = 1;
    cfg.step = 0.5;
    const auto p = train_probe_trial(sparsify(x, 0.0), labels, cfg, 99);

    std::vector<std::size_t> order{0, 1};
    std::mt19937_64 rng(99);
    std::shuffle(order.begin(), order.end(), rng);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(10, 3);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(10);
    for (auto k : order) {
        for (int c = 0; c < 10; ++c) {
            double z = b(c);
            for (int f = 0; f < 3; ++f) z += w(c, f) * x(static_cast<Eigen::Index>(k), f);
            const double g = sig(z) - (labels[k] == c ? 1.0 : 0.0);
            for (int f = 0; f < 3; ++f) w(c, f) -= cfg.step * g * x(static_cast<Eigen::Index>(k), f);
            b(c) -= cfg.step * g;
        }
    }
    EXPECT_LE((p.weights - w).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LE((p.bias - b).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Probe, DeterministicAndSeedDependent) {
    const auto t = separable(5, 3);
    ProbeConfig cfg;
    cfg.passes = 3;
    const auto a = train_probe_trial(sparsify(t.x), t.labels, cfg, 1);
    const auto b = train_probe_trial(sparsify(t.x), t.labels, cfg, 1);
    const auto c = train_probe_trial(sparsify(t.x), t.labels, cfg, 2);
    EXPECT_EQ(a.weights, b.weights);
    EXPECT_NE(a.weights, c.weights);
}

TEST(Probe, SparseAndDenseAgreeWhenNothingIsDropped) {
    const auto t = separable(5, 4);
    ProbeConfig cfg;
    cfg.trials = 2;
    cfg.passes = 2;
    const auto dense = train_probes(t.x, t.labels, cfg);
    const auto sparse = train_probes(sparsify(t.x, 0.0), t.labels, cfg);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_LE((dense[k].weights - sparse[k].weights).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Probe, SparsifyDropsSmallEntries) {
    Eigen::MatrixXd x(2, 3);
    x << 1e-7, 0.5, 0.0, 2e-6, -3.0, 1e-6;
    const auto s = sparsify(x);
    EXPECT_EQ(s.nonZeros(), 3);
    EXPECT_EQ(s.coeff(1, 1), -3.0);
    EXPECT_EQ(s.coeff(0, 0), 0.0);
}

TEST(Probe, RejectsBadInputs) {
    const auto t = separable(2, 5);
    ProbeConfig cfg;
    EXPECT_THROW(train_probes(t.x, std::vector<int>(20, 4), cfg), parameter_error);
    auto bad = t.labels;
    bad[0] = 10;
    EXPECT_THROW(train_probes(t.x, bad, cfg), parameter_error);
    EXPECT_THROW(train_probes(t.x, std::vector<int>{0, 1}, cfg), dimension_error);
    cfg.passes = 0;
    EXPECT_THROW(train_probes(t.x, t.labels, cfg), parameter_error);
    const auto p = train_probe_trial(sparsify(t.x), t.labels, ProbeConfig{}, 1);
    EXPECT_THROW(accuracy(p, Eigen::MatrixXd::Zero(2, 5), {0, 1}), dimension_error);
    EXPECT_EQ(p.predict(t.x.row(3)), p.predict_all(t.x)[3]);
}

TEST(Probe, TwoPointsFollowThePerceptronBisector) {
    // Two labelled points; the closed-form perceptron separates them by the perpendicular bisector,
    // i.e. decides class 3 where (a - b).q > (|a|^2 - |b|^2) / 2.
    Eigen::MatrixXd x(2, 2);
    x << 1.0, 0.0, 0.0, 1.0;
    const std::vector<int> labels{3, 8};
    ProbeConfig cfg;
    cfg.passes = 200;
    cfg.step = 0.5;
    cfg.trials = 1;
    const auto p = train_probes(x, labels, cfg)[0];
    const Eigen::Vector2d a = x.row(0).transpose(), b = x.row(1).transpose();
    const double cut = (a.squaredNorm() - b.squaredNorm()) / 2;
    int checked = 0;
    for (double u = 0.25; u <= 3.0; u += 0.25)
        for (double v = 0.25; v <= 3.0; v += 0.25) {
            const Eigen::RowVector2d q(u, v);
            const double margin = (a - b).dot(q.transpose()) - cut;
            if (std::abs(margin) < 0.5) continue;
            EXPECT_EQ(p.predict(q), margin > 0 ? 3 : 8) << u << "," << v;
            ++checked;
        }
    EXPECT_GT(checked, 100);
    EXPECT_EQ(p.predict(x.row(0)), 3);
    EXPECT_EQ(p.predict(x.row(1)), 8);
}
