#include "bcpnn/recurrent.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace bcpnn;

namespace {

Eigen::VectorXd hard_pattern(const LayerGeometry& g, const std::vector<int>& winners) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(g.units());
    for (int h = 0; h < g.hypercolumns(); ++h) v(g.unit(h, winners[static_cast<std::size_t>(h)])) = 1.0;
    return v;
}

std::vector<int> winners_of(const LayerGeometry& g, const Eigen::VectorXd& v) {
    std::vector<int> out;
    for (int h = 0; h < g.hypercolumns(); ++h) {
        Eigen::Index m = 0;
        v.segment(g.offset(h), g.minicolumns()).maxCoeff(&m);
        out.push_back(static_cast<int>(m));
    }
    return out;
}

struct Stored {
    LayerGeometry g{12, 4};
    std::vector<std::vector<int>> patterns;
    RecurrentModel model;
};

// Four hard patterns that together use every unit once, stored by repeated presentation.
// (Units that never fire would keep decayed uniform traces and end up mutually excitatory.)
Stored stored_patterns() {
    const LayerGeometry g(12, 4);
    std::mt19937_64 rng(3);
    std::vector<std::vector<int>> patterns(4);
    for (int h = 0; h < 12; ++h) {
        std::vector<int> perm{0, 1, 2, 3};
        std::shuffle(perm.begin(), perm.end(), rng);
        for (int k = 0; k < 4; ++k) patterns[static_cast<std::size_t>(k)].push_back(perm[static_cast<std::size_t>(k)]);
    }
    Eigen::MatrixXd rows(60, g.units());
    for (int k = 0; k < 60; ++k) rows.row(k) = hard_pattern(g, patterns[static_cast<std::size_t>(k % 4)]).transpose();
    RecurrentConfig cfg;
    cfg.alpha = 0.02;
    cfg.epochs = 3;
    cfg.timesteps = 30;
    auto model = train_attractor(EncodedDataset::from_activities(g, rows), cfg);
    return {g, patterns, std::move(model)};
}

}  // namespace

TEST(DriveMode, RoundTrip) {
    EXPECT_EQ(parse_drive_mode(to_string(DriveMode::clamped_init)), DriveMode::clamped_init);
    EXPECT_EQ(parse_drive_mode(to_string(DriveMode::persistent_drive)), DriveMode::persistent_drive);
    EXPECT_THROW(parse_drive_mode("clamped"), parameter_error);
}

TEST(Recurrent, UntrainedModelRelaxesToUniformInOneStep) {
    const LayerGeometry g(5, 4);
    const auto m = untrained_recurrent(g, {});
    std::mt19937_64 rng(1);
    Eigen::VectorXd s(g.units());
    for (auto& v : s) v = std::normal_distribution<double>(0, 2)(rng);
    const auto traj = run_attractor(m, softmax_per_hypercolumn(SupportVector(g, s)));
    ASSERT_TRUE(traj.converged);
    EXPECT_EQ(*traj.steps_to_convergence, 2);
    EXPECT_EQ(traj.states.size(), 3u);
    EXPECT_LE((traj.final_state().values().array() - 0.25).abs().maxCoeff(), 1e-15);
}

TEST(Recurrent, TrainedWeightsAreSymmetricWithEmptyDiagonalBlocks) {
    const auto st = stored_patterns();
    const auto& p = st.model.params;
    for (Eigen::Index i = 0; i < st.g.units(); ++i)
        for (Eigen::Index j = 0; j < st.g.units(); ++j) {
            EXPECT_EQ(p.weight_at(i, j), p.weight_at(j, i));
            if (st.g.hypercolumn_of(i) == st.g.hypercolumn_of(j)) EXPECT_EQ(p.weight_at(i, j), 0.0);
        }
    EXPECT_EQ(st.model.epochs_trained, 3);
}

TEST(Recurrent, StoredPatternsAreRetrievedFromCorruptedCues) {
    const auto st = stored_patterns();
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> pick(0, 3);
    for (const auto& p : st.patterns) {
        auto cue = p;
        for (int h = 0; h < 4; ++h) cue[static_cast<std::size_t>(h)] = (cue[static_cast<std::size_t>(h)] + 1 + pick(rng) % 3) % 4;  // a third of the hypercolumns wrong
        Eigen::VectorXd soft = 0.7 * hard_pattern(st.g, cue) + 0.3 * Eigen::VectorXd::Constant(st.g.units(), 0.25);
        const auto traj = run_attractor(st.model, ActivityVector(st.g, soft));
        EXPECT_TRUE(traj.converged);
        EXPECT_EQ(winners_of(st.g, traj.final_state().values()), p);
    }
}

TEST(Recurrent, BatchMatchesSingleSampleDynamics) {
    const auto st = stored_patterns();
    std::mt19937_64 rng(5);
    Eigen::MatrixXd init(6, st.g.units());
    for (int r = 0; r < 6; ++r) {
        Eigen::VectorXd s(st.g.units());
        for (auto& v : s) v = std::normal_distribution<double>(0, 1.5)(rng);
        init.row(r) = softmax_per_hypercolumn(SupportVector(st.g, s)).values().transpose();
    }
    const auto batch = run_attractor_batch(st.model, init, nullptr, true);
    for (int r = 0; r < 6; ++r) {
        const auto traj = run_attractor(st.model, ActivityVector(st.g, init.row(r).transpose()));
        EXPECT_EQ(batch.steps[static_cast<std::size_t>(r)], traj.steps_to_convergence.value_or(-1));
        EXPECT_LE((batch.final_states.row(r).transpose() - traj.final_state().values()).cwiseAbs().maxCoeff(), 1e-12);
        ASSERT_EQ(batch.alignment[static_cast<std::size_t>(r)].size(), traj.states.size() - 1);
        EXPECT_NEAR(batch.alignment[static_cast<std::size_t>(r)][0], support_alignment(st.model, traj.states[0]), 1e-10);
    }
}

TEST(Recurrent, StepCapReportsNonConvergence) {
    const LayerGeometry g(3, 2);
    auto m = untrained_recurrent(g, {});
    m.timesteps = 1;
    Eigen::MatrixXd init(1, g.units());
    init << 1, 0, 1, 0, 0, 1;
    const auto b = run_attractor_batch(m, init);
    EXPECT_EQ(b.steps[0], -1);
    EXPECT_FALSE(b.converged(0));
    EXPECT_FALSE(run_attractor(m, ActivityVector(g, init.row(0).transpose())).converged);
}

TEST(Recurrent, PersistentDriveFixedPointOfUntrainedModel) {
    const LayerGeometry g(2, 3);
    RecurrentConfig cfg;
    cfg.drive_mode = DriveMode::persistent_drive;
    cfg.drive_gain = 2.0;
    const auto m = untrained_recurrent(g, cfg);
    Eigen::VectorXd ff(6);
    ff << 0.0, 1.0, -1.0, 0.5, 0.5, 0.0;
    const auto traj = run_attractor(m, ActivityVector::uniform(g), SupportVector(g, ff));
    // zero weights and equal biases leave softmax(gain * ff)
    const double z0 = 1 + std::exp(2.0) + std::exp(-2.0);
    const double z1 = 2 * std::exp(1.0) + 1;
    EXPECT_NEAR(traj.final_state()[1], std::exp(2.0) / z0, 1e-15);
    EXPECT_NEAR(traj.final_state()[5], 1 / z1, 1e-15);
    EXPECT_EQ(*traj.steps_to_convergence, 2);

    Eigen::MatrixXd ffm = ff.transpose();
    const auto b = run_attractor_batch(m, Eigen::MatrixXd::Constant(1, 6, 1.0 / 3), &ffm);
    EXPECT_NEAR(b.final_states(0, 1), std::exp(2.0) / z0, 1e-15);

    auto clamped = m;
    clamped.drive_mode = DriveMode::clamped_init;
    EXPECT_LE((run_attractor(clamped, ActivityVector::uniform(g), SupportVector(g, ff)).final_state().values().array() - 1.0 / 3).abs().maxCoeff(),
              1e-15);
}

TEST(Recurrent, RejectsBadConfiguration) {
    const LayerGeometry g(2, 2);
    const auto data = EncodedDataset::from_activities(g, Eigen::MatrixXd::Constant(3, 4, 0.5));
    RecurrentConfig cfg;
    cfg.timesteps = 0;
    EXPECT_THROW(train_attractor(data, cfg), parameter_error);
    cfg = {};
    cfg.eps_conv = 0.0;
    EXPECT_THROW(train_attractor(data, cfg), parameter_error);
    FeedforwardConfig fc;
    fc.hidden = LayerGeometry(2, 3);
    fc.p_conn = 1.0;
    fc.epochs = 0;
    const auto ff = train_feedforward(data, fc);
    EXPECT_THROW(train_recurrent(ff, data, {}), parameter_error);
    const auto m = untrained_recurrent(g, {});
    EXPECT_THROW(run_attractor(m, ActivityVector::uniform(LayerGeometry(3, 2))), dimension_error);
}

TEST(Recurrent, TrainRecurrentUsesFeedforwardCodes) {
    const LayerGeometry in(6, 2);
    Eigen::MatrixXd x(8, in.units());
    for (int r = 0; r < 8; ++r)
        for (int h = 0; h < 6; ++h) {
            const double on = ((r + h) % 3 == 0) ? 0.8 : 0.2;
            x(r, 2 * h) = on;
            x(r, 2 * h + 1) = 1 - on;
        }
    const auto data = EncodedDataset::from_activities(in, x);
    FeedforwardConfig fc;
    fc.hidden = LayerGeometry(3, 4);
    fc.p_conn = 0.5;
    fc.alpha = 0.05;
    fc.epochs = 1;
    fc.rewire_epochs = 0;
    fc.activity_noise = 0.5;
    const auto ff = train_feedforward(data, fc);
    RecurrentConfig rc;
    rc.alpha = 0.05;
    rc.shuffle = false;
    const auto rec = train_recurrent(ff, data, rc);
    const auto direct = train_attractor(EncodedDataset::from_activities(ff.hidden_geometry, encode_dataset(ff, data)), rc);
    for (std::size_t h = 0; h < rec.params.weights.size(); ++h)
        EXPECT_LE((rec.params.weights[h] - direct.params.weights[h]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Reconstruct, MatchesWeightSumOracle) {
    const LayerGeometry in(6, 2), hid(3, 4);
    std::mt19937_64 rng(6);
    Eigen::MatrixXd x(20, in.units());
    for (int r = 0; r < 20; ++r)
        for (int h = 0; h < 6; ++h) {
            const double on = std::uniform_real_distribution<double>(0, 1)(rng);
            x(r, 2 * h) = on;
            x(r, 2 * h + 1) = 1 - on;
        }
    FeedforwardConfig fc;
    fc.hidden = hid;
    fc.p_conn = 0.5;
    fc.alpha = 0.05;
    fc.epochs = 2;
    fc.rewire_epochs = 0;
    fc.activity_noise = 1.0;
    const auto ff = train_feedforward(EncodedDataset::from_activities(in, x), fc);
    const auto h = encode(ff, ActivityVector(in, x.row(0).transpose()));
    Eigen::VectorXd s(in.units());
    for (Eigen::Index i = 0; i < in.units(); ++i) {
        s(i) = 0;
        for (Eigen::Index j = 0; j < hid.units(); ++j) s(i) += h[j] * ff.params.weight_at(i, j);
    }
    const auto want = softmax_per_hypercolumn(SupportVector(in, s));
    EXPECT_LE((reconstruct(ff, h).values() - want.values()).cwiseAbs().maxCoeff(), 1e-13);
    Eigen::MatrixXd hm = h.values().transpose();
    EXPECT_LE((reconstruct_batch(ff, hm).row(0).transpose() - want.values()).cwiseAbs().maxCoeff(), 1e-13);
}
