#include "bcpnn/experiment.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace bcpnn;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = BCPNN_FIXTURE_DIR;

// The two fixture digits shifted around the canvas; labels cycle over 0..9 so that every class occurs.
std::vector<RawImage> shifted_images(std::size_t n) {
    const auto base = load_idx(kFixtures + "/two-images-idx3-ubyte", kFixtures + "/two-labels-idx1-ubyte");
    std::vector<RawImage> out;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& src = base[k % 2];
        const int dr = static_cast<int>(k / 2 % 7) - 3, dc = static_cast<int>(k / 14 % 7) - 3;
        RawImage img;
        img.label = static_cast<int>(k % 10);
        for (int r = 0; r < kImageSide; ++r)
            for (int c = 0; c < kImageSide; ++c) {
                const int sr = r - dr, sc = c - dc;
                if (sr >= 0 && sr < kImageSide && sc >= 0 && sc < kImageSide) img.at(r, c) = src.at(sr, sc);
            }
        out.push_back(img);
    }
    return out;
}

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.hidden_hypercolumns = 3;
    c.hidden_minicolumns = 4;
    c.alpha = 0.05;
    c.epochs = 2;
    c.rewire_epochs = 1;
    c.probe_passes = 2;
    c.probe_trials = 2;
    return c;
}

double max_abs_weight(const ProjectionParams& p) {
    double m = 0.0;
    for (const auto& w : p.weights) m = std::max(m, w.cwiseAbs().maxCoeff());
    return m;
}

}  // namespace

TEST(TrainSystem, ZeroEpochsGiveZeroWeightsAndALoadableModel) {
    auto cfg = tiny_config();
    cfg.epochs = 0;
    cfg.rewire_epochs = 0;
    cfg.noise_epochs = 0;
    const auto b = train_system(cfg, EncodedDataset::from_images(shifted_images(20)));
    EXPECT_EQ(b.feedforward.epochs_trained, 0);
    EXPECT_EQ(max_abs_weight(b.feedforward.params), 0.0);
    EXPECT_EQ(max_abs_weight(b.recurrent.params), 0.0);
    EXPECT_EQ(max_abs_weight(b.input_attractor.params), 0.0);
    const auto path = fs::temp_directory_path() / "bcpnn_zero_epoch.bcpnn";
    save_model(path.string(), b);
    const auto back = load_model(path.string());
    EXPECT_EQ(max_abs_weight(back.recurrent.params), 0.0);
    EXPECT_EQ(parse_config(back.config_text).epochs, 0);
    fs::remove(path);
}

TEST(TrainSystem, RespectsTrainSamplesAndStoresConfig) {
    auto cfg = tiny_config();
    cfg.train_samples = 12;
    const auto data = EncodedDataset::from_images(shifted_images(40));
    const auto a = train_system(cfg, data);
    const auto b = train_system(cfg, data.head(12));
    EXPECT_EQ(a.feedforward.traces.pre, b.feedforward.traces.pre);
    EXPECT_EQ(a.recurrent.traces.pre, b.recurrent.traces.pre);
    EXPECT_EQ(a.config_text, to_text(cfg));
    EXPECT_EQ(a.input_attractor.geometry, mnist_input_geometry());
}

TEST(RunNetwork, MatchesTheStepByStepDefinition) {
    auto cfg = tiny_config();
    const auto data = EncodedDataset::from_images(shifted_images(30));
    auto b = train_system(cfg, data);
    const Eigen::MatrixXd x = data.batch(0, 5);
    for (auto mode : {DriveMode::clamped_init, DriveMode::persistent_drive}) {
        b.recurrent.drive_mode = mode;
        const auto net = run_network(b, x);
        for (Eigen::Index r = 0; r < 5; ++r) {
            const ActivityVector in(mnist_input_geometry(), x.row(r).transpose());
            const auto ff = encode(b.feedforward, in);
            EXPECT_LE((net.feedforward.row(r).transpose() - ff.values()).cwiseAbs().maxCoeff(), 1e-12);
            const auto support = propagate(in, b.feedforward.params, b.feedforward.hidden_geometry);
            const auto traj = run_attractor(b.recurrent, ff, support);
            EXPECT_LE((net.attractor.final_states.row(r).transpose() - traj.final_state().values()).cwiseAbs().maxCoeff(), 1e-12);
        }
    }
}

TEST(Convergence, MedianOverConvergedTrajectories) {
    AttractorBatch a{Eigen::MatrixXd(5, 1), {3, -1, 1, 7, 2}, {}};
    auto s = convergence_stats(a);
    EXPECT_EQ(s.converged, 4u);
    EXPECT_EQ(s.total, 5u);
    EXPECT_DOUBLE_EQ(s.median_steps, 2.5);
    EXPECT_DOUBLE_EQ(s.fraction(), 0.8);
    a.steps = {-1, -1};
    EXPECT_EQ(convergence_stats(a).median_steps, -1.0);
    a.steps = {4, 9, 1};
    EXPECT_EQ(convergence_stats(a).median_steps, 4.0);
}

TEST(Orthogonality, RatiosMatchDirectComputation) {
    const auto data = EncodedDataset::from_images(shifted_images(30));
    const auto b = train_system(tiny_config(), data);
    const auto r = evaluate_orthogonality(b, data);
    const auto labels = labels_of(data);
    const Eigen::MatrixXd x = data.batch(0, data.size());
    EXPECT_EQ(r.samples, 30u);
    EXPECT_DOUBLE_EQ(r.of(Representation::input), orthogonality_ratio(similarity_matrix(x, labels)));
    Eigen::MatrixXd pixels(30, kImagePixels);
    for (Eigen::Index k = 0; k < 30; ++k)
        for (int p = 0; p < kImagePixels; ++p) pixels(k, p) = data.images()[static_cast<std::size_t>(k)].pixels[static_cast<std::size_t>(p)] / 255.0;
    EXPECT_NEAR(r.input_pixels, orthogonality_ratio(similarity_matrix(pixels, labels)), 1e-12);
    const auto net = run_network(b, x);
    EXPECT_DOUBLE_EQ(r.of(Representation::feedforward_recurrent), orthogonality_ratio(similarity_matrix(net.attractor.final_states, labels)));
    EXPECT_EQ(r.hidden.total, 30u);
}

TEST(Prototypes, SummaryIsSortedAndCountsClasses) {
    Eigen::MatrixXd x(6, 2);
    x << 1, 0, 0, 1, 1, 0.05, 0.02, 1, 1, 0, 0.7, 0.7;
    const auto r = summarize_prototypes(x, {4, 2, 4, 2, 5, 9}, 0.9);
    ASSERT_EQ(r.rows.size(), 3u);
    EXPECT_EQ(r.rows[0].id, 1u);
    EXPECT_EQ(r.rows[0].count, 3u);
    EXPECT_EQ(r.rows[0].label_majority, 4);
    EXPECT_EQ(r.rows[1].count, 2u);
    EXPECT_EQ(r.rows[2].leader, 5u);
    EXPECT_EQ(r.classes_covered, 3u);
}

TEST(Robustness, GridShapeAndMeans) {
    const auto images = shifted_images(90);
    const auto data = EncodedDataset::from_images(images);
    const auto cfg = tiny_config();
    const auto b = train_system(cfg, data);
    const auto probes = train_robustness_probes(b, data, cfg.probe());
    ASSERT_EQ(probes.size(), 2u);
    const auto set = build_distorted_set(images, 1, 3);
    const auto r = evaluate_robustness(probes, b, set);
    ASSERT_EQ(r.rows.size(), 9u * 10u * 2u * 2u);
    EXPECT_EQ(r.feedforward.rows(), 90);
    for (std::size_t k = 0; k < r.rows.size(); ++k) {
        const auto& row = r.rows[k];
        EXPECT_EQ(row.spec.type, kDistortionTypes[k / 40]);
        EXPECT_EQ(row.spec.tenths, static_cast<int>(k / 4 % 10) + 1);
        EXPECT_EQ(row.kind, k / 2 % 2 ? RobustKind::attractor : RobustKind::feedforward);
        EXPECT_EQ(row.trial, static_cast<int>(k % 2));
        // one sample per cell: accuracy is 0 or 1 and equals the probe's verdict on that sample
        const auto& rep = row.kind == RobustKind::feedforward ? r.feedforward : r.attractor;
        const auto s = static_cast<Eigen::Index>(k / 4);
        EXPECT_EQ(row.accuracy, probes[static_cast<std::size_t>(row.trial)].predict(rep.row(s)) == set[static_cast<std::size_t>(s)].label ? 1.0 : 0.0);
    }
    double sum = 0;
    for (const auto& row : r.rows)
        if (row.kind == RobustKind::attractor && row.spec.tenths == 4) sum += row.accuracy;
    EXPECT_DOUBLE_EQ(r.level_mean(RobustKind::attractor, 4), sum / 18.0);
}

TEST(SparseEncoding, MatchesDenseEncodingAboveThreshold) {
    const auto data = EncodedDataset::from_images(shifted_images(25));
    const auto b = train_system(tiny_config(), data);
    const auto s = sparse_encoding(b.feedforward, data, 7);
    const auto dense = encode_dataset(b.feedforward, data);
    const Eigen::MatrixXd got(s);
    ASSERT_EQ(got.rows(), dense.rows());
    ASSERT_EQ(got.cols(), dense.cols());
    for (Eigen::Index r = 0; r < got.rows(); ++r)
        for (Eigen::Index c = 0; c < got.cols(); ++c) {
            if (std::abs(dense(r, c)) > 2e-6) EXPECT_NEAR(got(r, c), dense(r, c), 1e-12);
            if (std::abs(dense(r, c)) < 5e-7) EXPECT_EQ(got(r, c), 0.0);
        }
}

TEST(Labels, MissingLabelIsAnError) {
    Eigen::MatrixXd x(2, 4);
    x << 1, 0, 0, 1, 0, 1, 1, 0;
    EXPECT_THROW(labels_of(EncodedDataset::from_activities(LayerGeometry(2, 2), x)), parameter_error);
    Eigen::MatrixXd in(1, 4);
    in << 0.2, 0.8, 0.9, 0.1;
    EXPECT_EQ(on_unit_rows(in), (Eigen::MatrixXd(1, 2) << 0.2, 0.9).finished());
}
