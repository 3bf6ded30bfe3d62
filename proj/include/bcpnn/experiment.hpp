#pragma once

// The experiment pipeline shared by the command-line tool and the acceptance runner:
// training the three projections, and the orthogonality, prototype and robustness evaluations.

#include "bcpnn/analysis.hpp"
#include "bcpnn/config.hpp"
#include "bcpnn/container.hpp"
#include "bcpnn/distort.hpp"
#include "bcpnn/probe.hpp"

#include <Eigen/SparseCore>

#include <array>
#include <chrono>
#include <functional>
#include <set>

namespace bcpnn {

inline std::vector<int> labels_of(const EncodedDataset& data) {
    std::vector<int> out(data.size());
    for (std::size_t k = 0; k < data.size(); ++k) {
        const auto l = data.label(k);
        if (!l) throw parameter_error("sample " + std::to_string(k) + " has no label");
        out[k] = *l;
    }
    return out;
}

/// Pixel-intensity view of input-layer activity rows: the "on" minicolumn of each hypercolumn.
inline Eigen::MatrixXd on_unit_rows(const Eigen::MatrixXd& input_rows) {
    Eigen::MatrixXd out(input_rows.rows(), input_rows.cols() / 2);
    for (Eigen::Index k = 0; k < out.cols(); ++k) out.col(k) = input_rows.col(2 * k);
    return out;
}

using StageCallback = std::function<void(const std::string& stage, double seconds)>;

/// Trains the feedforward projection, the hidden recurrent projection and the input-layer attractor.
/// With zero epochs the projections keep their uniform initial traces, so every weight is 0.
inline ModelBundle train_system(const ExperimentConfig& cfg, const EncodedDataset& train, const EpochCallback& on_epoch = {},
                                const StageCallback& on_stage = {}) {
    using clock = std::chrono::steady_clock;
    const auto data = cfg.train_samples > 0 ? train.head(cfg.train_samples) : train.head(train.size());
    auto t0 = clock::now();
    auto lap = [&](const std::string& stage) {
        const auto t1 = clock::now();
        if (on_stage) on_stage(stage, std::chrono::duration<double>(t1 - t0).count());
        t0 = t1;
    };
    auto ff = train_feedforward(data, cfg.feedforward(), on_epoch);
    lap("feedforward");
    const auto rc = cfg.recurrent();
    const bool trained = ff.epochs_trained > 0;
    auto rec = trained ? train_recurrent(ff, data, rc) : untrained_recurrent(ff.hidden_geometry, rc);
    lap("recurrent");
    auto base = trained ? train_attractor(data, rc) : untrained_recurrent(data.geometry(), rc);
    lap("input attractor");
    return {to_text(cfg), std::move(ff), std::move(rec), std::move(base)};
}

/// Hidden states of the full network for a block of input rows.
struct NetworkRun {
    Eigen::MatrixXd feedforward;  ///< L4: softmax of the feedforward support
    AttractorBatch attractor;     ///< L2/3 after the recurrent dynamics
};

inline NetworkRun run_network(const ModelBundle& b, const Eigen::MatrixXd& inputs) {
    const Eigen::MatrixXd support = support_batch(b.feedforward, inputs);
    Eigen::MatrixXd ff = support;
    softmax_rows(ff, b.feedforward.hidden_geometry);
    auto att = run_attractor_batch(b.recurrent, ff, b.recurrent.drive_mode == DriveMode::persistent_drive ? &support : nullptr);
    return {std::move(ff), std::move(att)};
}

struct ConvergenceStats {
    std::size_t converged = 0;
    std::size_t total = 0;
    double median_steps = -1.0;  ///< over converged trajectories; -1 when none converged

    double fraction() const { return total ? static_cast<double>(converged) / static_cast<double>(total) : 0.0; }
};

inline ConvergenceStats convergence_stats(const AttractorBatch& a) {
    ConvergenceStats s;
    s.total = a.steps.size();
    std::vector<int> steps;
    for (int v : a.steps)
        if (v >= 0) steps.push_back(v);
    s.converged = steps.size();
    if (!steps.empty()) {
        std::sort(steps.begin(), steps.end());
        const auto m = steps.size();
        s.median_steps = m % 2 ? steps[m / 2] : 0.5 * (steps[m / 2 - 1] + steps[m / 2]);
    }
    return s;
}

enum class Representation { input, input_attractor, feedforward, feedforward_recurrent };

inline constexpr std::array<Representation, 4> kRepresentations = {Representation::input, Representation::input_attractor,
                                                                   Representation::feedforward, Representation::feedforward_recurrent};

inline std::string to_string(Representation r) {
    switch (r) {
        case Representation::input: return "input";
        case Representation::input_attractor: return "input_attractor";
        case Representation::feedforward: return "feedforward";
        case Representation::feedforward_recurrent: return "feedforward_recurrent";
    }
    return "?";
}

struct OrthogonalityReport {
    std::array<double, 4> ratio{};  ///< indexed like kRepresentations
    double input_pixels = 0.0;      ///< input and input attractor compared on pixel intensities only
    double input_attractor_pixels = 0.0;
    std::size_t samples = 0;
    ConvergenceStats hidden;        ///< attractor on feedforward-driven states
    ConvergenceStats input;         ///< attractor on the input layer

    double of(Representation r) const { return ratio[static_cast<std::size_t>(r)]; }
};

/// Orthogonality ratios of the four representations of `test`, each compared as full layer activity.
inline OrthogonalityReport evaluate_orthogonality(const ModelBundle& b, const EncodedDataset& test) {
    const auto labels = labels_of(test);
    const Eigen::MatrixXd x = test.batch(0, test.size());
    const auto net = run_network(b, x);
    const auto base = run_attractor_batch(b.input_attractor, x);
    OrthogonalityReport r;
    r.samples = test.size();
    r.hidden = convergence_stats(net.attractor);
    r.input = convergence_stats(base);
    r.ratio[0] = orthogonality_ratio(similarity_matrix(x, labels));
    r.ratio[1] = orthogonality_ratio(similarity_matrix(base.final_states, labels));
    r.input_pixels = orthogonality_ratio(similarity_matrix(on_unit_rows(x), labels));
    r.input_attractor_pixels = orthogonality_ratio(similarity_matrix(on_unit_rows(base.final_states), labels));
    r.ratio[2] = orthogonality_ratio(similarity_matrix(net.feedforward, labels));
    r.ratio[3] = orthogonality_ratio(similarity_matrix(net.attractor.final_states, labels));
    return r;
}

struct PrototypeSummary {
    std::size_t id;     ///< 1-based, in order of foundation
    std::size_t count;
    int label_majority;
    std::size_t leader;
};

struct PrototypeReport {
    PrototypeClustering clustering;
    std::vector<PrototypeSummary> rows;  ///< sorted by count, descending (ties by id)
    std::size_t classes_covered = 0;     ///< distinct majority labels over all prototypes
};

inline PrototypeReport summarize_prototypes(const Eigen::MatrixXd& states, const std::vector<int>& labels, double theta) {
    PrototypeReport r{extract_prototypes(states, theta), {}, 0};
    std::set<int> classes;
    for (std::size_t p = 0; p < r.clustering.prototypes.size(); ++p) {
        const auto& proto = r.clustering.prototypes[p];
        const int maj = majority_label(proto, labels);
        r.rows.push_back({p + 1, proto.count(), maj, proto.leader});
        classes.insert(maj);
    }
    std::stable_sort(r.rows.begin(), r.rows.end(), [](const auto& a, const auto& b) { return a.count > b.count; });
    r.classes_covered = classes.size();
    return r;
}

/// Pixel intensities of the top-down reconstruction of each hidden state row.
inline Eigen::MatrixXd reconstruct_pixels(const FeedforwardModel& ff, const Eigen::MatrixXd& hidden) {
    return on_unit_rows(reconstruct_batch(ff, hidden));
}

/// Encodes `data` through the feedforward projection in blocks and keeps the sparse entries, so that
/// the full training set fits in memory at the reference size.
inline Eigen::SparseMatrix<double, Eigen::RowMajor> sparse_encoding(const FeedforwardModel& ff, const EncodedDataset& data,
                                                                     std::size_t block = 1000) {
    Eigen::SparseMatrix<double, Eigen::RowMajor> out(static_cast<Eigen::Index>(data.size()), ff.hidden_geometry.units());
    std::vector<Eigen::Triplet<double>> entries;
    for (std::size_t b = 0; b < data.size(); b += block) {
        const auto e = std::min(data.size(), b + block);
        const Eigen::MatrixXd h = encode_batch(ff, data.batch(b, e));
        for (Eigen::Index r = 0; r < h.rows(); ++r)
            for (Eigen::Index c = 0; c < h.cols(); ++c)
                if (std::abs(h(r, c)) > 1e-6) entries.emplace_back(static_cast<Eigen::Index>(b) + r, c, h(r, c));
    }
    out.setFromTriplets(entries.begin(), entries.end());
    return out;
}

/// Probes trained on the clean feedforward representations of `train`.
inline std::vector<LinearProbe> train_robustness_probes(const ModelBundle& b, const EncodedDataset& train, const ProbeConfig& cfg) {
    return train_probes(sparse_encoding(b.feedforward, train), labels_of(train), cfg);
}

enum class RobustKind { feedforward, attractor };

inline std::string to_string(RobustKind k) { return k == RobustKind::feedforward ? "feedforward" : "attractor"; }

struct RobustnessRow {
    DistortionSpec spec;
    RobustKind kind;
    int trial;
    double accuracy;
};

struct RobustnessReport {
    std::vector<RobustnessRow> rows;  ///< ordered by type, level, kind, trial
    Eigen::MatrixXd feedforward;      ///< representations of the distorted samples
    Eigen::MatrixXd attractor;

    /// Mean accuracy of `kind` over all types and trials at a level (1..10).
    double level_mean(RobustKind kind, int tenths) const {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& r : rows)
            if (r.kind == kind && r.spec.tenths == tenths) {
                sum += r.accuracy;
                ++n;
            }
        return n ? sum / static_cast<double>(n) : 0.0;
    }

    double cell_mean(RobustKind kind, DistortionType type, int tenths) const {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& r : rows)
            if (r.kind == kind && r.spec.type == type && r.spec.tenths == tenths) {
                sum += r.accuracy;
                ++n;
            }
        return n ? sum / static_cast<double>(n) : 0.0;
    }
};

/// Accuracy of every probe on the feedforward and attractor representations of each (type, level) cell.
inline RobustnessReport evaluate_robustness(const std::vector<LinearProbe>& probes, const ModelBundle& b,
                                            const std::vector<DistortedSample>& set) {
    const auto data = distorted_dataset(set);
    const auto net = run_network(b, data.batch(0, data.size()));
    RobustnessReport out{{}, net.feedforward, net.attractor.final_states};
    std::size_t begin = 0;
    while (begin < set.size()) {
        std::size_t end = begin;
        while (end < set.size() && set[end].spec.type == set[begin].spec.type && set[end].spec.tenths == set[begin].spec.tenths) ++end;
        const auto n = static_cast<Eigen::Index>(end - begin);
        std::vector<int> labels;
        for (auto k = begin; k < end; ++k) labels.push_back(set[k].label);
        for (auto kind : {RobustKind::feedforward, RobustKind::attractor}) {
            const Eigen::MatrixXd rows = (kind == RobustKind::feedforward ? out.feedforward : out.attractor).middleRows(static_cast<Eigen::Index>(begin), n);
            for (std::size_t t = 0; t < probes.size(); ++t)
                out.rows.push_back({set[begin].spec, kind, static_cast<int>(t), accuracy(probes[t], rows, labels)});
        }
        begin = end;
    }
    return out;
}

}  // namespace bcpnn
