#pragma once

// One-vs-rest linear readout trained by logistic-loss SGD, used to score representations.

#include "bcpnn/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <vector>

namespace bcpnn {

inline constexpr int kClasses = 10;

struct ProbeConfig {
    int passes = 20;
    double step = 0.01;
    int trials = 5;
    std::uint64_t seed = 7;
};

struct LinearProbe {
    Eigen::MatrixXd weights;  ///< kClasses x features
    Eigen::VectorXd bias;     ///< kClasses
    std::uint64_t seed = 0;
    int passes = 0;
    double step = 0.0;

    Eigen::Index features() const noexcept { return weights.cols(); }

    /// Class with the largest score (lowest class on ties).
    template <class Row>
    int predict(const Row& x) const {
        Eigen::Index best;
        (weights * x.transpose() + bias).maxCoeff(&best);
        return static_cast<int>(best);
    }

    std::vector<int> predict_all(const Eigen::MatrixXd& rows) const {
        const Eigen::MatrixXd scores = (rows * weights.transpose()).rowwise() + bias.transpose();
        std::vector<int> out(static_cast<std::size_t>(rows.rows()));
        for (Eigen::Index r = 0; r < rows.rows(); ++r) {
            Eigen::Index best;
            scores.row(r).maxCoeff(&best);
            out[static_cast<std::size_t>(r)] = static_cast<int>(best);
        }
        return out;
    }
};

/// Row-major sparse copy of `dense` keeping entries with magnitude above `threshold`.
/// Hidden activities are softmax outputs, so almost all mass sits in a few units per hypercolumn.
inline Eigen::SparseMatrix<double, Eigen::RowMajor> sparsify(const Eigen::MatrixXd& dense, double threshold = 1e-6) {
    std::vector<Eigen::Triplet<double>> entries;
    for (Eigen::Index r = 0; r < dense.rows(); ++r)
        for (Eigen::Index c = 0; c < dense.cols(); ++c)
            if (std::abs(dense(r, c)) > threshold) entries.emplace_back(static_cast<int>(r), static_cast<int>(c), dense(r, c));
    Eigen::SparseMatrix<double, Eigen::RowMajor> out(dense.rows(), dense.cols());
    out.setFromTriplets(entries.begin(), entries.end());
    return out;
}

namespace detail {

inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline void check_probe_inputs(Eigen::Index rows, const std::vector<int>& labels, const ProbeConfig& cfg) {
    if (static_cast<std::size_t>(rows) != labels.size()) throw dimension_error("train_probe: label count does not match sample count");
    if (rows == 0) throw parameter_error("train_probe: no samples");
    if (cfg.passes < 1 || !(cfg.step > 0.0) || cfg.trials < 1) throw parameter_error("train_probe: invalid probe recipe");
    std::set<int> seen;
    for (int l : labels) {
        if (l < 0 || l >= kClasses) throw parameter_error("train_probe: label outside 0..9");
        seen.insert(l);
    }
    if (seen.size() < 2) throw parameter_error("train_probe: training data has a single class");
}

}  // namespace detail

/// One trial: `passes` shuffled sweeps of per-sample logistic-loss SGD for each class against the rest.
inline LinearProbe train_probe_trial(const Eigen::SparseMatrix<double, Eigen::RowMajor>& x, const std::vector<int>& labels,
                                     const ProbeConfig& cfg, std::uint64_t seed) {
    detail::check_probe_inputs(x.rows(), labels, cfg);
    LinearProbe p{Eigen::MatrixXd::Zero(kClasses, x.cols()), Eigen::VectorXd::Zero(kClasses), seed, cfg.passes, cfg.step};
    // Column-major weights: each class row is strided, so keep a transposed copy for the sparse updates.
    Eigen::MatrixXd wt = Eigen::MatrixXd::Zero(x.cols(), kClasses);
    std::vector<std::size_t> order(static_cast<std::size_t>(x.rows()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    Eigen::Matrix<double, kClasses, 1> z, g;
    for (int pass = 0; pass < cfg.passes; ++pass) {
        std::shuffle(order.begin(), order.end(), rng);
        for (auto k : order) {
            const auto row = static_cast<Eigen::Index>(k);
            z = p.bias;
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(x, row); it; ++it)
                z += it.value() * wt.row(it.col()).transpose();
            for (int c = 0; c < kClasses; ++c)
                g(c) = detail::sigmoid(z(c)) - (labels[k] == c ? 1.0 : 0.0);
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(x, row); it; ++it)
                wt.row(it.col()) -= cfg.step * it.value() * g.transpose();
            p.bias -= cfg.step * g;
        }
    }
    p.weights = wt.transpose();
    return p;
}

/// `cfg.trials` probes with seeds cfg.seed, cfg.seed + 1, ...
inline std::vector<LinearProbe> train_probes(const Eigen::SparseMatrix<double, Eigen::RowMajor>& x, const std::vector<int>& labels,
                                             const ProbeConfig& cfg) {
    std::vector<LinearProbe> out;
    for (int t = 0; t < cfg.trials; ++t) out.push_back(train_probe_trial(x, labels, cfg, cfg.seed + static_cast<std::uint64_t>(t)));
    return out;
}

inline std::vector<LinearProbe> train_probes(const Eigen::MatrixXd& x, const std::vector<int>& labels, const ProbeConfig& cfg) {
    return train_probes(sparsify(x, 0.0), labels, cfg);
}

/// Fraction of rows whose predicted class equals the label.
inline double accuracy(const LinearProbe& p, const Eigen::MatrixXd& rows, const std::vector<int>& labels) {
    if (static_cast<std::size_t>(rows.rows()) != labels.size()) throw dimension_error("accuracy: label count does not match sample count");
    if (rows.cols() != p.features()) throw dimension_error("accuracy: feature count does not match the probe");
    if (labels.empty()) return 0.0;
    const auto pred = p.predict_all(rows);
    std::size_t hit = 0;
    for (std::size_t k = 0; k < labels.size(); ++k) hit += pred[k] == labels[k];
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace bcpnn
