#pragma once

// Representation analysis: cosine similarity matrices, the orthogonality ratio and
// threshold-based prototype extraction from attractor states.

#include "bcpnn/geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

namespace bcpnn {

/// Pairwise cosine similarities with rows and columns ordered by label, then original index.
struct SimilarityMatrix {
    Eigen::MatrixXd values;
    std::vector<int> labels;          ///< label of each row, in matrix order
    std::vector<std::size_t> order;   ///< original sample index of each row
    std::vector<bool> zero_vector;    ///< rows whose representation had zero norm
};

namespace detail {
inline Eigen::VectorXd row_norms(const Eigen::MatrixXd& m) { return m.rowwise().norm(); }
}  // namespace detail

/// Cosine similarity of every pair of rows of `representations`.
/// A zero vector has similarity 0 to everything else and 1 to itself; it is flagged in the result.
inline SimilarityMatrix similarity_matrix(const Eigen::MatrixXd& representations, const std::vector<int>& labels) {
    const auto n = static_cast<std::size_t>(representations.rows());
    if (n == 0) throw parameter_error("similarity_matrix: no samples");
    if (labels.size() != n) throw dimension_error("similarity_matrix: label count does not match sample count");
    SimilarityMatrix out;
    out.order.resize(n);
    std::iota(out.order.begin(), out.order.end(), std::size_t{0});
    std::stable_sort(out.order.begin(), out.order.end(), [&](auto a, auto b) { return labels[a] < labels[b]; });

    Eigen::MatrixXd unit(static_cast<Eigen::Index>(n), representations.cols());
    out.labels.resize(n);
    out.zero_vector.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto src = representations.row(static_cast<Eigen::Index>(out.order[r]));
        const double norm = src.norm();
        out.labels[r] = labels[out.order[r]];
        out.zero_vector[r] = norm == 0.0;
        unit.row(static_cast<Eigen::Index>(r)) = out.zero_vector[r] ? Eigen::RowVectorXd::Zero(src.size()) : Eigen::RowVectorXd(src / norm);
    }
    out.values = unit * unit.transpose();
    for (Eigen::Index a = 0; a < out.values.rows(); ++a) {
        out.values(a, a) = 1.0;
        for (Eigen::Index b = a + 1; b < out.values.cols(); ++b) {
            const double v = std::clamp(out.values(a, b), -1.0, 1.0);
            out.values(a, b) = v;
            out.values(b, a) = v;
        }
    }
    return out;
}

/// Mean off-diagonal similarity within classes divided by the mean over all off-diagonal pairs.
inline double orthogonality_ratio(const SimilarityMatrix& m) {
    const auto n = m.values.rows();
    if (static_cast<std::size_t>(n) != m.labels.size()) throw dimension_error("orthogonality_ratio: labels missing");
    if (n < 2) throw parameter_error("orthogonality_ratio: needs at least two samples");
    double within = 0.0, all = 0.0;
    std::size_t n_within = 0, n_all = 0;
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = 0; b < n; ++b) {
            if (a == b) continue;
            const double v = m.values(a, b);
            all += v;
            ++n_all;
            if (m.labels[static_cast<std::size_t>(a)] == m.labels[static_cast<std::size_t>(b)]) {
                within += v;
                ++n_within;
            }
        }
    if (n_within == 0) throw parameter_error("orthogonality_ratio: no class has two samples");
    return (within / static_cast<double>(n_within)) / (all / static_cast<double>(n_all));
}

struct Prototype {
    std::size_t leader;                ///< sample index that founded the prototype
    Eigen::VectorXd representative;    ///< the leader's state
    std::vector<std::size_t> members;  ///< sample indices, in order of assignment

    std::size_t count() const noexcept { return members.size(); }
};

struct PrototypeClustering {
    double threshold;
    std::vector<Prototype> prototypes;
    std::vector<std::size_t> assignment;  ///< prototype index of each sample
};

/// Greedy leader clustering in sample order: each state joins the first prototype whose leader has
/// cosine similarity above `threshold`, otherwise it founds a new prototype.
inline PrototypeClustering extract_prototypes(const Eigen::MatrixXd& states, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw parameter_error("extract_prototypes: threshold must lie in (0, 1)");
    PrototypeClustering out{threshold, {}, std::vector<std::size_t>(static_cast<std::size_t>(states.rows()))};
    std::vector<Eigen::VectorXd> leaders;  // unit-normalized
    for (Eigen::Index k = 0; k < states.rows(); ++k) {
        const Eigen::VectorXd v = states.row(k).transpose();
        const double norm = v.norm();
        const Eigen::VectorXd u = norm > 0.0 ? Eigen::VectorXd(v / norm) : Eigen::VectorXd::Zero(v.size());
        std::optional<std::size_t> home;
        for (std::size_t p = 0; p < leaders.size(); ++p)
            if (leaders[p].dot(u) > threshold) {
                home = p;
                break;
            }
        if (!home) {
            home = out.prototypes.size();
            out.prototypes.push_back({static_cast<std::size_t>(k), v, {}});
            leaders.push_back(u);
        }
        out.prototypes[*home].members.push_back(static_cast<std::size_t>(k));
        out.assignment[static_cast<std::size_t>(k)] = *home;
    }
    return out;
}

/// Most frequent label among a prototype's members (lowest label on ties).
inline int majority_label(const Prototype& p, const std::vector<int>& labels) {
    std::map<int, std::size_t> counts;
    for (auto m : p.members) ++counts[labels[m]];
    int best = -1;
    std::size_t best_count = 0;
    for (auto [label, c] : counts)
        if (c > best_count) {
            best = label;
            best_count = c;
        }
    return best;
}

}  // namespace bcpnn
