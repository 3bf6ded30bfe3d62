#pragma once

// Structural plasticity: score hypercolumn pairs by the mutual information of their traces and
// move connections from the weakest active sources to the strongest silent ones.

#include "bcpnn/core.hpp"
#include "bcpnn/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace bcpnn {

/// Mutual-information estimate for each (target hypercolumn, source hypercolumn) pair.
struct RewiringScore {
    Eigen::MatrixXd score;  // rows: target hypercolumns, cols: source hypercolumns

    double operator()(int source_hc, int target_hc) const { return score(target_hc, source_hc); }
};

/// Plug-in mutual information sum_{i in X, j in Y} p_ij log(p_ij / (p_i p_j)) for every pair of
/// source hypercolumn X and target hypercolumn Y. Needs joint traces for every pair.
inline RewiringScore mutual_information_scores(const PTraces& t) {
    if (!t.tracked.is_full())
        throw parameter_error("mutual_information_scores needs joint traces for every hypercolumn pair");
    const auto& sg = t.source_geometry;
    const auto& tg = t.target_geometry;
    const int ms = sg.minicolumns();
    const int mt = tg.minicolumns();
    RewiringScore out{Eigen::MatrixXd::Zero(tg.hypercolumns(), sg.hypercolumns())};
    parallel_for(tg.hypercolumns(), [&](int y) {
        const auto& j = t.joint[static_cast<std::size_t>(y)];
        const auto post = t.post.segment(tg.offset(y), mt);
        for (int x = 0; x < sg.hypercolumns(); ++x) {
            double mi = 0.0;
            for (int a = 0; a < ms; ++a) {
                const double pi = t.pre(sg.unit(x, a));
                for (int c = 0; c < mt; ++c) {
                    const double pij = j(sg.unit(x, a), c);
                    mi += pij * std::log(pij / (pi * post(c)));
                }
            }
            out.score(y, x) = mi;
        }
    });
    return out;
}

/// For each target hypercolumn, replaces up to ceil(swap_fraction * fan_in) of its lowest-scoring
/// sources by the highest-scoring unselected ones. A swap only happens while the candidate scores
/// strictly higher than the source it replaces. Ties go to the lower source index.
inline ConnectivityMask rewire(const ConnectivityMask& mask, const RewiringScore& scores, double swap_fraction) {
    if (!(swap_fraction >= 0.0 && swap_fraction <= 1.0))
        throw parameter_error("swap_fraction must lie in [0, 1]");
    const auto& sg = mask.source_geometry();
    const auto& tg = mask.target_geometry();
    if (scores.score.rows() != tg.hypercolumns() || scores.score.cols() != sg.hypercolumns())
        throw dimension_error("rewire: score matrix does not match the mask geometry");

    std::vector<ConnectivityMask::SourceList> lists = mask.all_sources();
    for (int h = 0; h < tg.hypercolumns(); ++h) {
        auto& active = lists[static_cast<std::size_t>(h)];
        const int n_swap = static_cast<int>(std::ceil(swap_fraction * static_cast<double>(active.size()) - 1e-12));
        if (n_swap <= 0) continue;

        std::vector<std::uint32_t> silent;
        for (int s = 0; s < sg.hypercolumns(); ++s)
            if (!std::binary_search(active.begin(), active.end(), static_cast<std::uint32_t>(s)))
                silent.push_back(static_cast<std::uint32_t>(s));
        const auto score = [&](std::uint32_t s) { return scores.score(h, static_cast<Eigen::Index>(s)); };
        std::vector<std::uint32_t> worst = active;
        std::stable_sort(worst.begin(), worst.end(), [&](auto a, auto b) { return score(a) < score(b); });
        std::stable_sort(silent.begin(), silent.end(), [&](auto a, auto b) { return score(a) > score(b); });

        const int limit = std::min<int>(n_swap, static_cast<int>(std::min(worst.size(), silent.size())));
        for (int k = 0; k < limit; ++k) {
            if (!(score(silent[static_cast<std::size_t>(k)]) > score(worst[static_cast<std::size_t>(k)]))) break;
            *std::find(active.begin(), active.end(), worst[static_cast<std::size_t>(k)]) = silent[static_cast<std::size_t>(k)];
        }
        std::sort(active.begin(), active.end());
    }
    return {sg, tg, std::move(lists)};
}

}  // namespace bcpnn
