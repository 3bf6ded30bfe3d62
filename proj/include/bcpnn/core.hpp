#pragma once

// BCPNN activity propagation, per-hypercolumn softmax, p-trace learning and
// bias/weight computation. Shared by the feedforward and recurrent projections.

#include "bcpnn/geometry.hpp"
#include "bcpnn/mask.hpp"
#include "bcpnn/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <string>
#include <vector>

namespace bcpnn {

/// Lower bound applied to every p-trace after each update so that logs stay finite.
inline constexpr double kTraceFloor = 1e-8;

/// Exponentially smoothed estimates of pre, post and joint activation probabilities for one projection.
///
/// Joint traces are kept for the pairs selected by `tracked`. For target hypercolumn h the block
/// `joint[h]` has one row per source unit of the tracked source hypercolumns (in list order) and one
/// column per minicolumn of h.
struct PTraces {
    LayerGeometry source_geometry;
    LayerGeometry target_geometry;
    double alpha;
    double floor = kTraceFloor;
    Eigen::VectorXd pre;
    Eigen::VectorXd post;
    ConnectivityMask tracked;
    std::vector<Eigen::MatrixXd> joint;

    /// Joint trace of (source unit i, target unit j). Throws if the pair is not tracked.
    double joint_at(Eigen::Index i, Eigen::Index j) const {
        const int h = target_geometry.hypercolumn_of(j);
        const int s = tracked.slot(h, source_geometry.hypercolumn_of(i));
        if (s < 0) throw dimension_error("joint trace requested for an untracked pair");
        const int ms = source_geometry.minicolumns();
        return joint[static_cast<std::size_t>(h)](static_cast<Eigen::Index>(s) * ms + source_geometry.minicolumn_of(i),
                                                  target_geometry.minicolumn_of(j));
    }

    /// Number of stored joint traces.
    Eigen::Index joint_count() const {
        Eigen::Index n = 0;
        for (const auto& b : joint) n += b.size();
        return n;
    }
};

/// Bias b_j and weights w_ij derived from a PTraces; weights exist only for pairs selected by `mask`.
/// `weights[h]` follows the same row layout as PTraces::joint with `mask` in place of `tracked`.
struct ProjectionParams {
    Eigen::VectorXd bias;
    std::vector<Eigen::MatrixXd> weights;
    ConnectivityMask mask;

    const LayerGeometry& source_geometry() const noexcept { return mask.source_geometry(); }
    const LayerGeometry& target_geometry() const noexcept { return mask.target_geometry(); }

    /// w_ij, or 0 for pairs outside the mask.
    double weight_at(Eigen::Index i, Eigen::Index j) const {
        const auto& src = source_geometry();
        const auto& tgt = target_geometry();
        const int h = tgt.hypercolumn_of(j);
        const int s = mask.slot(h, src.hypercolumn_of(i));
        if (s < 0) return 0.0;
        return weights[static_cast<std::size_t>(h)](static_cast<Eigen::Index>(s) * src.minicolumns() + src.minicolumn_of(i),
                                                    tgt.minicolumn_of(j));
    }
};

namespace detail {

inline bool is_identity(const ConnectivityMask::SourceList& list, int hypercolumns) {
    return static_cast<int>(list.size()) == hypercolumns;  // lists are sorted and unique
}

/// Columns of `x` (samples x units) belonging to the listed hypercolumns, side by side.
inline Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& x, const ConnectivityMask::SourceList& list, int m) {
    Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(list.size()) * m);
    for (std::size_t s = 0; s < list.size(); ++s)
        out.middleCols(static_cast<Eigen::Index>(s) * m, m) = x.middleCols(static_cast<Eigen::Index>(list[s]) * m, m);
    return out;
}

inline Eigen::VectorXd gather_segments(const Eigen::VectorXd& x, const ConnectivityMask::SourceList& list, int m) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(list.size()) * m);
    for (std::size_t s = 0; s < list.size(); ++s)
        out.segment(static_cast<Eigen::Index>(s) * m, m) = x.segment(static_cast<Eigen::Index>(list[s]) * m, m);
    return out;
}

inline Eigen::Index row_unit(const ConnectivityMask::SourceList& list, int m, Eigen::Index row) {
    return static_cast<Eigen::Index>(list[static_cast<std::size_t>(row / m)]) * m + row % m;
}

inline void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw parameter_error("learning rate must lie in (0, 1), got " + std::to_string(alpha));
}

/// Per-column lists of the sample indices with a nonzero entry. Built once, on first use.
class EventIndex {
public:
    explicit EventIndex(const Eigen::MatrixXd& m) : m_(m) {}

    const std::vector<int>& operator[](Eigen::Index col) const {
        std::call_once(built_, [this] {
            lists_.resize(static_cast<std::size_t>(m_.cols()));
            for (Eigen::Index c = 0; c < m_.cols(); ++c)
                for (Eigen::Index k = 0; k < m_.rows(); ++k)
                    if (m_(k, c) != 0.0) lists_[static_cast<std::size_t>(c)].push_back(static_cast<int>(k));
        });
        return lists_[static_cast<std::size_t>(col)];
    }

private:
    const Eigen::MatrixXd& m_;
    mutable std::once_flag built_;
    mutable std::vector<std::vector<int>> lists_;
};

/// Decay factors (1-alpha)^k for k in [0, n] and per-sample weights alpha (1-alpha)^(n-1-k).
struct BatchDecay {
    std::vector<double> power;
    Eigen::VectorXd weight;
    double alpha;
    double floor;

    BatchDecay(double alpha_, double floor_, Eigen::Index n) : power(static_cast<std::size_t>(n) + 1), weight(n), alpha(alpha_), floor(floor_) {
        const double d = 1.0 - alpha;
        power[0] = 1.0;
        for (std::size_t k = 1; k < power.size(); ++k) power[k] = power[k - 1] * d;
        for (Eigen::Index k = 0; k < n; ++k) weight(k) = alpha * power[static_cast<std::size_t>(n - 1 - k)];
    }

    Eigen::Index samples() const { return weight.size(); }
    double total() const { return power.back(); }
    /// Traces starting below this value may touch the floor during the batch.
    double risk_threshold() const { return floor / total(); }

    /// Exact replay of v := max(floor, (1-alpha) v + alpha a_k) over the batch, where a_k = product(k)
    /// and only the samples listed in `events` can have a nonzero product.
    template <typename Product>
    double replay(double v, const std::vector<int>& events, Product&& product) const {
        const double d = 1.0 - alpha;
        int last = -1;
        for (int k : events) {
            const int gap = k - last - 1;
            if (gap > 0) v = std::max(floor, v * power[static_cast<std::size_t>(gap)]);
            v = std::max(floor, d * v + alpha * product(k));
            last = k;
        }
        const int tail = static_cast<int>(samples()) - 1 - last;
        if (tail > 0) v = std::max(floor, v * power[static_cast<std::size_t>(tail)]);
        return v;
    }
};

inline void batch_update_unit_traces(Eigen::VectorXd& p, const Eigen::MatrixXd& act, const BatchDecay& bd) {
    const EventIndex events(act);
    std::vector<std::pair<Eigen::Index, double>> risky;
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if (p(i) < bd.risk_threshold()) risky.emplace_back(i, p(i));
    p *= bd.total();
    p.noalias() += act.transpose() * bd.weight;
    for (auto [i, p0] : risky) p(i) = bd.replay(p0, events[i], [&](int k) { return act(k, i); });
    p = p.cwiseMax(bd.floor);
}

}  // namespace detail

/// s_j = b_j + sum over connected i of pi_i w_ij. Unconnected pairs contribute nothing.
inline SupportVector propagate(const ActivityVector& source_activity, const ProjectionParams& params,
                               const LayerGeometry& target_geometry) {
    require_same(source_activity.geometry(), params.source_geometry(), "propagate source");
    require_same(target_geometry, params.target_geometry(), "propagate target");
    const int ms = params.source_geometry().minicolumns();
    const int mt = target_geometry.minicolumns();
    Eigen::VectorXd s = params.bias;
    const auto& x = source_activity.values();
    for (int h = 0; h < target_geometry.hypercolumns(); ++h) {
        const auto& list = params.mask.sources(h);
        if (list.empty()) continue;
        const auto& w = params.weights[static_cast<std::size_t>(h)];
        if (detail::is_identity(list, params.source_geometry().hypercolumns()))
            s.segment(target_geometry.offset(h), mt).noalias() += w.transpose() * x;
        else
            s.segment(target_geometry.offset(h), mt).noalias() += w.transpose() * detail::gather_segments(x, list, ms);
    }
    return {target_geometry, std::move(s)};
}

/// Batched propagate: rows of `source` are samples. Returns supports with one row per sample.
inline Eigen::MatrixXd propagate_batch(const Eigen::MatrixXd& source, const ProjectionParams& params) {
    const auto& src = params.source_geometry();
    const auto& tgt = params.target_geometry();
    require_length(src, source.cols(), "propagate_batch source");
    Eigen::MatrixXd s(source.rows(), tgt.units());
    const int mt = tgt.minicolumns();
    s.rowwise() = params.bias.transpose();
    if (params.mask.is_full()) {
        // Every target hypercolumn sees the whole source layer: multiply groups of hypercolumns at once so
        // the products stay wide even for small M.
        const int per_group = std::max(1, 256 / mt);
        const int groups = (tgt.hypercolumns() + per_group - 1) / per_group;
        parallel_for(groups, [&](int g) {
            const int h0 = g * per_group;
            const int h1 = std::min(tgt.hypercolumns(), h0 + per_group);
            Eigen::MatrixXd w(src.units(), static_cast<Eigen::Index>(h1 - h0) * mt);
            for (int h = h0; h < h1; ++h) w.middleCols(static_cast<Eigen::Index>(h - h0) * mt, mt) = params.weights[static_cast<std::size_t>(h)];
            s.middleCols(tgt.offset(h0), w.cols()).noalias() += source * w;
        });
        return s;
    }
    parallel_for(tgt.hypercolumns(), [&](int h) {
        const auto& list = params.mask.sources(h);
        if (list.empty()) return;
        s.middleCols(tgt.offset(h), mt).noalias() +=
            detail::gather_columns(source, list, src.minicolumns()) * params.weights[static_cast<std::size_t>(h)];
    });
    return s;
}

namespace detail {

// exp(x - max) below this is set to 0, so that normalized activities never become subnormal
// (arithmetic on subnormals is orders of magnitude slower and the mass involved is below 1e-299).
inline constexpr double kSoftmaxCut = -690.0;

template <class Block>
void softmax_inplace(Block&& v) {
    const double top = v.maxCoeff();
    v = ((v.array() - top) > kSoftmaxCut).select((v.array() - top).exp(), 0.0);
    v /= v.sum();
}

}  // namespace detail

/// In-place softmax within each hypercolumn of every row, max-shifted for stability.
inline void softmax_rows(Eigen::MatrixXd& support, const LayerGeometry& geometry) {
    require_length(geometry, support.cols(), "softmax");
    const int m = geometry.minicolumns();
    for (int h = 0; h < geometry.hypercolumns(); ++h) {
        auto block = support.middleCols(geometry.offset(h), m);
        for (Eigen::Index r = 0; r < block.rows(); ++r) detail::softmax_inplace(block.row(r));
    }
}

/// pi_j = exp(s_j) / sum_k exp(s_k) over the minicolumns of j's hypercolumn.
inline ActivityVector softmax_per_hypercolumn(const SupportVector& support) {
    const auto& g = support.geometry();
    const int m = g.minicolumns();
    Eigen::VectorXd pi(g.units());
    for (int h = 0; h < g.hypercolumns(); ++h) {
        pi.segment(g.offset(h), m) = support.values().segment(g.offset(h), m);
        detail::softmax_inplace(pi.segment(g.offset(h), m));
    }
    return ActivityVector::trusted(g, std::move(pi));
}

/// Uniform traces: p_i = 1/M_source, p_j = 1/M_target, p_ij = p_i p_j. Induces zero weights.
inline PTraces init_traces(const LayerGeometry& source, const LayerGeometry& target, const ConnectivityMask& mask,
                           double alpha, double floor = kTraceFloor) {
    detail::check_alpha(alpha);
    if (!(floor > 0.0 && floor < 1.0)) throw parameter_error("trace floor must lie in (0, 1)");
    require_same(mask.source_geometry(), source, "init_traces mask source");
    require_same(mask.target_geometry(), target, "init_traces mask target");
    const double pi = 1.0 / source.minicolumns();
    const double pj = 1.0 / target.minicolumns();
    std::vector<Eigen::MatrixXd> joint;
    joint.reserve(static_cast<std::size_t>(target.hypercolumns()));
    for (int h = 0; h < target.hypercolumns(); ++h)
        joint.emplace_back(Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(mask.fan_in(h)) * source.minicolumns(),
                                                     target.minicolumns(), pi * pj));
    return PTraces{source,
                   target,
                   alpha,
                   floor,
                   Eigen::VectorXd::Constant(source.units(), pi),
                   Eigen::VectorXd::Constant(target.units(), pj),
                   mask,
                   std::move(joint)};
}

/// One learning step: p := (1 - alpha) p + alpha * activity, then every trace floored.
inline void update_traces(PTraces& t, const ActivityVector& source, const ActivityVector& target) {
    require_same(source.geometry(), t.source_geometry, "update_traces source");
    require_same(target.geometry(), t.target_geometry, "update_traces target");
    const double a = t.alpha;
    const double d = 1.0 - a;
    const auto& x = source.values();
    const auto& y = target.values();
    t.pre = (d * t.pre + a * x).cwiseMax(t.floor);
    t.post = (d * t.post + a * y).cwiseMax(t.floor);
    const int ms = t.source_geometry.minicolumns();
    const int mt = t.target_geometry.minicolumns();
    for (int h = 0; h < t.target_geometry.hypercolumns(); ++h) {
        auto& j = t.joint[static_cast<std::size_t>(h)];
        if (j.size() == 0) continue;
        const Eigen::VectorXd xg = detail::gather_segments(x, t.tracked.sources(h), ms);
        const auto yh = y.segment(t.target_geometry.offset(h), mt);
        j = (d * j + a * (xg * yh.transpose())).cwiseMax(t.floor);
    }
}

/// Applies update_traces for every row of (source, target) in order, in one pass.
///
/// Within a batch the recursion unrolls to p_n = (1-a)^n p_0 + sum_k a (1-a)^(n-1-k) x_k y_k, which is a
/// weighted matrix product. Traces that could reach the floor during the batch are replayed sample by
/// sample so the result matches the sequential definition up to rounding.
inline void update_traces_batch(PTraces& t, const Eigen::MatrixXd& source, const Eigen::MatrixXd& target) {
    require_length(t.source_geometry, source.cols(), "update_traces_batch source");
    require_length(t.target_geometry, target.cols(), "update_traces_batch target");
    if (source.rows() != target.rows()) throw dimension_error("update_traces_batch: sample counts differ");
    if (source.rows() == 0) return;
    const detail::BatchDecay bd(t.alpha, t.floor, source.rows());
    detail::batch_update_unit_traces(t.pre, source, bd);
    detail::batch_update_unit_traces(t.post, target, bd);

    const Eigen::MatrixXd weighted_target = bd.weight.asDiagonal() * target;
    const detail::EventIndex source_events(source);
    const auto& sg = t.source_geometry;
    const auto& tg = t.target_geometry;
    const int ms = sg.minicolumns();
    const int mt = tg.minicolumns();
    parallel_for(tg.hypercolumns(), [&](int h) {
        auto& j = t.joint[static_cast<std::size_t>(h)];
        if (j.size() == 0) return;
        const auto& list = t.tracked.sources(h);
        struct Risk { Eigen::Index r, c; double p0; };
        std::vector<Risk> risky;
        for (Eigen::Index c = 0; c < j.cols(); ++c)
            for (Eigen::Index r = 0; r < j.rows(); ++r)
                if (j(r, c) < bd.risk_threshold()) risky.push_back({r, c, j(r, c)});
        j *= bd.total();
        if (detail::is_identity(list, sg.hypercolumns()))
            j.noalias() += source.transpose() * weighted_target.middleCols(tg.offset(h), mt);
        else
            j.noalias() += detail::gather_columns(source, list, ms).transpose() * weighted_target.middleCols(tg.offset(h), mt);
        for (const auto& rk : risky) {
            const Eigen::Index i = detail::row_unit(list, ms, rk.r);
            const Eigen::Index jj = tg.offset(h) + rk.c;
            j(rk.r, rk.c) = bd.replay(rk.p0, source_events[i], [&](int k) { return source(k, i) * target(k, jj); });
        }
        j = j.cwiseMax(t.floor);
    });
}

/// update_traces_batch for a recurrent projection (source layer = target layer, full tracking) driven
/// by the same activity on both sides. Computes one triangle and mirrors it, so the joint traces are
/// exactly symmetric.
inline void update_recurrent_traces_batch(PTraces& t, const Eigen::MatrixXd& activity) {
    require_same(t.source_geometry, t.target_geometry, "recurrent traces");
    if (!t.tracked.is_full()) throw parameter_error("recurrent traces must track every hypercolumn pair");
    require_length(t.source_geometry, activity.cols(), "update_recurrent_traces_batch");
    if (activity.rows() == 0) return;
    const detail::BatchDecay bd(t.alpha, t.floor, activity.rows());
    detail::batch_update_unit_traces(t.pre, activity, bd);
    t.post = t.pre;

    const auto& g = t.source_geometry;
    const int m = g.minicolumns();
    const int hc = g.hypercolumns();
    const Eigen::MatrixXd weighted = bd.weight.asDiagonal() * activity;
    const detail::EventIndex events(activity);
    // Target hypercolumn h owns rows of source hypercolumns 0..h (the upper triangle, diagonal included).
    parallel_for(hc, [&](int h) {
        auto j = t.joint[static_cast<std::size_t>(h)].topRows(static_cast<Eigen::Index>(h + 1) * m);
        struct Risk { Eigen::Index r, c; double p0; };
        std::vector<Risk> risky;
        for (Eigen::Index c = 0; c < j.cols(); ++c)
            for (Eigen::Index r = 0; r < j.rows(); ++r)
                if (j(r, c) < bd.risk_threshold()) risky.push_back({r, c, j(r, c)});
        j *= bd.total();
        j.noalias() += activity.leftCols(j.rows()).transpose() * weighted.middleCols(g.offset(h), m);
        for (const auto& rk : risky) {
            const Eigen::Index jj = g.offset(h) + rk.c;
            j(rk.r, rk.c) = bd.replay(rk.p0, events[rk.r], [&](int k) { return activity(k, rk.r) * activity(k, jj); });
        }
        j = j.cwiseMax(t.floor);
    });
    for (int h = 0; h < hc; ++h) {
        auto& jh = t.joint[static_cast<std::size_t>(h)];
        for (int r = 1; r < m; ++r)
            for (int c = 0; c < r; ++c) jh(g.offset(h) + r, c) = jh(g.offset(h) + c, r);
        for (int a = h + 1; a < hc; ++a)
            jh.middleRows(g.offset(a), m) = t.joint[static_cast<std::size_t>(a)].middleRows(g.offset(h), m).transpose();
    }
}

/// Traces restricted to a sub-mask of the tracked pairs (drops the joint traces of the other pairs).
inline PTraces restrict_traces(const PTraces& t, const ConnectivityMask& mask) {
    if (!mask.subset_of(t.tracked)) throw dimension_error("restrict_traces: mask is not a subset of the tracked pairs");
    const int ms = t.source_geometry.minicolumns();
    std::vector<Eigen::MatrixXd> joint;
    joint.reserve(t.joint.size());
    for (int h = 0; h < t.target_geometry.hypercolumns(); ++h) {
        const auto& list = mask.sources(h);
        Eigen::MatrixXd b(static_cast<Eigen::Index>(list.size()) * ms, t.target_geometry.minicolumns());
        for (std::size_t s = 0; s < list.size(); ++s) {
            const int from = t.tracked.slot(h, static_cast<int>(list[s]));
            b.middleRows(static_cast<Eigen::Index>(s) * ms, ms) =
                t.joint[static_cast<std::size_t>(h)].middleRows(static_cast<Eigen::Index>(from) * ms, ms);
        }
        joint.push_back(std::move(b));
    }
    return PTraces{t.source_geometry, t.target_geometry, t.alpha, t.floor, t.pre, t.post, mask, std::move(joint)};
}

/// b_j = log p_j and w_ij = log(p_ij / (p_i p_j)) for the pairs of `mask` (a subset of the tracked pairs).
inline ProjectionParams compute_params(const PTraces& t, const ConnectivityMask& mask) {
    if (!mask.subset_of(t.tracked)) throw dimension_error("compute_params: mask is not a subset of the tracked pairs");
    if (t.pre.minCoeff() < t.floor || t.post.minCoeff() < t.floor)
        throw invariant_error("compute_params: unit trace below the floor");
    const int ms = t.source_geometry.minicolumns();
    const int mt = t.target_geometry.minicolumns();
    ProjectionParams p{t.post.array().log().matrix(), {}, mask};
    p.weights.resize(static_cast<std::size_t>(t.target_geometry.hypercolumns()));
    for (int h = 0; h < t.target_geometry.hypercolumns(); ++h) {
        const auto& list = mask.sources(h);
        const auto& j = t.joint[static_cast<std::size_t>(h)];
        auto& w = p.weights[static_cast<std::size_t>(h)];
        w.resize(static_cast<Eigen::Index>(list.size()) * ms, mt);
        const auto post = t.post.segment(t.target_geometry.offset(h), mt);
        for (std::size_t s = 0; s < list.size(); ++s) {
            const Eigen::Index from = static_cast<Eigen::Index>(t.tracked.slot(h, static_cast<int>(list[s]))) * ms;
            const Eigen::Index to = static_cast<Eigen::Index>(s) * ms;
            for (int a = 0; a < ms; ++a) {
                const double pi = t.pre(static_cast<Eigen::Index>(list[s]) * ms + a);
                for (int c = 0; c < mt; ++c) {
                    const double pij = j(from + a, c);
                    if (!(pij >= t.floor)) throw invariant_error("compute_params: joint trace below the floor");
                    w(to + a, c) = std::log(pij / (pi * post(c)));
                }
            }
        }
    }
    return p;
}

inline ProjectionParams compute_params(const PTraces& t) { return compute_params(t, t.tracked); }

}  // namespace bcpnn
