#pragma once

// Input -> hidden (L4) projection: unsupervised BCPNN learning with structural plasticity.

#include "bcpnn/core.hpp"
#include "bcpnn/dataio.hpp"
#include "bcpnn/topology.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace bcpnn {

struct FeedforwardConfig {
    LayerGeometry hidden{100, 100};
    double p_conn = 0.10;
    double alpha = 1e-4;
    double trace_floor = kTraceFloor;
    int epochs = 3;
    /// Structural plasticity runs after each of the first `rewire_epochs` passes; 0 keeps the random mask.
    int rewire_epochs = 2;
    double swap_fraction = 0.1;
    bool shuffle = true;
    std::uint64_t seed = 1;
    /// Samples between recomputations of bias and weights. 0 recomputes once per pass.
    std::size_t param_interval = 0;
    /// Relative amplitude of the seeded perturbation applied to the joint traces before the first pass.
    double init_noise = 0.0;
    /// Gain on the bias term in the support used while learning (inference always uses the full bias).
    double bias_gain = 1.0;
    /// Start the input traces at the dataset mean activity (joint traces at p_i p_j) instead of 1/M.
    bool data_init = false;
    /// Standard deviation of seeded Gaussian noise added to the hidden supports while learning.
    double activity_noise = 0.0;
    /// Passes during which activity_noise is applied.
    int noise_epochs = 1;
    /// Samples per batched trace update (only bounds memory; results do not depend on it beyond rounding).
    std::size_t batch_size = 1000;
};

struct FeedforwardModel {
    LayerGeometry input_geometry;
    LayerGeometry hidden_geometry;
    ConnectivityMask mask;
    PTraces traces;
    ProjectionParams params;
    int epochs_trained = 0;
    std::uint64_t seed = 0;
};

/// Per-pass training statistics.
struct EpochReport {
    int epoch = 0;
    double seconds = 0.0;
    double mean_max_activity = 0.0;  ///< mean over samples and hidden hypercolumns of max_j pi_j
    std::size_t rewired = 0;         ///< connections moved by structural plasticity after this pass
    double min_trace = 0.0;
    double max_weight = 0.0;
};

using EpochCallback = std::function<void(const EpochReport&)>;

/// Model with uniform traces and zero weights over a random mask.
inline FeedforwardModel untrained_feedforward(const LayerGeometry& input, const FeedforwardConfig& cfg) {
    auto mask = random_mask(input, cfg.hidden, cfg.p_conn, cfg.seed);
    auto traces = init_traces(input, cfg.hidden, mask, cfg.alpha, cfg.trace_floor);
    auto params = compute_params(traces);
    return {input, cfg.hidden, std::move(mask), std::move(traces), std::move(params), 0, cfg.seed};
}

/// Hidden activity softmax(propagate(x)) for one input.
inline ActivityVector encode(const FeedforwardModel& model, const ActivityVector& input) {
    require_same(input.geometry(), model.input_geometry, "encode input");
    return softmax_per_hypercolumn(propagate(input, model.params, model.hidden_geometry));
}

/// encode for each row of `inputs`.
inline Eigen::MatrixXd encode_batch(const FeedforwardModel& model, const Eigen::MatrixXd& inputs) {
    Eigen::MatrixXd s = propagate_batch(inputs, model.params);
    softmax_rows(s, model.hidden_geometry);
    return s;
}

/// Feedforward supports (before the softmax) for each row of `inputs`.
inline Eigen::MatrixXd support_batch(const FeedforwardModel& model, const Eigen::MatrixXd& inputs) {
    return propagate_batch(inputs, model.params);
}

/// encode over a whole dataset, processed in batches. Rows follow dataset order.
inline Eigen::MatrixXd encode_dataset(const FeedforwardModel& model, const EncodedDataset& data,
                                      std::size_t batch_size = 1000) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(data.size()), model.hidden_geometry.units());
    for (std::size_t b = 0; b < data.size(); b += batch_size) {
        const std::size_t e = std::min(data.size(), b + batch_size);
        out.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) = encode_batch(model, data.batch(b, e));
    }
    return out;
}

namespace detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, bool shuffle, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
        std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch) + 1);
        std::shuffle(order.begin(), order.end(), rng);
    }
    return order;
}

/// p_ij := p_i p_j (1 + noise * u), u uniform in [-1, 1]. Keeps p_ij below min(p_i, p_j) for noise < 1.
inline void perturb_joint(PTraces& t, double noise, std::uint64_t seed) {
    if (noise <= 0.0) return;
    if (noise >= 1.0) throw parameter_error("init_noise must be below 1");
    std::mt19937_64 rng(seed ^ 0xA5A5A5A5DEADBEEFULL);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& b : t.joint)
        for (Eigen::Index c = 0; c < b.cols(); ++c)
            for (Eigen::Index r = 0; r < b.rows(); ++r) b(r, c) *= 1.0 + noise * u(rng);
}

}  // namespace detail

/// Unsupervised training of the input -> hidden projection.
///
/// Each pass visits the samples (shuffled per pass when configured), computes the hidden activity with the
/// current parameters and feeds (input, hidden) to the trace update. Parameters are recomputed from the
/// traces every `param_interval` samples and at the end of each pass. After each of the first
/// `rewire_epochs` passes the mask is rewired by mutual information; joint traces for all pairs are kept
/// while rewiring is active and dropped to the final mask afterwards.
inline FeedforwardModel train_feedforward(const EncodedDataset& data, const FeedforwardConfig& cfg,
                                          const EpochCallback& on_epoch = {}) {
    if (data.empty()) throw parameter_error("train_feedforward: empty dataset");
    if (cfg.epochs < 0 || cfg.rewire_epochs < 0) throw parameter_error("train_feedforward: negative epoch count");
    if (cfg.batch_size == 0) throw parameter_error("train_feedforward: batch_size must be positive");
    FeedforwardModel model = untrained_feedforward(data.geometry(), cfg);
    if (cfg.epochs == 0) return model;

    const bool rewiring = cfg.rewire_epochs > 0;
    const auto tracked = rewiring ? ConnectivityMask::full(model.input_geometry, model.hidden_geometry) : model.mask;
    model.traces = init_traces(model.input_geometry, model.hidden_geometry, tracked, cfg.alpha, cfg.trace_floor);
    if (cfg.data_init) {
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(model.input_geometry.units());
        for (std::size_t b = 0; b < data.size(); b += cfg.batch_size)
            mean += data.batch(b, std::min(data.size(), b + cfg.batch_size)).colwise().sum().transpose();
        mean /= static_cast<double>(data.size());
        model.traces.pre = mean.cwiseMax(cfg.trace_floor);
        const auto& hg = model.hidden_geometry;
        const int ms = model.input_geometry.minicolumns();
        for (int h = 0; h < hg.hypercolumns(); ++h) {
            const auto& list = model.traces.tracked.sources(h);
            auto& j = model.traces.joint[static_cast<std::size_t>(h)];
            for (std::size_t k = 0; k < list.size(); ++k)
                for (int a = 0; a < ms; ++a)
                    j.row(static_cast<Eigen::Index>(k) * ms + a) =
                        (model.traces.pre(static_cast<Eigen::Index>(list[k]) * ms + a) * model.traces.post.segment(hg.offset(h), hg.minicolumns())).transpose().cwiseMax(cfg.trace_floor);
        }
    }
    detail::perturb_joint(model.traces, cfg.init_noise, cfg.seed);
    model.params = compute_params(model.traces, model.mask);

    std::mt19937_64 noise_rng(cfg.seed ^ 0x2545F4914F6CDD1DULL);
    const std::size_t chunk = cfg.param_interval > 0 ? std::min(cfg.param_interval, cfg.batch_size) : cfg.batch_size;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto order = detail::epoch_order(data.size(), cfg.shuffle, cfg.seed, epoch);
        double peak_sum = 0.0;
        std::size_t since_params = 0;
        for (std::size_t b = 0; b < order.size(); b += chunk) {
            const std::size_t e = std::min(order.size(), b + chunk);
            const std::span<const std::size_t> idx(order.data() + b, e - b);
            const Eigen::MatrixXd x = data.batch(idx);
            Eigen::MatrixXd y = propagate_batch(x, model.params);
            if (cfg.bias_gain != 1.0) y.rowwise() -= (1.0 - cfg.bias_gain) * model.params.bias.transpose();
            if (cfg.activity_noise > 0.0 && epoch < cfg.noise_epochs) {
                std::normal_distribution<double> gauss(0.0, cfg.activity_noise);
                for (Eigen::Index c = 0; c < y.cols(); ++c)
                    for (Eigen::Index r = 0; r < y.rows(); ++r) y(r, c) += gauss(noise_rng);
            }
            softmax_rows(y, model.hidden_geometry);
            for (int h = 0; h < model.hidden_geometry.hypercolumns(); ++h)
                peak_sum += y.middleCols(model.hidden_geometry.offset(h), model.hidden_geometry.minicolumns()).rowwise().maxCoeff().sum();
            update_traces_batch(model.traces, x, y);
            since_params += idx.size();
            if (cfg.param_interval > 0 && since_params >= cfg.param_interval && e < order.size()) {
                model.params = compute_params(model.traces, model.mask);
                since_params = 0;
            }
        }

        EpochReport report;
        report.epoch = epoch + 1;
        report.mean_max_activity = peak_sum / (static_cast<double>(data.size()) * model.hidden_geometry.hypercolumns());
        if (epoch < cfg.rewire_epochs) {
            const auto scores = mutual_information_scores(model.traces);
            auto next = rewire(model.mask, scores, cfg.swap_fraction);
            for (int h = 0; h < model.hidden_geometry.hypercolumns(); ++h) {
                const auto& a = model.mask.sources(h);
                const auto& n = next.sources(h);
                std::vector<std::uint32_t> diff;
                std::set_difference(n.begin(), n.end(), a.begin(), a.end(), std::back_inserter(diff));
                report.rewired += diff.size();
            }
            model.mask = std::move(next);
        }
        const bool rewiring_done = epoch + 1 >= cfg.rewire_epochs || epoch + 1 == cfg.epochs;
        if (rewiring_done && !(model.traces.tracked == model.mask))
            model.traces = restrict_traces(model.traces, model.mask);
        model.params = compute_params(model.traces, model.mask);
        model.epochs_trained = epoch + 1;

        report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.min_trace = std::min(model.traces.pre.minCoeff(), model.traces.post.minCoeff());
        for (const auto& j : model.traces.joint)
            if (j.size()) report.min_trace = std::min(report.min_trace, j.minCoeff());
        for (const auto& w : model.params.weights)
            if (w.size()) report.max_weight = std::max(report.max_weight, w.cwiseAbs().maxCoeff());
        if (on_epoch) on_epoch(report);
    }
    return model;
}

}  // namespace bcpnn
