#pragma once

// Hidden-layer (L2/3) recurrent attractor: Hebbian-Bayesian training on feedforward-driven
// representations, synchronous attractor dynamics and top-down reconstruction.

#include "bcpnn/core.hpp"
#include "bcpnn/dataio.hpp"
#include "bcpnn/feedforward.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bcpnn {

/// How the feedforward (L4) input enters the attractor iteration.
enum class DriveMode {
    clamped_init,      ///< the feedforward softmax output is the initial state; iteration is purely recurrent
    persistent_drive,  ///< the feedforward support (times a gain) is added to the recurrent support every step
};

inline std::string to_string(DriveMode m) {
    return m == DriveMode::clamped_init ? "clamped-init" : "persistent-drive";
}

inline DriveMode parse_drive_mode(const std::string& s) {
    if (s == "clamped-init") return DriveMode::clamped_init;
    if (s == "persistent-drive") return DriveMode::persistent_drive;
    throw parameter_error("unknown drive mode '" + s + "' (expected clamped-init or persistent-drive)");
}

inline constexpr double kConvergenceTolerance = 1e-6;

struct RecurrentConfig {
    double alpha = 1e-4;
    double trace_floor = kTraceFloor;
    int epochs = 1;
    int timesteps = 20;
    DriveMode drive_mode = DriveMode::clamped_init;
    double drive_gain = 1.0;
    double eps_conv = kConvergenceTolerance;
    bool shuffle = true;
    std::uint64_t seed = 1;
    std::size_t batch_size = 1000;
};

struct RecurrentModel {
    LayerGeometry geometry;
    PTraces traces;
    ProjectionParams params;
    int timesteps = 20;
    DriveMode drive_mode = DriveMode::clamped_init;
    double drive_gain = 1.0;
    double eps_conv = kConvergenceTolerance;
    int epochs_trained = 0;
};

struct AttractorTrajectory {
    std::vector<ActivityVector> states;  ///< initial state followed by one state per iteration
    bool converged = false;
    std::optional<int> steps_to_convergence;

    const ActivityVector& final_state() const { return states.back(); }
};

/// Sets the weights between units of the same hypercolumn (self-connections included) to zero.
inline void zero_within_hypercolumn(ProjectionParams& p) {
    const auto& g = p.target_geometry();
    for (int h = 0; h < g.hypercolumns(); ++h) {
        const int s = p.mask.slot(h, h);
        if (s >= 0)
            p.weights[static_cast<std::size_t>(h)].middleRows(static_cast<Eigen::Index>(s) * g.minicolumns(), g.minicolumns()).setZero();
    }
}

/// Recurrent model with uniform traces: all weights zero, bias log(1/M).
inline RecurrentModel untrained_recurrent(const LayerGeometry& g, const RecurrentConfig& cfg) {
    auto traces = init_traces(g, g, ConnectivityMask::full(g, g), cfg.alpha, cfg.trace_floor);
    auto params = compute_params(traces);
    zero_within_hypercolumn(params);
    return {g, std::move(traces), std::move(params), cfg.timesteps, cfg.drive_mode, cfg.drive_gain, cfg.eps_conv, 0};
}

/// Produces the activity rows for the listed samples.
using PatternSource = std::function<Eigen::MatrixXd(std::span<const std::size_t>)>;

/// Trains a recurrent projection on the patterns produced by `source` for samples [0, n).
inline RecurrentModel train_attractor_on(const LayerGeometry& g, std::size_t n, const PatternSource& source,
                                         const RecurrentConfig& cfg) {
    if (n == 0) throw parameter_error("recurrent training: empty dataset");
    if (cfg.timesteps < 1) throw parameter_error("recurrent training: timesteps must be at least 1");
    if (!(cfg.eps_conv > 0.0)) throw parameter_error("recurrent training: eps_conv must be positive");
    RecurrentModel model = untrained_recurrent(g, cfg);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = detail::epoch_order(n, cfg.shuffle, cfg.seed ^ 0x5bd1e995ULL, epoch);
        for (std::size_t b = 0; b < n; b += cfg.batch_size) {
            const std::size_t e = std::min(n, b + cfg.batch_size);
            const Eigen::MatrixXd h = source(std::span<const std::size_t>(order.data() + b, e - b));
            require_length(g, h.cols(), "recurrent training patterns");
            update_recurrent_traces_batch(model.traces, h);
        }
        model.epochs_trained = epoch + 1;
    }
    model.params = compute_params(model.traces);
    zero_within_hypercolumn(model.params);
    return model;
}

/// Attractor trained directly on the dataset's own activities (the input-layer baseline).
inline RecurrentModel train_attractor(const EncodedDataset& data, const RecurrentConfig& cfg) {
    return train_attractor_on(data.geometry(), data.size(),
                              [&](std::span<const std::size_t> idx) { return data.batch(idx); }, cfg);
}

/// Recurrent projection trained on the feedforward-driven hidden activities of `data`.
inline RecurrentModel train_recurrent(const FeedforwardModel& ff, const EncodedDataset& data, const RecurrentConfig& cfg) {
    if (ff.epochs_trained < 1) throw parameter_error("train_recurrent: the feedforward model has not been trained");
    require_same(data.geometry(), ff.input_geometry, "train_recurrent dataset");
    return train_attractor_on(ff.hidden_geometry, data.size(),
                              [&](std::span<const std::size_t> idx) { return encode_batch(ff, data.batch(idx)); }, cfg);
}

/// Recurrent support b + W pi for a state.
inline SupportVector recurrent_support(const RecurrentModel& model, const ActivityVector& state) {
    return propagate(state, model.params, model.geometry);
}

/// sum_j s_j pi_j with s the recurrent support of the state.
inline double support_alignment(const RecurrentModel& model, const ActivityVector& state) {
    return recurrent_support(model, state).values().dot(state.values());
}

/// Synchronous iteration state_{t+1} = softmax(b + W state_t [+ gain * ff_support]) for at most T steps,
/// stopping once the max-norm change falls below eps_conv.
inline AttractorTrajectory run_attractor(const RecurrentModel& model, const ActivityVector& initial,
                                         const std::optional<SupportVector>& ff_support = std::nullopt) {
    require_same(initial.geometry(), model.geometry, "run_attractor initial state");
    const bool drive = model.drive_mode == DriveMode::persistent_drive && ff_support.has_value();
    if (drive) require_same(ff_support->geometry(), model.geometry, "run_attractor feedforward support");
    AttractorTrajectory traj;
    traj.states.push_back(initial);
    for (int t = 1; t <= model.timesteps; ++t) {
        Eigen::VectorXd s = recurrent_support(model, traj.states.back()).values();
        if (drive) s += model.drive_gain * ff_support->values();
        auto next = softmax_per_hypercolumn(SupportVector(model.geometry, std::move(s)));
        const double change = (next.values() - traj.states.back().values()).cwiseAbs().maxCoeff();
        traj.states.push_back(std::move(next));
        if (change < model.eps_conv) {
            traj.converged = true;
            traj.steps_to_convergence = t;
            break;
        }
    }
    return traj;
}

/// Final states of run_attractor for many initial states at once.
struct AttractorBatch {
    Eigen::MatrixXd final_states;   ///< one row per sample
    std::vector<int> steps;         ///< steps to convergence, or -1 when T was reached first
    std::vector<std::vector<double>> alignment;  ///< support alignment per visited state (only when requested)

    bool converged(std::size_t k) const { return steps[k] >= 0; }
};

inline AttractorBatch run_attractor_batch(const RecurrentModel& model, const Eigen::MatrixXd& initial,
                                          const Eigen::MatrixXd* ff_support = nullptr, bool track_alignment = false) {
    require_length(model.geometry, initial.cols(), "run_attractor_batch");
    const bool drive = model.drive_mode == DriveMode::persistent_drive && ff_support != nullptr;
    if (drive && (ff_support->rows() != initial.rows() || ff_support->cols() != initial.cols()))
        throw dimension_error("run_attractor_batch: feedforward support shape mismatch");
    const auto n = static_cast<std::size_t>(initial.rows());
    AttractorBatch out{initial, std::vector<int>(n, -1), {}};
    if (track_alignment) out.alignment.resize(n);
    std::vector<std::size_t> active(n);
    std::iota(active.begin(), active.end(), std::size_t{0});
    for (int t = 1; t <= model.timesteps && !active.empty(); ++t) {
        Eigen::MatrixXd state(static_cast<Eigen::Index>(active.size()), initial.cols());
        for (std::size_t r = 0; r < active.size(); ++r) state.row(static_cast<Eigen::Index>(r)) = out.final_states.row(static_cast<Eigen::Index>(active[r]));
        Eigen::MatrixXd s = propagate_batch(state, model.params);
        if (track_alignment)
            for (std::size_t r = 0; r < active.size(); ++r)
                out.alignment[active[r]].push_back(s.row(static_cast<Eigen::Index>(r)).dot(state.row(static_cast<Eigen::Index>(r))));
        if (drive)
            for (std::size_t r = 0; r < active.size(); ++r)
                s.row(static_cast<Eigen::Index>(r)) += model.drive_gain * ff_support->row(static_cast<Eigen::Index>(active[r]));
        softmax_rows(s, model.geometry);
        std::vector<std::size_t> still;
        for (std::size_t r = 0; r < active.size(); ++r) {
            const auto row = static_cast<Eigen::Index>(r);
            const double change = (s.row(row) - state.row(row)).cwiseAbs().maxCoeff();
            out.final_states.row(static_cast<Eigen::Index>(active[r])) = s.row(row);
            if (change < model.eps_conv)
                out.steps[active[r]] = t;
            else
                still.push_back(active[r]);
        }
        active = std::move(still);
    }
    return out;
}

/// Top-down reconstruction: input supports s_i = sum_j pi_j w_ij through the feedforward weights
/// (no bias), then softmax per input hypercolumn.
inline ActivityVector reconstruct(const FeedforwardModel& ff, const ActivityVector& hidden) {
    require_same(hidden.geometry(), ff.hidden_geometry, "reconstruct hidden state");
    const auto& in = ff.input_geometry;
    const auto& hg = ff.hidden_geometry;
    const int ms = in.minicolumns();
    Eigen::VectorXd s = Eigen::VectorXd::Zero(in.units());
    for (int h = 0; h < hg.hypercolumns(); ++h) {
        const auto& list = ff.params.mask.sources(h);
        if (list.empty()) continue;
        const Eigen::VectorXd back = ff.params.weights[static_cast<std::size_t>(h)] * hidden.hypercolumn(h);
        for (std::size_t k = 0; k < list.size(); ++k)
            s.segment(static_cast<Eigen::Index>(list[k]) * ms, ms) += back.segment(static_cast<Eigen::Index>(k) * ms, ms);
    }
    return softmax_per_hypercolumn(SupportVector(in, std::move(s)));
}

/// reconstruct for each row of `hidden`.
inline Eigen::MatrixXd reconstruct_batch(const FeedforwardModel& ff, const Eigen::MatrixXd& hidden) {
    const auto& in = ff.input_geometry;
    const auto& hg = ff.hidden_geometry;
    require_length(hg, hidden.cols(), "reconstruct_batch");
    const int ms = in.minicolumns();
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(hidden.rows(), in.units());
    for (int h = 0; h < hg.hypercolumns(); ++h) {
        const auto& list = ff.params.mask.sources(h);
        if (list.empty()) continue;
        const Eigen::MatrixXd back =
            hidden.middleCols(hg.offset(h), hg.minicolumns()) * ff.params.weights[static_cast<std::size_t>(h)].transpose();
        for (std::size_t k = 0; k < list.size(); ++k)
            s.middleCols(static_cast<Eigen::Index>(list[k]) * ms, ms) += back.middleCols(static_cast<Eigen::Index>(k) * ms, ms);
    }
    softmax_rows(s, in);
    return s;
}

}  // namespace bcpnn
