#pragma once

// Layer geometry and the activity/support vectors that live on it.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace bcpnn {

/// Thrown when a vector or matrix does not match the geometry it is used with.
struct dimension_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Thrown for out-of-range configuration values (learning rates, fractions, counts).
struct parameter_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Thrown when an internal invariant is found broken. Always indicates a bug upstream.
struct invariant_error : std::logic_error {
    using std::logic_error::logic_error;
};

/// Tolerance on per-hypercolumn normalization of activities and traces.
inline constexpr double kNormTolerance = 1e-9;

/// H hypercolumns of M minicolumns each. Unit u lives in hypercolumn u / M at minicolumn u % M.
class LayerGeometry {
public:
    LayerGeometry(int hypercolumns, int minicolumns)
        : hypercolumns_(hypercolumns), minicolumns_(minicolumns) {
        if (hypercolumns < 1)
            throw parameter_error("layer geometry needs at least one hypercolumn, got " +
                                  std::to_string(hypercolumns));
        if (minicolumns < 2)
            throw parameter_error("layer geometry needs at least two minicolumns per hypercolumn, got " +
                                  std::to_string(minicolumns));
    }

    int hypercolumns() const noexcept { return hypercolumns_; }
    int minicolumns() const noexcept { return minicolumns_; }
    Eigen::Index units() const noexcept {
        return static_cast<Eigen::Index>(hypercolumns_) * minicolumns_;
    }

    int hypercolumn_of(Eigen::Index unit) const noexcept { return static_cast<int>(unit / minicolumns_); }
    int minicolumn_of(Eigen::Index unit) const noexcept { return static_cast<int>(unit % minicolumns_); }
    Eigen::Index unit(int hypercolumn, int minicolumn) const noexcept {
        return static_cast<Eigen::Index>(hypercolumn) * minicolumns_ + minicolumn;
    }
    /// First unit of a hypercolumn.
    Eigen::Index offset(int hypercolumn) const noexcept { return unit(hypercolumn, 0); }

    friend bool operator==(const LayerGeometry&, const LayerGeometry&) = default;

    std::string to_string() const {
        return std::to_string(hypercolumns_) + "x" + std::to_string(minicolumns_);
    }

private:
    int hypercolumns_;
    int minicolumns_;
};

inline void require_same(const LayerGeometry& a, const LayerGeometry& b, const char* what) {
    if (!(a == b))
        throw dimension_error(std::string(what) + ": geometry " + a.to_string() + " does not match " +
                              b.to_string());
}

inline void require_length(const LayerGeometry& g, Eigen::Index n, const char* what) {
    if (g.units() != n)
        throw dimension_error(std::string(what) + ": expected " + std::to_string(g.units()) +
                              " values for geometry " + g.to_string() + ", got " + std::to_string(n));
}

/// Checks that `values` is a valid activity on `g`: finite, non-negative, summing to one per hypercolumn.
/// Returns an empty string when valid, otherwise a description of the first violation.
template <typename Derived>
std::string activity_violation(const LayerGeometry& g, const Eigen::MatrixBase<Derived>& values) {
    if (values.size() != g.units()) return "length mismatch";
    const int m = g.minicolumns();
    for (int h = 0; h < g.hypercolumns(); ++h) {
        double sum = 0.0;
        for (int k = 0; k < m; ++k) {
            const double v = values(g.unit(h, k));
            if (!std::isfinite(v) || v < 0.0)
                return "unit " + std::to_string(g.unit(h, k)) + " has invalid activity " + std::to_string(v);
            sum += v;
        }
        if (std::abs(sum - 1.0) > kNormTolerance)
            return "hypercolumn " + std::to_string(h) + " sums to " + std::to_string(sum);
    }
    return {};
}

/// Per-layer unit activations; each hypercolumn is a probability distribution over its minicolumns.
class ActivityVector {
public:
    /// Validates the invariants; throws dimension_error or invariant_error.
    ActivityVector(LayerGeometry geometry, Eigen::VectorXd values)
        : geometry_(geometry), values_(std::move(values)) {
        require_length(geometry_, values_.size(), "activity vector");
        if (auto why = activity_violation(geometry_, values_); !why.empty())
            throw invariant_error("activity vector: " + why);
    }

    /// Skips validation. For producers that guarantee the invariants by construction (softmax).
    static ActivityVector trusted(LayerGeometry geometry, Eigen::VectorXd values) {
        return ActivityVector(geometry, std::move(values), trusted_tag{});
    }

    static ActivityVector uniform(LayerGeometry geometry) {
        return trusted(geometry, Eigen::VectorXd::Constant(geometry.units(), 1.0 / geometry.minicolumns()));
    }

    const LayerGeometry& geometry() const noexcept { return geometry_; }
    const Eigen::VectorXd& values() const noexcept { return values_; }
    double operator[](Eigen::Index u) const { return values_(u); }
    auto hypercolumn(int h) const { return values_.segment(geometry_.offset(h), geometry_.minicolumns()); }

private:
    struct trusted_tag {};
    ActivityVector(LayerGeometry geometry, Eigen::VectorXd values, trusted_tag)
        : geometry_(geometry), values_(std::move(values)) {}

    LayerGeometry geometry_;
    Eigen::VectorXd values_;
};

/// Total input s_j received by each unit of a layer. Unbounded but finite.
class SupportVector {
public:
    SupportVector(LayerGeometry geometry, Eigen::VectorXd values)
        : geometry_(geometry), values_(std::move(values)) {
        require_length(geometry_, values_.size(), "support vector");
        if (!values_.allFinite()) throw invariant_error("support vector has non-finite entries");
    }

    const LayerGeometry& geometry() const noexcept { return geometry_; }
    const Eigen::VectorXd& values() const noexcept { return values_; }
    double operator[](Eigen::Index u) const { return values_(u); }

private:
    LayerGeometry geometry_;
    Eigen::VectorXd values_;
};

}  // namespace bcpnn
