#pragma once

// Hypercolumn-to-hypercolumn connectivity between two layers.

#include "bcpnn/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace bcpnn {

/// For each target hypercolumn, the sorted set of source hypercolumns feeding it.
/// A selected pair connects every minicolumn of the source to every minicolumn of the target.
class ConnectivityMask {
public:
    using SourceList = std::vector<std::uint32_t>;

    ConnectivityMask(LayerGeometry source, LayerGeometry target, std::vector<SourceList> sources)
        : source_(source), target_(target), sources_(std::move(sources)) {
        if (static_cast<int>(sources_.size()) != target_.hypercolumns())
            throw dimension_error("connectivity mask: expected " + std::to_string(target_.hypercolumns()) +
                                  " source lists, got " + std::to_string(sources_.size()));
        for (auto& list : sources_) {
            std::sort(list.begin(), list.end());
            if (std::adjacent_find(list.begin(), list.end()) != list.end())
                throw parameter_error("connectivity mask: duplicate source hypercolumn");
            if (!list.empty() && list.back() >= static_cast<std::uint32_t>(source_.hypercolumns()))
                throw dimension_error("connectivity mask: source hypercolumn " + std::to_string(list.back()) +
                                      " out of range for " + source_.to_string());
        }
    }

    static ConnectivityMask full(LayerGeometry source, LayerGeometry target) {
        SourceList all(static_cast<std::size_t>(source.hypercolumns()));
        std::iota(all.begin(), all.end(), 0u);
        return {source, target, std::vector<SourceList>(static_cast<std::size_t>(target.hypercolumns()), all)};
    }

    static ConnectivityMask empty(LayerGeometry source, LayerGeometry target) {
        return {source, target, std::vector<SourceList>(static_cast<std::size_t>(target.hypercolumns()))};
    }

    const LayerGeometry& source_geometry() const noexcept { return source_; }
    const LayerGeometry& target_geometry() const noexcept { return target_; }

    const SourceList& sources(int target_hc) const { return sources_[static_cast<std::size_t>(target_hc)]; }
    const std::vector<SourceList>& all_sources() const noexcept { return sources_; }
    int fan_in(int target_hc) const { return static_cast<int>(sources(target_hc).size()); }

    /// Position of `source_hc` within the source list of `target_hc`, or -1.
    int slot(int target_hc, int source_hc) const {
        const auto& list = sources(target_hc);
        auto it = std::lower_bound(list.begin(), list.end(), static_cast<std::uint32_t>(source_hc));
        if (it == list.end() || *it != static_cast<std::uint32_t>(source_hc)) return -1;
        return static_cast<int>(it - list.begin());
    }

    bool connected(int source_hc, int target_hc) const { return slot(target_hc, source_hc) >= 0; }

    bool is_full() const {
        for (const auto& list : sources_)
            if (static_cast<int>(list.size()) != source_.hypercolumns()) return false;
        return true;
    }

    /// True when every pair selected here is also selected by `other`.
    bool subset_of(const ConnectivityMask& other) const {
        if (!(source_ == other.source_) || !(target_ == other.target_)) return false;
        for (std::size_t h = 0; h < sources_.size(); ++h)
            if (!std::includes(other.sources_[h].begin(), other.sources_[h].end(), sources_[h].begin(),
                               sources_[h].end()))
                return false;
        return true;
    }

    std::size_t pair_count() const {
        std::size_t n = 0;
        for (const auto& list : sources_) n += list.size();
        return n;
    }

    friend bool operator==(const ConnectivityMask&, const ConnectivityMask&) = default;

private:
    LayerGeometry source_;
    LayerGeometry target_;
    std::vector<SourceList> sources_;
};

/// Number of source hypercolumns each target selects at connection probability `p_conn`.
inline int fan_in_for(const LayerGeometry& source, double p_conn) {
    if (!(p_conn > 0.0 && p_conn <= 1.0))
        throw parameter_error("p_conn must lie in (0, 1], got " + std::to_string(p_conn));
    // Guard against 0.1 * 784 = 78.4000000001 style rounding pushing the ceiling up by one.
    const double raw = p_conn * source.hypercolumns();
    const int n = static_cast<int>(std::ceil(raw - 1e-9));
    if (n < 1) throw parameter_error("p_conn " + std::to_string(p_conn) + " selects no source hypercolumns");
    return std::min(n, source.hypercolumns());
}

/// Each target hypercolumn independently draws ceil(p_conn * H_source) distinct sources.
inline ConnectivityMask random_mask(LayerGeometry source, LayerGeometry target, double p_conn,
                                    std::uint64_t seed) {
    const int n = fan_in_for(source, p_conn);
    std::mt19937_64 rng(seed);
    std::vector<ConnectivityMask::SourceList> lists(static_cast<std::size_t>(target.hypercolumns()));
    ConnectivityMask::SourceList pool(static_cast<std::size_t>(source.hypercolumns()));
    for (auto& list : lists) {
        std::iota(pool.begin(), pool.end(), 0u);
        // partial Fisher-Yates
        for (int k = 0; k < n; ++k) {
            std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), pool.size() - 1);
            std::swap(pool[static_cast<std::size_t>(k)], pool[pick(rng)]);
        }
        list.assign(pool.begin(), pool.begin() + n);
    }
    return {source, target, std::move(lists)};
}

}  // namespace bcpnn
