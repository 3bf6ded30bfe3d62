#pragma once

// Distorted-digit benchmark: nine seeded distortion kinds on a 0.1..1.0 level grid.
//
// Every kind is nested in its level: the pixels altered at one level are altered at least as much at
// the next, so the changed-pixel fraction never decreases with level.

#include "bcpnn/dataio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace bcpnn {

enum class DistortionType { grid, deletion, open, clutter, lines, noise, occlusion, erosion, texture };

inline constexpr std::array<DistortionType, 9> kDistortionTypes = {
    DistortionType::grid,  DistortionType::deletion,  DistortionType::open,    DistortionType::clutter, DistortionType::lines,
    DistortionType::noise, DistortionType::occlusion, DistortionType::erosion, DistortionType::texture};

inline constexpr int kDistortionLevels = 10;

inline std::string to_string(DistortionType t) {
    static constexpr std::array<const char*, 9> names = {"grid",  "deletion",  "open",    "clutter", "lines",
                                                         "noise", "occlusion", "erosion", "texture"};
    return names[static_cast<std::size_t>(t)];
}

inline DistortionType parse_distortion_type(const std::string& s) {
    for (auto t : kDistortionTypes)
        if (to_string(t) == s) return t;
    throw parameter_error("unknown distortion type '" + s + "'");
}

/// A distortion kind, a level in tenths (1..10 stands for 0.1..1.0) and a seed.
struct DistortionSpec {
    DistortionType type = DistortionType::grid;
    int tenths = 1;
    std::uint64_t seed = 0;

    DistortionSpec() = default;
    DistortionSpec(DistortionType t, int level_tenths, std::uint64_t s) : type(t), tenths(level_tenths), seed(s) {
        if (tenths < 1 || tenths > kDistortionLevels) throw parameter_error("distortion level must lie on the 0.1..1.0 grid");
    }

    double level() const noexcept { return tenths / 10.0; }
    std::string level_string() const {
        std::ostringstream os;
        os << std::fixed << std::setprecision(1) << level();
        return os.str();
    }
};

/// Changed-pixel fraction: pixels whose value moved by more than 16 grey levels.
inline double severity(const RawImage& original, const RawImage& distorted) {
    int n = 0;
    for (int k = 0; k < kImagePixels; ++k)
        n += std::abs(int(original.pixels[static_cast<std::size_t>(k)]) - int(distorted.pixels[static_cast<std::size_t>(k)])) > 16;
    return static_cast<double>(n) / kImagePixels;
}

namespace detail {

inline constexpr std::uint8_t kInk = 255;

inline bool inside(int r, int c) { return r >= 0 && r < kImageSide && c >= 0 && c < kImageSide; }

inline void paint(RawImage& img, int r, int c, std::uint8_t v) {
    if (inside(r, c)) img.at(r, c) = v;
}

inline void draw_line(RawImage& img, int r0, int c0, int r1, int c1) {
    const int dr = std::abs(r1 - r0), dc = std::abs(c1 - c0);
    const int sr = r0 < r1 ? 1 : -1, sc = c0 < c1 ? 1 : -1;
    int err = dc - dr;
    for (;;) {
        paint(img, r0, c0, kInk);
        if (r0 == r1 && c0 == c1) break;
        const int e2 = 2 * err;
        if (e2 > -dr) {
            err -= dr;
            c0 += sc;
        }
        if (e2 < dc) {
            err += dc;
            r0 += sr;
        }
    }
}

inline std::vector<int> stroke_pixels(const RawImage& img, bool contour_only) {
    std::vector<int> out;
    for (int r = 0; r < kImageSide; ++r)
        for (int c = 0; c < kImageSide; ++c) {
            if (img.at(r, c) < 128) continue;
            bool edge = false;
            for (auto [dr, dc] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}})
                edge = edge || !inside(r + dr, c + dc) || img.at(r + dr, c + dc) < 128;
            if (!contour_only || edge) out.push_back(r * kImageSide + c);
        }
    return out;
}

// Positions 0, 2, ..., 26 ordered coarse to fine (bit-reversed index order).
inline std::vector<int> grid_positions(int offset) {
    std::vector<int> idx(14);
    std::iota(idx.begin(), idx.end(), 0);
    const auto rev = [](int v) {
        int r = 0;
        for (int b = 0; b < 4; ++b) r |= ((v >> b) & 1) << (3 - b);
        return r;
    };
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return rev(a) < rev(b); });
    for (auto& v : idx) v = (2 * v + offset) % kImageSide;
    return idx;
}

}  // namespace detail

/// Applies one distortion. Deterministic in (image, spec); the level only selects how much of the
/// seeded perturbation is applied.
inline RawImage distort(const RawImage& image, const DistortionSpec& spec) {
    RawImage out = image;
    std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(spec.type) + 1);
    std::uniform_int_distribution<int> pos(0, kImageSide - 1);
    const double level = spec.level();
    const int tenths = spec.tenths;
    switch (spec.type) {
        case DistortionType::grid: {
            // Horizontal and vertical white lines; more (so more finely spaced) lines with level.
            const int offset = pos(rng) % 2;
            const auto lines = detail::grid_positions(offset);
            const int n = static_cast<int>(std::lround(1.4 * tenths));
            for (int k = 0; k < n; ++k)
                for (int t = 0; t < kImageSide; ++t) {
                    out.at(lines[static_cast<std::size_t>(k)], t) = detail::kInk;
                    out.at(t, lines[static_cast<std::size_t>(k)]) = detail::kInk;
                }
            break;
        }
        case DistortionType::deletion: {
            // Up to ten stroke segments erased as radius-2 discs around seeded stroke points.
            auto stroke = detail::stroke_pixels(image, false);
            std::shuffle(stroke.begin(), stroke.end(), rng);
            const std::size_t n = std::min(stroke.size(), static_cast<std::size_t>(tenths));
            for (std::size_t k = 0; k < n; ++k) {
                const int r0 = stroke[k] / kImageSide, c0 = stroke[k] % kImageSide;
                for (int dr = -2; dr <= 2; ++dr)
                    for (int dc = -2; dc <= 2; ++dc)
                        if (dr * dr + dc * dc <= 5) detail::paint(out, r0 + dr, c0 + dc, 0);
            }
            break;
        }
        case DistortionType::open: {
            // Three gaps cut at seeded contour points: 5 pixels across, 1 + level*10 pixels wide.
            auto contour = detail::stroke_pixels(image, true);
            std::shuffle(contour.begin(), contour.end(), rng);
            for (std::size_t k = 0; k < std::min<std::size_t>(3, contour.size()); ++k) {
                const int r0 = contour[k] / kImageSide, c0 = contour[k] % kImageSide;
                const bool vertical = (rng() & 1) != 0;
                for (int across = -2; across <= 2; ++across)
                    for (int along = 0; along <= tenths; ++along)
                        vertical ? detail::paint(out, r0 + along, c0 + across, 0) : detail::paint(out, r0 + across, c0 + along, 0);
            }
            break;
        }
        case DistortionType::clutter: {
            // Small white blobs, two more per level step.
            for (int k = 0; k < 2 * tenths; ++k) {
                const int r0 = pos(rng), c0 = pos(rng);
                const int size = 2 + static_cast<int>(rng() % 2);
                for (int dr = 0; dr < size; ++dr)
                    for (int dc = 0; dc < size; ++dc) detail::paint(out, r0 + dr, c0 + dc, detail::kInk);
            }
            break;
        }
        case DistortionType::lines: {
            // One random white segment per level step, endpoints on opposite image borders.
            for (int k = 0; k < tenths; ++k) {
                const int a = pos(rng), b = pos(rng);
                if (rng() & 1)
                    detail::draw_line(out, 0, a, kImageSide - 1, b);
                else
                    detail::draw_line(out, a, 0, b, kImageSide - 1);
            }
            break;
        }
        case DistortionType::noise: {
            // Salt-and-pepper: a pixel flips to its seeded extreme when its seeded draw is below level / 2.
            std::uniform_real_distribution<double> u(0.0, 1.0);
            for (int k = 0; k < kImagePixels; ++k) {
                const double draw = u(rng);
                const std::uint8_t v = (rng() & 1) ? detail::kInk : 0;
                if (draw < 0.5 * level) out.pixels[static_cast<std::size_t>(k)] = v;
            }
            break;
        }
        case DistortionType::occlusion: {
            // One white rectangle around a seeded centre, area growing linearly with level (up to 40% of the image).
            std::uniform_int_distribution<int> centre(8, kImageSide - 9);
            const int rc = centre(rng), cc = centre(rng);
            const double aspect = std::uniform_real_distribution<double>(0.6, 1.6)(rng);
            const double area = 0.4 * level * kImagePixels;
            const int h = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, kImageSide);
            const int w = std::clamp(static_cast<int>(std::lround(area / h)), 1, kImageSide);
            // shifted, not clipped, when it would leave the canvas
            const int r0 = std::clamp(rc - h / 2, 0, kImageSide - h), c0 = std::clamp(cc - w / 2, 0, kImageSide - w);
            for (int r = r0; r < r0 + h; ++r)
                for (int c = c0; c < c0 + w; ++c) detail::paint(out, r, c, detail::kInk);
            break;
        }
        case DistortionType::erosion: {
            // One soft erosion step per level: each pixel moves halfway to the minimum of its 4-neighbourhood.
            for (int it = 0; it < tenths; ++it) {
                const RawImage prev = out;
                for (int r = 0; r < kImageSide; ++r)
                    for (int c = 0; c < kImageSide; ++c) {
                        int lo = prev.at(r, c);
                        for (auto [dr, dc] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}})
                            lo = std::min(lo, detail::inside(r + dr, c + dc) ? int(prev.at(r + dr, c + dc)) : 0);
                        out.at(r, c) = static_cast<std::uint8_t>(lo + (prev.at(r, c) - lo) / 2);
                    }
            }
            break;
        }
        case DistortionType::texture: {
            // Seeded plaid of two oblique gratings, added with amplitude 0.6 * level.
            std::uniform_real_distribution<double> u(0.0, 1.0);
            const double f1 = 0.3 + 0.5 * u(rng), f2 = 0.3 + 0.5 * u(rng);
            const double p1 = 6.283185307179586 * u(rng), p2 = 6.283185307179586 * u(rng);
            for (int r = 0; r < kImageSide; ++r)
                for (int c = 0; c < kImageSide; ++c) {
                    const double t = 0.35 * (1 + std::sin(f1 * (r + c) + p1)) + 0.15 * (1 + std::sin(f2 * (r - c) + p2));
                    const double v = image.at(r, c) + 0.6 * level * 255.0 * std::min(1.0, t);
                    out.at(r, c) = static_cast<std::uint8_t>(std::min(255.0, std::round(v)));
                }
            break;
        }
    }
    return out;
}

struct DistortedSample {
    RawImage image;
    DistortionSpec spec;
    int label = -1;
    std::size_t source_index = 0;  ///< index into the undistorted image list
};

/// types x levels x samples_per_cell distorted images, each from a distinct source image drawn by a seeded
/// permutation. Cells are ordered by type, then level, then sample.
inline std::vector<DistortedSample> build_distorted_set(const std::vector<RawImage>& images, std::size_t samples_per_cell,
                                                        std::uint64_t seed) {
    const std::size_t cells = kDistortionTypes.size() * kDistortionLevels;
    const std::size_t need = cells * samples_per_cell;
    if (samples_per_cell == 0) throw parameter_error("build_distorted_set: samples_per_cell must be positive");
    if (images.size() < need)
        throw parameter_error("build_distorted_set: need " + std::to_string(need) + " source images, have " + std::to_string(images.size()));
    std::vector<std::size_t> pick(images.size());
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(pick.begin(), pick.end(), rng);

    std::vector<DistortedSample> out;
    out.reserve(need);
    std::size_t k = 0;
    for (auto type : kDistortionTypes)
        for (int tenths = 1; tenths <= kDistortionLevels; ++tenths)
            for (std::size_t s = 0; s < samples_per_cell; ++s, ++k) {
                const auto src = pick[k];
                const DistortionSpec spec(type, tenths, seed ^ (0xD1B54A32D192ED03ULL * (k + 1)));
                out.push_back({distort(images[src], spec), spec, images[src].label.value_or(-1), src});
            }
    return out;
}

inline EncodedDataset distorted_dataset(const std::vector<DistortedSample>& set) {
    std::vector<RawImage> images;
    images.reserve(set.size());
    for (const auto& s : set) {
        images.push_back(s.image);
        images.back().label = s.label >= 0 ? std::optional<int>(s.label) : std::nullopt;
    }
    return EncodedDataset::from_images(std::move(images));
}

inline std::string distorted_filename(const DistortedSample& s, std::size_t cell_index) {
    std::ostringstream os;
    os << to_string(s.spec.type) << '_' << s.spec.level_string() << '_' << std::setw(3) << std::setfill('0') << cell_index << ".pgm";
    return os.str();
}

/// Writes one PGM per sample and manifest.csv (filename,type,level,label,seed) into `dir`.
inline void export_distorted_set(const std::vector<DistortedSample>& set, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
    if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.csv").string());
    manifest << "filename,type,level,label,seed\n";
    std::size_t cell_index = 0;
    for (std::size_t k = 0; k < set.size(); ++k) {
        if (k > 0 && (set[k].spec.type != set[k - 1].spec.type || set[k].spec.tenths != set[k - 1].spec.tenths)) cell_index = 0;
        const auto name = distorted_filename(set[k], cell_index++);
        write_pgm(dir / name, set[k].image);
        manifest << name << ',' << to_string(set[k].spec.type) << ',' << set[k].spec.level_string() << ',' << set[k].label << ','
                 << set[k].spec.seed << '\n';
    }
    if (!manifest) throw std::runtime_error("failed writing " + (dir / "manifest.csv").string());
}

}  // namespace bcpnn
