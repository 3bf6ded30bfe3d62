#pragma once

// MNIST IDX loading, the complementary (on, off) input code, and PGM image output.

#include "bcpnn/geometry.hpp"

#include <zlib.h>

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bcpnn {

inline constexpr int kImageSide = 28;
inline constexpr int kImagePixels = kImageSide * kImageSide;
inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Raised for malformed input files. Carries the file and the byte offset of the problem.
class parse_error : public std::runtime_error {
public:
    enum class kind { io, bad_magic, truncated, count_mismatch, bad_dimensions, bad_value };

    parse_error(kind k, std::string path, std::uint64_t offset, const std::string& detail)
        : std::runtime_error(path + " at byte " + std::to_string(offset) + ": " + detail),
          kind_(k), path_(std::move(path)), offset_(offset) {}

    kind what_kind() const noexcept { return kind_; }
    const std::string& path() const noexcept { return path_; }
    std::uint64_t offset() const noexcept { return offset_; }

private:
    kind kind_;
    std::string path_;
    std::uint64_t offset_;
};

/// A 28x28 grayscale digit, row-major, 0 = background.
struct RawImage {
    std::array<std::uint8_t, kImagePixels> pixels{};
    std::optional<int> label;

    std::uint8_t at(int row, int col) const { return pixels[static_cast<std::size_t>(row * kImageSide + col)]; }
    std::uint8_t& at(int row, int col) { return pixels[static_cast<std::size_t>(row * kImageSide + col)]; }

    friend bool operator==(const RawImage&, const RawImage&) = default;
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error(parse_error::kind::io, path, 0, "cannot open file");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at, const std::string& path) {
    if (b.size() < at + 4) throw parse_error(parse_error::kind::truncated, path, b.size(), "file ends inside the header");
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    std::size_t done = 0;
    while (done < bytes.size()) {
        const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
        crc = ::crc32(crc, bytes.data() + done, n);
        done += n;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

/// Parses an IDX3 image file (magic 0x00000803, 28x28 images).
inline std::vector<RawImage> load_idx_images(const std::string& path) {
    const auto b = detail::read_file(path);
    const auto magic = detail::read_be32(b, 0, path);
    if (magic != kIdxImagesMagic)
        throw parse_error(parse_error::kind::bad_magic, path, 0, "expected image magic 0x00000803");
    const auto count = detail::read_be32(b, 4, path);
    const auto rows = detail::read_be32(b, 8, path);
    const auto cols = detail::read_be32(b, 12, path);
    if (rows != kImageSide || cols != kImageSide)
        throw parse_error(parse_error::kind::bad_dimensions, path, 8,
                          "images are " + std::to_string(rows) + "x" + std::to_string(cols) + ", expected 28x28");
    const std::uint64_t need = 16 + std::uint64_t{count} * kImagePixels;
    if (b.size() < need)
        throw parse_error(parse_error::kind::truncated, path, b.size(),
                          "header announces " + std::to_string(count) + " images but the file is too short");
    std::vector<RawImage> images(count);
    for (std::uint32_t k = 0; k < count; ++k)
        std::copy_n(b.begin() + static_cast<std::ptrdiff_t>(16 + std::size_t{k} * kImagePixels), kImagePixels,
                    images[k].pixels.begin());
    return images;
}

/// Parses an IDX1 label file (magic 0x00000801, labels in [0, 9]).
inline std::vector<int> load_idx_labels(const std::string& path) {
    const auto b = detail::read_file(path);
    if (detail::read_be32(b, 0, path) != kIdxLabelsMagic)
        throw parse_error(parse_error::kind::bad_magic, path, 0, "expected label magic 0x00000801");
    const auto count = detail::read_be32(b, 4, path);
    if (b.size() < 8 + std::uint64_t{count})
        throw parse_error(parse_error::kind::truncated, path, b.size(),
                          "header announces " + std::to_string(count) + " labels but the file is too short");
    std::vector<int> labels(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        labels[k] = b[8 + k];
        if (labels[k] > 9)
            throw parse_error(parse_error::kind::bad_value, path, 8 + k, "label " + std::to_string(labels[k]) + " out of range");
    }
    return labels;
}

/// Images with their labels attached. Counts in the two files must agree.
inline std::vector<RawImage> load_idx(const std::string& images_path, const std::string& labels_path) {
    auto images = load_idx_images(images_path);
    const auto labels = load_idx_labels(labels_path);
    if (labels.size() != images.size())
        throw parse_error(parse_error::kind::count_mismatch, labels_path, 4,
                          std::to_string(labels.size()) + " labels for " + std::to_string(images.size()) + " images in " +
                              images_path);
    for (std::size_t k = 0; k < images.size(); ++k) images[k].label = labels[k];
    return images;
}

/// One hypercolumn per pixel, two minicolumns (on, off).
inline LayerGeometry mnist_input_geometry() { return {kImagePixels, 2}; }

/// Hypercolumn k carries (x, 1 - x) with x = intensity_k / 255.
inline ActivityVector encode_image(const RawImage& image) {
    Eigen::VectorXd v(2 * kImagePixels);
    for (int k = 0; k < kImagePixels; ++k) {
        const double x = image.pixels[static_cast<std::size_t>(k)] / 255.0;
        v(2 * k) = x;
        v(2 * k + 1) = 1.0 - x;
    }
    return ActivityVector::trusted(mnist_input_geometry(), std::move(v));
}

/// Intensity of each pixel read back from the "on" minicolumn of an input-layer activity.
inline Eigen::VectorXd on_units(const Eigen::VectorXd& input_activity) {
    Eigen::VectorXd out(input_activity.size() / 2);
    for (Eigen::Index k = 0; k < out.size(); ++k) out(k) = input_activity(2 * k);
    return out;
}

/// Where an encoded dataset came from.
struct DatasetSource {
    std::string images_path;
    std::string labels_path;
    std::uint32_t images_crc32 = 0;
    std::uint32_t labels_crc32 = 0;
};

/// Input-layer activities with optional labels. Image-backed sets are encoded on demand, which is
/// exact since the code is a fixed function of the pixel byte.
class EncodedDataset {
public:
    static EncodedDataset from_images(std::vector<RawImage> images, DatasetSource source = {}) {
        EncodedDataset d(mnist_input_geometry());
        d.images_ = std::move(images);
        d.source_ = std::move(source);
        return d;
    }

    /// Rows of `activities` are samples; each row must be a valid activity on `geometry`.
    static EncodedDataset from_activities(LayerGeometry geometry, Eigen::MatrixXd activities,
                                          std::vector<std::optional<int>> labels = {}) {
        require_length(geometry, activities.cols(), "encoded dataset");
        if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != activities.rows())
            throw dimension_error("encoded dataset: label count does not match sample count");
        for (Eigen::Index r = 0; r < activities.rows(); ++r)
            if (auto why = activity_violation(geometry, activities.row(r).transpose()); !why.empty())
                throw invariant_error("encoded dataset sample " + std::to_string(r) + ": " + why);
        EncodedDataset d(geometry);
        d.dense_ = std::move(activities);
        d.dense_labels_ = std::move(labels);
        return d;
    }

    const LayerGeometry& geometry() const noexcept { return geometry_; }
    const DatasetSource& source() const noexcept { return source_; }
    bool image_backed() const noexcept { return dense_.size() == 0 && !images_.empty(); }
    const std::vector<RawImage>& images() const noexcept { return images_; }

    std::size_t size() const noexcept {
        return images_.empty() ? static_cast<std::size_t>(dense_.rows()) : images_.size();
    }
    bool empty() const noexcept { return size() == 0; }

    std::optional<int> label(std::size_t k) const {
        if (!images_.empty()) return images_[k].label;
        return dense_labels_.empty() ? std::nullopt : dense_labels_[k];
    }

    ActivityVector activity(std::size_t k) const {
        if (!images_.empty()) return encode_image(images_[k]);
        return ActivityVector::trusted(geometry_, dense_.row(static_cast<Eigen::Index>(k)).transpose());
    }

    /// Activities of the given samples, one row each.
    Eigen::MatrixXd batch(std::span<const std::size_t> indices) const {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), geometry_.units());
        for (std::size_t r = 0; r < indices.size(); ++r) {
            const auto row = static_cast<Eigen::Index>(r);
            if (!images_.empty()) {
                const auto& px = images_[indices[r]].pixels;
                for (int k = 0; k < kImagePixels; ++k) {
                    const double x = px[static_cast<std::size_t>(k)] / 255.0;
                    out(row, 2 * k) = x;
                    out(row, 2 * k + 1) = 1.0 - x;
                }
            } else {
                out.row(row) = dense_.row(static_cast<Eigen::Index>(indices[r]));
            }
        }
        return out;
    }

    Eigen::MatrixXd batch(std::size_t begin, std::size_t end) const {
        std::vector<std::size_t> idx(end - begin);
        for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = begin + k;
        return batch(idx);
    }

    EncodedDataset subset(std::span<const std::size_t> indices) const {
        EncodedDataset d(geometry_);
        d.source_ = source_;
        if (!images_.empty()) {
            for (auto k : indices) d.images_.push_back(images_[k]);
        } else {
            d.dense_ = batch(indices);
            if (!dense_labels_.empty())
                for (auto k : indices) d.dense_labels_.push_back(dense_labels_[k]);
        }
        return d;
    }

    EncodedDataset head(std::size_t n) const {
        std::vector<std::size_t> idx(std::min(n, size()));
        for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
        return subset(idx);
    }

private:
    explicit EncodedDataset(LayerGeometry g) : geometry_(g) {}

    LayerGeometry geometry_;
    std::vector<RawImage> images_;
    Eigen::MatrixXd dense_;
    std::vector<std::optional<int>> dense_labels_;
    DatasetSource source_;
};

/// Loads an IDX image/label pair and records the file checksums.
inline EncodedDataset load_mnist(const std::string& images_path, const std::string& labels_path) {
    auto images = load_idx(images_path, labels_path);
    DatasetSource src{images_path, labels_path, detail::crc32_of(detail::read_file(images_path)),
                      detail::crc32_of(detail::read_file(labels_path))};
    return EncodedDataset::from_images(std::move(images), std::move(src));
}

/// Binary PGM (P5, maxval 255).
inline void write_pgm(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> pixels) {
    if (pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
        throw dimension_error("write_pgm: pixel count does not match the image size");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline void write_pgm(const std::filesystem::path& path, const RawImage& image) {
    write_pgm(path, kImageSide, kImageSide, image.pixels);
}

/// Values in [0, 1] mapped to bytes.
inline RawImage image_from_intensities(const Eigen::VectorXd& x) {
    if (x.size() != kImagePixels) throw dimension_error("image_from_intensities: expected 784 values");
    RawImage img;
    for (int k = 0; k < kImagePixels; ++k)
        img.pixels[static_cast<std::size_t>(k)] =
            static_cast<std::uint8_t>(std::lround(std::clamp(x(k), 0.0, 1.0) * 255.0));
    return img;
}

inline RawImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error(parse_error::kind::io, path.string(), 0, "cannot open file");
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    in.get();
    if (magic != "P5" || maxval != 255)
        throw parse_error(parse_error::kind::bad_magic, path.string(), 0, "not a P5 PGM with maxval 255");
    if (w != kImageSide || h != kImageSide)
        throw parse_error(parse_error::kind::bad_dimensions, path.string(), 3, "expected a 28x28 image");
    RawImage img;
    in.read(reinterpret_cast<char*>(img.pixels.data()), kImagePixels);
    if (in.gcount() != kImagePixels)
        throw parse_error(parse_error::kind::truncated, path.string(), static_cast<std::uint64_t>(in.tellg()), "pixel data truncated");
    return img;
}

}  // namespace bcpnn
