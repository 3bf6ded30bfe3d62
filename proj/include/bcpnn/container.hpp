#pragma once

// Binary model file: "BCPN", u32 version, length-prefixed sections, trailing CRC32.
//
//   section 1  config text (UTF-8 key = value lines)
//   section 2  geometries: input H, M and hidden H, M as u32
//   section 3  feedforward mask: per hidden hypercolumn a u32 count then the sorted u32 source indices
//   section 4  feedforward traces and params
//   section 5  recurrent traces and params
//   section 6  input-layer attractor traces and params (the attractor-on-input baseline)
//
// Each section is a u64 byte length followed by its payload. Integers and reals are little-endian;
// reals are IEEE-754 binary64. Matrices are written row by row. The CRC covers every preceding byte.

#include "bcpnn/feedforward.hpp"
#include "bcpnn/recurrent.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace bcpnn {

inline constexpr char kContainerMagic[4] = {'B', 'C', 'P', 'N'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct container_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Everything a trained pipeline needs for evaluation.
struct ModelBundle {
    std::string config_text;
    FeedforwardModel feedforward;
    RecurrentModel recurrent;
    RecurrentModel input_attractor;
};

namespace detail {

class ContainerWriter {
public:
    explicit ContainerWriter(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw container_error("cannot open " + path + " for writing");
    }

    void bytes(const void* data, std::size_t n) {
        crc_ = crc32_combine_bytes(crc_, data, n);
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
        if (!out_) throw container_error("write failed on " + path_);
        written_ += n;
    }

    template <class T>
    void scalar(T v) {
        static_assert(std::is_arithmetic_v<T>);
        unsigned char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
        bytes(buf, sizeof(T));
    }

    void reals(const double* data, std::size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            bytes(data, n * sizeof(double));
        } else {
            for (std::size_t k = 0; k < n; ++k) scalar(data[k]);
        }
    }

    void vector(const Eigen::VectorXd& v) { reals(v.data(), static_cast<std::size_t>(v.size())); }

    void matrix(const Eigen::MatrixXd& m) {
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
        reals(rm.data(), static_cast<std::size_t>(rm.size()));
    }

    std::uint64_t written() const noexcept { return written_; }

    void finish() {
        const std::uint32_t crc = static_cast<std::uint32_t>(crc_);
        unsigned char buf[4] = {static_cast<unsigned char>(crc), static_cast<unsigned char>(crc >> 8),
                                static_cast<unsigned char>(crc >> 16), static_cast<unsigned char>(crc >> 24)};
        out_.write(reinterpret_cast<const char*>(buf), 4);
        out_.flush();
        if (!out_) throw container_error("write failed on " + path_);
    }

private:
    static uLong crc32_combine_bytes(uLong crc, const void* data, std::size_t n) {
        const auto* p = static_cast<const Bytef*>(data);
        while (n > 0) {
            const auto step = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
            crc = ::crc32(crc, p, step);
            p += step;
            n -= step;
        }
        return crc;
    }

    std::string path_;
    std::ofstream out_;
    uLong crc_ = ::crc32(0L, Z_NULL, 0);
    std::uint64_t written_ = 0;
};

class ContainerReader {
public:
    explicit ContainerReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw container_error("cannot open " + path);
        in_.seekg(0, std::ios::end);
        size_ = static_cast<std::uint64_t>(in_.tellg());
        in_.seekg(0);
        if (size_ < 12) throw container_error(path + ": file too short for a model container");
    }

    void bytes(void* data, std::size_t n) {
        if (pos_ + n + 4 > size_) fail("truncated file");
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
        if (!in_) fail("read failed");
        const auto* p = static_cast<const Bytef*>(data);
        std::size_t left = n;
        while (left > 0) {
            const auto step = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
            crc_ = ::crc32(crc_, p, step);
            p += step;
            left -= step;
        }
        pos_ += n;
    }

    template <class T>
    T scalar() {
        unsigned char buf[sizeof(T)];
        bytes(buf, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
        T v;
        std::memcpy(&v, buf, sizeof(T));
        return v;
    }

    void reals(double* data, std::size_t n) {
        bytes(data, n * sizeof(double));
        if constexpr (std::endian::native == std::endian::big)
            for (std::size_t k = 0; k < n; ++k) {
                auto* b = reinterpret_cast<unsigned char*>(data + k);
                std::reverse(b, b + sizeof(double));
            }
    }

    Eigen::VectorXd vector(Eigen::Index n) {
        Eigen::VectorXd v(n);
        reals(v.data(), static_cast<std::size_t>(n));
        return v;
    }

    Eigen::MatrixXd matrix(Eigen::Index rows, Eigen::Index cols) {
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
        reals(rm.data(), static_cast<std::size_t>(rm.size()));
        return rm;
    }

    std::uint64_t position() const noexcept { return pos_; }
    std::uint64_t remaining() const noexcept { return size_ - 4 - pos_; }

    void finish() {
        if (pos_ + 4 != size_) fail("unexpected trailing bytes before the checksum");
        unsigned char buf[4];
        in_.read(reinterpret_cast<char*>(buf), 4);
        if (!in_) fail("cannot read checksum");
        const std::uint32_t stored = buf[0] | (buf[1] << 8) | (buf[2] << 16) | (std::uint32_t(buf[3]) << 24);
        if (stored != static_cast<std::uint32_t>(crc_)) fail("CRC mismatch (file is corrupt)");
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw container_error(path_ + ": " + what + " at offset " + std::to_string(pos_));
    }

private:
    std::string path_;
    std::ifstream in_;
    std::uint64_t size_ = 0;
    std::uint64_t pos_ = 0;
    uLong crc_ = ::crc32(0L, Z_NULL, 0);
};

inline std::uint64_t traces_bytes(const PTraces& t) {
    return 16 + 8 * static_cast<std::uint64_t>(t.pre.size() + t.post.size() + t.joint_count());
}

inline std::uint64_t params_bytes(const ProjectionParams& p) {
    std::uint64_t n = static_cast<std::uint64_t>(p.bias.size());
    for (const auto& w : p.weights) n += static_cast<std::uint64_t>(w.size());
    return 8 * n;
}

inline void write_traces(ContainerWriter& w, const PTraces& t) {
    w.scalar(t.alpha);
    w.scalar(t.floor);
    w.vector(t.pre);
    w.vector(t.post);
    for (const auto& j : t.joint) w.matrix(j);
}

inline void write_params(ContainerWriter& w, const ProjectionParams& p) {
    w.vector(p.bias);
    for (const auto& m : p.weights) w.matrix(m);
}

// Payload size of a projection's traces plus params over `mask`.
inline std::uint64_t projection_bytes(const ConnectivityMask& mask) {
    const auto& src = mask.source_geometry();
    const auto& tgt = mask.target_geometry();
    const auto pairs = static_cast<std::uint64_t>(mask.pair_count()) * static_cast<std::uint64_t>(src.minicolumns()) *
                       static_cast<std::uint64_t>(tgt.minicolumns());
    return 16 + 8 * (static_cast<std::uint64_t>(src.units()) + 2 * static_cast<std::uint64_t>(tgt.units()) + 2 * pairs);
}

inline PTraces read_traces(ContainerReader& r, const LayerGeometry& src, const LayerGeometry& tgt, const ConnectivityMask& tracked) {
    const double alpha = r.scalar<double>();
    const double floor = r.scalar<double>();
    PTraces t{src, tgt, alpha, floor, r.vector(src.units()), r.vector(tgt.units()), tracked, {}};
    for (int h = 0; h < tgt.hypercolumns(); ++h)
        t.joint.push_back(r.matrix(static_cast<Eigen::Index>(tracked.fan_in(h)) * src.minicolumns(), tgt.minicolumns()));
    return t;
}

inline ProjectionParams read_params(ContainerReader& r, const ConnectivityMask& mask) {
    ProjectionParams p{r.vector(mask.target_geometry().units()), {}, mask};
    for (int h = 0; h < mask.target_geometry().hypercolumns(); ++h)
        p.weights.push_back(r.matrix(static_cast<Eigen::Index>(mask.fan_in(h)) * mask.source_geometry().minicolumns(),
                                     mask.target_geometry().minicolumns()));
    return p;
}

// Recurrent section: alpha, floor, traces, params, then timesteps u32, drive mode u32, drive gain f64,
// eps_conv f64, epochs trained u32.
inline std::uint64_t recurrent_bytes(const RecurrentModel& m) { return traces_bytes(m.traces) + params_bytes(m.params) + 28; }

inline void write_recurrent(ContainerWriter& w, const RecurrentModel& m) {
    if (!m.traces.tracked.is_full() || !m.params.mask.is_full()) throw container_error("recurrent projection must be fully connected");
    w.scalar<std::uint64_t>(recurrent_bytes(m));
    write_traces(w, m.traces);
    write_params(w, m.params);
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(m.timesteps));
    w.scalar<std::uint32_t>(m.drive_mode == DriveMode::clamped_init ? 0u : 1u);
    w.scalar(m.drive_gain);
    w.scalar(m.eps_conv);
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(m.epochs_trained));
}

inline RecurrentModel read_recurrent(ContainerReader& r, const LayerGeometry& g, const char* what) {
    const auto full = ConnectivityMask::full(g, g);
    const auto expect = r.scalar<std::uint64_t>();
    if (expect != projection_bytes(full) + 28 || expect > r.remaining()) r.fail(std::string(what) + " section has the wrong length");
    const auto start = r.position();
    auto traces = read_traces(r, g, g, full);
    auto params = read_params(r, full);
    RecurrentModel m{g, std::move(traces), std::move(params), 20, DriveMode::clamped_init, 1.0, kConvergenceTolerance, 0};
    m.timesteps = static_cast<int>(r.scalar<std::uint32_t>());
    const auto mode = r.scalar<std::uint32_t>();
    if (mode > 1) r.fail(std::string("unknown drive mode in ") + what);
    m.drive_mode = mode == 0 ? DriveMode::clamped_init : DriveMode::persistent_drive;
    m.drive_gain = r.scalar<double>();
    m.eps_conv = r.scalar<double>();
    m.epochs_trained = static_cast<int>(r.scalar<std::uint32_t>());
    if (r.position() - start != expect) r.fail(std::string(what) + " section length mismatch");
    return m;
}

}  // namespace detail

/// Writes `bundle` to `path`. The feedforward traces must be tracked over exactly the feedforward mask.
inline void save_model(const std::string& path, const ModelBundle& bundle) {
    const auto& ff = bundle.feedforward;
    if (!(ff.traces.tracked == ff.mask) || !(ff.params.mask == ff.mask))
        throw container_error("feedforward traces and params must cover exactly the feedforward mask");
    require_same(bundle.recurrent.geometry, ff.hidden_geometry, "saved recurrent geometry");
    require_same(bundle.input_attractor.geometry, ff.input_geometry, "saved input attractor geometry");

    detail::ContainerWriter w(path);
    w.bytes(kContainerMagic, 4);
    w.scalar(kContainerVersion);

    w.scalar<std::uint64_t>(bundle.config_text.size());
    w.bytes(bundle.config_text.data(), bundle.config_text.size());

    w.scalar<std::uint64_t>(16);
    for (const auto& g : {ff.input_geometry, ff.hidden_geometry}) {
        w.scalar<std::uint32_t>(static_cast<std::uint32_t>(g.hypercolumns()));
        w.scalar<std::uint32_t>(static_cast<std::uint32_t>(g.minicolumns()));
    }

    std::uint64_t mask_bytes = 0;
    for (const auto& list : ff.mask.all_sources()) mask_bytes += 4 + 4 * list.size();
    w.scalar(mask_bytes);
    for (const auto& list : ff.mask.all_sources()) {
        w.scalar<std::uint32_t>(static_cast<std::uint32_t>(list.size()));
        for (auto s : list) w.scalar<std::uint32_t>(s);
    }

    // Feedforward: traces, params, epochs trained u32, seed u64.
    w.scalar<std::uint64_t>(detail::traces_bytes(ff.traces) + detail::params_bytes(ff.params) + 12);
    detail::write_traces(w, ff.traces);
    detail::write_params(w, ff.params);
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(ff.epochs_trained));
    w.scalar<std::uint64_t>(ff.seed);

    detail::write_recurrent(w, bundle.recurrent);
    detail::write_recurrent(w, bundle.input_attractor);
    w.finish();
}

/// Reads a container written by save_model, verifying magic, version, section lengths and CRC.
inline ModelBundle load_model(const std::string& path) {
    detail::ContainerReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kContainerMagic, 4) != 0) r.fail("not a model container (bad magic)");
    const auto version = r.scalar<std::uint32_t>();
    if (version != kContainerVersion)
        r.fail("unsupported container version " + std::to_string(version) + " (expected " + std::to_string(kContainerVersion) + ")");

    const auto text_len = r.scalar<std::uint64_t>();
    if (text_len > r.remaining()) r.fail("config section length exceeds file");
    std::string config_text(text_len, '\0');
    r.bytes(config_text.data(), text_len);

    if (r.scalar<std::uint64_t>() != 16) r.fail("geometry section has the wrong length");
    const auto read_geometry = [&] {
        const auto h = r.scalar<std::uint32_t>();
        const auto m = r.scalar<std::uint32_t>();
        try {
            return LayerGeometry(static_cast<int>(h), static_cast<int>(m));
        } catch (const std::exception& e) {
            r.fail(std::string("invalid geometry: ") + e.what());
        }
    };
    const LayerGeometry input = read_geometry();
    const LayerGeometry hidden = read_geometry();

    const auto mask_bytes = r.scalar<std::uint64_t>();
    const auto mask_start = r.position();
    if (mask_bytes > r.remaining()) r.fail("mask section length exceeds file");
    std::vector<ConnectivityMask::SourceList> lists(static_cast<std::size_t>(hidden.hypercolumns()));
    for (auto& list : lists) {
        const auto n = r.scalar<std::uint32_t>();
        if (n > static_cast<std::uint32_t>(input.hypercolumns())) r.fail("mask fan-in exceeds the input hypercolumn count");
        list.resize(n);
        for (auto& s : list) s = r.scalar<std::uint32_t>();
        if (!std::is_sorted(list.begin(), list.end())) r.fail("mask sources are not sorted");
    }
    if (r.position() - mask_start != mask_bytes) r.fail("mask section length mismatch");
    ConnectivityMask mask = [&] {
        try {
            return ConnectivityMask(input, hidden, std::move(lists));
        } catch (const std::exception& e) {
            r.fail(std::string("invalid mask: ") + e.what());
        }
    }();

    const auto ff_bytes = r.scalar<std::uint64_t>();
    const auto ff_start = r.position();
    if (ff_bytes != detail::projection_bytes(mask) + 12 || ff_bytes > r.remaining())
        r.fail("feedforward section has the wrong length");
    auto traces = detail::read_traces(r, input, hidden, mask);
    auto params = detail::read_params(r, mask);
    const auto epochs = static_cast<int>(r.scalar<std::uint32_t>());
    const auto seed = r.scalar<std::uint64_t>();
    if (r.position() - ff_start != ff_bytes) r.fail("feedforward section length mismatch");
    FeedforwardModel ff{input, hidden, mask, std::move(traces), std::move(params), epochs, seed};

    auto recurrent = detail::read_recurrent(r, hidden, "recurrent");
    auto input_attractor = detail::read_recurrent(r, input, "input attractor");
    r.finish();
    return {std::move(config_text), std::move(ff), std::move(recurrent), std::move(input_attractor)};
}

}  // namespace bcpnn
