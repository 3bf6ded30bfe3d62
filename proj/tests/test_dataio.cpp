#include "bcpnn/dataio.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace bcpnn;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = BCPNN_FIXTURE_DIR;

// Bytes listed in an `od -Ax -tx1` dump: an offset column followed by hex bytes.
std::vector<std::uint8_t> bytes_from_hex_dump(const std::string& path) {
    std::ifstream in(path);
    std::vector<std::uint8_t> out;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string offset, byte;
        ls >> offset;
        while (ls >> byte) out.push_back(static_cast<std::uint8_t>(std::stoul(byte, nullptr, 16)));
    }
    return out;
}

std::uint32_t bitwise_crc32(const std::vector<std::uint8_t>& bytes) {
    std::uint32_t crc = 0xFFFFFFFFu;
    for (auto b : bytes) {
        crc ^= b;
        for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
    }
    return ~crc;
}

class TempDir : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() / ("bcpnn_dataio_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                           ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string write(const std::string& name, const std::vector<std::uint8_t>& bytes) {
        const auto p = dir / name;
        std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        return p.string();
    }

    fs::path dir;
};

std::vector<std::uint8_t> be32(std::uint32_t v) {
    return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8),
            static_cast<std::uint8_t>(v)};
}

std::vector<std::uint8_t> concat(std::initializer_list<std::vector<std::uint8_t>> parts) {
    std::vector<std::uint8_t> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

}  // namespace

TEST(IdxFixture, LoaderAgreesWithHexDump) {
    const auto raw = bytes_from_hex_dump(kFixtures + "/two-images-idx3-ubyte.hex");
    ASSERT_EQ(raw.size(), 16u + 2u * 784u);
    const auto images = load_idx(kFixtures + "/two-images-idx3-ubyte", kFixtures + "/two-labels-idx1-ubyte");
    ASSERT_EQ(images.size(), 2u);
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t p = 0; p < 784; ++p) ASSERT_EQ(images[k].pixels[p], raw[16 + k * 784 + p]) << k << " " << p;
    const auto labels = bytes_from_hex_dump(kFixtures + "/two-labels-idx1-ubyte.hex");
    ASSERT_EQ(labels.size(), 10u);
    EXPECT_EQ(images[0].label, labels[8]);
    EXPECT_EQ(images[1].label, labels[9]);
    EXPECT_EQ(*images[0].label, 7);
    EXPECT_EQ(*images[1].label, 2);
}

TEST(IdxFixture, DatasetRecordsChecksums) {
    const auto d = load_mnist(kFixtures + "/two-images-idx3-ubyte", kFixtures + "/two-labels-idx1-ubyte");
    EXPECT_EQ(d.size(), 2u);
    EXPECT_TRUE(d.image_backed());
    EXPECT_EQ(d.source().images_crc32, bitwise_crc32(bytes_from_hex_dump(kFixtures + "/two-images-idx3-ubyte.hex")));
    EXPECT_EQ(d.source().labels_crc32, bitwise_crc32(bytes_from_hex_dump(kFixtures + "/two-labels-idx1-ubyte.hex")));
    EXPECT_EQ(d.label(1), 2);
}

TEST(Crc32, KnownVectors) {
    const std::string s = "123456789";
    const std::vector<std::uint8_t> b(s.begin(), s.end());
    EXPECT_EQ(detail::crc32_of(b), 0xCBF43926u);
    EXPECT_EQ(detail::crc32_of({}), 0u);
}

TEST_F(TempDir, RejectsBadMagic) {
    const auto p = write("bad", concat({be32(0x00000801), be32(0), be32(28), be32(28)}));
    try {
        load_idx_images(p);
        FAIL();
    } catch (const parse_error& e) {
        EXPECT_EQ(e.what_kind(), parse_error::kind::bad_magic);
        EXPECT_EQ(e.offset(), 0u);
        EXPECT_EQ(e.path(), p);
    }
    EXPECT_THROW(load_idx_labels(write("bad2", concat({be32(0x00000803), be32(0)}))), parse_error);
}

TEST_F(TempDir, RejectsTruncatedFiles) {
    const auto short_header = write("h", concat({be32(0x00000803), be32(1)}));
    try {
        load_idx_images(short_header);
        FAIL();
    } catch (const parse_error& e) {
        EXPECT_EQ(e.what_kind(), parse_error::kind::truncated);
    }
    const auto short_body = write("b", concat({be32(0x00000803), be32(2), be32(28), be32(28), std::vector<std::uint8_t>(784 + 10)}));
    try {
        load_idx_images(short_body);
        FAIL();
    } catch (const parse_error& e) {
        EXPECT_EQ(e.what_kind(), parse_error::kind::truncated);
        EXPECT_EQ(e.offset(), 16u + 794u);
    }
    try {
        load_idx_labels(write("l", concat({be32(0x00000801), be32(3), {1, 2}})));
        FAIL();
    } catch (const parse_error& e) {
        EXPECT_EQ(e.what_kind(), parse_error::kind::truncated);
    }
}

TEST_F(TempDir, RejectsWrongDimensionsLabelsAndCounts) {
    try {
        load_idx_images(write("d", concat({be32(0x00000803), be32(0), be32(32), be32(32)})));
        FAIL();
    } catch (const parse_error& e) {
        EXPECT_EQ(e.what_kind(), parse_error::kind::bad_dimensions);
    }
    try {
        load_idx_labels(write("v", concat({be32(0x00000801), be32(2), {3, 10}})));
        FAIL();
    } catch (const parse_error& e) {
        EXPECT_EQ(e.what_kind(), parse_error::kind::bad_value);
        EXPECT_EQ(e.offset(), 9u);
    }
    try {
        load_idx(kFixtures + "/two-images-idx3-ubyte", write("c", concat({be32(0x00000801), be32(1), {3}})));
        FAIL();
    } catch (const parse_error& e) {
        EXPECT_EQ(e.what_kind(), parse_error::kind::count_mismatch);
    }
    try {
        load_idx_images((dir / "missing").string());
        FAIL();
    } catch (const parse_error& e) {
        EXPECT_EQ(e.what_kind(), parse_error::kind::io);
    }
}

TEST(Encode, ComplementaryCode) {
    RawImage img;
    img.pixels[0] = 51;
    img.pixels[1] = 255;
    const auto a = encode_image(img);
    EXPECT_DOUBLE_EQ(a[0], 0.2);
    EXPECT_DOUBLE_EQ(a[1], 0.8);
    EXPECT_EQ(a[2], 1.0);
    EXPECT_EQ(a[3], 0.0);
    EXPECT_EQ(a[4], 0.0);
    EXPECT_EQ(a[5], 1.0);
    EXPECT_TRUE(activity_violation(a.geometry(), a.values()).empty());
}

TEST(Encode, OnUnitsRecoverIntensityExactly) {
    RawImage img;
    for (int k = 0; k < kImagePixels; ++k) img.pixels[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(k % 256);
    const auto on = on_units(encode_image(img).values());
    for (int k = 0; k < kImagePixels; ++k) EXPECT_EQ(on(k), (k % 256) / 255.0);
    EXPECT_EQ(image_from_intensities(on), img);
}

TEST(EncodedDataset, BatchesMatchPerSampleEncoding) {
    const auto d = load_mnist(kFixtures + "/two-images-idx3-ubyte", kFixtures + "/two-labels-idx1-ubyte");
    const std::vector<std::size_t> idx{1, 0, 1};
    const auto b = d.batch(idx);
    for (std::size_t r = 0; r < idx.size(); ++r) EXPECT_EQ(b.row(static_cast<Eigen::Index>(r)).transpose(), d.activity(idx[r]).values());
    const auto sub = d.subset(std::vector<std::size_t>{1});
    EXPECT_EQ(sub.size(), 1u);
    EXPECT_EQ(sub.label(0), 2);
    EXPECT_EQ(d.head(5).size(), 2u);
}

TEST(EncodedDataset, DenseActivitiesAreValidated) {
    const LayerGeometry g(2, 2);
    Eigen::MatrixXd ok(2, 4);
    ok << 0.5, 0.5, 1, 0, 0.1, 0.9, 0.3, 0.7;
    const auto d = EncodedDataset::from_activities(g, ok, {1, std::nullopt});
    EXPECT_FALSE(d.image_backed());
    EXPECT_EQ(d.label(0), 1);
    EXPECT_FALSE(d.label(1).has_value());
    EXPECT_EQ(d.subset(std::vector<std::size_t>{1}).batch(0, 1).row(0), ok.row(1));
    Eigen::MatrixXd bad = ok;
    bad(1, 0) = 0.2;
    EXPECT_THROW(EncodedDataset::from_activities(g, bad), invariant_error);
    EXPECT_THROW(EncodedDataset::from_activities(g, ok, {1}), dimension_error);
    EXPECT_THROW(EncodedDataset::from_activities(LayerGeometry(3, 2), ok), dimension_error);
}

TEST_F(TempDir, PgmRoundTrip) {
    const auto images = load_idx(kFixtures + "/two-images-idx3-ubyte", kFixtures + "/two-labels-idx1-ubyte");
    const auto p = dir / "digit.pgm";
    write_pgm(p, images[0]);
    auto back = read_pgm(p);
    back.label = images[0].label;
    EXPECT_EQ(back, images[0]);
    std::ifstream in(p, std::ios::binary);
    std::string header(15, '\0');
    in.read(header.data(), 15);
    EXPECT_EQ(header, "P5\n28 28\n255\n" + std::string(1, static_cast<char>(images[0].pixels[0])) + std::string(1, static_cast<char>(images[0].pixels[1])));
    EXPECT_EQ(fs::file_size(p), 13u + 784u);
    EXPECT_THROW(write_pgm(dir / "x.pgm", 3, 3, std::vector<std::uint8_t>(8)), dimension_error);
}
