#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <unistd.h>

#include <gtest/gtest.h>

#include "pico/error.hpp"
#include "pico/grid_io.hpp"
#include "support/gen.hpp"

using namespace pico;

namespace {

std::filesystem::path scratch_root()
{
    return std::filesystem::temp_directory_path() / ("pico_io_" + std::to_string(::getpid()));
}

// removes the scratch tree when the test binary exits
const struct ScratchCleanup {
    ~ScratchCleanup()
    {
        std::error_code ec;
        std::filesystem::remove_all(scratch_root(), ec);
    }
} cleanup;

std::filesystem::path scratch(const std::string& name)
{
    const auto dir = scratch_root();
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::vector<std::uint8_t> bytes_of(std::string_view s)
{
    return {s.begin(), s.end()};
}

} // namespace

TEST(Pgrd, HeaderLayout)
{
    Grid2D g(2, 3, 0.25, GridRole::attention);
    const auto b = encode_pgrd(g);
    ASSERT_EQ(b.size(), 16u + 4u * 6u);
    EXPECT_EQ(std::memcmp(b.data(), "PGRD", 4), 0);
    // little-endian u32 fields
    EXPECT_EQ(b[4], 2);
    EXPECT_EQ(b[5] | b[6] | b[7], 0);
    EXPECT_EQ(b[8], 3);
    EXPECT_EQ(b[12], 2);
    std::uint32_t first = b[16] | (b[17] << 8) | (b[18] << 16) | (static_cast<std::uint32_t>(b[19]) << 24);
    EXPECT_EQ(std::bit_cast<float>(first), 0.25f);
}

TEST(Pgrd, RoundTripIsExactForFloatValues)
{
    auto rng = testkit::case_rng(0x96, 0);
    for (std::size_t i = 0; i < 50; ++i) {
        auto g = testkit::random_shape_grid(rng, 17, -100.0, 100.0);
        for (double& v : g.values()) {
            v = static_cast<float>(v);
        }
        g.set_role(static_cast<GridRole>(i % 3));
        const auto back = decode_pgrd(encode_pgrd(g));
        ASSERT_EQ(back, g);
        // and again: encode(decode(b)) == b
        const auto b = encode_pgrd(g);
        ASSERT_EQ(encode_pgrd(decode_pgrd(b)), b);
    }
}

TEST(Pgrd, RejectsBadPayloads)
{
    EXPECT_THROW(decode_pgrd(bytes_of("PGR")), Error);
    EXPECT_THROW(decode_pgrd(bytes_of("XXXXaaaabbbbcccc")), Error);
    auto b = encode_pgrd(Grid2D(2, 2, 1.0));
    b.pop_back();
    EXPECT_THROW(decode_pgrd(b), Error);
    b = encode_pgrd(Grid2D(2, 2, 1.0));
    b[12] = 7;
    EXPECT_THROW(decode_pgrd(b), Error);
}

TEST(Pgrd, FileRoundTrip)
{
    const auto path = scratch("nested/dir/g.pgrd");
    const Grid2D g(3, 4, 0.5, GridRole::probability);
    write_pgrd(path, g);
    EXPECT_EQ(read_pgrd(path), g);
    EXPECT_THROW(read_pgrd(scratch("missing.pgrd")), Error);
}

TEST(Pgm, ClampsAndScales)
{
    Grid2D g(1, 4, std::vector<double>{-1.0, 0.0, 0.5, 2.0});
    const auto b = encode_pgm(g);
    const std::string header = "P5\n4 1\n255\n";
    ASSERT_EQ(b.size(), header.size() + 4);
    EXPECT_EQ(std::string(b.begin(), b.begin() + static_cast<long>(header.size())), header);
    EXPECT_EQ(b[header.size() + 0], 0);
    EXPECT_EQ(b[header.size() + 1], 0);
    EXPECT_EQ(b[header.size() + 2], 128);
    EXPECT_EQ(b[header.size() + 3], 255);
}

TEST(Ppm, NeedsThreeEqualPlanes)
{
    std::vector<Grid2D> two{Grid2D(2, 2, 0.0), Grid2D(2, 2, 0.0)};
    EXPECT_THROW(write_ppm(scratch("x.ppm"), two), Error);
    std::vector<Grid2D> rgb{Grid2D(2, 2, 1.0), Grid2D(2, 2, 0.0), Grid2D(2, 2, 0.0)};
    const auto path = scratch("red.ppm");
    write_ppm(path, rgb);
    EXPECT_EQ(std::filesystem::file_size(path), std::string("P6\n2 2\n255\n").size() + 12);
}

TEST(Base64, KnownVectors)
{
    // RFC 4648 test vectors
    const std::pair<const char*, const char*> cases[] = {
        {"", ""}, {"f", "Zg=="}, {"fo", "Zm8="}, {"foo", "Zm9v"},
        {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="}, {"foobar", "Zm9vYmFy"},
    };
    for (auto [plain, coded] : cases) {
        EXPECT_EQ(base64_encode(bytes_of(plain)), coded);
        EXPECT_EQ(base64_decode(coded), bytes_of(plain));
    }
}

TEST(Base64, PropertyRoundTrip)
{
    for (std::size_t i = 0; i < 200; ++i) {
        auto rng = testkit::case_rng(0xb64, i);
        std::vector<std::uint8_t> b(testkit::pick(rng, 0, 90));
        for (auto& c : b) {
            c = static_cast<std::uint8_t>(rng.next());
        }
        ASSERT_EQ(base64_decode(base64_encode(b)), b) << "case " << i;
    }
}

TEST(Base64, RejectsGarbage)
{
    EXPECT_THROW(base64_decode("abc"), Error);
    EXPECT_THROW(base64_decode("ab!d"), Error);
    EXPECT_THROW(base64_decode("a=bc"), Error);
    EXPECT_THROW(base64_decode("Zg==Zg=="), Error);
}

TEST(WriteBytes, UnwritableTargetIsAnIoError)
{
    const auto blocker = scratch("blocker");
    std::ofstream(blocker) << "file";
    try {
        write_pgrd(blocker / "under" / "g.pgrd", Grid2D(1, 1, 0.0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io);
    }
}
