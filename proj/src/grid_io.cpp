#include "pico/grid_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <system_error>

#include "pico/error.hpp"

namespace pico {

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
    }
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset)
{
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(bytes[offset + static_cast<std::size_t>(i)]) << (8 * i);
    }
    return v;
}

std::uint8_t to_byte(double v)
{
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

constexpr std::string_view b64_alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

} // namespace

std::vector<std::uint8_t> encode_pgrd(const Grid2D& g)
{
    std::vector<std::uint8_t> out;
    out.reserve(pgrd_header_size + 4 * g.size());
    for (char c : pgrd_magic) {
        out.push_back(static_cast<std::uint8_t>(c));
    }
    put_u32(out, static_cast<std::uint32_t>(g.height()));
    put_u32(out, static_cast<std::uint32_t>(g.width()));
    put_u32(out, static_cast<std::uint32_t>(g.role()));
    for (double v : g.values()) {
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    return out;
}

Grid2D decode_pgrd(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < pgrd_header_size || std::memcmp(bytes.data(), pgrd_magic.data(), pgrd_magic.size()) != 0) {
        throw Error(ErrorKind::io, "not a PGRD payload");
    }
    const std::size_t h = get_u32(bytes, 4);
    const std::size_t w = get_u32(bytes, 8);
    const std::uint32_t role = get_u32(bytes, 12);
    if (role > 2) {
        throw Error(ErrorKind::io, "PGRD role tag out of range");
    }
    if (h == 0 || w == 0 || bytes.size() != pgrd_header_size + 4 * h * w) {
        throw Error(ErrorKind::io, "PGRD payload size does not match header");
    }
    std::vector<double> values(h * w);
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = std::bit_cast<float>(get_u32(bytes, pgrd_header_size + 4 * i));
    }
    return Grid2D(h, w, std::move(values), static_cast<GridRole>(role));
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) {
            throw Error(ErrorKind::io, "cannot create " + path.parent_path().string() + ": " + ec.message());
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error(ErrorKind::io, "write failed for " + path.string());
    }
}

void write_pgrd(const std::filesystem::path& path, const Grid2D& g)
{
    write_bytes(path, encode_pgrd(g));
}

Grid2D read_pgrd(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::io, "cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_pgrd(bytes);
}

std::vector<std::uint8_t> encode_pgm(const Grid2D& g)
{
    const std::string header = "P5\n" + std::to_string(g.width()) + " " + std::to_string(g.height()) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + g.size());
    for (double v : g.values()) {
        out.push_back(to_byte(v));
    }
    return out;
}

void write_pgm(const std::filesystem::path& path, const Grid2D& g)
{
    write_bytes(path, encode_pgm(g));
}

void write_ppm(const std::filesystem::path& path, std::span<const Grid2D> rgb)
{
    if (rgb.size() != 3 || !rgb[0].same_shape(rgb[1]) || !rgb[0].same_shape(rgb[2])) {
        throw invalid_argument("PPM output needs three equal-shape channels");
    }
    const auto& r = rgb[0];
    const std::string header = "P6\n" + std::to_string(r.width()) + " " + std::to_string(r.height()) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + 3 * r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        for (const auto& c : rgb) {
            out.push_back(to_byte(c.values()[i]));
        }
    }
    write_bytes(path, out);
}

std::string base64_encode(std::span<const std::uint8_t> bytes)
{
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out.push_back(b64_alphabet[(n >> 18) & 63]);
        out.push_back(b64_alphabet[(n >> 12) & 63]);
        out.push_back(b64_alphabet[(n >> 6) & 63]);
        out.push_back(b64_alphabet[n & 63]);
    }
    const std::size_t rest = bytes.size() - i;
    if (rest == 1) {
        const std::uint32_t n = bytes[i] << 16;
        out.push_back(b64_alphabet[(n >> 18) & 63]);
        out.push_back(b64_alphabet[(n >> 12) & 63]);
        out.append("==");
    } else if (rest == 2) {
        const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out.push_back(b64_alphabet[(n >> 18) & 63]);
        out.push_back(b64_alphabet[(n >> 12) & 63]);
        out.push_back(b64_alphabet[(n >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text)
{
    std::array<int, 256> lookup{};
    lookup.fill(-1);
    for (std::size_t i = 0; i < b64_alphabet.size(); ++i) {
        lookup[static_cast<unsigned char>(b64_alphabet[i])] = static_cast<int>(i);
    }
    if (text.size() % 4 != 0) {
        throw Error(ErrorKind::io, "base64 length is not a multiple of 4");
    }
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        std::uint32_t n = 0;
        int pad = 0;
        for (std::size_t k = 0; k < 4; ++k) {
            const char c = text[i + k];
            if (c == '=' && i + 4 == text.size() && k >= 2) {
                ++pad;
                n <<= 6;
                continue;
            }
            const int v = lookup[static_cast<unsigned char>(c)];
            if (v < 0 || pad > 0) {
                throw Error(ErrorKind::io, "invalid base64 payload");
            }
            n = (n << 6) | static_cast<std::uint32_t>(v);
        }
        out.push_back(static_cast<std::uint8_t>((n >> 16) & 0xff));
        if (pad < 2) {
            out.push_back(static_cast<std::uint8_t>((n >> 8) & 0xff));
        }
        if (pad < 1) {
            out.push_back(static_cast<std::uint8_t>(n & 0xff));
        }
    }
    return out;
}

} // namespace pico
