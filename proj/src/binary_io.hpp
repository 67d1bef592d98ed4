// Little-endian raw payload helpers shared by the BSPG1, VOL1 and VBANK1 formats.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bsreg/bspline.hpp"

namespace bsreg::detail {

template <typename UInt>
UInt byteswap(UInt v)
{
    UInt out = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        out = (out << 8) | (v & 0xff);
        v >>= 8;
    }
    return out;
}

template <typename Float, typename UInt>
void write_le(std::ostream& os, std::span<const double> values)
{
    static_assert(sizeof(Float) == sizeof(UInt));
    std::vector<char> buf(values.size() * sizeof(Float));
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto f = static_cast<Float>(values[i]);
        UInt bits;
        std::memcpy(&bits, &f, sizeof(bits));
        if constexpr (std::endian::native == std::endian::big) bits = byteswap(bits);
        std::memcpy(buf.data() + i * sizeof(Float), &bits, sizeof(bits));
    }
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw FormatError("write failed");
}

template <typename Float, typename UInt>
void read_le(std::istream& is, std::span<double> out, const char* what)
{
    std::vector<char> buf(out.size() * sizeof(Float));
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(is.gcount()) != buf.size())
        throw FormatError(std::string(what) + ": truncated payload");
    for (std::size_t i = 0; i < out.size(); ++i) {
        UInt bits;
        std::memcpy(&bits, buf.data() + i * sizeof(Float), sizeof(bits));
        if constexpr (std::endian::native == std::endian::big) bits = byteswap(bits);
        Float f;
        std::memcpy(&f, &bits, sizeof(f));
        out[i] = static_cast<double>(f);
    }
}

inline void write_f64(std::ostream& os, std::span<const double> v) { write_le<double, std::uint64_t>(os, v); }
inline void write_f32(std::ostream& os, std::span<const double> v) { write_le<float, std::uint32_t>(os, v); }
inline void read_f64(std::istream& is, std::span<double> v, const char* what) { read_le<double, std::uint64_t>(is, v, what); }
inline void read_f32(std::istream& is, std::span<double> v, const char* what) { read_le<float, std::uint32_t>(is, v, what); }

/// Reads one header line and checks its leading keyword; the rest is returned
/// as a stream for field extraction.
inline std::istringstream header_line(std::istream& is, const std::string& keyword, const char* what)
{
    std::string line;
    if (!std::getline(is, line)) throw FormatError(std::string(what) + ": missing '" + keyword + "' line");
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key != keyword)
        throw FormatError(std::string(what) + ": expected '" + keyword + "', got '" + key + "'");
    return ss;
}

template <typename T, std::size_t N>
std::array<T, N> parse_fields(std::istringstream& ss, const char* what)
{
    std::array<T, N> out{};
    for (auto& v : out)
        if (!(ss >> v)) throw FormatError(std::string(what) + ": malformed header field");
    std::string extra;
    if (ss >> extra) throw FormatError(std::string(what) + ": trailing header data '" + extra + "'");
    return out;
}

/// Shortest text form that round-trips a double exactly.
std::string format_double(double v);

}  // namespace bsreg::detail
