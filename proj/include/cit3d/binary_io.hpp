#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "cit3d/error.hpp"

// Little-endian scalar helpers shared by the checkpoint, depth and PLY codecs.
namespace cit3d::binio {

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

inline void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_i32(std::ostream& out, std::int32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_f32(std::ostream& out, float v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

template <class T>
T read_scalar(std::istream& in, const char* what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw Error(std::string("unexpected end of data while reading ") + what);
    return v;
}

inline std::uint32_t read_u32(std::istream& in, const char* what) { return read_scalar<std::uint32_t>(in, what); }
inline std::int32_t read_i32(std::istream& in, const char* what) { return read_scalar<std::int32_t>(in, what); }
inline float read_f32(std::istream& in, const char* what) { return read_scalar<float>(in, what); }
inline std::uint8_t read_u8(std::istream& in, const char* what) { return read_scalar<std::uint8_t>(in, what); }

} // namespace cit3d::binio
