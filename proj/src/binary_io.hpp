#pragma once
// Little-endian fixed-width stream helpers shared by the file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "cfgat/errors.hpp"

namespace cfgat::io {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("truncated file while reading " + what);
    return v;
}

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) { os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

inline void get_bytes(std::istream& is, void* p, std::size_t n, const std::string& what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is) throw IoError("truncated file while reading " + what);
}

inline void put_string(std::ostream& os, const std::string& s) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    put_bytes(os, s.data(), s.size());
}

inline std::string get_string(std::istream& is, const std::string& what) {
    const auto n = get<std::uint32_t>(is, what);
    if (n > (1u << 20)) throw IoError("implausible string length while reading " + what);
    std::string s(n, '\0');
    get_bytes(is, s.data(), n, what);
    return s;
}

}  // namespace cfgat::io
