#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace patchail::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename T>
void put(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
    T value{};
    if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw FormatError(std::string("truncated file while reading ") + what);
    }
    return value;
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
    char buf[4] = {};
    if (!is.read(buf, 4)) throw FormatError("truncated file while reading magic");
    if (std::memcmp(buf, magic, 4) != 0) throw FormatError(std::string("bad magic, expected ") + magic);
}

}  // namespace patchail::io
