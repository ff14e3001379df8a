#ifndef JOINTDIFF_SERIALIZE_HPP
#define JOINTDIFF_SERIALIZE_HPP

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace jointdiff::io {

// Little-endian primitives written byte by byte so files are identical on any
// host.

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw std::runtime_error("write failed");
}

inline void read_bytes(std::istream& is, void* p, size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n) throw std::runtime_error("unexpected end of file");
}

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_integral_v<T>);
    unsigned char buf[sizeof(T)];
    using U = std::make_unsigned_t<T>;
    U u = static_cast<U>(v);
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    write_bytes(os, buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    static_assert(std::is_integral_v<T>);
    unsigned char buf[sizeof(T)];
    read_bytes(is, buf, sizeof(T));
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(buf[i]) << (8 * i);
    return static_cast<T>(u);
}

inline void write_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_le<uint32_t>(os, bits);
}

inline float read_f32(std::istream& is) {
    uint32_t bits = read_le<uint32_t>(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void write_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_le<uint64_t>(os, bits);
}

inline double read_f64(std::istream& is) {
    uint64_t bits = read_le<uint64_t>(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_le<uint32_t>(os, static_cast<uint32_t>(s.size()));
    write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is, uint32_t max_len = 1u << 28) {
    uint32_t n = read_le<uint32_t>(is);
    if (n > max_len) throw std::runtime_error("string length out of range");
    std::string s(n, '\0');
    if (n) read_bytes(is, s.data(), n);
    return s;
}

inline void write_f32_array(std::ostream& os, const float* p, size_t n) {
    for (size_t i = 0; i < n; ++i) write_f32(os, p[i]);
}

inline void read_f32_array(std::istream& is, float* p, size_t n) {
    for (size_t i = 0; i < n; ++i) p[i] = read_f32(is);
}

}  // namespace jointdiff::io

#endif
