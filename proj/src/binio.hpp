#pragma once

// Little-endian binary read/write helpers shared by the checkpoint and
// dataset formats. Doubles travel as their IEEE-754 bit pattern, so
// round-trips are bitwise.

#include <cstdint>
#include <cstring>
#include <string>

#include "shiftadapt/common.hpp"

namespace shiftadapt::binio {

inline void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_i32(std::string& buf, std::int32_t v) { put_u32(buf, std::uint32_t(v)); }

inline void put_f64(std::string& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(buf, bits);
}

inline void put_str(std::string& buf, const std::string& s) {
    put_u32(buf, std::uint32_t(s.size()));
    buf.append(s);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw DataError("binary read past end of file");
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::int32_t i32() { return std::int32_t(u32()); }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        std::uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& data);

} // namespace shiftadapt::binio
