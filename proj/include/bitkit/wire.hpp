#pragma once

// Little-endian primitives for the on-disk containers. Explicit byte
// packing so files are identical across platforms.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "bitkit/error.hpp"

namespace bitkit::wire {

inline void put_u32(std::ostream& os, uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u16(std::ostream& os, uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_f32(std::ostream& os, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(os, v);
}

inline void put_f32_array(std::ostream& os, const float* data, size_t n) {
    std::vector<unsigned char> buf(n * 4);
    for (size_t i = 0; i < n; ++i) {
        uint32_t v;
        std::memcpy(&v, data + i, 4);
        buf[i * 4 + 0] = static_cast<unsigned char>(v & 0xff);
        buf[i * 4 + 1] = static_cast<unsigned char>((v >> 8) & 0xff);
        buf[i * 4 + 2] = static_cast<unsigned char>((v >> 16) & 0xff);
        buf[i * 4 + 3] = static_cast<unsigned char>((v >> 24) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

// Reader that tracks its byte offset for error reporting.
class Reader {
public:
    Reader(std::istream& is, std::string context) : is_(is), context_(std::move(context)) {}

    size_t offset() const { return offset_; }

    void bytes(void* dst, size_t n, const char* what) {
        is_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(is_.gcount()) != n)
            throw FormatError(context_ + ": truncated while reading " + std::string(what), offset_);
        offset_ += n;
    }

    uint32_t u32(const char* what) {
        unsigned char b[4];
        bytes(b, 4, what);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }

    uint16_t u16(const char* what) {
        unsigned char b[2];
        bytes(b, 2, what);
        return static_cast<uint16_t>(b[0]) | static_cast<uint16_t>(b[1] << 8);
    }

    void f32_array(float* dst, size_t n, const char* what) {
        std::vector<unsigned char> buf(n * 4);
        bytes(buf.data(), n * 4, what);
        for (size_t i = 0; i < n; ++i) {
            const uint32_t v = static_cast<uint32_t>(buf[i * 4]) |
                               (static_cast<uint32_t>(buf[i * 4 + 1]) << 8) |
                               (static_cast<uint32_t>(buf[i * 4 + 2]) << 16) |
                               (static_cast<uint32_t>(buf[i * 4 + 3]) << 24);
            std::memcpy(dst + i, &v, 4);
        }
    }

    bool at_eof() {
        is_.peek();
        return is_.eof();
    }

    [[noreturn]] void fail(const std::string& msg) { throw FormatError(context_ + ": " + msg, offset_); }

private:
    std::istream& is_;
    std::string context_;
    size_t offset_ = 0;
};

}  // namespace bitkit::wire
