#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vmr/core/error.hpp"

namespace vmr {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are unsupported");

// Little-endian binary writer over a whole-file buffer.
class BinWriter {
public:
    void raw(const void* p, size_t n) {
        const char* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void i64(int64_t v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }
    void magic(const char m[4]) { raw(m, 4); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }

    const std::vector<char>& buffer() const { return buf_; }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for writing: " + path);
        f.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!f) throw IoError("short write: " + path);
    }

private:
    std::vector<char> buf_;
};

// Reader that tracks the current byte offset so format errors can name it.
class BinReader {
public:
    explicit BinReader(std::vector<char> data, std::string origin)
        : data_(std::move(data)), origin_(std::move(origin)) {}

    static BinReader from_file(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open: " + path);
        std::vector<char> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        return BinReader(std::move(data), path);
    }

    size_t offset() const { return pos_; }
    size_t remaining() const { return data_.size() - pos_; }

    void raw(void* out, size_t n, const char* what) {
        if (remaining() < n) {
            throw FormatError(origin_ + ": truncated while reading " + what + " at byte offset " +
                              std::to_string(pos_) + " (need " + std::to_string(n) + " bytes, have " +
                              std::to_string(remaining()) + ")");
        }
        std::memcpy(out, data_.data() + pos_, n);
        pos_ += n;
    }

    uint32_t u32(const char* what) {
        uint32_t v;
        raw(&v, 4, what);
        return v;
    }
    uint64_t u64(const char* what) {
        uint64_t v;
        raw(&v, 8, what);
        return v;
    }
    int64_t i64(const char* what) {
        int64_t v;
        raw(&v, 8, what);
        return v;
    }
    float f32(const char* what) {
        float v;
        raw(&v, 4, what);
        return v;
    }
    double f64(const char* what) {
        double v;
        raw(&v, 8, what);
        return v;
    }
    void expect_magic(const char m[4]) {
        char got[4];
        size_t at = pos_;
        raw(got, 4, "magic");
        if (std::memcmp(got, m, 4) != 0) {
            throw FormatError(origin_ + ": bad magic at byte offset " + std::to_string(at) +
                              " (expected \"" + std::string(m, 4) + "\", got \"" + std::string(got, 4) + "\")");
        }
    }
    std::string str(const char* what) {
        uint64_t n = u64(what);
        std::string s(n, '\0');
        raw(s.data(), n, what);
        return s;
    }

    const std::string& origin() const { return origin_; }

private:
    std::vector<char> data_;
    std::string origin_;
    size_t pos_ = 0;
};

}  // namespace vmr
