#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "bigen/error.hpp"

namespace bigen::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class ByteWriter {
   public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void magic(std::string_view m) { bytes(m.data(), m.size()); }
    void u16(std::uint16_t v) { bytes(&v, sizeof v); }
    void u32(std::uint32_t v) { bytes(&v, sizeof v); }
    void f32(float v) { bytes(&v, sizeof v); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::vector<char>& buffer() { return buf_; }

   private:
    std::vector<char> buf_;
};

class ByteReader {
   public:
    ByteReader(const std::vector<char>& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

    void expect_magic(std::string_view m) {
        need(m.size(), "magic");
        if (std::string_view(buf_.data() + pos_, m.size()) != m) {
            throw DataError(what_ + ": bad magic (expected \"" + std::string(m) + "\")");
        }
        pos_ += m.size();
    }
    std::uint16_t u16(const char* field) { return pod<std::uint16_t>(field); }
    std::uint32_t u32(const char* field) { return pod<std::uint32_t>(field); }
    float f32(const char* field) { return pod<float>(field); }
    std::string str(const char* field) {
        const auto n = u32(field);
        need(n, field);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == buf_.size(); }
    std::size_t remaining() const { return buf_.size() - pos_; }

   private:
    template <class P>
    P pod(const char* field) {
        need(sizeof(P), field);
        P v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(P));
        pos_ += sizeof(P);
        return v;
    }
    void need(std::size_t n, const char* field) {
        if (buf_.size() - pos_ < n) throw DataError(what_ + ": truncated while reading field '" + field + "'");
    }

    const std::vector<char>& buf_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

}  // namespace bigen::io
