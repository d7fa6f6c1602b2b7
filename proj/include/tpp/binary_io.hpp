#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tpp/errors.hpp"

// Little-endian binary readers/writers with byte-offset tracking, shared by
// the sample and checkpoint formats. Offsets in error messages are absolute
// file positions.
namespace tpp::io {

class Writer {
  public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw FormatError("cannot open '" + path + "' for writing");
    }

    void magic(const char tag[4]) { out_.write(tag, 4); }

    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }

    void f64_array(const double* data, std::size_t count) {
        std::vector<unsigned char> buf(count * 8);
        for (std::size_t i = 0; i < count; ++i) {
            const std::uint64_t v = std::bit_cast<std::uint64_t>(data[i]);
            for (std::size_t b = 0; b < 8; ++b) buf[i * 8 + b] = static_cast<unsigned char>((v >> (8 * b)) & 0xff);
        }
        out_.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }

    void finish(const std::string& path) {
        out_.flush();
        if (!out_) throw FormatError("write to '" + path + "' failed");
    }

  private:
    template <typename T>
    void put_le(T v) {
        unsigned char buf[sizeof(T)];
        for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
        out_.write(reinterpret_cast<const char*>(buf), sizeof(T));
    }

    std::ofstream out_;
};

class Reader {
  public:
    Reader(const std::string& path, const char expected_magic[4]) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw FormatError("cannot open '" + path + "' for reading");
        char tag[4];
        in_.read(tag, 4);
        if (in_.gcount() != 4 || std::memcmp(tag, expected_magic, 4) != 0) {
            throw FormatError("'" + path + "': bad magic at byte offset 0 (expected " +
                              std::string(expected_magic, 4) + ")");
        }
        offset_ = 4;
    }

    std::uint32_t u32(const char* what) { return get_le<std::uint32_t>(what); }
    std::uint64_t u64(const char* what) { return get_le<std::uint64_t>(what); }
    double f64(const char* what) { return std::bit_cast<double>(get_le<std::uint64_t>(what)); }

    std::vector<double> f64_array(std::size_t count, const char* what) {
        std::vector<unsigned char> buf(count * 8);
        in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (in_.gcount() != static_cast<std::streamsize>(buf.size())) {
            throw FormatError("'" + path_ + "': truncated while reading " + std::string(what) +
                              " at byte offset " + std::to_string(offset_ + static_cast<std::uint64_t>(in_.gcount())));
        }
        offset_ += buf.size();
        std::vector<double> out(count);
        for (std::size_t i = 0; i < count; ++i) {
            std::uint64_t v = 0;
            for (std::size_t b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(buf[i * 8 + b]) << (8 * b);
            out[i] = std::bit_cast<double>(v);
        }
        return out;
    }

    std::uint64_t offset() const { return offset_; }

    void expect_eof(const char* what) {
        char probe;
        in_.read(&probe, 1);
        if (!in_.eof()) {
            throw FormatError("'" + path_ + "': trailing bytes after " + std::string(what) +
                              " at byte offset " + std::to_string(offset_));
        }
    }

  private:
    template <typename T>
    T get_le(const char* what) {
        unsigned char buf[sizeof(T)];
        in_.read(reinterpret_cast<char*>(buf), sizeof(T));
        if (in_.gcount() != static_cast<std::streamsize>(sizeof(T))) {
            throw FormatError("'" + path_ + "': truncated while reading " + std::string(what) +
                              " at byte offset " + std::to_string(offset_));
        }
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
        offset_ += sizeof(T);
        return v;
    }

    std::string path_;
    std::ifstream in_;
    std::uint64_t offset_ = 0;
};

}  // namespace tpp::io
