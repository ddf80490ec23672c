#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>

#include "logicl/error.hpp"

namespace logicl::io {

// Little-endian host layout; files are not meant to move between architectures.

class BinaryWriter {
public:
    explicit BinaryWriter(const std::filesystem::path& path)
        : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw FormatError("cannot write " + path.string());
    }

    void raw(const void* data, std::size_t n) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T value) {
        raw(&value, sizeof(T));
    }

    void str(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }

    void doubles(std::span<const double> values) { raw(values.data(), values.size_bytes()); }

    void finish() {
        out_.flush();
        if (!out_) throw FormatError("write failed for " + path_.string());
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::filesystem::path& path)
        : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw FormatError("cannot open " + path.string());
    }

    void raw(void* data, std::size_t n) {
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw FormatError(path_.string() + ": truncated at byte offset " + std::to_string(offset_ + in_.gcount()));
        offset_ += n;
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        T value{};
        raw(&value, sizeof(T));
        return value;
    }

    std::string str(std::uint32_t max_len = 1u << 28) {
        const std::size_t at = offset_;
        const auto n = get<std::uint32_t>();
        if (n > max_len)
            throw FormatError(path_.string() + ": implausible string length at byte offset " + std::to_string(at));
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }

    void doubles(std::span<double> values) { raw(values.data(), values.size_bytes()); }

    std::size_t offset() const noexcept { return offset_; }
    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
    const std::filesystem::path& path() const noexcept { return path_; }

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(path_.string() + ": " + what + " at byte offset " + std::to_string(offset_));
    }

private:
    std::filesystem::path path_;
    std::ifstream in_;
    std::size_t offset_ = 0;
};

}  // namespace logicl::io
