#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scen/tensor.hpp"

namespace scen {

// Little-endian binary encoder for the checkpoint and knowledge-base formats.
class ByteWriter {
   public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void str(std::string_view s);  // u32 length + bytes
    void floats(std::span<const float> v);

    const std::string& buffer() const { return buf_; }
    std::string take() { return std::move(buf_); }

   private:
    std::string buf_;
};

class ByteReader {
   public:
    ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

    std::string_view bytes(std::size_t n);
    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    std::string str();
    void floats(std::span<float> out);

    std::size_t remaining() const { return data_.size() - pos_; }
    void expect_end() const;

   private:
    void need(std::size_t n);

    std::string_view data_;
    std::size_t pos_ = 0;
    std::string what_;
};

// FNV-1a, 64 bit.
std::uint64_t fnv1a64(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file then renames over `path`, so readers never
// observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string hex64(std::uint64_t v);

}  // namespace scen
