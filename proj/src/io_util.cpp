#include "scen/io_util.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace scen {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void ByteWriter::u32(std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    buf_.append(b, 4);
}

void ByteWriter::u64(std::uint64_t v) {
    char b[8];
    std::memcpy(b, &v, 8);
    buf_.append(b, 8);
}

void ByteWriter::f32(float v) {
    char b[4];
    std::memcpy(b, &v, 4);
    buf_.append(b, 4);
}

void ByteWriter::str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
}

void ByteWriter::floats(std::span<const float> v) {
    buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
}

void ByteReader::need(std::size_t n) {
    if (remaining() < n) {
        throw FormatError(what_ + ": truncated (need " + std::to_string(n) + " bytes at offset " +
                          std::to_string(pos_) + ", have " + std::to_string(remaining()) + ")");
    }
}

std::string_view ByteReader::bytes(std::size_t n) {
    need(n);
    const std::string_view out = data_.substr(pos_, n);
    pos_ += n;
    return out;
}

std::uint8_t ByteReader::u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }

std::uint32_t ByteReader::u32() {
    std::uint32_t v;
    std::memcpy(&v, bytes(4).data(), 4);
    return v;
}

std::uint64_t ByteReader::u64() {
    std::uint64_t v;
    std::memcpy(&v, bytes(8).data(), 8);
    return v;
}

float ByteReader::f32() {
    float v;
    std::memcpy(&v, bytes(4).data(), 4);
    return v;
}

std::string ByteReader::str() {
    const std::uint32_t n = u32();
    return std::string(bytes(n));
}

void ByteReader::floats(std::span<float> out) {
    const std::string_view b = bytes(out.size() * sizeof(float));
    std::memcpy(out.data(), b.data(), b.size());
}

void ByteReader::expect_end() const {
    if (remaining() != 0) throw FormatError(what_ + ": " + std::to_string(remaining()) + " trailing bytes");
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw Error("short write to " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace scen
