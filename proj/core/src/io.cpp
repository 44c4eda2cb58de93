#include "rpom/io.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace rpom::io {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

const std::array<std::uint32_t, 256>& crc_table() {
    static const auto table = make_crc_table();
    return table;
}

} // namespace

std::uint32_t crc32(std::span<const std::uint8_t> data, std::uint32_t seed) {
    const auto& table = crc_table();
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    for (std::uint8_t b : data) c = table[(c ^ b) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

Writer::Writer(Kind kind) {
    buf_.reserve(1 << 12);
    for (char c : kMagic) buf_.push_back(static_cast<std::uint8_t>(c));
    u32(kFormatVersion);
    u32(static_cast<std::uint32_t>(kind));
}

void Writer::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::f64_array(std::span<const double> v) {
    for (double x : v) f64(x);
}

void Writer::str(const std::string& s) {
    u64(s.size());
    for (char c : s) buf_.push_back(static_cast<std::uint8_t>(c));
}

void Writer::commit(const std::filesystem::path& path) {
    std::uint32_t crc = crc32(buf_);
    std::vector<std::uint8_t> tail;
    for (int i = 0; i < 4; ++i) tail.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));

    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(Errc::Io, "cannot open for writing: " + tmp.string());
        out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
        out.write(reinterpret_cast<const char*>(tail.data()), static_cast<std::streamsize>(tail.size()));
        if (!out) fail(Errc::Io, "short write: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(Errc::Io, "rename failed: " + path.string() + ": " + ec.message());
}

Reader::Reader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::Io, "cannot open: " + path.string());
    in.seekg(0, std::ios::end);
    auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    buf_.resize(size);
    in.read(reinterpret_cast<char*>(buf_.data()), static_cast<std::streamsize>(size));
    if (!in) fail(Errc::Io, "read failed: " + path.string());

    if (size < 16) fail(Errc::TruncatedFile, "file too short: " + path.string());
    if (std::memcmp(buf_.data(), kMagic, 4) != 0)
        fail(Errc::BadMagic, "bad magic in " + path.string());

    payload_end_ = size - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= std::uint32_t(buf_[payload_end_ + i]) << (8 * i);
    std::uint32_t actual = crc32(std::span(buf_.data(), payload_end_));
    if (stored != actual) fail(Errc::CrcMismatch, "checksum mismatch in " + path.string());

    pos_ = 4;
    std::uint32_t version = u32();
    if (version != kFormatVersion)
        fail(Errc::VersionMismatch, "unsupported format version in " + path.string());
    kind_ = static_cast<Kind>(u32());
}

void Reader::need(std::size_t n) const {
    if (pos_ + n > payload_end_) fail(Errc::TruncatedFile, "unexpected end of payload");
}

std::uint32_t Reader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
}

std::uint64_t Reader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::vector<double> Reader::f64_array(std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f64();
    return out;
}

std::string Reader::str() {
    std::uint64_t n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
}

void Reader::expect_kind(Kind k) const {
    if (kind_ != k) fail(Errc::VersionMismatch, "unexpected payload kind");
}

void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(Errc::Io, "cannot open for writing: " + tmp.string());
        out << content;
        if (!out) fail(Errc::Io, "short write: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(Errc::Io, "rename failed: " + path.string() + ": " + ec.message());
}

} // namespace rpom::io
