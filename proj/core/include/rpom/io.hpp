#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rpom/error.hpp"

namespace rpom::io {

/// Shared little-endian binary envelope: magic "PROM", version u32, kind u32,
/// payload, trailing CRC32 over everything before it.
inline constexpr char kMagic[4] = {'P', 'R', 'O', 'M'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class Kind : std::uint32_t {
    trajectory = 1,
    basis = 2,
    mlp = 3,
    conv_ae = 4,
    mlp_ae = 5,
    rbf = 6,
    field = 7,
};

std::uint32_t crc32(std::span<const std::uint8_t> data, std::uint32_t seed = 0);

/// Buffers the payload and writes atomically (temp file + rename) on commit.
class Writer {
public:
    explicit Writer(Kind kind);

    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void f64_array(std::span<const double> v);
    void str(const std::string& s);

    /// Flush to `path` atomically; throws Errc::Io on failure.
    void commit(const std::filesystem::path& path);

    const std::vector<std::uint8_t>& bytes() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    /// Loads and validates magic/version/CRC up front.
    explicit Reader(const std::filesystem::path& path);

    Kind kind() const { return kind_; }

    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::vector<double> f64_array(std::size_t n);
    std::string str();

    void expect_kind(Kind k) const;
    bool at_end() const { return pos_ == payload_end_; }

private:
    void need(std::size_t n) const;

    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
    std::size_t payload_end_ = 0;
    Kind kind_{};
};

/// Write a text file atomically (temp file + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

} // namespace rpom::io
