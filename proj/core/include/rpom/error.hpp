#pragma once

#include <stdexcept>
#include <string>

namespace rpom {

/// Failure categories surfaced by the library. The CLI maps these onto
/// process exit codes; tests match on them.
enum class Errc {
    NonFinite,
    NoConvergence,
    NotSpd,
    ShapeMismatch,
    UnsupportedOrder,
    NonPositive,
    DomainMismatch,
    EmptySplit,
    EmptyData,
    InsufficientRuns,
    SingularSystem,
    PerplexityInfeasible,
    Io,
    BadMagic,
    VersionMismatch,
    TruncatedFile,
    CrcMismatch,
    ConfigError,
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, Errc code, const std::string& what) {
    if (!ok) fail(code, what);
}

} // namespace rpom
