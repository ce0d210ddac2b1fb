#pragma once

#include <stdexcept>
#include <string>

namespace cordkit {

// Numeric values are part of the C ABI (see cordkit.h); append only.
enum class ErrorCode : int {
    invalid_argument = 1,
    dimension = 2,
    empty_mask = 3,
    io = 4,
    bad_magic = 5,
    unsupported_datatype = 6,
    truncated = 7,
    label_alphabet = 8,
    consistency = 9,
    infeasible = 10,
    missing_subject = 11,
    external_exit = 12,
    external_timeout = 13,
    external_output = 14,
    config = 15,
    internal = 99,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

} // namespace cordkit
