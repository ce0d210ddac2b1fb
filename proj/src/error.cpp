#include "cordkit/error.hpp"

namespace cordkit {

const char* to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::dimension: return "dimension mismatch";
    case ErrorCode::empty_mask: return "empty mask";
    case ErrorCode::io: return "I/O error";
    case ErrorCode::bad_magic: return "bad NIfTI magic";
    case ErrorCode::unsupported_datatype: return "unsupported NIfTI datatype";
    case ErrorCode::truncated: return "truncated file";
    case ErrorCode::label_alphabet: return "label code outside alphabet";
    case ErrorCode::consistency: return "consistency error";
    case ErrorCode::infeasible: return "infeasible request";
    case ErrorCode::missing_subject: return "missing subject";
    case ErrorCode::external_exit: return "external command failed";
    case ErrorCode::external_timeout: return "external command timed out";
    case ErrorCode::external_output: return "external command produced invalid output";
    case ErrorCode::config: return "configuration error";
    case ErrorCode::internal: return "internal error";
    }
    return "unknown error";
}

} // namespace cordkit
