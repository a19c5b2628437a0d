#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace covtune {

/**
 * Error categories surfaced by the library.
 * The CLI and the service map these one-to-one onto exit codes and HTTP statuses.
 */
enum class ErrorCode {
    invalid_argument,
    invalid_group,
    empty_group,
    unknown_parameter,
    unknown_bucket,
    domain_violation,
    parse_error,
    schema_error,
    consistency_error,
    io_error,
    too_few_trials,
    degenerate_bandwidth,
    duplicate_name,
    builtin_group,
    not_found,
    invalid_plan,
    cancelled,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::invalid_group: return "invalid_group";
    case ErrorCode::empty_group: return "empty_group";
    case ErrorCode::unknown_parameter: return "unknown_parameter";
    case ErrorCode::unknown_bucket: return "unknown_bucket";
    case ErrorCode::domain_violation: return "domain_violation";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::schema_error: return "schema_error";
    case ErrorCode::consistency_error: return "consistency_error";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::too_few_trials: return "too_few_trials";
    case ErrorCode::degenerate_bandwidth: return "degenerate_bandwidth";
    case ErrorCode::duplicate_name: return "duplicate_name";
    case ErrorCode::builtin_group: return "builtin_group";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::invalid_plan: return "invalid_plan";
    case ErrorCode::cancelled: return "cancelled";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

} // namespace covtune
