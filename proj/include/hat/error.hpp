#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hat {

enum class ErrorCode {
    range,
    invalid_argument,
    selection_exhausted,
    integrity,
    training,
    decode,
    parameter,
    clustering,
    unknown_class,
    normalization,
    metric,
    measure,
    configuration,
    evaluation,
    validation,
    not_found,
    conflict,
    state,
    completeness,
    suspended,
    io,
    internal,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch without parsing text.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + " error: " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace hat
