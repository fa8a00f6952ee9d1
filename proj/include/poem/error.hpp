#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace poem {

// Mirrors poem_status in poem.h; values must stay in sync.
enum class ErrorCode : int {
    invalid_argument = 1,
    shape_mismatch,
    unbound_input,
    non_scalar_loss,
    infeasible_config,
    unknown_token,
    no_valid_question,
    empty_set,
    ambiguous,
    empty_training_split,
    missing_prediction,
    io,
    corrupt_header,
    truncated_payload,
    version_mismatch,
    duplicate_name,
    divergence,
    stack_underflow,
    unknown_variant,
    missing_input,
    unknown_subcommand,
    invalid_config,
};

std::string_view error_code_name(ErrorCode code);

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

}  // namespace poem
