#include "poem/error.hpp"

namespace poem {

std::string_view error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument: return "invalid-argument";
        case ErrorCode::shape_mismatch: return "shape-mismatch";
        case ErrorCode::unbound_input: return "unbound-input";
        case ErrorCode::non_scalar_loss: return "non-scalar-loss";
        case ErrorCode::infeasible_config: return "infeasible-config";
        case ErrorCode::unknown_token: return "unknown-token";
        case ErrorCode::no_valid_question: return "no-valid-question";
        case ErrorCode::empty_set: return "empty-set";
        case ErrorCode::ambiguous: return "ambiguous";
        case ErrorCode::empty_training_split: return "empty-training-split";
        case ErrorCode::missing_prediction: return "missing-prediction";
        case ErrorCode::io: return "io";
        case ErrorCode::corrupt_header: return "corrupt-header";
        case ErrorCode::truncated_payload: return "truncated-payload";
        case ErrorCode::version_mismatch: return "version-mismatch";
        case ErrorCode::duplicate_name: return "duplicate-name";
        case ErrorCode::divergence: return "divergence";
        case ErrorCode::stack_underflow: return "stack-underflow";
        case ErrorCode::unknown_variant: return "unknown-variant";
        case ErrorCode::missing_input: return "missing-input";
        case ErrorCode::unknown_subcommand: return "unknown-subcommand";
        case ErrorCode::invalid_config: return "invalid-config";
    }
    return "unknown";
}

}  // namespace poem
