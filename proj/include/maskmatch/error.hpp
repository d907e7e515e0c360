#pragma once

#include <stdexcept>
#include <string>

namespace maskmatch {

enum class ErrorKind {
    kDimension,
    kNumericInput,
    kIndex,
    kTapeState,
    kContract,
    kSchema,
    kConfig,
    kData,
    kNumericFailure,
};

// All library failures derive from this so the CLI can map them to exit codes.
class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::kDimension: return "dimension error";
        case ErrorKind::kNumericInput: return "numeric-input error";
        case ErrorKind::kIndex: return "index error";
        case ErrorKind::kTapeState: return "tape-state error";
        case ErrorKind::kContract: return "contract violation";
        case ErrorKind::kSchema: return "schema error";
        case ErrorKind::kConfig: return "config error";
        case ErrorKind::kData: return "data error";
        case ErrorKind::kNumericFailure: return "numeric failure";
    }
    return "error";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, std::string(to_string(kind)) + ": " + message);
}

// Process exit code for the command-line tool.
inline int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::kConfig: return 2;
        case ErrorKind::kData:
        case ErrorKind::kSchema: return 3;
        case ErrorKind::kNumericFailure:
        case ErrorKind::kNumericInput: return 4;
        default: return 1;
    }
}

}  // namespace maskmatch
