#pragma once

#include <stdexcept>
#include <string>

namespace bigen {

// Exit codes shared by the CLI and the error hierarchy.
enum class ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kData = 2,
    kNumerical = 3,
};

class Error : public std::runtime_error {
   public:
    Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

   private:
    ExitCode code_;
};

// Bad flags, invalid configuration, out-of-domain arguments.
class UsageError : public Error {
   public:
    explicit UsageError(const std::string& what) : Error(ExitCode::kUsage, what) {}
};

// Shape mismatches, malformed files, broken data contracts.
class DataError : public Error {
   public:
    explicit DataError(const std::string& what) : Error(ExitCode::kData, what) {}
};

// NaN/Inf produced by an op, or a diverged loss.
class NumericalFault : public Error {
   public:
    explicit NumericalFault(const std::string& what) : Error(ExitCode::kNumerical, what) {}
};

}  // namespace bigen
