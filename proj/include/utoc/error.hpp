#ifndef UTOC_ERROR_HPP
#define UTOC_ERROR_HPP

#include <stdexcept>
#include <string>
#include <utility>

namespace utoc {

enum class ErrorKind {
    Validation,
    Domain,
    NonConvergence,
    Infeasible,
    AssumptionViolation,
    SingularArc,
    Divergence,
    NumericalConsistency,
    Io,
};

const char* to_string(ErrorKind kind);

/// Base of every error raised by the library. The kind drives CLI exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message, std::string path = {})
        : std::runtime_error(message), kind_(kind), path_(std::move(path)) {}

    ErrorKind kind() const noexcept { return kind_; }
    /// Dotted path of the offending input field, empty when not applicable.
    const std::string& path() const noexcept { return path_; }

private:
    ErrorKind kind_;
    std::string path_;
};

inline Error domain_error(const std::string& message) {
    return Error(ErrorKind::Domain, message);
}

}  // namespace utoc

#endif  // UTOC_ERROR_HPP
