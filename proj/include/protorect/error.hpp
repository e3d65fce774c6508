#ifndef PROTORECT_ERROR_HPP
#define PROTORECT_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace protorect {

enum class ErrorKind {
    format,
    truncation,
    data,
    degenerate_vector,
    capacity,
    shape,
    label,
    training_failure,
    undefined_bound,
    io,
    usage,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so the CLI can report
/// a single machine-parsable line.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace protorect

#endif
