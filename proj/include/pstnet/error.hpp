#pragma once

#include <stdexcept>
#include <string>

namespace pstnet {

/// Input outside an operation's domain (bad altitude, empty batch, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Binary model/baseline file could not be decoded.
class FormatError : public std::runtime_error {
public:
    enum class Kind { corrupt, version, checksum };

    FormatError(Kind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training aborted by the divergence guard.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace pstnet
