#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ddpc {

/// Base class for all toolkit errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed caller input (non-finite entries, bad dimensions, unresolved names, ...).
class InvalidInputError : public Error {
public:
    using Error::Error;
};

/// Window length incompatible with the data or the interconnection lag.
class WindowError : public Error {
public:
    using Error::Error;
};

/// Persistency-of-excitation precondition failed; lists the deficient data sets.
class ExcitationError : public Error {
public:
    struct Item {
        int subsystem;
        int rank;
        int required;
    };

    ExcitationError(const std::string& msg, std::vector<Item> items)
        : Error(msg), deficient(std::move(items)) {}

    std::vector<Item> deficient;
};

/// Overlap mismatch while weaving two trajectory windows.
class WeaveError : public Error {
public:
    WeaveError(const std::string& msg, double deviation)
        : Error(msg), max_deviation(deviation) {}

    double max_deviation;
};

/// The controller-side coefficient stack is not square invertible. Handling this
/// configuration needs the sum-of-squares construction, which the toolkit does
/// not implement; it is detected and rejected.
class GeneralCaseError : public Error {
public:
    using Error::Error;
};

/// Requested feature outside the supported class (e.g. higher-order weighting filters).
class UnsupportedError : public Error {
public:
    using Error::Error;
};

}  // namespace ddpc
