#pragma once

#include <stdexcept>
#include <string>

namespace batcher {

// Base error for everything the library raises on bad input or failed I/O.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// A backend failure that is worth retrying (timeouts, 429, 5xx).
class TransientError : public Error {
public:
    explicit TransientError(const std::string& what) : Error(what) {}
};

// Raised when a run needs demonstration labels that nobody has provided yet.
class LabelsMissingError : public Error {
public:
    explicit LabelsMissingError(const std::string& what) : Error(what) {}
};

}  // namespace batcher
