#pragma once

#include <stdexcept>
#include <string>

namespace arw {

// Every failure surfaced by the library carries a stable kind tag
// (e.g. "EmptyLattice", "NoPairableSite") so callers can dispatch on it.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& detail)
        : std::runtime_error(kind + ": " + detail), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

}  // namespace arw
