#pragma once

#include <stdexcept>
#include <string>

namespace namex {

// File-level failures: missing, unreadable, malformed or unwritable
// checkpoints and CSVs.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The bargaining solve hit a degenerate Gram (zero-norm domain vector) at a
// scheduled layer.
struct DegenerateError : std::runtime_error {
    int layer;
    DegenerateError(int layer_, const std::string& what_) : std::runtime_error(what_), layer(layer_) {}
};

}  // namespace namex
