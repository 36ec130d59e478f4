#pragma once

#include <stdexcept>
#include <string>

namespace gritvq {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a training step produces a non-finite gradient; the step is
// aborted and the trainer state is left untouched.
struct NanAbort : std::runtime_error {
    long step;
    explicit NanAbort(long step_, const std::string& what)
        : std::runtime_error(what), step(step_) {}
};

}  // namespace gritvq
