#pragma once

#include <stdexcept>
#include <string>

namespace blindfold {

// Error categories map onto CLI exit codes: validation 1, transport 2, analysis 3.
struct validation_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct transport_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct analysis_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace blindfold
