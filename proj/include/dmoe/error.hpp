// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dmoe {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid routing spec or model config (bad dimensions, e > V, ...).
struct SpecError : Error {
    using Error::Error;
};

// Index outside a table/tensor range.
struct BoundsError : Error {
    using Error::Error;
};

// Incompatible tensor shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Bad magic, version, or truncated/corrupt file.
struct FormatError : Error {
    using Error::Error;
};

// Malformed run config or CLI usage.
struct ConfigError : Error {
    using Error::Error;
};

// Training stage with no usable data, or a broken stage list.
struct ScheduleError : Error {
    using Error::Error;
};

// Experts cannot be spread evenly over the requested devices.
struct LayoutError : Error {
    using Error::Error;
};

// Loss requested over a batch where every position is masked.
struct DegenerateBatchError : Error {
    using Error::Error;
};

}  // namespace dmoe
