#pragma once

#include <stdexcept>
#include <string>

namespace lora3d {

// Shape or dimension mismatch between tensors/layers.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Invalid argument value (negative std, rate >= 1, rank too large, ...).
struct ValueError : std::invalid_argument {
    explicit ValueError(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed binary file. `offset` is the byte position of the first
// offending byte when known.
struct FormatError : std::runtime_error {
    std::size_t offset;
    FormatError(const std::string& what, std::size_t byte_offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
};

// Configuration file or run-configuration problem. `line` is 1-based,
// 0 when the error is not tied to a specific line.
struct ConfigError : std::runtime_error {
    int line;
    explicit ConfigError(const std::string& what, int line_no = 0)
        : std::runtime_error(line_no > 0 ? ("line " + std::to_string(line_no) + ": " + what)
                                         : what),
          line(line_no) {}
};

// Optimizer registry and gradient table disagree.
struct RegistryError : std::runtime_error {
    explicit RegistryError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lora3d
