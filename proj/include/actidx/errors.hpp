#pragma once

#include <stdexcept>
#include <string>

namespace actidx {

// Error categories aligned with the CLI exit codes:
//   invalid_argument -> 2 (usage), FormatError -> 3, NumericError -> 4,
//   IoError -> 5.  NotFoundError and CorruptIndexError map to 2 and 3.

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg, long byte_offset = -1)
        : std::runtime_error(byte_offset >= 0
                                 ? msg + " (byte offset " + std::to_string(byte_offset) + ")"
                                 : msg),
          offset(byte_offset) {}
    long offset;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NotFoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CorruptIndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace actidx
