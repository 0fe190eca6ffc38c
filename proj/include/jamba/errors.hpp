#pragma once

#include <stdexcept>
#include <string>

namespace jamba {

// Error taxonomy. The CLI maps any of these to exit code 1.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct dim_error : error { using error::error; };       // operand shape mismatch
struct config_error : error { using error::error; };    // invalid/inconsistent configuration
struct cache_error : error { using error::error; };     // decode state inconsistent with params
struct input_error : error { using error::error; };     // bad runtime input (token ids, non-finite data)
struct contract_error : error { using error::error; };  // API misuse (non-scalar loss, ...)
struct train_error : error { using error::error; };     // training diverged
struct io_error : error { using error::error; };        // file format / serialization
struct lookup_error : error { using error::error; };    // unknown preset or tensor name

} // namespace jamba
