#pragma once

#include <stdexcept>
#include <string>

namespace mutelab {

// Broken precondition on the caller's side.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Malformed input file (WAV, checkpoint, manifest, config).
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Config or manifest that parses but does not match the expected schema.
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void expects(bool condition, const std::string& what) {
    if (!condition) {
        throw ContractViolation(what);
    }
}

}  // namespace mutelab
