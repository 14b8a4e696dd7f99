#pragma once

#include <stdexcept>
#include <string>

namespace masp {

// Dimension or shape disagreement between operands.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A caller broke an operation's precondition (stepping a finished episode,
// negative similarity entries, empty Q vector, ...).
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid experiment configuration. `field` names the offending key path.
struct ConfigError : std::invalid_argument {
    ConfigError(std::string field_path, const std::string& what)
        : std::invalid_argument(field_path + ": " + what), field(std::move(field_path)) {}
    std::string field;
};

struct EmptyCorpusError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Replay buffer holds fewer transitions than requested.
struct NotReady : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace masp
