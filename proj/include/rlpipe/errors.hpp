#pragma once

#include <stdexcept>
#include <string>

namespace rlpipe {

// Every failure the pipeline can report maps to one of these classes.
// The CLI turns each class into a distinct process exit code.
enum class ErrorClass {
    config,         // bad config file, bad arguments, violated preconditions
    provenance,     // artifact does not match its recorded upstream inputs
    contamination,  // train/eval question overlap
    numeric,        // non-finite loss or gradients
    empty_dataset,  // filtering left nothing to train on
    internal,       // bugs and everything unexpected
};

const char* to_string(ErrorClass c);
int exit_code(ErrorClass c);

class Error : public std::runtime_error {
public:
    Error(ErrorClass cls, const std::string& message)
        : std::runtime_error(message), cls_(cls) {}

    ErrorClass cls() const { return cls_; }

    // One-line machine-parseable diagnostic, e.g.
    //   rlpipe: error class=config code=2 msg="unknown key [sft].lr"
    std::string diagnostic() const;

private:
    ErrorClass cls_;
};

[[noreturn]] void raise(ErrorClass cls, const std::string& message);

} // namespace rlpipe
