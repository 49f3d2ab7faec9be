#include "rlpipe/errors.hpp"

namespace rlpipe {

const char* to_string(ErrorClass c) {
    switch (c) {
        case ErrorClass::config: return "config";
        case ErrorClass::provenance: return "provenance";
        case ErrorClass::contamination: return "contamination";
        case ErrorClass::numeric: return "numeric";
        case ErrorClass::empty_dataset: return "empty-dataset";
        case ErrorClass::internal: return "internal";
    }
    return "internal";
}

int exit_code(ErrorClass c) {
    switch (c) {
        case ErrorClass::config: return 2;
        case ErrorClass::provenance: return 3;
        case ErrorClass::contamination: return 4;
        case ErrorClass::numeric: return 5;
        case ErrorClass::empty_dataset: return 6;
        case ErrorClass::internal: return 1;
    }
    return 1;
}

std::string Error::diagnostic() const {
    std::string out = "rlpipe: error class=";
    out += to_string(cls_);
    out += " code=";
    out += std::to_string(exit_code(cls_));
    out += " msg=\"";
    out += what();
    out += "\"";
    return out;
}

void raise(ErrorClass cls, const std::string& message) {
    throw Error(cls, message);
}

} // namespace rlpipe
