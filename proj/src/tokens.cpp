#include "rlpipe/tokens.hpp"

#include "rlpipe/errors.hpp"

namespace rlpipe {

namespace vocab {

const char* token_name(int id) {
    static const char* names[kAlphabetSize] = {
        "<pad>", "<bos>", "<eos>", "<think>", "</think>", "<answer>", "</answer>",
        "+", "=", "|", "p", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    };
    if (id < 0 || id >= kAlphabetSize) {
        return "<?>";
    }
    return names[id];
}

std::string detokenize(std::span<const int> tokens) {
    std::string out;
    for (int id : tokens) {
        out += token_name(id);
    }
    return out;
}

} // namespace vocab

void validate_sequence(const TokenSequence& seq, int vocab_size, int context_len) {
    if (seq.role_split < 0 || seq.role_split > seq.size()) {
        raise(ErrorClass::config, "token sequence role_split out of range");
    }
    if (context_len > 0 && seq.size() > context_len) {
        raise(ErrorClass::config, "token sequence exceeds context length");
    }
    for (int id : seq.tokens) {
        if (id < 0 || id >= vocab_size) {
            raise(ErrorClass::config, "token id out of vocabulary bounds");
        }
    }
}

} // namespace rlpipe
