#pragma once

#include <span>
#include <string>
#include <vector>

namespace rlpipe {

// Fixed task alphabet. Character-level: digits, arithmetic glyphs, and
// reserved marker tokens that make answer extraction unambiguous.
namespace vocab {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kThink = 3;      // reasoning-open, final prompt token
inline constexpr int kEndThink = 4;   // reasoning-close
inline constexpr int kAnswer = 5;     // answer-open
inline constexpr int kEndAnswer = 6;  // answer-close
inline constexpr int kPlus = 7;
inline constexpr int kEquals = 8;
inline constexpr int kSep = 9;        // '|' column separator in traces
inline constexpr int kPartial = 10;   // 'p' running-total marker in traces
inline constexpr int kDigit0 = 11;

inline constexpr int kAlphabetSize = 21;

inline constexpr int digit(int d) { return kDigit0 + d; }
inline constexpr bool is_digit(int id) { return id >= kDigit0 && id < kDigit0 + 10; }
inline constexpr int digit_value(int id) { return id - kDigit0; }

// Printable name of a token id ("<bos>", "+", "7", ...).
const char* token_name(int id);

std::string detokenize(std::span<const int> tokens);

} // namespace vocab

// Ordered token ids. role_split separates prompt (x) from answer (y):
// tokens[0, role_split) is the prompt, tokens[role_split, size) the answer.
struct TokenSequence {
    std::vector<int> tokens;
    int role_split = 0;

    int size() const { return static_cast<int>(tokens.size()); }
    std::span<const int> prompt_span() const {
        return std::span<const int>(tokens.data(), static_cast<size_t>(role_split));
    }
    std::span<const int> answer_span() const {
        return std::span<const int>(tokens.data() + role_split,
                                    tokens.size() - static_cast<size_t>(role_split));
    }
};

// Checks vocabulary bounds and the role_split range; throws a config error
// on violation. context_len <= 0 skips the length check.
void validate_sequence(const TokenSequence& seq, int vocab_size, int context_len);

} // namespace rlpipe
