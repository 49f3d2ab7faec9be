#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rlpipe/tokens.hpp"

namespace rlpipe::tasks {

// One task instance: add `operands.size()` integers, each with exactly
// `difficulty` decimal digits. ground_truth is the canonical decimal sum.
struct Question {
    std::string id;
    std::vector<uint64_t> operands;
    int difficulty = 1;
    std::string ground_truth;
    TokenSequence prompt;  // rendered once; re-rendering is byte-identical
};

// Hard limits keeping sums inside uint64 and prompts inside small contexts.
inline constexpr int kMaxDifficulty = 15;
inline constexpr int kMinOperands = 2;
inline constexpr int kMaxOperands = 8;

// Stable id derived from the operand list ("17+25" -> "q" + 12 hex chars).
std::string question_id(const std::vector<uint64_t>& operands);

// <bos> op1 + op2 [+ ...] = <think>   — the reasoning-open marker is always
// the final prompt token; the same template serves SFT, RL and evaluation.
TokenSequence render_prompt(const Question& q);

// Deterministic question sampling: difficulties uniform over the range, no
// duplicate operand lists within one call, ids unique. Throws a capacity
// error when `count` exceeds the number of distinct instances available.
std::vector<Question> gen_questions(int count, int difficulty_lo, int difficulty_hi,
                                    uint64_t seed, int operands_per_question = 2);

// Worked column-addition trace (least-significant digit first, explicit
// carries, a running total after every column), then the final answer inside
// the answer markers, then eos. The verifier accepts every gold answer and
// trace length grows with difficulty. style_seed permutes the order in which
// each column lists the operand digits; 0 keeps the canonical order.
TokenSequence gen_gold_answer(const Question& q, uint64_t style_seed = 0);

enum class FailureReason { none, wrong_value, no_answer_marker, malformed, truncated };

const char* to_string(FailureReason r);

struct Verdict {
    bool correct = false;
    std::optional<std::string> extracted_answer;
    FailureReason failure_reason = FailureReason::none;
};

// Total function: any token sequence yields a verdict, never a throw.
// Extraction takes the last <answer>...</answer> span; canonicalization
// strips an optional leading sign and leading zeros.
Verdict verify(const TokenSequence& answer, const Question& q, bool truncated = false);

// Canonical integer form of a decimal string ("041" -> "41", "+0" -> "0");
// nullopt when the string is not a signed decimal integer.
std::optional<std::string> canonicalize_integer(const std::string& s);

} // namespace rlpipe::tasks
