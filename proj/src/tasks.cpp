#include "rlpipe/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "rlpipe/errors.hpp"
#include "rlpipe/hash.hpp"
#include "rlpipe/rng.hpp"

namespace rlpipe::tasks {

namespace {

int digit_count(uint64_t v) {
    int n = 1;
    while (v >= 10) {
        v /= 10;
        ++n;
    }
    return n;
}

uint64_t pow10(int n) {
    uint64_t v = 1;
    for (int i = 0; i < n; ++i) {
        v *= 10;
    }
    return v;
}

std::string operands_key(const std::vector<uint64_t>& operands) {
    std::string key;
    for (size_t i = 0; i < operands.size(); ++i) {
        if (i) {
            key += '+';
        }
        key += std::to_string(operands[i]);
    }
    return key;
}

// Dedup key: the operand multiset, so two questions never differ only by
// operand order (evaluation treats such pairs as contamination).
std::string multiset_key(std::vector<uint64_t> operands) {
    std::sort(operands.begin(), operands.end());
    return operands_key(operands);
}

// Multisets of size m over n values: C(n+m-1, m), saturating.
uint64_t multiset_capacity(uint64_t n, int m) {
    unsigned __int128 c = 1;
    for (int i = 1; i <= m; ++i) {
        c = c * (n + static_cast<uint64_t>(i) - 1) / static_cast<uint64_t>(i);
        if (c > static_cast<unsigned __int128>(UINT64_MAX / 2)) {
            return UINT64_MAX / 2;
        }
    }
    return static_cast<uint64_t>(c);
}

void append_number(std::vector<int>& out, uint64_t v) {
    const std::string s = std::to_string(v);
    for (char c : s) {
        out.push_back(vocab::digit(c - '0'));
    }
}

} // namespace

std::string question_id(const std::vector<uint64_t>& operands) {
    const uint64_t h = fnv1a64(operands_key(operands));
    std::string hex = to_hex(h);
    return "q" + hex.substr(4);
}

TokenSequence render_prompt(const Question& q) {
    if (q.difficulty < 1 || q.difficulty > kMaxDifficulty) {
        raise(ErrorClass::config, "question difficulty outside representable digit budget");
    }
    if (q.operands.size() < kMinOperands || q.operands.size() > kMaxOperands) {
        raise(ErrorClass::config, "operand count out of range");
    }
    for (uint64_t v : q.operands) {
        if (digit_count(v) != q.difficulty) {
            raise(ErrorClass::config, "operand does not match question difficulty");
        }
    }
    TokenSequence seq;
    seq.tokens.push_back(vocab::kBos);
    for (size_t i = 0; i < q.operands.size(); ++i) {
        if (i) {
            seq.tokens.push_back(vocab::kPlus);
        }
        append_number(seq.tokens, q.operands[i]);
    }
    seq.tokens.push_back(vocab::kEquals);
    seq.tokens.push_back(vocab::kThink);
    seq.role_split = seq.size();
    return seq;
}

std::vector<Question> gen_questions(int count, int difficulty_lo, int difficulty_hi,
                                    uint64_t seed, int operands_per_question) {
    if (count < 1) {
        raise(ErrorClass::config, "question count must be >= 1");
    }
    if (difficulty_lo < 1 || difficulty_hi > kMaxDifficulty || difficulty_lo > difficulty_hi) {
        raise(ErrorClass::config, "invalid difficulty range");
    }
    if (operands_per_question < kMinOperands || operands_per_question > kMaxOperands) {
        raise(ErrorClass::config, "operand count out of range");
    }

    // Distinct operand multisets per difficulty.
    const int levels = difficulty_hi - difficulty_lo + 1;
    std::vector<uint64_t> capacity(static_cast<size_t>(levels));
    uint64_t total_capacity = 0;
    for (int d = 0; d < levels; ++d) {
        const int digits = difficulty_lo + d;
        const uint64_t per = 9 * pow10(digits - 1);
        const uint64_t cap = multiset_capacity(per, operands_per_question);
        capacity[static_cast<size_t>(d)] = cap;
        total_capacity = (total_capacity > UINT64_MAX - cap) ? UINT64_MAX : total_capacity + cap;
    }
    if (static_cast<uint64_t>(count) > total_capacity) {
        raise(ErrorClass::config, "requested count exceeds distinct-instance capacity");
    }

    Rng rng(seed);
    std::unordered_set<std::string> seen;
    std::vector<uint64_t> used(static_cast<size_t>(levels), 0);
    std::vector<Question> out;
    out.reserve(static_cast<size_t>(count));

    while (static_cast<int>(out.size()) < count) {
        int level = static_cast<int>(rng.uniform_below(static_cast<uint64_t>(levels)));
        if (used[static_cast<size_t>(level)] >= capacity[static_cast<size_t>(level)]) {
            // This difficulty is exhausted; spread over the ones still open.
            std::vector<int> open;
            for (int d = 0; d < levels; ++d) {
                if (used[static_cast<size_t>(d)] < capacity[static_cast<size_t>(d)]) {
                    open.push_back(d);
                }
            }
            if (open.empty()) {
                raise(ErrorClass::config, "requested count exceeds distinct-instance capacity");
            }
            level = open[rng.uniform_below(open.size())];
        }
        const int digits = difficulty_lo + level;
        const uint64_t lo = pow10(digits - 1);
        const uint64_t span = 9 * pow10(digits - 1);

        Question q;
        q.difficulty = digits;
        q.operands.resize(static_cast<size_t>(operands_per_question));
        for (auto& v : q.operands) {
            v = lo + rng.uniform_below(span);
        }
        const std::string key = multiset_key(q.operands);
        if (!seen.insert(key).second) {
            continue;
        }
        used[static_cast<size_t>(level)] += 1;

        uint64_t sum = 0;
        for (uint64_t v : q.operands) {
            sum += v;
        }
        q.ground_truth = std::to_string(sum);
        q.id = question_id(q.operands);
        q.prompt = render_prompt(q);
        out.push_back(std::move(q));
    }
    return out;
}

TokenSequence gen_gold_answer(const Question& q, uint64_t style_seed) {
    const int d = q.difficulty;
    const int m = static_cast<int>(q.operands.size());

    // Digits of each operand, least significant first.
    std::vector<std::vector<int>> digits(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        uint64_t v = q.operands[static_cast<size_t>(i)];
        for (int j = 0; j < d; ++j) {
            digits[static_cast<size_t>(i)].push_back(static_cast<int>(v % 10));
            v /= 10;
        }
    }

    Rng style(style_seed);
    TokenSequence seq;
    seq.role_split = 0;
    std::vector<int> partial;  // write digits, most significant first
    int carry = 0;
    for (int col = 0; col < d; ++col) {
        std::vector<int> order(static_cast<size_t>(m));
        for (int i = 0; i < m; ++i) {
            order[static_cast<size_t>(i)] = i;
        }
        if (style_seed != 0) {
            for (int i = m - 1; i > 0; --i) {
                const int j = static_cast<int>(style.uniform_below(static_cast<uint64_t>(i + 1)));
                std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
            }
        }
        int total = carry;
        for (int i = 0; i < m; ++i) {
            const int val = digits[static_cast<size_t>(order[static_cast<size_t>(i)])]
                                  [static_cast<size_t>(col)];
            total += val;
            seq.tokens.push_back(vocab::digit(val));
            seq.tokens.push_back(vocab::kPlus);
        }
        seq.tokens.push_back(vocab::digit(carry));
        seq.tokens.push_back(vocab::kEquals);
        // Column total as two digits: carry-out then write digit.
        seq.tokens.push_back(vocab::digit(total / 10));
        seq.tokens.push_back(vocab::digit(total % 10));
        seq.tokens.push_back(vocab::kSep);
        carry = total / 10;
        partial.insert(partial.begin(), total % 10);
        // Running answer so far, most significant digit first.
        seq.tokens.push_back(vocab::kPartial);
        for (int w : partial) {
            seq.tokens.push_back(vocab::digit(w));
        }
        seq.tokens.push_back(vocab::kSep);
    }
    std::vector<int> answer_digits = partial;
    if (carry > 0) {
        answer_digits.insert(answer_digits.begin(), carry);
    }
    seq.tokens.push_back(vocab::kEquals);
    for (int w : answer_digits) {
        seq.tokens.push_back(vocab::digit(w));
    }
    seq.tokens.push_back(vocab::kEndThink);
    seq.tokens.push_back(vocab::kAnswer);
    for (int w : answer_digits) {
        seq.tokens.push_back(vocab::digit(w));
    }
    seq.tokens.push_back(vocab::kEndAnswer);
    seq.tokens.push_back(vocab::kEos);
    return seq;
}

const char* to_string(FailureReason r) {
    switch (r) {
        case FailureReason::none: return "none";
        case FailureReason::wrong_value: return "wrong_value";
        case FailureReason::no_answer_marker: return "no_answer_marker";
        case FailureReason::malformed: return "malformed";
        case FailureReason::truncated: return "truncated";
    }
    return "none";
}

std::optional<std::string> canonicalize_integer(const std::string& s) {
    if (s.empty()) {
        return std::nullopt;
    }
    size_t i = 0;
    bool negative = false;
    if (s[0] == '+' || s[0] == '-') {
        negative = s[0] == '-';
        i = 1;
    }
    if (i >= s.size()) {
        return std::nullopt;
    }
    for (size_t j = i; j < s.size(); ++j) {
        if (s[j] < '0' || s[j] > '9') {
            return std::nullopt;
        }
    }
    while (i + 1 < s.size() && s[i] == '0') {
        ++i;
    }
    std::string out = s.substr(i);
    if (negative && out != "0") {
        out.insert(out.begin(), '-');
    }
    return out;
}

Verdict verify(const TokenSequence& answer, const Question& q, bool truncated) {
    Verdict v;
    if (truncated) {
        v.failure_reason = FailureReason::truncated;
        return v;
    }
    // Last <answer> with a matching </answer> after it wins.
    const auto& toks = answer.tokens;
    int open = -1;
    int close = -1;
    for (int i = 0; i < answer.size(); ++i) {
        if (toks[static_cast<size_t>(i)] == vocab::kAnswer) {
            // Candidate open; look for the next close.
            for (int j = i + 1; j < answer.size(); ++j) {
                if (toks[static_cast<size_t>(j)] == vocab::kEndAnswer) {
                    open = i;
                    close = j;
                    break;
                }
                if (toks[static_cast<size_t>(j)] == vocab::kAnswer) {
                    break;  // nested open supersedes
                }
            }
        }
    }
    if (open < 0) {
        v.failure_reason = FailureReason::no_answer_marker;
        return v;
    }
    std::string text;
    for (int i = open + 1; i < close; ++i) {
        const int id = toks[static_cast<size_t>(i)];
        if (vocab::is_digit(id)) {
            text += static_cast<char>('0' + vocab::digit_value(id));
        } else if (id == vocab::kPlus && i == open + 1) {
            text += '+';
        } else {
            v.failure_reason = FailureReason::malformed;
            return v;
        }
    }
    const auto canonical = canonicalize_integer(text);
    if (!canonical) {
        v.failure_reason = FailureReason::malformed;
        return v;
    }
    v.extracted_answer = *canonical;
    if (*canonical == q.ground_truth) {
        v.correct = true;
        v.failure_reason = FailureReason::none;
    } else {
        v.failure_reason = FailureReason::wrong_value;
    }
    return v;
}

} // namespace rlpipe::tasks
