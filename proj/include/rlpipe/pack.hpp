#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rlpipe/model.hpp"
#include "rlpipe/tokens.hpp"

namespace rlpipe::train {

struct PackItem {
    int sample_id = 0;
    std::span<const int> prompt;
    std::span<const int> answer;

    int length() const { return static_cast<int>(prompt.size() + answer.size()); }
};

// One fixed-capacity token stream holding whole samples back to back.
// Positions restart per segment and the loss mask marks answer-role tokens,
// so a packed stream computes exactly what the samples would individually
// (attention is block-diagonal by segment inside the model).
struct PackedStream {
    std::vector<int> tokens;
    std::vector<int> pos;
    std::vector<int> segment;
    std::vector<uint8_t> loss_mask;      // true on answer-role positions
    std::vector<int> segment_sample;     // sample_id per segment

    int used = 0;

    model::StreamView view() const { return model::StreamView{tokens, pos, segment}; }
};

struct PackedBatch {
    std::vector<PackedStream> streams;
    int capacity = 0;
    size_t total_tokens = 0;
    size_t masked_tokens = 0;

    // Fill ratio across streams; 1 - occupancy is the padding waste the
    // packing exists to avoid.
    double occupancy() const;
};

// Greedy first-fit-decreasing. Every sample lands in exactly one stream and
// never crosses a stream boundary. Throws a config error on samples longer
// than the capacity.
PackedBatch pack(std::span<const PackItem> items, int capacity);

} // namespace rlpipe::train
