#include "rlpipe/pack.hpp"

#include <algorithm>
#include <numeric>

#include "rlpipe/errors.hpp"

namespace rlpipe::train {

double PackedBatch::occupancy() const {
    if (streams.empty() || capacity == 0) {
        return 0.0;
    }
    return static_cast<double>(total_tokens) /
           (static_cast<double>(streams.size()) * capacity);
}

PackedBatch pack(std::span<const PackItem> items, int capacity) {
    if (capacity < 1) {
        raise(ErrorClass::config, "pack capacity must be >= 1");
    }
    for (const auto& item : items) {
        if (item.length() > capacity) {
            raise(ErrorClass::config, "sample longer than packing capacity");
        }
        if (item.prompt.empty() || item.answer.empty()) {
            raise(ErrorClass::config, "pack items need non-empty prompt and answer");
        }
    }

    // First-fit-decreasing; ties keep input order for determinism.
    std::vector<size_t> order(items.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&items](size_t a, size_t b) {
        return items[a].length() > items[b].length();
    });

    PackedBatch batch;
    batch.capacity = capacity;
    for (size_t oi : order) {
        const PackItem& item = items[oi];
        const int len = item.length();
        PackedStream* target = nullptr;
        for (auto& s : batch.streams) {
            if (s.used + len <= capacity) {
                target = &s;
                break;
            }
        }
        if (!target) {
            batch.streams.emplace_back();
            target = &batch.streams.back();
        }
        const int seg = static_cast<int>(target->segment_sample.size());
        target->segment_sample.push_back(item.sample_id);
        int p = 0;
        for (int tok : item.prompt) {
            target->tokens.push_back(tok);
            target->pos.push_back(p++);
            target->segment.push_back(seg);
            target->loss_mask.push_back(0);
        }
        for (int tok : item.answer) {
            target->tokens.push_back(tok);
            target->pos.push_back(p++);
            target->segment.push_back(seg);
            target->loss_mask.push_back(1);
            ++batch.masked_tokens;
        }
        target->used += len;
        batch.total_tokens += static_cast<size_t>(len);
    }
    return batch;
}

} // namespace rlpipe::train
