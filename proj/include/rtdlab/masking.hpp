#pragma once

#include "rtdlab/batcher.hpp"
#include "rtdlab/rng.hpp"

namespace rtdlab {

inline constexpr int32_t kLabelSentinel = -1;

// Split of the selected positions: replaced by [MASK] / replaced by a random
// token / kept original (still predicted). ELECTRA uses 0.85/0/0.15, BERT
// 0.80/0.10/0.10.
struct MaskRatios {
    double to_mask = 0.85;
    double to_random = 0.0;
    double keep_original = 0.15;
};

struct MaskedBatch {
    IntMat input_ids;   // corrupted view fed to the generator
    IntMat source_ids;  // uncorrupted batch
    std::vector<int> true_length;
    std::vector<std::vector<int>> selected;  // per-sequence selected positions, ascending
    IntMat mlm_labels;                       // original id at selected positions, -1 elsewhere

    // flattened row-major (b * seq_len + t) views of the selection
    std::vector<int64_t> selected_flat;
    std::vector<int32_t> selected_original;

    int batch_size() const { return input_ids.rows; }
    int seq_len() const { return input_ids.cols; }
};

// Selects round(mask_fraction * content_length) positions per sequence (at
// least one; [CLS]/[SEP]/[PAD] never selected) and corrupts them per ratios.
MaskedBatch apply_mlm_mask(const Batch& batch, Rng& rng, const MaskRatios& ratios,
                           double mask_fraction, int vocab_size);

}  // namespace rtdlab
