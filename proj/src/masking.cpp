#include "rtdlab/masking.hpp"

#include <algorithm>
#include <cmath>

namespace rtdlab {

MaskedBatch apply_mlm_mask(const Batch& batch, Rng& rng, const MaskRatios& ratios,
                           double mask_fraction, int vocab_size) {
    const double sum = ratios.to_mask + ratios.to_random + ratios.keep_original;
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("mask ratios must sum to 1, got " + std::to_string(sum));
    }
    if (vocab_size <= kNumReserved) {
        throw ConfigError("masking: vocab has no non-reserved tokens");
    }

    MaskedBatch out;
    out.input_ids = batch.ids;
    out.source_ids = batch.ids;
    out.true_length = batch.true_length;
    out.mlm_labels = IntMat(batch.ids.rows, batch.ids.cols, kLabelSentinel);
    out.selected.resize(size_t(batch.ids.rows));

    const int t_len = batch.ids.cols;
    for (int b = 0; b < batch.ids.rows; ++b) {
        const int content = batch.true_length[size_t(b)] - 2;  // exclude [CLS]/[SEP]
        if (content <= 0) {
            throw DataError("masking: sequence " + std::to_string(b) +
                            " has no content tokens (true_length " +
                            std::to_string(batch.true_length[size_t(b)]) + ")");
        }
        int n_sel = int(std::floor(mask_fraction * content + 0.5));  // round half up
        n_sel = std::max(1, std::min(n_sel, content));

        // content positions are 1..content inclusive; partial Fisher-Yates
        std::vector<int> pos(static_cast<size_t>(content));
        for (int i = 0; i < content; ++i) pos[size_t(i)] = i + 1;
        for (int i = 0; i < n_sel; ++i) {
            const int j = i + int(rng.next_below(uint64_t(content - i)));
            std::swap(pos[size_t(i)], pos[size_t(j)]);
        }
        std::vector<int> sel(pos.begin(), pos.begin() + n_sel);
        std::sort(sel.begin(), sel.end());

        for (int t : sel) {
            const int32_t orig = batch.ids.at(b, t);
            out.mlm_labels.at(b, t) = orig;
            const double u = rng.uniform01();
            if (u < ratios.to_mask) {
                out.input_ids.at(b, t) = kMaskId;
            } else if (u < ratios.to_mask + ratios.to_random) {
                out.input_ids.at(b, t) =
                    kNumReserved + int32_t(rng.next_below(uint64_t(vocab_size - kNumReserved)));
            }  // else: keep original, still labeled
            out.selected_flat.push_back(int64_t(b) * t_len + t);
            out.selected_original.push_back(orig);
        }
        out.selected[size_t(b)] = std::move(sel);
    }
    return out;
}

}  // namespace rtdlab
