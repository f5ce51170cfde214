#pragma once

#include <json.hpp>

#include "rtdlab/record_store.hpp"
#include "rtdlab/rng.hpp"
#include "rtdlab/tensor.hpp"

namespace rtdlab {

struct Batch {
    IntMat ids;                    // (batch, max_seq_len)
    std::vector<int> true_length;  // per sequence
    int batch_size() const { return ids.rows; }
    int seq_len() const { return ids.cols; }
};

// Drops trailing columns that are [PAD] in every sequence of the batch. The
// content is unchanged; downstream compute skips all-pad positions.
Batch crop_to_content(const Batch& b);

// Uniform sampling without replacement within an epoch; each epoch is a fresh
// permutation of the store. A batch may span an epoch boundary so that over N
// epochs every record is served exactly N times.
class Batcher {
public:
    Batcher(const RecordStore& store, int batch_size, Rng rng);

    Batch next();

    // position within the permutation stream, for checkpointing
    nlohmann::json save_state() const;
    void restore_state(const nlohmann::json& j);

private:
    void reshuffle();
    const RecordStore& store_;
    int batch_size_;
    Rng rng_;
    std::string epoch_rng_state_;  // rng state captured before the current shuffle
    std::vector<int64_t> perm_;
    size_t cursor_ = 0;
};

}  // namespace rtdlab
