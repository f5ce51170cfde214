#include "rtdlab/batcher.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

namespace rtdlab {

Batch crop_to_content(const Batch& b) {
    int maxlen = 1;
    for (int tl : b.true_length) maxlen = std::max(maxlen, tl);
    if (maxlen >= b.seq_len()) return b;
    Batch out;
    out.true_length = b.true_length;
    out.ids = IntMat(b.batch_size(), maxlen);
    for (int i = 0; i < b.batch_size(); ++i) {
        std::memcpy(out.ids.v.data() + size_t(i) * maxlen, b.ids.v.data() + size_t(i) * b.seq_len(),
                    size_t(maxlen) * sizeof(int32_t));
    }
    return out;
}

Batcher::Batcher(const RecordStore& store, int batch_size, Rng rng)
    : store_(store), batch_size_(batch_size), rng_(std::move(rng)) {
    if (store_.count() == 0) throw DataError("batcher: record store is empty");
    if (int64_t(batch_size_) > store_.count()) {
        throw DataError("batcher: batch_size " + std::to_string(batch_size_) +
                        " exceeds store size " + std::to_string(store_.count()));
    }
    reshuffle();
}

void Batcher::reshuffle() {
    epoch_rng_state_ = rng_.save_state();
    perm_.resize(size_t(store_.count()));
    std::iota(perm_.begin(), perm_.end(), int64_t{0});
    std::shuffle(perm_.begin(), perm_.end(), rng_.engine());
    cursor_ = 0;
}

Batch Batcher::next() {
    const int l = store_.max_seq_len();
    Batch b;
    b.ids = IntMat(batch_size_, l);
    b.true_length.resize(size_t(batch_size_));
    for (int i = 0; i < batch_size_; ++i) {
        if (cursor_ >= perm_.size()) reshuffle();
        const SequenceRecordRef r = store_.record(perm_[cursor_++]);
        std::memcpy(&b.ids.at(i, 0), r.ids, size_t(l) * sizeof(int32_t));
        b.true_length[size_t(i)] = r.true_length;
    }
    return b;
}

nlohmann::json Batcher::save_state() const {
    nlohmann::json j;
    j["epoch_rng_state"] = epoch_rng_state_;
    j["cursor"] = cursor_;
    return j;
}

void Batcher::restore_state(const nlohmann::json& j) {
    rng_.restore_state(j.at("epoch_rng_state").get<std::string>());
    reshuffle();  // regenerates the same permutation from the restored state
    cursor_ = j.at("cursor").get<size_t>();
}

}  // namespace rtdlab
