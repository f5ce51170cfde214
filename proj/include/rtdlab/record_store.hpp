#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rtdlab/vocab.hpp"

namespace rtdlab {

// One fixed-length encoded sequence: [CLS] tokens... [SEP] [PAD]...
struct SequenceRecordRef {
    const int32_t* ids;  // max_seq_len entries
    int true_length;     // count of non-pad positions (includes CLS/SEP)
};

struct BuildDataResult {
    std::string records_path;
    std::string vocab_path;
    int64_t record_count;
    int vocab_size;
};

// Tokenizes a corpus (one document per line), builds a frequency-capped
// vocabulary, and writes `<out>.vocab` plus `<out>.records` (a JSON manifest
// line followed by fixed-width binary records). Long documents are split into
// multiple records. Deterministic for fixed inputs.
BuildDataResult build_store(const std::string& corpus_path, const std::string& out_prefix,
                            int vocab_size_cap, int max_seq_len);

// Read-only view of a `.records` file. The payload is memory-mapped; reading
// a record touches no tokenizer code.
class RecordStore {
public:
    static RecordStore open(const std::string& records_path);
    ~RecordStore();
    RecordStore(RecordStore&&) noexcept;
    RecordStore& operator=(RecordStore&&) noexcept;
    RecordStore(const RecordStore&) = delete;
    RecordStore& operator=(const RecordStore&) = delete;

    int64_t count() const { return count_; }
    int max_seq_len() const { return max_seq_len_; }
    int vocab_size() const { return vocab_size_; }
    const std::string& vocab_hash() const { return vocab_hash_; }

    // Valid while the store is alive. Safe for concurrent readers.
    SequenceRecordRef record(int64_t i) const;

private:
    RecordStore() = default;
    void* map_ = nullptr;
    size_t map_size_ = 0;
    const uint8_t* payload_ = nullptr;
    int64_t count_ = 0;
    int max_seq_len_ = 0;
    int vocab_size_ = 0;
    std::string vocab_hash_;
    size_t record_stride_ = 0;
};

}  // namespace rtdlab
