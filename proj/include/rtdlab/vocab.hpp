#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "rtdlab/errors.hpp"

namespace rtdlab {

// Reserved token ids. Dense, distinct, always present.
enum ReservedId : int32_t {
    kPadId = 0,
    kUnkId = 1,
    kClsId = 2,
    kSepId = 3,
    kMaskId = 4,
    kNumReserved = 5,
};

// Word-level vocabulary: whitespace-split with punctuation broken out as
// single-character tokens; frequency-capped.
class Vocab {
public:
    static std::vector<std::string> tokenize(const std::string& text);

    // Most frequent tokens kept, ties broken lexicographically. size_cap
    // includes the reserved ids.
    static Vocab build(const std::unordered_map<std::string, int64_t>& counts, int size_cap);

    static Vocab load(const std::string& path);
    void save(const std::string& path) const;

    int32_t id_of(const std::string& token) const;  // kUnkId when absent
    const std::string& token_of(int32_t id) const;
    int size() const { return int(id_to_token_.size()); }
    bool is_reserved(int32_t id) const { return id >= 0 && id < kNumReserved; }

    // FNV-1a over the serialized token list; ties a record store to its vocab.
    std::string content_hash() const;

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int32_t> token_to_id_;
    void add(const std::string& token);
};

}  // namespace rtdlab
