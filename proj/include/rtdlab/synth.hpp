#pragma once

#include <cstdint>
#include <string>

namespace rtdlab {

// Writes a synthetic plain-text corpus of roughly target_bytes: one sentence
// per line from a first-order Markov chain over an artificial word list. The
// transition structure makes tokens predictable from context, so MLM and RTD
// have signal to learn at desk scale. Deterministic for a given seed.
void make_synthetic_corpus(const std::string& path, int64_t target_bytes, uint64_t seed,
                           int n_words = 2000, int min_sentence_len = 8,
                           int max_sentence_len = 20);

}  // namespace rtdlab
