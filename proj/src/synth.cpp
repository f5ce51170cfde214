#include "rtdlab/synth.hpp"

#include <array>
#include <fstream>
#include <vector>

#include "rtdlab/errors.hpp"
#include "rtdlab/rng.hpp"

namespace rtdlab {

void make_synthetic_corpus(const std::string& path, int64_t target_bytes, uint64_t seed,
                           int n_words, int min_sentence_len, int max_sentence_len) {
    if (min_sentence_len < 1 || max_sentence_len < min_sentence_len) {
        throw ConfigError("synthetic corpus: bad sentence length range");
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("synthetic corpus: cannot open " + path + " for writing");

    Rng rng(seed, /*stream=*/17);

    std::vector<std::string> words(static_cast<size_t>(n_words));
    for (int i = 0; i < n_words; ++i) words[size_t(i)] = "w" + std::to_string(i);

    // Two word pools that strictly alternate along a sentence, plus a sparse
    // Markov structure: each word prefers 4 successors from the opposite
    // pool. Corrupting a token then breaks either the pool alternation or a
    // likely bigram, so both MLM and RTD have learnable signal.
    const int half = n_words / 2;
    auto draw_from_pool = [&](int pool) {
        return pool == 0 ? int(rng.next_below(uint64_t(half)))
                         : half + int(rng.next_below(uint64_t(n_words - half)));
    };
    std::vector<std::array<int, 4>> succ(static_cast<size_t>(n_words));
    for (int i = 0; i < n_words; ++i) {
        const int opposite = i < half ? 1 : 0;
        for (int j = 0; j < 4; ++j) succ[size_t(i)][size_t(j)] = draw_from_pool(opposite);
    }

    int64_t written = 0;
    int cur = draw_from_pool(0);
    while (written < target_bytes) {
        const int len = min_sentence_len +
                        int(rng.next_below(uint64_t(max_sentence_len - min_sentence_len + 1)));
        std::string line;
        for (int t = 0; t < len; ++t) {
            if (rng.uniform01() < 0.8) {
                cur = succ[size_t(cur)][rng.next_below(4)];
            } else {
                cur = draw_from_pool(cur < half ? 1 : 0);
            }
            if (t) line.push_back(' ');
            line += words[size_t(cur)];
        }
        line.push_back('\n');
        f.write(line.data(), std::streamsize(line.size()));
        written += int64_t(line.size());
    }
    if (!f) throw IoError("synthetic corpus: write failed for " + path);
}

}  // namespace rtdlab
