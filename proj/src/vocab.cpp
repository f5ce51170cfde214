#include "rtdlab/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace rtdlab {

namespace {
const char* kReservedNames[kNumReserved] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

bool is_word_byte(unsigned char c) {
    // bytes >= 0x80 are UTF-8 continuation/lead bytes; keep them inside words
    return std::isalnum(c) || c == '_' || c >= 0x80;
}
}  // namespace

std::vector<std::string> Vocab::tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else if (is_word_byte(c)) {
            cur.push_back(char(c));
        } else {
            // punctuation: single-character token
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
            out.push_back(std::string(1, char(c)));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

void Vocab::add(const std::string& token) {
    token_to_id_[token] = int32_t(id_to_token_.size());
    id_to_token_.push_back(token);
}

Vocab Vocab::build(const std::unordered_map<std::string, int64_t>& counts, int size_cap) {
    if (size_cap < kNumReserved + 1) {
        throw DataError("vocab: size cap " + std::to_string(size_cap) +
                        " leaves no room beyond the " + std::to_string(kNumReserved) +
                        " reserved tokens");
    }
    Vocab v;
    for (const char* name : kReservedNames) v.add(name);

    std::vector<std::pair<std::string, int64_t>> sorted(counts.begin(), counts.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    const size_t keep = size_t(size_cap - kNumReserved);
    for (size_t i = 0; i < sorted.size() && i < keep; ++i) {
        if (v.token_to_id_.count(sorted[i].first)) continue;  // literal "[PAD]" etc. in corpus
        v.add(sorted[i].first);
    }
    return v;
}

int32_t Vocab::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token_of(int32_t id) const {
    if (id < 0 || id >= size()) throw DataError("vocab: id " + std::to_string(id) + " out of range");
    return id_to_token_[size_t(id)];
}

void Vocab::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("vocab: cannot open " + path + " for writing");
    for (const auto& t : id_to_token_) f << t << "\n";
    if (!f) throw IoError("vocab: write failed for " + path);
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("vocab: cannot open " + path);
    Vocab v;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        v.add(line);
    }
    for (int i = 0; i < kNumReserved; ++i) {
        if (v.size() <= i || v.id_to_token_[size_t(i)] != kReservedNames[i]) {
            throw IoError("vocab: " + path + " does not start with the reserved tokens");
        }
    }
    return v;
}

std::string Vocab::content_hash() const {
    uint64_t h = 1469598103934665603ull;  // FNV-1a 64
    auto mix = [&h](unsigned char c) {
        h ^= c;
        h *= 1099511628211ull;
    };
    for (const auto& t : id_to_token_) {
        for (unsigned char c : t) mix(c);
        mix('\n');
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

}  // namespace rtdlab
