#include "rtdlab/record_store.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cstring>
#include <fstream>
#include <json.hpp>

namespace rtdlab {

namespace {
constexpr const char* kFormatName = "rtdlab-records-v1";
}

BuildDataResult build_store(const std::string& corpus_path, const std::string& out_prefix,
                            int vocab_size_cap, int max_seq_len) {
    if (max_seq_len < 4) {
        throw DataError("build_store: max_seq_len " + std::to_string(max_seq_len) + " is too small");
    }
    std::ifstream corpus(corpus_path, std::ios::binary);
    if (!corpus) throw DataError("build_store: cannot open corpus " + corpus_path);

    // pass 1: token frequencies
    std::unordered_map<std::string, int64_t> counts;
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(corpus, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto toks = Vocab::tokenize(line);
        if (toks.empty()) continue;
        for (const auto& t : toks) ++counts[t];
        lines.push_back(std::move(line));
    }
    if (lines.empty()) throw DataError("build_store: corpus " + corpus_path + " has no documents");

    Vocab vocab = Vocab::build(counts, vocab_size_cap);
    const std::string vocab_path = out_prefix + ".vocab";
    vocab.save(vocab_path);

    // pass 2: encode. Documents longer than the record body are split into
    // multiple records, each framed with [CLS]/[SEP].
    const int body = max_seq_len - 2;
    std::vector<int32_t> all_ids;
    std::vector<uint32_t> lengths;
    for (const auto& doc : lines) {
        const auto toks = Vocab::tokenize(doc);
        for (size_t start = 0; start < toks.size(); start += size_t(body)) {
            const size_t n = std::min(size_t(body), toks.size() - start);
            const size_t rec_base = all_ids.size();
            all_ids.resize(rec_base + size_t(max_seq_len), kPadId);
            all_ids[rec_base] = kClsId;
            for (size_t i = 0; i < n; ++i) all_ids[rec_base + 1 + i] = vocab.id_of(toks[start + i]);
            all_ids[rec_base + 1 + n] = kSepId;
            lengths.push_back(uint32_t(n + 2));
        }
    }

    nlohmann::json manifest;
    manifest["format"] = kFormatName;
    manifest["max_seq_len"] = max_seq_len;
    manifest["vocab_hash"] = vocab.content_hash();
    manifest["vocab_size"] = vocab.size();
    manifest["count"] = lengths.size();
    std::string mline = manifest.dump();
    // pad so the binary payload after the newline is 8-byte aligned (records
    // are read in place through the mapping)
    while ((mline.size() + 1) % 8 != 0) mline.push_back(' ');
    mline.push_back('\n');

    const std::string records_path = out_prefix + ".records";
    std::ofstream out(records_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("build_store: cannot open " + records_path + " for writing");
    out.write(mline.data(), std::streamsize(mline.size()));
    for (size_t r = 0; r < lengths.size(); ++r) {
        out.write(reinterpret_cast<const char*>(&lengths[r]), sizeof(uint32_t));
        out.write(reinterpret_cast<const char*>(all_ids.data() + r * size_t(max_seq_len)),
                  std::streamsize(size_t(max_seq_len) * sizeof(int32_t)));
    }
    if (!out) throw IoError("build_store: write failed for " + records_path);
    out.close();

    return BuildDataResult{records_path, vocab_path, int64_t(lengths.size()), vocab.size()};
}

RecordStore RecordStore::open(const std::string& records_path) {
    const int fd = ::open(records_path.c_str(), O_RDONLY);
    if (fd < 0) throw IoError("record store: cannot open " + records_path);
    struct stat st{};
    if (fstat(fd, &st) != 0) {
        ::close(fd);
        throw IoError("record store: stat failed for " + records_path);
    }
    const size_t fsize = size_t(st.st_size);
    void* map = ::mmap(nullptr, fsize, PROT_READ, MAP_PRIVATE, fd, 0);
    ::close(fd);
    if (map == MAP_FAILED) throw IoError("record store: mmap failed for " + records_path);

    RecordStore rs;
    rs.map_ = map;
    rs.map_size_ = fsize;
    const char* base = static_cast<const char*>(map);
    const char* nl = static_cast<const char*>(std::memchr(base, '\n', fsize));
    if (!nl) {
        throw IoError("record store: " + records_path + " has no manifest line");
    }
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(std::string(base, size_t(nl - base)));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("record store: corrupt manifest in " + records_path + ": " + e.what());
    }
    if (manifest.value("format", "") != kFormatName) {
        throw IoError("record store: " + records_path + " has unknown format '" +
                      manifest.value("format", "") + "'");
    }
    rs.max_seq_len_ = manifest.at("max_seq_len").get<int>();
    rs.count_ = manifest.at("count").get<int64_t>();
    rs.vocab_hash_ = manifest.at("vocab_hash").get<std::string>();
    rs.vocab_size_ = manifest.at("vocab_size").get<int>();
    rs.payload_ = reinterpret_cast<const uint8_t*>(nl + 1);
    rs.record_stride_ = sizeof(uint32_t) + size_t(rs.max_seq_len_) * sizeof(int32_t);
    const size_t need = size_t(nl + 1 - base) + size_t(rs.count_) * rs.record_stride_;
    if (need > fsize) {
        throw IoError("record store: " + records_path + " is truncated (expected " +
                      std::to_string(need) + " bytes, have " + std::to_string(fsize) + ")");
    }
    return rs;
}

SequenceRecordRef RecordStore::record(int64_t i) const {
    if (i < 0 || i >= count_) {
        throw DataError("record store: index " + std::to_string(i) + " out of range (count " +
                        std::to_string(count_) + ")");
    }
    const uint8_t* p = payload_ + size_t(i) * record_stride_;
    SequenceRecordRef ref;
    uint32_t tl;
    std::memcpy(&tl, p, sizeof(tl));
    ref.true_length = int(tl);
    ref.ids = reinterpret_cast<const int32_t*>(p + sizeof(uint32_t));
    return ref;
}

RecordStore::~RecordStore() {
    if (map_) ::munmap(map_, map_size_);
}

RecordStore::RecordStore(RecordStore&& o) noexcept { *this = std::move(o); }

RecordStore& RecordStore::operator=(RecordStore&& o) noexcept {
    if (this != &o) {
        if (map_) ::munmap(map_, map_size_);
        map_ = o.map_;
        map_size_ = o.map_size_;
        payload_ = o.payload_;
        count_ = o.count_;
        max_seq_len_ = o.max_seq_len_;
        vocab_size_ = o.vocab_size_;
        vocab_hash_ = std::move(o.vocab_hash_);
        record_stride_ = o.record_stride_;
        o.map_ = nullptr;
        o.map_size_ = 0;
    }
    return *this;
}

}  // namespace rtdlab
