#include "rtdlab/emb_gen.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "rtdlab/vocab.hpp"

namespace rtdlab {

void ReplacementConfig::validate(int vocab_size) const {
    if (k < 1 || k >= vocab_size) {
        throw ConfigError("embgen: k must satisfy 1 <= k < vocab size");
    }
    if (vocab_size - kNumReserved <= k) {
        throw ConfigError("embgen: k " + std::to_string(k) + " too large for " +
                          std::to_string(vocab_size - kNumReserved) + " non-reserved tokens");
    }
    if (noise_sigma <= 0.0) throw ConfigError("embgen: sigma must be positive");
    if (aux_loss_coeff < 0.0) throw ConfigError("embgen: aux_coeff must be non-negative");
}

namespace {

// Exact squared distance, double accumulation in index order. The test oracle
// computes the same canonical quantity, so rankings agree bitwise.
double sq_dist(const float* a, const float* b, int d) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i) {
        const double c = double(a[i]) - double(b[i]);
        acc += c * c;
    }
    return acc;
}

// k nearest non-reserved ids to `orig` under (distance, id) ordering.
std::vector<int32_t> knearest(const Tensor& emb, int32_t orig, int k) {
    const int v = emb.dim(0), d = emb.dim(1);
    const float* pe = emb.data();
    const float* eo = pe + size_t(orig) * d;
    const int n_eligible = v - kNumReserved - (orig >= kNumReserved ? 1 : 0);
    if (n_eligible < k) throw ConfigError("embgen: fewer than k eligible replacement tokens");

    std::vector<std::pair<double, int32_t>> cand;
    if (v <= 512) {
        // exact over the full vocabulary
        cand.reserve(size_t(n_eligible));
        for (int32_t id = kNumReserved; id < v; ++id) {
            if (id == orig) continue;
            cand.emplace_back(sq_dist(eo, pe + size_t(id) * d, d), id);
        }
    } else {
        // float prefilter by -2<e_o,e_v> + |e_v|^2 (rank-equivalent), then
        // exact distances on a generous superset
        using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        using EVec = Eigen::VectorXf;
        Eigen::Map<const EMat> e(pe, v, d);
        Eigen::Map<const EVec> q(eo, d);
        EVec score = e.rowwise().squaredNorm();
        score.noalias() -= 2.0f * (e * q);
        const int m = std::min(n_eligible, std::max(4 * k, k + 16));
        std::vector<std::pair<float, int32_t>> pre;
        pre.reserve(size_t(v - kNumReserved));
        for (int32_t id = kNumReserved; id < v; ++id) {
            if (id == orig) continue;
            pre.emplace_back(score[id], id);
        }
        std::nth_element(pre.begin(), pre.begin() + m - 1, pre.end());
        cand.reserve(size_t(m));
        for (int i = 0; i < m; ++i) {
            cand.emplace_back(sq_dist(eo, pe + size_t(pre[size_t(i)].second) * d, d),
                              pre[size_t(i)].second);
        }
    }
    std::nth_element(cand.begin(), cand.begin() + k - 1, cand.end());
    cand.resize(size_t(k));
    std::vector<int32_t> out;
    out.reserve(size_t(k));
    for (const auto& [dist, id] : cand) out.push_back(id);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TopkReplaceResult topk_replace(const MaskedBatch& masked, const Tensor& embeddings, int k,
                               Rng& rng) {
    const int v = embeddings.dim(0);
    if (v - kNumReserved <= k) {
        throw ConfigError("topk_replace: k " + std::to_string(k) + " too large for vocab " +
                          std::to_string(v));
    }
    const int t_len = masked.seq_len();
    TopkReplaceResult res;
    res.disc_input.ids = masked.source_ids;
    res.disc_input.labels.assign(masked.source_ids.size(), 0.0f);
    res.disc_input.mask.assign(masked.source_ids.size(), 0.0f);
    for (int b = 0; b < masked.batch_size(); ++b) {
        const int tl = masked.true_length[size_t(b)];
        for (int t = 0; t < tl; ++t) res.disc_input.mask[size_t(b) * t_len + size_t(t)] = 1.0f;
    }

    // neighbor sets depend only on the original id; cache per distinct token
    std::unordered_map<int32_t, std::vector<int32_t>> pools;
    for (size_t i = 0; i < masked.selected_flat.size(); ++i) {
        const int32_t orig = masked.selected_original[i];
        auto it = pools.find(orig);
        if (it == pools.end()) it = pools.emplace(orig, knearest(embeddings, orig, k)).first;
        const std::vector<int32_t>& pool = it->second;
        const int32_t repl = pool[rng.next_below(pool.size())];
        const int64_t flat = masked.selected_flat[i];
        res.disc_input.ids.v[size_t(flat)] = repl;
        res.disc_input.labels[size_t(flat)] = 1.0f;  // every selected position counts as replaced
        res.replacement_ids.push_back(repl);
    }
    return res;
}

NoiseReplaceResult noise_replace(const MaskedBatch& masked, const Tensor& embeddings, double sigma,
                                 Rng& rng) {
    const int d = embeddings.dim(1);
    const int t_len = masked.seq_len();
    NoiseReplaceResult res;
    Tensor gathered = embedding_gather(embeddings, masked.source_ids);
    Tensor noise = Tensor::zeros(gathered.shape());
    float* pn = noise.data();
    for (int64_t flat : masked.selected_flat) {
        float* row = pn + size_t(flat) * d;
        for (int i = 0; i < d; ++i) row[i] = rng.normal(0.0f, float(sigma));
    }
    res.token_stream = add(gathered, noise);
    res.labels.assign(masked.source_ids.size(), 0.0f);
    res.mask.assign(masked.source_ids.size(), 0.0f);
    for (int b = 0; b < masked.batch_size(); ++b) {
        const int tl = masked.true_length[size_t(b)];
        for (int t = 0; t < tl; ++t) res.mask[size_t(b) * t_len + size_t(t)] = 1.0f;
    }
    for (int64_t flat : masked.selected_flat) res.labels[size_t(flat)] = 1.0f;
    return res;
}

Tensor aux_embedding_loss(const Tensor& embeddings, const std::vector<int32_t>& original_ids,
                          const std::vector<int32_t>& replacement_ids) {
    if (original_ids.size() != replacement_ids.size()) {
        throw ConfigError("aux_embedding_loss: id list lengths differ");
    }
    if (original_ids.empty()) return Tensor::scalar(0.0f);
    std::vector<int64_t> o(original_ids.begin(), original_ids.end());
    std::vector<int64_t> r(replacement_ids.begin(), replacement_ids.end());
    Tensor diff = sub(gather_rows(embeddings, o), gather_rows(embeddings, r));
    return scale(sum_all(mul(diff, diff)), 1.0f / float(original_ids.size()));
}

}  // namespace rtdlab
