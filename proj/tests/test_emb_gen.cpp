#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "rtdlab/emb_gen.hpp"
#include "rtdlab/vocab.hpp"
#include "test_util.hpp"

using namespace rtdlab;

namespace {
MaskedBatch masked_with(const std::vector<int32_t>& content, int seq_len, int vocab, double frac,
                        uint64_t seed = 3) {
    Batch b;
    b.ids = IntMat(1, seq_len, kPadId);
    b.true_length = {int(content.size()) + 2};
    b.ids.at(0, 0) = kClsId;
    for (size_t i = 0; i < content.size(); ++i) b.ids.at(0, int(i) + 1) = content[i];
    b.ids.at(0, int(content.size()) + 1) = kSepId;
    Rng rng(seed, 6);
    return apply_mlm_mask(b, rng, MaskRatios{0.85, 0, 0.15}, frac, vocab);
}

// independent oracle: full sort of exact double distances, ties by id
std::vector<int32_t> oracle_knearest(const Tensor& emb, int32_t orig, int k) {
    const int v = emb.dim(0), d = emb.dim(1);
    std::vector<std::pair<double, int32_t>> all;
    for (int32_t id = kNumReserved; id < v; ++id) {
        if (id == orig) continue;
        double acc = 0.0;
        for (int i = 0; i < d; ++i) {
            const double c = double(emb.data()[size_t(orig) * d + i]) -
                             double(emb.data()[size_t(id) * d + i]);
            acc += c * c;
        }
        all.emplace_back(acc, id);
    }
    std::sort(all.begin(), all.end());
    std::vector<int32_t> out;
    for (int i = 0; i < k; ++i) out.push_back(all[size_t(i)].second);
    return out;
}
}  // namespace

TEST_CASE("k=1 on a 3-token vocab picks the nearest by inspection") {
    // vocab: 5 reserved + a,b,c with e(a)=(0,0), e(b)=(1,0), e(c)=(5,0)
    Tensor emb = Tensor::zeros({kNumReserved + 3, 2});
    auto set = [&](int id, float x, float y) {
        emb.data()[size_t(id) * 2] = x;
        emb.data()[size_t(id) * 2 + 1] = y;
    };
    const int32_t a = kNumReserved, b = kNumReserved + 1, c = kNumReserved + 2;
    set(a, 0, 0);
    set(b, 1, 0);
    set(c, 5, 0);
    // reserved embeddings sit closer than b; they must be excluded anyway
    for (int r = 0; r < kNumReserved; ++r) set(r, 0.01f, 0.01f);

    MaskedBatch m = masked_with({a, a, a, a}, 8, kNumReserved + 3, 0.5);
    Rng rng(1, 7);
    auto res = topk_replace(m, emb, 1, rng);
    for (int32_t repl : res.replacement_ids) CHECK(repl == b);
}

TEST_CASE("every selected position is labeled replaced, everything else original") {
    Tensor emb = testing::probe_like({64, 8}, 1.0f);
    MaskedBatch m = masked_with(std::vector<int32_t>(30, 10), 40, 64, 0.3);
    Rng rng(2, 7);
    auto res = topk_replace(m, emb, 5, rng);
    int64_t replaced = 0, scored = 0;
    for (size_t i = 0; i < res.disc_input.labels.size(); ++i) {
        replaced += res.disc_input.labels[i] == 1.0f ? 1 : 0;
        scored += res.disc_input.mask[i] != 0.0f ? 1 : 0;
    }
    CHECK(replaced == int64_t(m.selected_flat.size()));
    CHECK(scored == 32);  // content + CLS + SEP
    // class balance is exact: fraction of scored positions equals |selected|/scored
    CHECK(double(replaced) / double(scored) ==
          doctest::Approx(double(m.selected_flat.size()) / 32.0));
}

TEST_CASE("topk choices always lie in the brute-force k-nearest set") {
    const int v = 200, d = 64, k = 10;
    Tensor emb = testing::probe_like({v, d}, 1.0f, 31);
    Rng rng(3, 7);
    int trials = 0;
    while (trials < 10000) {
        std::vector<int32_t> content;
        Rng pick(uint64_t(trials), 13);
        for (int i = 0; i < 20; ++i) {
            content.push_back(kNumReserved + int32_t(pick.next_below(v - kNumReserved)));
        }
        MaskedBatch m = masked_with(content, 24, v, 0.5, uint64_t(trials));
        auto res = topk_replace(m, emb, k, rng);
        for (size_t i = 0; i < m.selected_flat.size(); ++i) {
            const auto oracle = oracle_knearest(emb, m.selected_original[i], k);
            const bool in_set = std::find(oracle.begin(), oracle.end(),
                                          res.replacement_ids[i]) != oracle.end();
            CHECK(in_set);
            ++trials;
        }
    }
}

TEST_CASE("prefiltered large-vocab path agrees with the oracle set too") {
    const int v = 700, d = 16, k = 8;  // > 512 triggers the prefilter
    Tensor emb = testing::probe_like({v, d}, 1.0f, 32);
    Rng rng(4, 7);
    std::vector<int32_t> content;
    Rng pick(5, 13);
    for (int i = 0; i < 40; ++i) {
        content.push_back(kNumReserved + int32_t(pick.next_below(v - kNumReserved)));
    }
    MaskedBatch m = masked_with(content, 48, v, 0.5);
    auto res = topk_replace(m, emb, k, rng);
    for (size_t i = 0; i < m.selected_flat.size(); ++i) {
        const auto oracle = oracle_knearest(emb, m.selected_original[i], k);
        CHECK(std::find(oracle.begin(), oracle.end(), res.replacement_ids[i]) != oracle.end());
    }
}

TEST_CASE("ties break toward the smaller token id") {
    // duplicate embeddings: ids 10 and 20 both at distance 1 from id 7
    Tensor emb = Tensor::zeros({32, 2});
    emb.data()[7 * 2] = 0.0f;
    for (int id = kNumReserved; id < 32; ++id) {
        emb.data()[size_t(id) * 2] = 100.0f + float(id);  // far away
    }
    emb.data()[7 * 2] = 0.0f;
    emb.data()[10 * 2] = 1.0f;
    emb.data()[20 * 2] = 1.0f;
    MaskedBatch m = masked_with({7, 7, 7}, 8, 32, 0.4);
    Rng rng(6, 7);
    auto res = topk_replace(m, emb, 1, rng);
    for (int32_t repl : res.replacement_ids) CHECK(repl == 10);
}

TEST_CASE("k larger than the eligible vocabulary errors") {
    Tensor emb = Tensor::zeros({kNumReserved + 3, 2});
    MaskedBatch m = masked_with({kNumReserved, kNumReserved + 1}, 8, kNumReserved + 3, 0.5);
    Rng rng(7, 7);
    CHECK_THROWS_AS((void)topk_replace(m, emb, 3, rng), ConfigError);
}

TEST_CASE("noise mode: corrupted stream differs only at selected positions") {
    const int v = 40, d = 16;
    Tensor emb = testing::probe_like({v, d}, 1.0f, 33);
    MaskedBatch m = masked_with(std::vector<int32_t>(12, 9), 16, v, 0.25);
    Rng rng(8, 7);
    auto res = noise_replace(m, emb, 1.0, rng);
    Tensor clean = embedding_gather(emb, m.source_ids);
    std::set<int64_t> sel(m.selected_flat.begin(), m.selected_flat.end());
    for (int64_t pos = 0; pos < 16; ++pos) {
        bool differs = false;
        for (int i = 0; i < d; ++i) {
            if (res.token_stream.data()[pos * d + i] != clean.data()[pos * d + i]) differs = true;
        }
        CHECK(differs == (sel.count(pos) > 0));
        CHECK(res.labels[size_t(pos)] == (sel.count(pos) ? 1.0f : 0.0f));
    }
}

TEST_CASE("noise statistics: mean ~0 and expected squared norm ~sigma^2 * d") {
    const int d = 64;
    Tensor emb = Tensor::zeros({8, d});
    Rng rng(9, 7);
    double sum = 0.0, sumsq = 0.0;
    int64_t n_vec = 0, n_comp = 0;
    for (int trial = 0; trial < 850; ++trial) {
        MaskedBatch m = masked_with(std::vector<int32_t>(30, 6), 32, 8, 0.4, uint64_t(trial));
        auto res = noise_replace(m, emb, 1.0, rng);
        for (int64_t flat : m.selected_flat) {
            double normsq = 0.0;
            for (int i = 0; i < d; ++i) {
                const double x = res.token_stream.data()[flat * d + i];
                sum += x;
                normsq += x * x;
            }
            sumsq += normsq;
            ++n_vec;
            n_comp += d;
        }
        if (n_comp >= 100000 && n_vec >= 10000) break;
    }
    CHECK(std::abs(sum / double(n_comp)) < 3.0 / std::sqrt(double(n_comp)));
    CHECK(std::abs(sumsq / double(n_vec) - double(d)) < 0.05 * double(d));
}

TEST_CASE("aux loss: coincident and 3-4-5 cases") {
    Tensor emb = Tensor::zeros({8, 2});
    emb.data()[6 * 2] = 3.0f;
    emb.data()[6 * 2 + 1] = 4.0f;
    CHECK(aux_embedding_loss(emb, {5}, {5}).item() == 0.0f);
    CHECK(aux_embedding_loss(emb, {5}, {6}).item() == doctest::Approx(25.0));
    CHECK(aux_embedding_loss(emb, {}, {}).item() == 0.0f);
}

TEST_CASE("aux loss: mean over replacements") {
    Tensor emb = Tensor::zeros({8, 2});
    emb.data()[1 * 2] = 1.0f;  // d2(0,1) = 1
    emb.data()[2 * 2] = 3.0f;  // d2(0,2) = 9
    CHECK(aux_embedding_loss(emb, {0, 0}, {1, 2}).item() == doctest::Approx(5.0));
}

TEST_CASE("aux loss backpropagates into live embeddings") {
    Tensor emb = testing::probe_like({10, 4}, 1.0f, 34);
    emb.set_requires_grad(true);
    Tensor loss = aux_embedding_loss(emb, {6, 7}, {8, 9});
    backward(loss);
    CHECK(emb.has_grad());
    auto r = testing::fd_check({emb}, [&] { return aux_embedding_loss(emb, {6, 7}, {8, 9}); });
    CHECK(r.max_rel < 1e-2);
}

TEST_CASE("replacement config validation") {
    ReplacementConfig c;
    c.k = 10;
    CHECK_NOTHROW(c.validate(100));
    CHECK_THROWS_AS(c.validate(12), ConfigError);  // 12 - 5 reserved <= 10
    c.k = 0;
    CHECK_THROWS_AS(c.validate(100), ConfigError);
    c.k = 10;
    c.noise_sigma = 0.0;
    CHECK_THROWS_AS(c.validate(100), ConfigError);
    c.noise_sigma = 1.0;
    c.aux_loss_coeff = -0.5;
    CHECK_THROWS_AS(c.validate(100), ConfigError);
}
