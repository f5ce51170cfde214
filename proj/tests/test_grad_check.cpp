// Finite-difference gradient checks for every registered op and for the full
// generator/discriminator losses at toy size.

#include <doctest.h>

#include "rtdlab/discriminator.hpp"
#include "rtdlab/generator.hpp"
#include "rtdlab/masking.hpp"
#include "test_util.hpp"

using namespace rtdlab;
using rtdlab::testing::fd_check;
using rtdlab::testing::probe_like;

namespace {
constexpr double kTol = 1e-2;

Tensor param_like(const std::vector<int>& shape, float scale, uint64_t salt) {
    Tensor t = probe_like(shape, scale, salt);
    t.set_requires_grad(true);
    return t;
}

// probe-weighted sum makes the output gradient non-uniform
Tensor probed(const Tensor& out, uint64_t salt = 3) {
    return sum_all(mul(out, probe_like(out.shape(), 1.0f, salt)));
}
}  // namespace

TEST_CASE("fd: matmul 2d") {
    Tensor a = param_like({3, 4}, 0.8f, 1), b = param_like({4, 5}, 0.8f, 2);
    auto r = fd_check({a, b}, [&] { return probed(matmul(a, b)); });
    CHECK(r.max_rel < kTol);
}

TEST_CASE("fd: matmul batched 3d") {
    Tensor a = param_like({2, 3, 4}, 0.8f, 3), b = param_like({2, 4, 3}, 0.8f, 4);
    auto r = fd_check({a, b}, [&] { return probed(matmul(a, b)); });
    CHECK(r.max_rel < kTol);
}

TEST_CASE("fd: matmul_nt") {
    Tensor a = param_like({3, 4}, 0.8f, 5), b = param_like({6, 4}, 0.8f, 6);
    auto r = fd_check({a, b}, [&] { return probed(matmul_nt(a, b)); });
    CHECK(r.max_rel < kTol);
}

TEST_CASE("fd: add same-shape and broadcast") {
    Tensor a = param_like({3, 4}, 1.0f, 7), b = param_like({3, 4}, 1.0f, 8);
    Tensor bias = param_like({4}, 1.0f, 9);
    auto r1 = fd_check({a, b}, [&] { return probed(add(a, b)); });
    CHECK(r1.max_rel < kTol);
    auto r2 = fd_check({a, bias}, [&] { return probed(add(a, bias), 4); });
    CHECK(r2.max_rel < kTol);
}

TEST_CASE("fd: sub, mul, scale") {
    Tensor a = param_like({2, 5}, 1.0f, 10), b = param_like({2, 5}, 1.0f, 11);
    CHECK(fd_check({a, b}, [&] { return probed(sub(a, b)); }).max_rel < kTol);
    CHECK(fd_check({a, b}, [&] { return probed(mul(a, b)); }).max_rel < kTol);
    CHECK(fd_check({a}, [&] { return probed(scale(a, -1.7f)); }).max_rel < kTol);
}

TEST_CASE("fd: softmax") {
    Tensor a = param_like({3, 6}, 1.5f, 12);
    auto r = fd_check({a}, [&] { return probed(softmax_lastdim(a), 5); });
    CHECK(r.max_rel < kTol);
}

TEST_CASE("fd: layer_norm") {
    Tensor x = param_like({4, 8}, 1.2f, 13);
    Tensor g = param_like({8}, 1.0f, 14);
    Tensor b = param_like({8}, 0.5f, 15);
    auto r = fd_check({x, g, b}, [&] { return probed(layer_norm(x, g, b), 6); });
    CHECK(r.max_rel < kTol);
}

TEST_CASE("fd: gelu, sigmoid, log") {
    Tensor a = param_like({3, 7}, 1.5f, 16);
    CHECK(fd_check({a}, [&] { return probed(gelu(a)); }).max_rel < kTol);
    CHECK(fd_check({a}, [&] { return probed(sigmoid(a), 8); }).max_rel < kTol);
    Tensor pos = probe_like({3, 3}, 0.0f, 17);
    for (int64_t i = 0; i < pos.size(); ++i) pos.data()[i] = 0.5f + float(i) * 0.3f;
    pos.set_requires_grad(true);
    CHECK(fd_check({pos}, [&] { return probed(log_elem(pos), 9); }).max_rel < kTol);
}

TEST_CASE("fd: reductions") {
    Tensor a = param_like({4, 3}, 1.0f, 18);
    CHECK(fd_check({a}, [&] { return mean_all(a); }).max_rel < kTol);
    CHECK(fd_check({a}, [&] { return scale(sum_all(a), 0.3f); }).max_rel < kTol);
}

TEST_CASE("fd: embedding_gather and gather_rows") {
    Tensor table = param_like({9, 4}, 0.8f, 19);
    IntMat ids(2, 3);
    const int32_t vals[6] = {0, 3, 7, 3, 8, 1};  // repeated id exercises accumulation
    for (int i = 0; i < 6; ++i) ids.v[size_t(i)] = vals[i];
    CHECK(fd_check({table}, [&] { return probed(embedding_gather(table, ids), 10); }).max_rel <
          kTol);

    Tensor x = param_like({6, 3}, 1.0f, 20);
    std::vector<int64_t> rows = {1, 4, 1, 5};
    CHECK(fd_check({x}, [&] { return probed(gather_rows(x, rows), 11); }).max_rel < kTol);
}

TEST_CASE("fd: concat, reshape, transpose, heads") {
    Tensor a = param_like({2, 3}, 1.0f, 21), b = param_like({2, 2}, 1.0f, 22);
    CHECK(fd_check({a, b}, [&] { return probed(concat_lastdim({a, b}), 12); }).max_rel < kTol);
    CHECK(fd_check({a}, [&] { return probed(reshape(a, {3, 2}), 13); }).max_rel < kTol);
    CHECK(fd_check({a}, [&] { return probed(transpose_last2(a), 14); }).max_rel < kTol);

    Tensor x3 = param_like({2, 3, 4}, 1.0f, 23);
    CHECK(fd_check({x3}, [&] { return probed(transpose_last2(x3), 15); }).max_rel < kTol);
    CHECK(fd_check({x3}, [&] { return probed(heads_split(x3, 2), 16); }).max_rel < kTol);
    Tensor x4 = param_like({4, 3, 2}, 1.0f, 24);
    CHECK(fd_check({x4}, [&] { return probed(heads_merge(x4, 2), 17); }).max_rel < kTol);
}

TEST_CASE("fd: cross entropy and masked BCE") {
    Tensor logits = param_like({5, 7}, 1.5f, 25);
    std::vector<int32_t> labels = {0, 3, 6, 2, 2};
    CHECK(fd_check({logits}, [&] { return cross_entropy_mean(logits, labels); }).max_rel < kTol);

    Tensor z = param_like({8}, 1.5f, 26);
    std::vector<float> y = {1, 0, 0, 1, 1, 0, 1, 0};
    std::vector<float> mask = {1, 1, 0, 1, 1, 1, 0, 1};
    CHECK(fd_check({z}, [&] { return bce_logits_masked_mean(z, y, mask); }).max_rel < kTol);
}

// ---------------------------------------------------------------------------
// full model losses at toy size (hidden 16, 2 layers, vocab 50)
// ---------------------------------------------------------------------------

namespace {
struct ToyModels {
    ParamStore store;
    GeneratorParams gen;
    DiscriminatorParams disc;
    MaskedBatch masked;
    DiscInput di;

    static ToyModels make() {
        EncoderConfig enc;
        enc.n_layers = 2;
        enc.hidden_dim = 16;
        enc.n_heads = 2;
        enc.ffn_dim = 32;
        enc.max_seq_len = 12;
        enc.vocab_size = 50;

        GeneratorConfig gcfg;
        gcfg.enc = enc;
        gcfg.exit_layers = {1, 2};
        gcfg.exit_loss_weights = {0.4, 0.6};
        gcfg.concat_exit_heads = true;

        DiscriminatorConfig dcfg;
        dcfg.enc = enc;
        dcfg.n_sections = 2;

        ToyModels m;
        Rng init(11, 0);
        auto [tok, pos] = make_embeddings(enc, m.store, init);
        m.gen = make_generator(gcfg, "gen.", m.store, tok, pos, init);
        m.disc = make_discriminator(dcfg, "disc.", m.store, tok, pos, init);

        Batch batch;
        batch.ids = IntMat(2, 12, kPadId);
        batch.true_length = {12, 9};
        Rng data_rng(5, 1);
        for (int b = 0; b < 2; ++b) {
            batch.ids.at(b, 0) = kClsId;
            const int tl = batch.true_length[size_t(b)];
            for (int t = 1; t < tl - 1; ++t) {
                batch.ids.at(b, t) = kNumReserved + int32_t(data_rng.next_below(45));
            }
            batch.ids.at(b, tl - 1) = kSepId;
        }
        Rng mask_rng(6, 2);
        m.masked = apply_mlm_mask(batch, mask_rng, MaskRatios{0.85, 0.0, 0.15}, 0.3, 50);

        // freeze one sampled corruption for the discriminator input
        std::vector<int32_t> sampled;
        Rng samp(7, 3);
        for (size_t i = 0; i < m.masked.selected_flat.size(); ++i) {
            sampled.push_back(kNumReserved + int32_t(samp.next_below(45)));
        }
        m.di = build_discriminator_input(m.masked, sampled);
        return m;
    }

    Tensor gen_loss() const {
        GeneratorForward fwd = generator_forward(gen, masked, -1);
        auto states = gather_exit_states(fwd, masked.selected_flat, masked.seq_len(),
                                         gen.cfg.enc.hidden_dim);
        std::vector<Tensor> logits;
        for (int j = 0; j < fwd.available_exits; ++j) {
            logits.push_back(exit_head_logits(gen, states, j));
        }
        return mlm_loss(logits, masked.selected_original, gen.cfg.exit_loss_weights).total;
    }

    Tensor disc_loss() const {
        Tensor dl = rtd_forward(disc, di.ids, masked.true_length);
        return rtd_loss(dl, di.labels, di.mask);
    }

    std::vector<Tensor> all_params() const {
        std::vector<Tensor> out;
        for (const auto& [name, t] : store.items()) out.push_back(t);
        return out;
    }
};
}  // namespace

TEST_CASE("fd: full generator MLM loss over sampled parameters") {
    ToyModels m = ToyModels::make();
    Rng pick(123, 9);
    auto r = fd_check(m.all_params(), [&] { return m.gen_loss(); }, 1e-3, 2, &pick);
    INFO(r.worst);
    CHECK(r.checked <= 200);
    CHECK(r.max_rel < kTol);
}

TEST_CASE("fd: full discriminator RTD loss over sampled parameters") {
    ToyModels m = ToyModels::make();
    Rng pick(321, 9);
    auto r = fd_check(m.all_params(), [&] { return m.disc_loss(); }, 1e-3, 2, &pick);
    INFO(r.worst);
    CHECK(r.checked <= 200);
    CHECK(r.max_rel < kTol);
}

TEST_CASE("fd: combined objective") {
    ToyModels m = ToyModels::make();
    Rng pick(555, 9);
    auto combined = [&] { return add(m.gen_loss(), scale(m.disc_loss(), 1.0f)); };
    auto r = fd_check(m.all_params(), combined, 1e-3, 2, &pick);
    INFO(r.worst);
    CHECK(r.max_rel < kTol);
}
