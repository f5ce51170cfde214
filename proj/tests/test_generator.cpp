#include <doctest.h>

#include <cmath>

#include "rtdlab/generator.hpp"
#include "test_util.hpp"

using namespace rtdlab;

namespace {
GeneratorConfig small_cfg(int n_layers = 4, bool concat = true) {
    GeneratorConfig g;
    g.enc.n_layers = n_layers;
    g.enc.hidden_dim = 16;
    g.enc.n_heads = 2;
    g.enc.ffn_dim = 32;
    g.enc.max_seq_len = 12;
    g.enc.vocab_size = 40;
    g.exit_layers.clear();
    g.exit_loss_weights.clear();
    for (int i = 1; i <= n_layers; ++i) {
        g.exit_layers.push_back(i);
        g.exit_loss_weights.push_back(double(i));
    }
    g.concat_exit_heads = concat;
    return g;
}

struct Fixture {
    ParamStore store;
    GeneratorParams gen;
    MaskedBatch masked;

    explicit Fixture(bool concat = true, uint64_t seed = 1) : gen() {
        Rng init(seed, 0);
        GeneratorConfig cfg = small_cfg(4, concat);
        auto [tok, pos] = make_embeddings(cfg.enc, store, init);
        gen = make_generator(cfg, "gen.", store, tok, pos, init);

        Batch b;
        b.ids = IntMat(2, 12, kPadId);
        b.true_length = {12, 8};
        Rng data(seed, 5);
        for (int i = 0; i < 2; ++i) {
            b.ids.at(i, 0) = kClsId;
            for (int t = 1; t < b.true_length[size_t(i)] - 1; ++t) {
                b.ids.at(i, t) = kNumReserved + int32_t(data.next_below(35));
            }
            b.ids.at(i, b.true_length[size_t(i)] - 1) = kSepId;
        }
        Rng mask_rng(seed, 6);
        masked = apply_mlm_mask(b, mask_rng, MaskRatios{0.85, 0, 0.15}, 0.3, 40);
    }
};
}  // namespace

TEST_CASE("generator config validation") {
    GeneratorConfig g = small_cfg();
    g.exit_layers = {1, 3};  // last exit must be n_layers
    g.exit_loss_weights = {1, 1};
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g = small_cfg();
    g.exit_loss_weights[1] = -1;
    CHECK_THROWS_AS(g.validate(), ConfigError);
    CHECK_NOTHROW(small_cfg().validate());
}

TEST_CASE("forward records one hidden snapshot per exit with trunk shape") {
    Fixture f;
    GeneratorForward fwd = generator_forward(f.gen, f.masked, -1);
    CHECK(fwd.available_exits == 4);
    REQUIRE(fwd.exit_hidden.size() == 4);
    for (const auto& h : fwd.exit_hidden) {
        CHECK(h.shape() == std::vector<int>{2, 12, 16});
    }
}

TEST_CASE("zero params: all exit states equal and logits uniform via tied projection") {
    Fixture f;
    // zero every parameter, layer-norm gains included
    for (const auto& [name, t] : f.store.items()) {
        const_cast<Tensor&>(t).fill(0.0f);
    }
    GeneratorForward fwd = generator_forward(f.gen, f.masked, -1);
    for (int j = 1; j < 4; ++j) {
        for (int64_t i = 0; i < fwd.exit_hidden[0].size(); ++i) {
            CHECK(fwd.exit_hidden[size_t(j)].data()[i] == fwd.exit_hidden[0].data()[i]);
        }
    }
    auto states = gather_exit_states(fwd, f.masked.selected_flat, 12, 16);
    Tensor logits = exit_head_logits(f.gen, states, 3);
    Tensor probs = softmax_lastdim(logits);
    for (int64_t i = 0; i < probs.size(); ++i) {
        CHECK(probs.data()[i] == doctest::Approx(1.0 / 40.0).epsilon(1e-5));
    }
}

TEST_CASE("exit head projection widths follow the concatenation strategy") {
    Fixture with(true), without(false);
    CHECK(with.gen.exits[0].proj_w.shape() == std::vector<int>{16, 16});
    CHECK(with.gen.exits[2].proj_w.shape() == std::vector<int>{48, 16});
    CHECK(with.gen.exits[3].proj_w.shape() == std::vector<int>{64, 16});
    for (int j = 0; j < 4; ++j) {
        CHECK(without.gen.exits[size_t(j)].proj_w.shape() == std::vector<int>{16, 16});
    }
}

TEST_CASE("exit head logits have shape (n_selected, V) for every exit") {
    Fixture f;
    GeneratorForward fwd = generator_forward(f.gen, f.masked, -1);
    auto states = gather_exit_states(fwd, f.masked.selected_flat, 12, 16);
    const int k = int(f.masked.selected_flat.size());
    for (int j = 0; j < 4; ++j) {
        Tensor logits = exit_head_logits(f.gen, states, j);
        CHECK(logits.shape() == std::vector<int>{k, 40});
    }
}

TEST_CASE("exit heads never alter trunk activations") {
    Fixture f;
    GeneratorForward a = generator_forward(f.gen, f.masked, -1);
    auto states = gather_exit_states(a, f.masked.selected_flat, 12, 16);
    for (int j = 0; j < 4; ++j) (void)exit_head_logits(f.gen, states, j);
    GeneratorForward b = generator_forward(f.gen, f.masked, -1);
    for (int j = 0; j < 4; ++j) {
        for (int64_t i = 0; i < a.exit_hidden[size_t(j)].size(); ++i) {
            CHECK(a.exit_hidden[size_t(j)].data()[i] == b.exit_hidden[size_t(j)].data()[i]);
        }
    }
}

TEST_CASE("skip mode truncates the trunk at the sampled exit") {
    Fixture f;
    GeneratorForward fwd = generator_forward(f.gen, f.masked, 1);  // exit index 1 = layer 2
    CHECK(fwd.available_exits == 2);
    CHECK(fwd.exit_hidden.size() == 2);
}

TEST_CASE("gumbel with zero noise is plain argmax") {
    Tensor logits = Tensor::from_data({2, 4}, {0.1f, 3.0f, -1.0f, 0.0f, 9.0f, 1.0f, 2.0f, 8.9f});
    Rng rng(1, 1);
    auto ids = gumbel_sample(logits, rng, /*add_noise=*/false);
    CHECK(ids == std::vector<int32_t>{1, 0});
}

TEST_CASE("gumbel-max sampling matches softmax frequencies (ln 1,2,3 logits)") {
    Tensor logits = Tensor::from_data(
        {1, 3}, {0.0f, float(std::log(2.0)), float(std::log(3.0))});
    Rng rng(2, 1);
    int counts[3] = {0, 0, 0};
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[gumbel_sample(logits, rng)[0]];
    CHECK(std::abs(counts[0] / double(n) - 1.0 / 6.0) < 0.01);
    CHECK(std::abs(counts[1] / double(n) - 2.0 / 6.0) < 0.01);
    CHECK(std::abs(counts[2] / double(n) - 3.0 / 6.0) < 0.01);
}

TEST_CASE("tied logits sample each side of a tie equally") {
    Tensor logits = Tensor::from_data({1, 2}, {0.7f, 0.7f});
    Rng rng(3, 1);
    int first = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) first += gumbel_sample(logits, rng)[0] == 0 ? 1 : 0;
    CHECK(std::abs(first / double(n) - 0.5) < 0.01);
}

TEST_CASE("gumbel-max total variation vs softmax stays under 0.02 on random 8-way logits") {
    Rng logit_rng(4, 1);
    for (int trial = 0; trial < 3; ++trial) {
        std::vector<float> l(8);
        for (auto& v : l) v = float(logit_rng.uniform01() * 4.0 - 2.0);
        Tensor logits = Tensor::from_data({1, 8}, l);
        Tensor sm = softmax_lastdim(logits);
        Rng rng(5 + uint64_t(trial), 1);
        std::vector<int> counts(8, 0);
        const int n = 100000;
        for (int i = 0; i < n; ++i) ++counts[size_t(gumbel_sample(logits, rng)[0])];
        double tv = 0.0;
        for (int i = 0; i < 8; ++i) {
            tv += std::abs(counts[size_t(i)] / double(n) - double(sm.data()[i]));
        }
        CHECK(tv / 2.0 <= 0.02);
    }
}

TEST_CASE("mlm_loss: uniform logits cost ln V and weights normalize") {
    const int k = 6, v = 40;
    Tensor uniform = Tensor::zeros({k, v});
    std::vector<int32_t> labels(k, 3);
    auto r1 = mlm_loss({uniform}, labels, {1.0});
    CHECK(r1.total.item() == doctest::Approx(std::log(double(v))).epsilon(1e-5));

    // degenerate weights (0-like on all but top): top-exit-only loss
    Tensor other = testing::probe_like({k, v}, 1.0f);
    auto top_only = mlm_loss({other, uniform}, labels, {1e-9, 1.0});
    CHECK(top_only.total.item() == doctest::Approx(std::log(double(v))).epsilon(1e-4));

    // weighted sum equals the hand-computed combination
    auto both = mlm_loss({other, uniform}, labels, {1.0, 3.0});
    const double ce0 = double(both.per_exit[0].item());
    const double ce1 = double(both.per_exit[1].item());
    CHECK(both.total.item() == doctest::Approx(0.25 * ce0 + 0.75 * ce1).epsilon(1e-5));
}

TEST_CASE("mlm_loss rejects empty labels") {
    Tensor logits = Tensor::zeros({0, 8});
    CHECK_THROWS(mlm_loss({logits}, {}, {1.0}));
}

TEST_CASE("discriminator input: perfect generator gives all-original labels") {
    Fixture f;
    auto di = build_discriminator_input(f.masked, f.masked.selected_original);
    for (float l : di.labels) CHECK(l == 0.0f);
    CHECK(di.ids.v == f.masked.source_ids.v);
}

TEST_CASE("discriminator input: wrong generator marks every selected position replaced") {
    Fixture f;
    std::vector<int32_t> wrong;
    for (int32_t orig : f.masked.selected_original) {
        wrong.push_back(orig == 6 ? 7 : 6);
    }
    auto di = build_discriminator_input(f.masked, wrong);
    int64_t replaced = 0;
    for (float l : di.labels) replaced += l == 1.0f ? 1 : 0;
    CHECK(replaced == int64_t(f.masked.selected_flat.size()));
    // pads excluded from scoring
    for (int t = f.masked.true_length[1]; t < 12; ++t) {
        CHECK(di.mask[size_t(12 + t)] == 0.0f);
    }
}

TEST_CASE("random generator on vocab 100 replaces ~99% of selected positions") {
    Rng rng(6, 1);
    int64_t replaced = 0, total = 0;
    for (int trial = 0; trial < 300; ++trial) {
        Batch b;
        b.ids = IntMat(1, 34, kPadId);
        b.true_length = {34};
        b.ids.at(0, 0) = kClsId;
        for (int t = 1; t < 33; ++t) b.ids.at(0, t) = kNumReserved + int32_t(rng.next_below(95));
        b.ids.at(0, 33) = kSepId;
        Rng mrng(uint64_t(trial), 6);
        MaskedBatch m = apply_mlm_mask(b, mrng, MaskRatios{0.85, 0, 0.15}, 0.5, 100);
        std::vector<int32_t> sampled;
        for (size_t i = 0; i < m.selected_flat.size(); ++i) {
            sampled.push_back(kNumReserved + int32_t(rng.next_below(95)));
        }
        auto di = build_discriminator_input(m, sampled);
        for (float l : di.labels) replaced += l == 1.0f ? 1 : 0;
        total += int64_t(m.selected_flat.size());
    }
    const double frac = double(replaced) / double(total);
    CHECK(frac > 0.97);
    CHECK(frac < 1.0);
}
