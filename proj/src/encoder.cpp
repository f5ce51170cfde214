#include "rtdlab/encoder.hpp"

#include <cmath>

#include "rtdlab/vocab.hpp"

namespace rtdlab {

namespace {
constexpr float kInitStd = 0.02f;

Tensor init_weight(ParamStore& store, const std::string& name, std::vector<int> shape, Rng& rng) {
    Tensor t = store.add(name, std::move(shape));
    t.fill_normal(rng, 0.0f, kInitStd);
    return t;
}

Tensor init_ones(ParamStore& store, const std::string& name, std::vector<int> shape) {
    Tensor t = store.add(name, std::move(shape));
    t.fill(1.0f);
    return t;
}
}  // namespace

void EncoderConfig::validate() const {
    if (n_layers < 1) throw ConfigError("encoder: n_layers must be >= 1");
    if (hidden_dim < 1 || ffn_dim < 1) throw ConfigError("encoder: dims must be >= 1");
    if (n_heads < 1 || hidden_dim % n_heads != 0) {
        throw ConfigError("encoder: hidden_dim " + std::to_string(hidden_dim) +
                          " must be divisible by n_heads " + std::to_string(n_heads));
    }
    if (max_seq_len < 4) throw ConfigError("encoder: max_seq_len too small");
    if (vocab_size <= kNumReserved) throw ConfigError("encoder: vocab too small");
}

std::pair<Tensor, Tensor> make_embeddings(const EncoderConfig& cfg, ParamStore& store, Rng& init) {
    Tensor tok = init_weight(store, "emb.tok", {cfg.vocab_size, cfg.hidden_dim}, init);
    Tensor pos = init_weight(store, "emb.pos", {cfg.max_seq_len, cfg.hidden_dim}, init);
    return {tok, pos};
}

EncoderParams make_encoder(const EncoderConfig& cfg, const std::string& prefix, ParamStore& store,
                           Tensor tok_emb, Tensor pos_emb, Rng& init) {
    cfg.validate();
    EncoderParams p;
    p.cfg = cfg;
    p.tok_emb = std::move(tok_emb);
    p.pos_emb = std::move(pos_emb);
    const int d = cfg.hidden_dim, f = cfg.ffn_dim;
    p.emb_ln_g = init_ones(store, prefix + "emb_ln.g", {d});
    p.emb_ln_b = store.add(prefix + "emb_ln.b", {d});
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string lp = prefix + "l" + std::to_string(l) + ".";
        LayerParams lay;
        lay.ln1_g = init_ones(store, lp + "ln1.g", {d});
        lay.ln1_b = store.add(lp + "ln1.b", {d});
        lay.wq = init_weight(store, lp + "wq", {d, d}, init);
        lay.bq = store.add(lp + "bq", {d});
        lay.wk = init_weight(store, lp + "wk", {d, d}, init);
        lay.bk = store.add(lp + "bk", {d});
        lay.wv = init_weight(store, lp + "wv", {d, d}, init);
        lay.bv = store.add(lp + "bv", {d});
        lay.wo = init_weight(store, lp + "wo", {d, d}, init);
        lay.bo = store.add(lp + "bo", {d});
        lay.ln2_g = init_ones(store, lp + "ln2.g", {d});
        lay.ln2_b = store.add(lp + "ln2.b", {d});
        lay.fc1_w = init_weight(store, lp + "fc1.w", {d, f}, init);
        lay.fc1_b = store.add(lp + "fc1.b", {f});
        lay.fc2_w = init_weight(store, lp + "fc2.w", {f, d}, init);
        lay.fc2_b = store.add(lp + "fc2.b", {d});
        p.layers.push_back(std::move(lay));
    }
    return p;
}

Tensor make_pad_bias(int batch, int seq_len, int n_heads, const std::vector<int>& true_length) {
    Tensor bias = Tensor::zeros({batch * n_heads, seq_len, seq_len});
    float* pb = bias.data();
    for (int b = 0; b < batch; ++b) {
        const int tl = true_length[size_t(b)];
        if (tl >= seq_len) continue;
        for (int h = 0; h < n_heads; ++h) {
            float* base = pb + (size_t(b) * n_heads + size_t(h)) * seq_len * seq_len;
            for (int q = 0; q < seq_len; ++q) {
                for (int k = tl; k < seq_len; ++k) base[size_t(q) * seq_len + k] = -1e9f;
            }
        }
    }
    return bias;
}

namespace {

Tensor layer_forward(const LayerParams& lay, const Tensor& x, const Tensor& pad_bias, int batch,
                     int seq_len, int d, int n_heads) {
    const float att_scale = 1.0f / std::sqrt(float(d / n_heads));
    // attention sublayer
    Tensor h = layer_norm(x, lay.ln1_g, lay.ln1_b);
    Tensor h2 = reshape(h, {batch * seq_len, d});
    Tensor q = heads_split(reshape(add(matmul(h2, lay.wq), lay.bq), {batch, seq_len, d}), n_heads);
    Tensor k = heads_split(reshape(add(matmul(h2, lay.wk), lay.bk), {batch, seq_len, d}), n_heads);
    Tensor v = heads_split(reshape(add(matmul(h2, lay.wv), lay.bv), {batch, seq_len, d}), n_heads);
    Tensor scores = add(scale(matmul(q, transpose_last2(k)), att_scale), pad_bias);
    Tensor ctx = heads_merge(matmul(softmax_lastdim(scores), v), n_heads);
    Tensor attn =
        reshape(add(matmul(reshape(ctx, {batch * seq_len, d}), lay.wo), lay.bo), {batch, seq_len, d});
    Tensor x1 = add(x, attn);
    // feed-forward sublayer
    Tensor g = layer_norm(x1, lay.ln2_g, lay.ln2_b);
    Tensor f1 = gelu(add(matmul(reshape(g, {batch * seq_len, d}), lay.fc1_w), lay.fc1_b));
    Tensor f2 = reshape(add(matmul(f1, lay.fc2_w), lay.fc2_b), {batch, seq_len, d});
    return add(x1, f2);
}

LayerParams detach_layer(const LayerParams& lay) {
    LayerParams d;
    d.ln1_g = lay.ln1_g.detached_view();
    d.ln1_b = lay.ln1_b.detached_view();
    d.wq = lay.wq.detached_view();
    d.bq = lay.bq.detached_view();
    d.wk = lay.wk.detached_view();
    d.bk = lay.bk.detached_view();
    d.wv = lay.wv.detached_view();
    d.bv = lay.bv.detached_view();
    d.wo = lay.wo.detached_view();
    d.bo = lay.bo.detached_view();
    d.ln2_g = lay.ln2_g.detached_view();
    d.ln2_b = lay.ln2_b.detached_view();
    d.fc1_w = lay.fc1_w.detached_view();
    d.fc1_b = lay.fc1_b.detached_view();
    d.fc2_w = lay.fc2_w.detached_view();
    d.fc2_b = lay.fc2_b.detached_view();
    return d;
}

}  // namespace

EncoderActivations encoder_forward(const EncoderParams& p, const IntMat& ids,
                                   const std::vector<int>& true_length, int upto_layer,
                                   const Tensor& token_stream_override) {
    const int batch = ids.rows, seq_len = ids.cols, d = p.cfg.hidden_dim;
    if (upto_layer < 0 || upto_layer > p.cfg.n_layers) {
        throw ConfigError("encoder_forward: upto_layer " + std::to_string(upto_layer) +
                          " out of range");
    }
    EncoderActivations acts;
    Tensor tok = token_stream_override.defined() ? token_stream_override
                                                 : embedding_gather(p.tok_emb, ids);
    IntMat pos_ids(batch, seq_len);
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < seq_len; ++t) pos_ids.at(b, t) = t;
    }
    Tensor pos = embedding_gather(p.pos_emb, pos_ids);
    acts.embedded = layer_norm(add(tok, pos), p.emb_ln_g, p.emb_ln_b);

    Tensor pad_bias = make_pad_bias(batch, seq_len, p.cfg.n_heads, true_length);
    Tensor x = acts.embedded;
    for (int l = 0; l < upto_layer; ++l) {
        x = layer_forward(p.layers[size_t(l)], x, pad_bias, batch, seq_len, d, p.cfg.n_heads);
        acts.layer_out.push_back(x);
    }
    return acts;
}

std::vector<Tensor> encoder_continue_nograd(const EncoderParams& p, const Tensor& from,
                                            const std::vector<int>& true_length, int from_layer,
                                            int upto_layer) {
    const int batch = from.dim(0), seq_len = from.dim(1), d = p.cfg.hidden_dim;
    Tensor pad_bias = make_pad_bias(batch, seq_len, p.cfg.n_heads, true_length);
    Tensor x = from.detached_view();
    std::vector<Tensor> out;
    for (int l = from_layer; l < upto_layer; ++l) {
        const LayerParams det = detach_layer(p.layers[size_t(l)]);
        x = layer_forward(det, x, pad_bias, batch, seq_len, d, p.cfg.n_heads);
        out.push_back(x);
    }
    return out;
}

}  // namespace rtdlab
