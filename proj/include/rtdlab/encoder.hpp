#pragma once

#include <string>
#include <vector>

#include "rtdlab/params.hpp"
#include "rtdlab/tensor.hpp"

namespace rtdlab {

struct EncoderConfig {
    int n_layers = 4;
    int hidden_dim = 64;
    int n_heads = 4;
    int ffn_dim = 256;
    int max_seq_len = 128;
    int vocab_size = 8192;

    void validate() const;
};

struct LayerParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor fc1_w, fc1_b, fc2_w, fc2_b;
};

// Pre-LN transformer encoder trunk. Token and positional embedding tensors
// are passed in so they can be shared across models.
struct EncoderParams {
    EncoderConfig cfg;
    Tensor tok_emb;  // (V, D)
    Tensor pos_emb;  // (L, D)
    Tensor emb_ln_g, emb_ln_b;
    std::vector<LayerParams> layers;
};

// Fresh shared embedding tables registered under "emb.".
std::pair<Tensor, Tensor> make_embeddings(const EncoderConfig& cfg, ParamStore& store, Rng& init);

// Trunk parameters registered under `prefix` ("gen.", "disc.", "enc.").
EncoderParams make_encoder(const EncoderConfig& cfg, const std::string& prefix, ParamStore& store,
                           Tensor tok_emb, Tensor pos_emb, Rng& init);

struct EncoderActivations {
    Tensor embedded;                // (B,T,D) stream after embedding layer-norm
    std::vector<Tensor> layer_out;  // residual stream after layers 1..upto
};

// Runs embedding + layers 1..upto_layer (upto_layer = 0 means embedding only).
// When token_stream_override is defined it replaces the gathered token
// embeddings (the noise-corruption path); positions and layer-norm still apply.
EncoderActivations encoder_forward(const EncoderParams& p, const IntMat& ids,
                                   const std::vector<int>& true_length, int upto_layer,
                                   const Tensor& token_stream_override = Tensor());

// Continues the trunk from a snapshot through layers (from_layer, upto_layer],
// with every parameter detached: no gradient flows into trunk weights or
// below the snapshot.
std::vector<Tensor> encoder_continue_nograd(const EncoderParams& p, const Tensor& from,
                                            const std::vector<int>& true_length, int from_layer,
                                            int upto_layer);

// Additive attention bias masking pad keys: 0 on valid keys, -1e9 on pads.
Tensor make_pad_bias(int batch, int seq_len, int n_heads, const std::vector<int>& true_length);

}  // namespace rtdlab
