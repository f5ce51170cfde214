#pragma once

#include "rtdlab/encoder.hpp"
#include "rtdlab/masking.hpp"

namespace rtdlab {

struct GeneratorConfig {
    EncoderConfig enc;
    std::vector<int> exit_layers;            // ascending, last == enc.n_layers
    std::vector<double> exit_loss_weights;   // one per exit, positive
    bool concat_exit_heads = true;           // monotonicity strategy 1
    bool skip_above_exit = false;            // throughput mode
    bool gumbel = true;                      // off = plain argmax (test hook)

    void validate() const;
    int n_exits() const { return int(exit_layers.size()); }
};

struct ExitHeadParams {
    Tensor proj_w;  // (j*D or D, D) depending on concat_exit_heads
    Tensor proj_b, ln_g, ln_b;
};

struct GeneratorParams {
    GeneratorConfig cfg;
    EncoderParams enc;
    std::vector<ExitHeadParams> exits;
    Tensor mlm_bias;  // (V), shared across exits; vocab projection is tied to emb.tok
};

GeneratorParams make_generator(const GeneratorConfig& cfg, const std::string& prefix,
                               ParamStore& store, Tensor tok_emb, Tensor pos_emb, Rng& init);

// Early-Exit (Disc) variant: exit heads on top of an existing trunk (same
// tensor storage, no new trunk parameters).
GeneratorParams make_generator_shared(const GeneratorConfig& cfg, const std::string& prefix,
                                      ParamStore& store, const EncoderParams& shared_trunk,
                                      Rng& init);

struct GeneratorForward {
    std::vector<Tensor> exit_hidden;  // trunk snapshots (B,T,D) at exit layers
    int available_exits;              // == n_exits in full mode; <= sampled+1 in skip mode
};

// Full-depth trunk, or (skip mode) trunk truncated at exit_layers[upto_exit].
// upto_exit < 0 runs the whole trunk.
GeneratorForward generator_forward(const GeneratorParams& p, const MaskedBatch& masked,
                                   int upto_exit = -1);

// Trunk snapshots at the masked positions: exit_states[j] has shape (K, D).
std::vector<Tensor> gather_exit_states(const GeneratorForward& fwd,
                                       const std::vector<int64_t>& selected_flat, int seq_len,
                                       int hidden_dim);

// MLM logits (K, V) for one exit. With concat_exit_heads the head input is the
// concatenation of exit states 1..exit_idx+1.
Tensor exit_head_logits(const GeneratorParams& p, const std::vector<Tensor>& exit_states,
                        int exit_idx);

struct MlmLossResult {
    Tensor total;                 // weighted sum, weights normalized to 1
    std::vector<Tensor> per_exit;
};

MlmLossResult mlm_loss(const std::vector<Tensor>& exit_logits, const std::vector<int32_t>& labels,
                       const std::vector<double>& exit_loss_weights);

// Gumbel-max sampling: argmax over logits + Gumbel(0,1) noise per entry.
// add_noise=false is the zero-noise test hook (plain argmax).
std::vector<int32_t> gumbel_sample(const Tensor& logits, Rng& rng, bool add_noise = true);

struct DiscInput {
    IntMat ids;                 // corrupted sequence for the discriminator
    std::vector<float> labels;  // flat (B*T): 1 = replaced, 0 = original
    std::vector<float> mask;    // flat (B*T): 1 at non-pad positions
};

// rtd label is "replaced" only where the sampled id differs from the original;
// a correct generator guess stays labeled original.
DiscInput build_discriminator_input(const MaskedBatch& masked,
                                    const std::vector<int32_t>& sampled_ids);

}  // namespace rtdlab
