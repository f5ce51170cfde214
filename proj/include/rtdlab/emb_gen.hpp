#pragma once

#include "rtdlab/generator.hpp"
#include "rtdlab/masking.hpp"

namespace rtdlab {

enum class ReplaceMode { kTopk, kNoise };

struct ReplacementConfig {
    ReplaceMode mode = ReplaceMode::kTopk;
    int k = 10;
    double noise_sigma = 1.0;
    double aux_loss_coeff = 1.0;
    std::string frozen_embeddings_path;  // empty = live embeddings

    void validate(int vocab_size) const;
};

struct TopkReplaceResult {
    DiscInput disc_input;
    std::vector<int32_t> replacement_ids;  // aligned with the selected positions
};

// Replaces each selected token with a uniform pick among its k nearest
// non-reserved neighbors by L2 distance in the embedding table (the token
// itself excluded; distance ties broken by smaller id). Every selected
// position is labeled replaced, everything else original.
TopkReplaceResult topk_replace(const MaskedBatch& masked, const Tensor& embeddings, int k,
                               Rng& rng);

struct NoiseReplaceResult {
    Tensor token_stream;        // (B,T,D) gathered embeddings, noised at selected positions
    std::vector<float> labels;  // selected = replaced
    std::vector<float> mask;    // non-pad
};

// Adds N(0, sigma^2 I) to the embedding vectors at the selected positions; the
// discriminator consumes the stream directly. Gradients still flow into the
// embedding table through the gather.
NoiseReplaceResult noise_replace(const MaskedBatch& masked, const Tensor& embeddings, double sigma,
                                 Rng& rng);

// Mean squared L2 distance between original and replacement embeddings over
// the replaced positions; zero tensor when nothing was replaced.
Tensor aux_embedding_loss(const Tensor& embeddings, const std::vector<int32_t>& original_ids,
                          const std::vector<int32_t>& replacement_ids);

}  // namespace rtdlab
