#pragma once

#include <json.hpp>

#include "rtdlab/encoder.hpp"

namespace rtdlab {

struct DiscriminatorConfig {
    EncoderConfig enc;
    int n_sections = 4;
    bool early_exit = false;

    void validate() const;
    int layers_per_section() const { return enc.n_layers / n_sections; }
    int section_end_layer(int section) const { return section * layers_per_section(); }
};

struct SectionHeadParams {
    Tensor ln_g, ln_b;
    Tensor w;  // (D, 1)
    Tensor b;  // (1)
};

struct DiscriminatorParams {
    DiscriminatorConfig cfg;
    EncoderParams enc;
    // one RTD head per section; the last one is the baseline (top-layer) head
    std::vector<SectionHeadParams> sections;
};

DiscriminatorParams make_discriminator(const DiscriminatorConfig& cfg, const std::string& prefix,
                                       ParamStore& store, Tensor tok_emb, Tensor pos_emb, Rng& init);

// Early-Exit (Disc) variant: reuses an existing trunk (same tensor storage)
// and only registers the section heads.
DiscriminatorParams make_discriminator_shared(const DiscriminatorConfig& cfg,
                                              const std::string& prefix, ParamStore& store,
                                              const EncoderParams& shared_trunk);

// One logit per position from the RTD head of the stopping section.
// upto_section = -1 (absent) runs the full trunk with the top head, which is
// identical to upto_section = n_sections. token_stream_override feeds a
// corrupted embedding stream instead of ids (noise-mode replacement).
Tensor rtd_forward(const DiscriminatorParams& p, const IntMat& ids,
                   const std::vector<int>& true_length, int upto_section = -1,
                   const Tensor& token_stream_override = Tensor());

// Mean BCE over scored positions (pads excluded). Errors when nothing scored.
Tensor rtd_loss(const Tensor& logits, const std::vector<float>& labels,
                const std::vector<float>& mask);

// Correct/scored counts with prediction = round(sigmoid(logit)).
std::pair<int64_t, int64_t> rtd_accuracy_counts(const Tensor& logits,
                                                const std::vector<float>& labels,
                                                const std::vector<float>& mask);

struct SectionForward {
    std::vector<Tensor> logits;  // per section; sections above active are cut from the trunk
    int active_section;
};

// All section heads evaluated every step. Trunk layers above the active
// section run detached, so backward reaches trunk weights only in layers
// <= the active section; deeper heads still train on their detached inputs.
SectionForward rtd_forward_sections(const DiscriminatorParams& p, const IntMat& ids,
                                    const std::vector<int>& true_length, int active_section,
                                    const Tensor& token_stream_override = Tensor());

// Threshold/active-exit state of the section early exit, updated per window.
struct SectionState {
    int n_sections = 4;
    double threshold = 0.0;
    int active_section = 4;  // exit at the top until the first update
    std::vector<double> window_correct;  // per-section accumulators for the open window
    std::vector<double> window_scored;

    explicit SectionState(int sections = 4)
        : n_sections(sections),
          active_section(sections),
          window_correct(size_t(sections), 0.0),
          window_scored(size_t(sections), 0.0) {}

    void accumulate(int section_idx, int64_t correct, int64_t scored) {
        window_correct[size_t(section_idx)] += double(correct);
        window_scored[size_t(section_idx)] += double(scored);
    }

    nlohmann::json save_state() const;
    void restore_state(const nlohmann::json& j);
};

// threshold := mean(accs); active := smallest section with acc strictly above
// the threshold, else the last. Returns the closed window's accuracies, or an
// empty vector when the window had no evaluations (state kept).
std::vector<double> update_section_exit(SectionState& st);

}  // namespace rtdlab
