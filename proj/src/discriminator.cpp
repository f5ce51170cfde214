#include "rtdlab/discriminator.hpp"

#include <algorithm>

namespace rtdlab {

void DiscriminatorConfig::validate() const {
    enc.validate();
    if (n_sections < 1 || enc.n_layers % n_sections != 0) {
        throw ConfigError("discriminator: n_sections " + std::to_string(n_sections) +
                          " must divide disc.n_layers " + std::to_string(enc.n_layers));
    }
}

namespace {
std::vector<SectionHeadParams> make_heads(const DiscriminatorConfig& cfg, const std::string& prefix,
                                          ParamStore& store) {
    std::vector<SectionHeadParams> heads;
    const int d = cfg.enc.hidden_dim;
    for (int s = 1; s <= cfg.n_sections; ++s) {
        const std::string sp = prefix + "sec" + std::to_string(s) + ".";
        SectionHeadParams h;
        h.ln_g = store.add(sp + "ln.g", {d});
        h.ln_g.fill(1.0f);
        h.ln_b = store.add(sp + "ln.b", {d});
        h.w = store.add(sp + "w", {d, 1});
        h.b = store.add(sp + "b", {1});
        heads.push_back(std::move(h));
    }
    return heads;
}

Tensor head_logits(const SectionHeadParams& head, const Tensor& hidden, int batch, int seq_len,
                   int d) {
    Tensor h2 = reshape(hidden, {batch * seq_len, d});
    return add(matmul(layer_norm(h2, head.ln_g, head.ln_b), head.w), head.b);
}
}  // namespace

DiscriminatorParams make_discriminator(const DiscriminatorConfig& cfg, const std::string& prefix,
                                       ParamStore& store, Tensor tok_emb, Tensor pos_emb,
                                       Rng& init) {
    cfg.validate();
    DiscriminatorParams p;
    p.cfg = cfg;
    p.enc = make_encoder(cfg.enc, prefix, store, std::move(tok_emb), std::move(pos_emb), init);
    p.sections = make_heads(cfg, prefix, store);
    return p;
}

DiscriminatorParams make_discriminator_shared(const DiscriminatorConfig& cfg,
                                              const std::string& prefix, ParamStore& store,
                                              const EncoderParams& shared_trunk) {
    cfg.validate();
    if (shared_trunk.cfg.n_layers != cfg.enc.n_layers ||
        shared_trunk.cfg.hidden_dim != cfg.enc.hidden_dim) {
        throw ConfigError("discriminator: shared trunk dims do not match disc config");
    }
    DiscriminatorParams p;
    p.cfg = cfg;
    p.enc = shared_trunk;  // same tensor storage
    p.sections = make_heads(cfg, prefix, store);
    return p;
}

Tensor rtd_forward(const DiscriminatorParams& p, const IntMat& ids,
                   const std::vector<int>& true_length, int upto_section,
                   const Tensor& token_stream_override) {
    const int sections = p.cfg.n_sections;
    if (upto_section < 0) upto_section = sections;
    if (upto_section < 1 || upto_section > sections) {
        throw ConfigError("rtd_forward: section " + std::to_string(upto_section) + " out of 1.." +
                          std::to_string(sections));
    }
    const int upto_layer = p.cfg.section_end_layer(upto_section);
    EncoderActivations acts =
        encoder_forward(p.enc, ids, true_length, upto_layer, token_stream_override);
    const Tensor& hidden = acts.layer_out.back();
    return head_logits(p.sections[size_t(upto_section - 1)], hidden, ids.rows, ids.cols,
                       p.cfg.enc.hidden_dim);
}

Tensor rtd_loss(const Tensor& logits, const std::vector<float>& labels,
                const std::vector<float>& mask) {
    return bce_logits_masked_mean(logits, labels, mask);
}

std::pair<int64_t, int64_t> rtd_accuracy_counts(const Tensor& logits,
                                                const std::vector<float>& labels,
                                                const std::vector<float>& mask) {
    const float* z = logits.data();
    int64_t correct = 0, scored = 0;
    for (int64_t i = 0; i < logits.size(); ++i) {
        if (mask[size_t(i)] == 0.0f) continue;
        ++scored;
        const float pred = z[i] >= 0.0f ? 1.0f : 0.0f;  // round(sigmoid(z))
        if (pred == labels[size_t(i)]) ++correct;
    }
    return {correct, scored};
}

SectionForward rtd_forward_sections(const DiscriminatorParams& p, const IntMat& ids,
                                    const std::vector<int>& true_length, int active_section,
                                    const Tensor& token_stream_override) {
    const int sections = p.cfg.n_sections;
    if (active_section < 1 || active_section > sections) {
        throw ConfigError("rtd_forward_sections: active section " + std::to_string(active_section) +
                          " out of 1.." + std::to_string(sections));
    }
    const int batch = ids.rows, seq_len = ids.cols, d = p.cfg.enc.hidden_dim;
    const int attached_layers = p.cfg.section_end_layer(active_section);
    EncoderActivations acts =
        encoder_forward(p.enc, ids, true_length, attached_layers, token_stream_override);

    SectionForward out;
    out.active_section = active_section;
    for (int s = 1; s <= active_section; ++s) {
        const Tensor& hidden = acts.layer_out[size_t(p.cfg.section_end_layer(s) - 1)];
        out.logits.push_back(head_logits(p.sections[size_t(s - 1)], hidden, batch, seq_len, d));
    }
    if (active_section < sections) {
        std::vector<Tensor> deeper =
            encoder_continue_nograd(p.enc, acts.layer_out.back(), true_length, attached_layers,
                                    p.cfg.enc.n_layers);
        for (int s = active_section + 1; s <= sections; ++s) {
            const int idx = p.cfg.section_end_layer(s) - attached_layers - 1;
            out.logits.push_back(
                head_logits(p.sections[size_t(s - 1)], deeper[size_t(idx)], batch, seq_len, d));
        }
    }
    return out;
}

std::vector<double> update_section_exit(SectionState& st) {
    // a window with zero evaluations keeps the previous state
    for (double s : st.window_scored) {
        if (s == 0.0) {
            std::fill(st.window_correct.begin(), st.window_correct.end(), 0.0);
            std::fill(st.window_scored.begin(), st.window_scored.end(), 0.0);
            return {};
        }
    }
    std::vector<double> accs(static_cast<size_t>(st.n_sections));
    double mean = 0.0;
    for (int s = 0; s < st.n_sections; ++s) {
        accs[size_t(s)] = st.window_correct[size_t(s)] / st.window_scored[size_t(s)];
        mean += accs[size_t(s)];
    }
    mean /= double(st.n_sections);
    st.threshold = mean;
    st.active_section = st.n_sections;
    for (int s = 0; s < st.n_sections; ++s) {
        if (accs[size_t(s)] > mean) {  // strict: ties fall through to deeper sections
            st.active_section = s + 1;
            break;
        }
    }
    std::fill(st.window_correct.begin(), st.window_correct.end(), 0.0);
    std::fill(st.window_scored.begin(), st.window_scored.end(), 0.0);
    return accs;
}

nlohmann::json SectionState::save_state() const {
    nlohmann::json j;
    j["n_sections"] = n_sections;
    j["threshold"] = threshold;
    j["active_section"] = active_section;
    j["window_correct"] = window_correct;
    j["window_scored"] = window_scored;
    return j;
}

void SectionState::restore_state(const nlohmann::json& j) {
    n_sections = j.at("n_sections").get<int>();
    threshold = j.at("threshold").get<double>();
    active_section = j.at("active_section").get<int>();
    window_correct = j.at("window_correct").get<std::vector<double>>();
    window_scored = j.at("window_scored").get<std::vector<double>>();
}

}  // namespace rtdlab
