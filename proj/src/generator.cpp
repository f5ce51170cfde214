#include "rtdlab/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rtdlab {

void GeneratorConfig::validate() const {
    enc.validate();
    if (exit_layers.empty()) throw ConfigError("generator: exit_layers must not be empty");
    int prev = 0;
    for (int e : exit_layers) {
        if (e <= prev || e > enc.n_layers) {
            throw ConfigError("generator: exit_layers must be ascending within 1.." +
                              std::to_string(enc.n_layers));
        }
        prev = e;
    }
    if (exit_layers.back() != enc.n_layers) {
        throw ConfigError("generator: last exit layer must equal gen.n_layers");
    }
    if (exit_loss_weights.size() != exit_layers.size()) {
        throw ConfigError("generator: exit_loss_weights length must match exit_layers");
    }
    for (double w : exit_loss_weights) {
        if (w <= 0) throw ConfigError("generator: exit_loss_weights must be positive");
    }
}

namespace {
GeneratorParams attach_heads(const GeneratorConfig& cfg, const std::string& prefix,
                             ParamStore& store, EncoderParams enc, Rng& init) {
    GeneratorParams p;
    p.cfg = cfg;
    p.enc = std::move(enc);
    const int d = cfg.enc.hidden_dim;
    for (int j = 0; j < cfg.n_exits(); ++j) {
        const std::string ep = prefix + "exit" + std::to_string(j + 1) + ".";
        const int in_w = cfg.concat_exit_heads ? (j + 1) * d : d;
        ExitHeadParams h;
        h.proj_w = store.add(ep + "proj.w", {in_w, d});
        h.proj_w.fill_normal(init, 0.0f, 0.02f);
        h.proj_b = store.add(ep + "proj.b", {d});
        h.ln_g = store.add(ep + "ln.g", {d});
        h.ln_g.fill(1.0f);
        h.ln_b = store.add(ep + "ln.b", {d});
        p.exits.push_back(std::move(h));
    }
    p.mlm_bias = store.add(prefix + "mlm_bias", {cfg.enc.vocab_size});
    return p;
}
}  // namespace

GeneratorParams make_generator(const GeneratorConfig& cfg, const std::string& prefix,
                               ParamStore& store, Tensor tok_emb, Tensor pos_emb, Rng& init) {
    cfg.validate();
    EncoderParams enc =
        make_encoder(cfg.enc, prefix, store, std::move(tok_emb), std::move(pos_emb), init);
    return attach_heads(cfg, prefix, store, std::move(enc), init);
}

GeneratorParams make_generator_shared(const GeneratorConfig& cfg, const std::string& prefix,
                                      ParamStore& store, const EncoderParams& shared_trunk,
                                      Rng& init) {
    cfg.validate();
    if (shared_trunk.cfg.n_layers != cfg.enc.n_layers ||
        shared_trunk.cfg.hidden_dim != cfg.enc.hidden_dim) {
        throw ConfigError("generator: shared trunk dims do not match gen config");
    }
    return attach_heads(cfg, prefix, store, shared_trunk, init);
}

GeneratorForward generator_forward(const GeneratorParams& p, const MaskedBatch& masked,
                                   int upto_exit) {
    const auto& cfg = p.cfg;
    const int n_exits = cfg.n_exits();
    if (upto_exit >= n_exits) upto_exit = -1;
    const int last_exit = upto_exit < 0 ? n_exits - 1 : upto_exit;
    const int upto_layer = cfg.exit_layers[size_t(last_exit)];

    EncoderActivations acts =
        encoder_forward(p.enc, masked.input_ids, masked.true_length, upto_layer);

    GeneratorForward fwd;
    fwd.available_exits = last_exit + 1;
    for (int j = 0; j <= last_exit; ++j) {
        fwd.exit_hidden.push_back(acts.layer_out[size_t(cfg.exit_layers[size_t(j)] - 1)]);
    }
    return fwd;
}

std::vector<Tensor> gather_exit_states(const GeneratorForward& fwd,
                                       const std::vector<int64_t>& selected_flat, int seq_len,
                                       int hidden_dim) {
    std::vector<Tensor> out;
    for (const Tensor& h : fwd.exit_hidden) {
        const int batch = h.dim(0);
        Tensor h2 = reshape(h, {batch * seq_len, hidden_dim});
        out.push_back(gather_rows(h2, selected_flat));
    }
    return out;
}

Tensor exit_head_logits(const GeneratorParams& p, const std::vector<Tensor>& exit_states,
                        int exit_idx) {
    if (exit_idx < 0 || exit_idx >= int(exit_states.size())) {
        throw ConfigError("exit_head_logits: exit index " + std::to_string(exit_idx) +
                          " not available (have " + std::to_string(exit_states.size()) + ")");
    }
    const ExitHeadParams& head = p.exits[size_t(exit_idx)];
    Tensor in;
    if (p.cfg.concat_exit_heads && exit_idx > 0) {
        std::vector<Tensor> parts(exit_states.begin(), exit_states.begin() + exit_idx + 1);
        in = concat_lastdim(parts);
    } else {
        in = exit_states[size_t(exit_idx)];
    }
    Tensor h = layer_norm(gelu(add(matmul(in, head.proj_w), head.proj_b)), head.ln_g, head.ln_b);
    return add(matmul_nt(h, p.enc.tok_emb), p.mlm_bias);
}

MlmLossResult mlm_loss(const std::vector<Tensor>& exit_logits, const std::vector<int32_t>& labels,
                       const std::vector<double>& exit_loss_weights) {
    if (exit_logits.empty()) throw ConfigError("mlm_loss: no exit logits");
    if (labels.empty()) throw DataError("mlm_loss: no labeled positions");
    if (exit_loss_weights.size() < exit_logits.size()) {
        throw ConfigError("mlm_loss: fewer weights than exits");
    }
    // normalize over the exits actually present (skip mode truncates the list)
    double wsum = 0.0;
    for (size_t j = 0; j < exit_logits.size(); ++j) wsum += exit_loss_weights[j];

    MlmLossResult res;
    for (size_t j = 0; j < exit_logits.size(); ++j) {
        Tensor ce = cross_entropy_mean(exit_logits[j], labels);
        res.per_exit.push_back(ce);
        Tensor w = scale(ce, float(exit_loss_weights[j] / wsum));
        res.total = j == 0 ? w : add(res.total, w);
    }
    return res;
}

std::vector<int32_t> gumbel_sample(const Tensor& logits, Rng& rng, bool add_noise) {
    const int k = logits.dim(0), v = logits.dim(1);
    std::vector<int32_t> out(static_cast<size_t>(k));
    const float* pl = logits.data();
    for (int r = 0; r < k; ++r) {
        const float* row = pl + size_t(r) * v;
        double best = -std::numeric_limits<double>::infinity();
        int32_t best_i = 0;
        for (int i = 0; i < v; ++i) {
            const double z = double(row[i]) + (add_noise ? rng.gumbel() : 0.0);
            if (z > best) {
                best = z;
                best_i = int32_t(i);
            }
        }
        out[size_t(r)] = best_i;
    }
    return out;
}

DiscInput build_discriminator_input(const MaskedBatch& masked,
                                    const std::vector<int32_t>& sampled_ids) {
    if (sampled_ids.size() != masked.selected_flat.size()) {
        throw ConfigError("build_discriminator_input: sampled id count " +
                          std::to_string(sampled_ids.size()) + " != selected position count " +
                          std::to_string(masked.selected_flat.size()));
    }
    const int t_len = masked.seq_len();
    DiscInput di;
    di.ids = masked.source_ids;
    di.labels.assign(masked.source_ids.size(), 0.0f);
    di.mask.assign(masked.source_ids.size(), 0.0f);
    for (int b = 0; b < masked.batch_size(); ++b) {
        const int tl = masked.true_length[size_t(b)];
        for (int t = 0; t < tl; ++t) di.mask[size_t(b) * t_len + size_t(t)] = 1.0f;
    }
    for (size_t i = 0; i < masked.selected_flat.size(); ++i) {
        const int64_t flat = masked.selected_flat[i];
        di.ids.v[size_t(flat)] = sampled_ids[i];
        if (sampled_ids[i] != masked.selected_original[i]) {
            di.labels[size_t(flat)] = 1.0f;  // replaced
        }
    }
    return di;
}

}  // namespace rtdlab
