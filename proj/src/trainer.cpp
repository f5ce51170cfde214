#include "rtdlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

namespace rtdlab {

Variant variant_from_string(const std::string& s) {
    if (s == "baseline") return Variant::kBaseline;
    if (s == "embgen") return Variant::kEmbGen;
    if (s == "embgen-pretrained") return Variant::kEmbGenPretrained;
    if (s == "early-exit-disc") return Variant::kEarlyExitDisc;
    if (s == "adaptive-gen") return Variant::kAdaptiveGen;
    throw ConfigError("unknown variant '" + s +
                      "' (expected baseline|embgen|embgen-pretrained|early-exit-disc|adaptive-gen)");
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::kBaseline: return "baseline";
        case Variant::kEmbGen: return "embgen";
        case Variant::kEmbGenPretrained: return "embgen-pretrained";
        case Variant::kEarlyExitDisc: return "early-exit-disc";
        case Variant::kAdaptiveGen: return "adaptive-gen";
    }
    return "?";
}

namespace {
bool uses_generator(Variant v) {
    return v == Variant::kBaseline || v == Variant::kEarlyExitDisc || v == Variant::kAdaptiveGen;
}
}  // namespace

Trainer::Trainer(Variant variant, const Config& cfg, const RecordStore& store)
    : variant_(variant), cfg_(cfg), store_(store) {
    const uint64_t seed = uint64_t(cfg.geti("train.seed"));
    window_ = cfg.geti("ctrl.window");
    batch_size_ = cfg.geti("train.batch_size");
    lambda_ = cfg.getf("train.lambda");
    mask_fraction_ = cfg.getf("mask.fraction");
    const auto mr = cfg.get_float_list("mask.ratios");
    if (mr.size() != 3) throw ConfigError("mask.ratios expects three values (mask,random,original)");
    ratios_ = MaskRatios{mr[0], mr[1], mr[2]};
    skip_above_exit_ = cfg.getb("gen.skip_above_exit");
    use_gumbel_ = cfg.getb("gen.gumbel");

    if (window_ < 1) throw ConfigError("ctrl.window must be >= 1");
    if (lambda_ < 0) throw ConfigError("train.lambda must be >= 0");
    if (cfg.geti("train.steps") <= window_) {
        throw ConfigError("train.steps must exceed the window length");
    }

    EncoderConfig base;
    base.hidden_dim = cfg.geti("model.hidden_dim");
    base.n_heads = cfg.geti("model.n_heads");
    base.ffn_dim = cfg.geti("model.ffn_dim");
    base.max_seq_len = store.max_seq_len();
    base.vocab_size = store.vocab_size();

    Rng init_rng(seed, 0);
    std::tie(tok_emb_, pos_emb_) = make_embeddings(base, params_, init_rng);

    DiscriminatorConfig dcfg;
    dcfg.enc = base;
    dcfg.enc.n_layers = cfg.geti("disc.n_layers");
    dcfg.n_sections = cfg.geti("disc.n_sections");
    dcfg.early_exit = variant == Variant::kEarlyExitDisc || cfg.getb("disc.early_exit");

    if (uses_generator(variant)) {
        GeneratorConfig gcfg;
        gcfg.enc = base;
        gcfg.enc.n_layers = cfg.geti("gen.n_layers");
        if (variant == Variant::kAdaptiveGen) {
            std::vector<int> exits = cfg.get_int_list("gen.exit_layers");
            gcfg.exit_layers = exits;
            gcfg.exit_loss_weights = cfg.get_float_list("gen.exit_loss_weights");
            gcfg.concat_exit_heads = cfg.getb("gen.concat_exit_heads");
            gcfg.skip_above_exit = skip_above_exit_;
            controller_ = ExitDistribution(cfg.get_float_list("ctrl.initial_p"),
                                           cfg.get_float_list("ctrl.reassignment_scores"),
                                           cfg.getf("ctrl.alpha"));
            if (controller_.p.size() != gcfg.exit_layers.size()) {
                throw ConfigError("ctrl.initial_p length must match gen.exit_layers");
            }
        } else {
            // top-exit-only generator
            gcfg.exit_layers = {gcfg.enc.n_layers};
            gcfg.exit_loss_weights = {1.0};
            gcfg.concat_exit_heads = false;
        }
        gcfg.gumbel = use_gumbel_;

        if (variant == Variant::kEarlyExitDisc) {
            if (gcfg.enc.n_layers != dcfg.enc.n_layers) {
                throw ConfigError("early-exit-disc: gen.n_layers must equal disc.n_layers for "
                                  "parameter sharing");
            }
            EncoderParams shared =
                make_encoder(gcfg.enc, "enc.", params_, tok_emb_, pos_emb_, init_rng);
            gen_ = make_generator_shared(gcfg, "gen.", params_, shared, init_rng);
            disc_ = make_discriminator_shared(dcfg, "disc.", params_, shared);
            section_state_ = SectionState(dcfg.n_sections);
        } else {
            gen_ = make_generator(gcfg, "gen.", params_, tok_emb_, pos_emb_, init_rng);
            disc_ = make_discriminator(dcfg, "disc.", params_, tok_emb_, pos_emb_, init_rng);
        }
    } else {
        rep_cfg_.mode = cfg.gets("embgen.mode") == "noise" ? ReplaceMode::kNoise : ReplaceMode::kTopk;
        if (cfg.gets("embgen.mode") != "noise" && cfg.gets("embgen.mode") != "topk") {
            throw ConfigError("embgen.mode must be 'topk' or 'noise'");
        }
        rep_cfg_.k = cfg.geti("embgen.k");
        rep_cfg_.noise_sigma = cfg.getf("embgen.sigma");
        rep_cfg_.aux_loss_coeff = cfg.getf("embgen.aux_coeff");
        rep_cfg_.frozen_embeddings_path = cfg.gets("embgen.frozen_embeddings_path");
        rep_cfg_.validate(base.vocab_size);
        disc_ = make_discriminator(dcfg, "disc.", params_, tok_emb_, pos_emb_, init_rng);

        if (variant == Variant::kEmbGenPretrained) {
            if (rep_cfg_.frozen_embeddings_path.empty()) {
                throw ConfigError("embgen-pretrained requires embgen.frozen_embeddings_path");
            }
            const NamedTensors nt = load_tensors(rep_cfg_.frozen_embeddings_path);
            bool found_tok = false, found_pos = false;
            for (const auto& [name, t] : nt.items) {
                if (name == "emb.tok") {
                    if (t.shape() != tok_emb_.shape()) {
                        throw IoError("frozen embeddings: shape mismatch for 'emb.tok': " +
                                      shape_str(t.shape()) + " vs " + shape_str(tok_emb_.shape()));
                    }
                    std::copy(t.data(), t.data() + t.size(), tok_emb_.data());
                    found_tok = true;
                } else if (name == "emb.pos") {
                    if (t.shape() != pos_emb_.shape()) {
                        throw IoError("frozen embeddings: shape mismatch for 'emb.pos'");
                    }
                    std::copy(t.data(), t.data() + t.size(), pos_emb_.data());
                    found_pos = true;
                }
            }
            if (!found_tok || !found_pos) {
                throw IoError("frozen embeddings: checkpoint lacks emb.tok/emb.pos");
            }
            tok_emb_.set_requires_grad(false);
            pos_emb_.set_requires_grad(false);
        }
    }

    AdamConfig acfg;
    acfg.lr = float(cfg.getf("train.lr"));
    acfg.warmup_steps = cfg.geti("train.warmup_steps");
    acfg.total_steps = cfg.geti("train.steps");
    adam_ = std::make_unique<Adam>(params_, acfg);

    batcher_ = std::make_unique<Batcher>(store_, batch_size_, Rng(seed, 1));
    mask_rng_ = Rng(seed, 2);
    gumbel_rng_ = Rng(seed, 3);
    ctrl_rng_ = Rng(seed, 4);
    embgen_rng_ = Rng(seed, 5);

    const size_t n_exits = gen_ ? size_t(gen_->cfg.n_exits()) : 0;
    win_.exit_rtd_correct.assign(n_exits, 0.0);
    win_.exit_rtd_scored.assign(n_exits, 0.0);
    win_.exit_mlm_correct.assign(n_exits, 0.0);
    win_.exit_mlm_scored.assign(n_exits, 0.0);
}

StepMetrics Trainer::train_step() {
    if (win_.steps == 0) win_.started = std::chrono::steady_clock::now();
    return uses_generator(variant_) ? step_generator_variant() : step_embgen_variant();
}

StepMetrics Trainer::step_generator_variant() {
    const Batch batch = crop_to_content(batcher_->next());
    last_batch_ = batch;
    const int t_len = batch.seq_len();
    const int d = gen_->cfg.enc.hidden_dim;
    MaskedBatch masked = apply_mlm_mask(batch, mask_rng_, ratios_, mask_fraction_,
                                        gen_->cfg.enc.vocab_size);

    const int n_exits = gen_->cfg.n_exits();
    const int exit_idx =
        variant_ == Variant::kAdaptiveGen ? sample_exit(controller_, ctrl_rng_) : n_exits - 1;
    const int upto = (variant_ == Variant::kAdaptiveGen && skip_above_exit_) ? exit_idx : -1;

    GeneratorForward fwd = generator_forward(*gen_, masked, upto);
    std::vector<Tensor> states = gather_exit_states(fwd, masked.selected_flat, t_len, d);
    std::vector<Tensor> exit_logits;
    for (int j = 0; j < fwd.available_exits; ++j) {
        exit_logits.push_back(exit_head_logits(*gen_, states, j));
    }
    MlmLossResult mlm =
        mlm_loss(exit_logits, masked.selected_original, gen_->cfg.exit_loss_weights);

    // per-exit MLM accuracy
    for (int j = 0; j < fwd.available_exits; ++j) {
        const auto pred = argmax_lastdim(exit_logits[size_t(j)]);
        int64_t correct = 0;
        for (size_t i = 0; i < pred.size(); ++i) {
            if (int32_t(pred[i]) == masked.selected_original[i]) ++correct;
        }
        win_.exit_mlm_correct[size_t(j)] += double(correct);
        win_.exit_mlm_scored[size_t(j)] += double(pred.size());
    }

    const std::vector<int32_t> sampled =
        gumbel_sample(exit_logits[size_t(exit_idx)], gumbel_rng_, use_gumbel_);
    const DiscInput di = build_discriminator_input(masked, sampled);

    StepMetrics m;
    m.sampled_exit = exit_idx;
    Tensor l_disc;
    if (variant_ == Variant::kEarlyExitDisc) {
        const SectionForward sf =
            rtd_forward_sections(*disc_, di.ids, batch.true_length, section_state_.active_section);
        Tensor sum;
        for (int s = 0; s < disc_->cfg.n_sections; ++s) {
            Tensor bce = rtd_loss(sf.logits[size_t(s)], di.labels, di.mask);
            sum = s == 0 ? bce : add(sum, bce);
            const auto [c, n] = rtd_accuracy_counts(sf.logits[size_t(s)], di.labels, di.mask);
            section_state_.accumulate(s, c, n);
            if (s + 1 == sf.active_section) {
                win_.rtd_correct += double(c);
                win_.rtd_scored += double(n);
                m.rtd_acc = n ? double(c) / double(n) : NAN;
            }
        }
        l_disc = scale(sum, 1.0f / float(disc_->cfg.n_sections));
    } else {
        Tensor dl = rtd_forward(*disc_, di.ids, batch.true_length);
        l_disc = rtd_loss(dl, di.labels, di.mask);
        const auto [c, n] = rtd_accuracy_counts(dl, di.labels, di.mask);
        win_.rtd_correct += double(c);
        win_.rtd_scored += double(n);
        win_.exit_rtd_correct[size_t(exit_idx)] += double(c);
        win_.exit_rtd_scored[size_t(exit_idx)] += double(n);
        m.rtd_acc = n ? double(c) / double(n) : NAN;
    }

    Tensor graph_total = add(mlm.total, scale(l_disc, float(lambda_)));
    m.loss_mlm = double(mlm.total.item());
    m.loss_disc = double(l_disc.item());
    m.loss_aux = 0.0;
    m.loss_total = m.loss_mlm + lambda_ * m.loss_disc;
    finish_step(graph_total, m);
    return m;
}

StepMetrics Trainer::step_embgen_variant() {
    const Batch batch = crop_to_content(batcher_->next());
    last_batch_ = batch;
    MaskedBatch masked =
        apply_mlm_mask(batch, mask_rng_, ratios_, mask_fraction_, disc_->cfg.enc.vocab_size);

    StepMetrics m;
    Tensor l_disc, l_aux;
    if (rep_cfg_.mode == ReplaceMode::kTopk) {
        const TopkReplaceResult tr = topk_replace(masked, tok_emb_, rep_cfg_.k, embgen_rng_);
        Tensor dl = rtd_forward(*disc_, tr.disc_input.ids, batch.true_length);
        l_disc = rtd_loss(dl, tr.disc_input.labels, tr.disc_input.mask);
        l_aux = aux_embedding_loss(tok_emb_, masked.selected_original, tr.replacement_ids);
        const auto [c, n] = rtd_accuracy_counts(dl, tr.disc_input.labels, tr.disc_input.mask);
        win_.rtd_correct += double(c);
        win_.rtd_scored += double(n);
        m.rtd_acc = n ? double(c) / double(n) : NAN;
    } else {
        const NoiseReplaceResult nr =
            noise_replace(masked, tok_emb_, rep_cfg_.noise_sigma, embgen_rng_);
        Tensor dl =
            rtd_forward(*disc_, masked.source_ids, batch.true_length, -1, nr.token_stream);
        l_disc = rtd_loss(dl, nr.labels, nr.mask);
        l_aux = Tensor::scalar(0.0f);
        const auto [c, n] = rtd_accuracy_counts(dl, nr.labels, nr.mask);
        win_.rtd_correct += double(c);
        win_.rtd_scored += double(n);
        m.rtd_acc = n ? double(c) / double(n) : NAN;
    }

    Tensor graph_total = add(scale(l_disc, float(lambda_)),
                             scale(l_aux, float(rep_cfg_.aux_loss_coeff)));
    m.loss_mlm = 0.0;
    m.loss_disc = double(l_disc.item());
    m.loss_aux = double(l_aux.item());
    m.loss_total = lambda_ * m.loss_disc + rep_cfg_.aux_loss_coeff * m.loss_aux;
    finish_step(graph_total, m);
    return m;
}

void Trainer::finish_step(const Tensor& graph_total, StepMetrics& m) {
    if (!std::isfinite(m.loss_total)) {
        dump_batch_diagnostics(last_batch_);
        throw NonFiniteError("train_step: non-finite loss at step " + std::to_string(step_ + 1));
    }
    try {
        if (graph_total.requires_grad()) {
            backward(graph_total);
            adam_->step();
        }
    } catch (const NonFiniteError&) {
        dump_batch_diagnostics(last_batch_);
        throw;
    }
    ++step_;
    ++win_.steps;
    win_.loss_total += m.loss_total;
    win_.loss_mlm += m.loss_mlm;
    win_.loss_disc += m.loss_disc;
    win_.loss_aux += m.loss_aux;
}

void Trainer::dump_batch_diagnostics(const Batch& b) const {
    std::cerr << "=== aborting batch (step " << (step_ + 1) << ", variant "
              << variant_name(variant_) << ") ===\n";
    for (int i = 0; i < b.batch_size(); ++i) {
        std::cerr << "seq " << i << " len " << b.true_length[size_t(i)] << ":";
        for (int t = 0; t < b.true_length[size_t(i)]; ++t) std::cerr << " " << b.ids.at(i, t);
        std::cerr << "\n";
    }
}

WindowMetrics Trainer::close_window() {
    WindowMetrics wm;
    wm.step = step_;
    wm.variant = variant_name(variant_);
    const double steps = double(win_.steps);
    wm.loss_total = win_.loss_total / steps;
    wm.loss_mlm = win_.loss_mlm / steps;
    wm.loss_disc = win_.loss_disc / steps;
    wm.loss_aux = win_.loss_aux / steps;
    wm.rtd_acc = win_.rtd_scored > 0 ? win_.rtd_correct / win_.rtd_scored : NAN;
    for (size_t j = 0; j < win_.exit_rtd_scored.size(); ++j) {
        wm.rtd_acc_per_exit.push_back(
            win_.exit_rtd_scored[j] > 0 ? win_.exit_rtd_correct[j] / win_.exit_rtd_scored[j] : NAN);
        wm.mlm_acc_per_exit.push_back(
            win_.exit_mlm_scored[j] > 0 ? win_.exit_mlm_correct[j] / win_.exit_mlm_scored[j] : NAN);
    }

    if (variant_ == Variant::kAdaptiveGen) {
        controller_update(controller_, wm.rtd_acc);
        wm.p_vector = controller_.p;
    }
    if (variant_ == Variant::kEarlyExitDisc) {
        wm.rtd_acc_per_section = update_section_exit(section_state_);
        wm.active_section = section_state_.active_section;
        wm.threshold = section_state_.threshold;
    }

    const auto now = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(now - win_.started).count();
    wm.steps_per_sec = steps / std::max(secs, 1e-9);

    win_.loss_total = win_.loss_mlm = win_.loss_disc = win_.loss_aux = 0.0;
    win_.steps = 0;
    win_.rtd_correct = win_.rtd_scored = 0.0;
    std::fill(win_.exit_rtd_correct.begin(), win_.exit_rtd_correct.end(), 0.0);
    std::fill(win_.exit_rtd_scored.begin(), win_.exit_rtd_scored.end(), 0.0);
    std::fill(win_.exit_mlm_correct.begin(), win_.exit_mlm_correct.end(), 0.0);
    std::fill(win_.exit_mlm_scored.begin(), win_.exit_mlm_scored.end(), 0.0);
    return wm;
}

std::vector<WindowMetrics> Trainer::run(int64_t n_steps, std::ostream* metrics_stream) {
    std::vector<WindowMetrics> out;
    for (int64_t i = 0; i < n_steps; ++i) {
        train_step();
        if (step_ % window_ == 0) {
            WindowMetrics wm = close_window();
            if (metrics_stream) {
                (*metrics_stream) << wm.to_json().dump() << "\n";
                metrics_stream->flush();
            }
            out.push_back(std::move(wm));
        }
    }
    return out;
}

nlohmann::json Trainer::Window::save_state() const {
    nlohmann::json j;
    j["loss_total"] = loss_total;
    j["loss_mlm"] = loss_mlm;
    j["loss_disc"] = loss_disc;
    j["loss_aux"] = loss_aux;
    j["steps"] = steps;
    j["rtd_correct"] = rtd_correct;
    j["rtd_scored"] = rtd_scored;
    j["exit_rtd_correct"] = exit_rtd_correct;
    j["exit_rtd_scored"] = exit_rtd_scored;
    j["exit_mlm_correct"] = exit_mlm_correct;
    j["exit_mlm_scored"] = exit_mlm_scored;
    return j;
}

void Trainer::Window::restore_state(const nlohmann::json& j) {
    loss_total = j.at("loss_total").get<double>();
    loss_mlm = j.at("loss_mlm").get<double>();
    loss_disc = j.at("loss_disc").get<double>();
    loss_aux = j.at("loss_aux").get<double>();
    steps = j.at("steps").get<int64_t>();
    rtd_correct = j.at("rtd_correct").get<double>();
    rtd_scored = j.at("rtd_scored").get<double>();
    exit_rtd_correct = j.at("exit_rtd_correct").get<std::vector<double>>();
    exit_rtd_scored = j.at("exit_rtd_scored").get<std::vector<double>>();
    exit_mlm_correct = j.at("exit_mlm_correct").get<std::vector<double>>();
    exit_mlm_scored = j.at("exit_mlm_scored").get<std::vector<double>>();
}

void Trainer::save_checkpoint(const std::string& path) const {
    NamedTensors nt;
    nt.items = params_.items();
    for (auto& e : adam_->state_tensors()) nt.items.push_back(std::move(e));
    nt.meta["kind"] = "rtdlab-checkpoint";
    nt.meta["variant"] = variant_name(variant_);
    nt.meta["step"] = step_;
    nt.meta["adam_step"] = adam_->step_count();
    nt.meta["rng"] = {{"mask", mask_rng_.save_state()},
                      {"gumbel", gumbel_rng_.save_state()},
                      {"ctrl", ctrl_rng_.save_state()},
                      {"embgen", embgen_rng_.save_state()}};
    nt.meta["batcher"] = batcher_->save_state();
    nt.meta["controller"] = controller_.save_state();
    nt.meta["sections"] = section_state_.save_state();
    nt.meta["window"] = win_.save_state();
    save_tensors(path, nt);
}

void Trainer::load_checkpoint(const std::string& path) {
    const NamedTensors nt = load_tensors(path);
    if (nt.meta.value("kind", "") != "rtdlab-checkpoint") {
        throw IoError("checkpoint " + path + " is not a trainer checkpoint");
    }
    const std::string v = nt.meta.value("variant", "");
    if (v != variant_name(variant_)) {
        throw IoError("checkpoint " + path + " was written by variant '" + v +
                      "', trainer is '" + variant_name(variant_) + "'");
    }
    params_.load_from(nt);
    adam_->load_state(nt, nt.meta.at("adam_step").get<int64_t>());
    step_ = nt.meta.at("step").get<int64_t>();
    mask_rng_.restore_state(nt.meta.at("rng").at("mask").get<std::string>());
    gumbel_rng_.restore_state(nt.meta.at("rng").at("gumbel").get<std::string>());
    ctrl_rng_.restore_state(nt.meta.at("rng").at("ctrl").get<std::string>());
    embgen_rng_.restore_state(nt.meta.at("rng").at("embgen").get<std::string>());
    batcher_->restore_state(nt.meta.at("batcher"));
    controller_.restore_state(nt.meta.at("controller"));
    section_state_.restore_state(nt.meta.at("sections"));
    win_.restore_state(nt.meta.at("window"));
}

std::vector<BenchRow> measure_throughput(const std::vector<Variant>& variants, const Config& cfg,
                                         const RecordStore& store, int measured_windows,
                                         int warmup_windows, std::ostream* log) {
    std::vector<BenchRow> rows;
    const int window = cfg.geti("ctrl.window");
    const int64_t total = int64_t(warmup_windows + measured_windows) * window;
    for (Variant v : variants) {
        BenchRow row;
        row.variant = v;
        try {
            Config c = cfg;
            // trunk skipping is the throughput mode of the adaptive variant
            if (v == Variant::kAdaptiveGen) c.set("gen.skip_above_exit", "true");
            c.set("train.steps", std::to_string(total + 1));
            Trainer t(v, c, store);
            if (log) (*log) << "bench: running " << variant_name(v) << " for " << total
                            << " steps\n";
            const auto wins = t.run(total);
            std::vector<double> sps;
            for (size_t i = size_t(warmup_windows); i < wins.size(); ++i) {
                sps.push_back(wins[i].steps_per_sec);
            }
            std::sort(sps.begin(), sps.end());
            row.steps_per_sec = sps[sps.size() / 2];
            row.ok = true;
        } catch (const std::exception& e) {
            row.note = e.what();
        }
        rows.push_back(std::move(row));
    }
    double baseline_sps = 0.0;
    for (const auto& r : rows) {
        if (r.variant == Variant::kBaseline && r.ok) baseline_sps = r.steps_per_sec;
    }
    for (auto& r : rows) {
        if (r.ok && baseline_sps > 0) r.ratio = r.steps_per_sec / baseline_sps;
    }
    return rows;
}

std::string format_bench_table(const std::vector<BenchRow>& rows) {
    std::ostringstream os;
    os << "variant              steps/sec    ratio\n";
    for (const auto& r : rows) {
        os << variant_name(r.variant);
        for (size_t i = variant_name(r.variant).size(); i < 21; ++i) os << ' ';
        if (r.ok) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%-12.3f %.2fx", r.steps_per_sec, r.ratio);
            os << buf;
        } else {
            os << "failed: " << r.note;
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace rtdlab
