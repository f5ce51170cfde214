#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <ostream>

#include "rtdlab/batcher.hpp"
#include "rtdlab/config.hpp"
#include "rtdlab/discriminator.hpp"
#include "rtdlab/emb_gen.hpp"
#include "rtdlab/exit_controller.hpp"
#include "rtdlab/generator.hpp"
#include "rtdlab/metrics.hpp"

namespace rtdlab {

enum class Variant { kBaseline, kEmbGen, kEmbGenPretrained, kEarlyExitDisc, kAdaptiveGen };

Variant variant_from_string(const std::string& s);
std::string variant_name(Variant v);

struct StepMetrics {
    double loss_total = 0.0, loss_mlm = 0.0, loss_disc = 0.0, loss_aux = 0.0;
    double rtd_acc = NAN;
    int sampled_exit = -1;  // 0-based, adaptive/baseline
};

// Owns all mutable training state for one variant: parameters, optimizer,
// rng streams, controller/section state, and the open metrics window.
class Trainer {
public:
    Trainer(Variant variant, const Config& cfg, const RecordStore& store);

    StepMetrics train_step();
    // Runs n steps (continuing from the current position), closing a window
    // every ctrl.window steps. Each closed window is appended to the returned
    // vector and, when given, written as a JSON line.
    std::vector<WindowMetrics> run(int64_t n_steps, std::ostream* metrics_stream = nullptr);

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

    Variant variant() const { return variant_; }
    int64_t step() const { return step_; }
    int window_len() const { return window_; }
    const ParamStore& params() const { return params_; }
    ParamStore& params() { return params_; }
    const ExitDistribution& controller() const { return controller_; }
    const SectionState& section_state() const { return section_state_; }
    const GeneratorParams* generator() const { return gen_ ? &*gen_ : nullptr; }
    const DiscriminatorParams* discriminator() const { return disc_ ? &*disc_ : nullptr; }
    Tensor token_embeddings() const { return tok_emb_; }

private:
    WindowMetrics close_window();
    StepMetrics step_generator_variant();  // baseline / adaptive / early-exit-disc
    StepMetrics step_embgen_variant();
    void finish_step(const Tensor& graph_total, StepMetrics& m);
    void dump_batch_diagnostics(const Batch& b) const;

    Variant variant_;
    Config cfg_;
    const RecordStore& store_;

    // digested config
    int window_ = 100;
    int batch_size_ = 32;
    double lambda_ = 50.0;
    double mask_fraction_ = 0.15;
    MaskRatios ratios_;
    bool skip_above_exit_ = false;
    bool use_gumbel_ = true;
    ReplacementConfig rep_cfg_;

    ParamStore params_;
    Tensor tok_emb_, pos_emb_;
    std::optional<GeneratorParams> gen_;
    std::optional<DiscriminatorParams> disc_;
    std::unique_ptr<Adam> adam_;

    Rng mask_rng_, gumbel_rng_, ctrl_rng_, embgen_rng_;
    std::unique_ptr<Batcher> batcher_;

    ExitDistribution controller_;
    SectionState section_state_;

    int64_t step_ = 0;

    // open-window accumulators
    struct Window {
        double loss_total = 0, loss_mlm = 0, loss_disc = 0, loss_aux = 0;
        int64_t steps = 0;
        double rtd_correct = 0, rtd_scored = 0;
        std::vector<double> exit_rtd_correct, exit_rtd_scored;
        std::vector<double> exit_mlm_correct, exit_mlm_scored;
        std::chrono::steady_clock::time_point started;
        nlohmann::json save_state() const;
        void restore_state(const nlohmann::json& j);
    } win_;
    Batch last_batch_;  // for the non-finite diagnostic dump
};

// Per-variant median steps/sec under one config, ratios against the baseline.
struct BenchRow {
    Variant variant;
    bool ok = false;
    double steps_per_sec = 0.0;
    double ratio = 0.0;
    std::string note;
};

// Runs each variant for warmup + measured windows with identical data and
// batch geometry; Adaptive (Gen) runs in skip mode. A variant that fails is
// reported with a note instead of aborting the table.
std::vector<BenchRow> measure_throughput(const std::vector<Variant>& variants, const Config& cfg,
                                         const RecordStore& store, int measured_windows = 5,
                                         int warmup_windows = 1, std::ostream* log = nullptr);

std::string format_bench_table(const std::vector<BenchRow>& rows);

}  // namespace rtdlab
