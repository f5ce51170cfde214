// rtd-lab: build data, train RTD variants, benchmark throughput, export plots.
// Exit codes: 0 success, 1 usage error, 2 runtime failure. Logs go to stderr,
// data to files.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "rtdlab/config.hpp"
#include "rtdlab/metrics.hpp"
#include "rtdlab/record_store.hpp"
#include "rtdlab/synth.hpp"
#include "rtdlab/trainer.hpp"

namespace {

std::string config_key_help() {
    std::string out = "Config keys (file `key = value` lines; --set overrides):\n";
    for (const auto& k : rtdlab::Config::registry()) {
        out += "  ";
        out += k.key;
        out += " (default: ";
        out += k.default_value[0] ? k.default_value : "empty";
        out += ") ";
        out += k.help;
        out += "\n";
    }
    return out;
}

rtdlab::Config resolve_config(const std::string& config_path,
                              const std::vector<std::string>& sets) {
    rtdlab::Config cfg = rtdlab::Config::defaults();
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& kv : sets) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            throw rtdlab::ConfigError("--set expects key=value, got '" + kv + "'");
        }
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t") + 1);
            return s;
        };
        cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    return cfg;
}

std::string records_path_from(const std::string& data) {
    if (data.size() > 8 && data.substr(data.size() - 8) == ".records") return data;
    return data + ".records";
}

void write_export_csvs(const std::vector<rtdlab::WindowMetrics>& wins, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    size_t max_exits = 0, max_p = 0;
    for (const auto& w : wins) {
        max_exits = std::max(max_exits, w.rtd_acc_per_exit.size());
        max_p = std::max(max_p, w.p_vector.size());
    }

    auto cell = [](double v) { return std::isnan(v) ? std::string() : std::to_string(v); };

    {
        std::ofstream f(out_dir + "/rtd_acc_per_exit.csv");
        f << "variant,step";
        for (size_t j = 0; j < max_exits; ++j) f << ",exit" << (j + 1);
        f << "\n";
        for (const auto& w : wins) {
            f << w.variant << "," << w.step;
            for (size_t j = 0; j < max_exits; ++j) {
                f << "," << (j < w.rtd_acc_per_exit.size() ? cell(w.rtd_acc_per_exit[j]) : "");
            }
            f << "\n";
        }
    }
    {
        std::ofstream f(out_dir + "/mlm_acc_per_exit.csv");
        f << "variant,step";
        for (size_t j = 0; j < max_exits; ++j) f << ",exit" << (j + 1);
        f << "\n";
        for (const auto& w : wins) {
            f << w.variant << "," << w.step;
            for (size_t j = 0; j < max_exits; ++j) {
                f << "," << (j < w.mlm_acc_per_exit.size() ? cell(w.mlm_acc_per_exit[j]) : "");
            }
            f << "\n";
        }
    }
    {
        std::ofstream f(out_dir + "/p_vector.csv");
        f << "variant,step";
        for (size_t j = 0; j < max_p; ++j) f << ",p" << (j + 1);
        f << "\n";
        for (const auto& w : wins) {
            f << w.variant << "," << w.step;
            for (size_t j = 0; j < max_p; ++j) {
                f << "," << (j < w.p_vector.size() ? cell(w.p_vector[j]) : "");
            }
            f << "\n";
        }
    }
    {
        // Table-2 style throughput block: per-variant median, ratio vs baseline
        std::map<std::string, std::vector<double>> sps;
        for (const auto& w : wins) sps[w.variant].push_back(w.steps_per_sec);
        std::map<std::string, double> median;
        for (auto& [v, xs] : sps) {
            std::sort(xs.begin(), xs.end());
            median[v] = xs[xs.size() / 2];
        }
        const double base = median.count("baseline") ? median["baseline"] : 0.0;
        std::ofstream f(out_dir + "/steps_per_sec.csv");
        f << "variant,steps_per_sec,ratio\n";
        for (const auto& [v, m] : median) {
            f << v << "," << m << ",";
            if (base > 0) f << (m / base);
            f << "\n";
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rtd-lab: desk-scale replaced-token-detection pre-training lab"};
    app.require_subcommand(1);
    app.footer(config_key_help());

    // build-data
    auto* build = app.add_subcommand("build-data", "tokenize a corpus into a record store");
    std::string corpus, out_prefix;
    int vocab_size = 8192, seq_len = 128;
    build->add_option("--corpus", corpus, "input text, one document per line")->required();
    build->add_option("--out", out_prefix, "output prefix for .vocab/.records")->required();
    build->add_option("--vocab-size", vocab_size, "vocabulary cap incl. reserved tokens");
    build->add_option("--seq-len", seq_len, "fixed record length");

    // train
    auto* train = app.add_subcommand("train", "train one variant");
    std::string variant_s, config_path, data, metrics_path, save_path, resume_path;
    std::vector<std::string> sets;
    long long seed = -1, steps = -1;
    train->add_option("--variant", variant_s,
                      "baseline|embgen|embgen-pretrained|early-exit-disc|adaptive-gen")
        ->required();
    train->add_option("--data", data, "record store (prefix or .records path)")->required();
    train->add_option("--config", config_path, "config file");
    train->add_option("--seed", seed, "overrides train.seed");
    train->add_option("--steps", steps, "overrides train.steps");
    train->add_option("--metrics", metrics_path, "metrics JSONL output path");
    train->add_option("--save", save_path, "write a checkpoint at the end");
    train->add_option("--resume", resume_path, "resume from a checkpoint");
    train->add_option("--set", sets, "config override key=value (repeatable)");

    // bench
    auto* bench = app.add_subcommand("bench", "compare steps/sec across variants");
    std::string bench_variants = "baseline,embgen,early-exit-disc,adaptive-gen";
    std::string bench_data, bench_config, bench_out;
    std::vector<std::string> bench_sets;
    long long bench_steps = 600, bench_seed = -1;
    bench->add_option("--data", bench_data, "record store (prefix or .records path)")->required();
    bench->add_option("--variants", bench_variants, "comma-separated variant list");
    bench->add_option("--steps", bench_steps, "steps per variant (first window is warmup)");
    bench->add_option("--config", bench_config, "config file");
    bench->add_option("--seed", bench_seed, "overrides train.seed");
    bench->add_option("--out", bench_out, "also write the table to this file");
    bench->add_option("--set", bench_sets, "config override key=value (repeatable)");

    // export-plots
    auto* expo = app.add_subcommand("export-plots", "emit plot-ready CSV series from a metrics log");
    std::string exp_metrics, exp_out;
    expo->add_option("--metrics", exp_metrics, "metrics JSONL file")->required();
    expo->add_option("--out", exp_out, "output directory")->required();

    // synth-corpus (utility for reproducing the experiments)
    auto* synth = app.add_subcommand("synth-corpus", "write a synthetic training corpus");
    std::string synth_out;
    long long synth_bytes = 1 << 20, synth_seed = 0, synth_words = 2000;
    int synth_min_len = 8, synth_max_len = 20;
    synth->add_option("--out", synth_out, "output text path")->required();
    synth->add_option("--bytes", synth_bytes, "approximate size");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--words", synth_words, "synthetic vocabulary size");
    synth->add_option("--min-sentence", synth_min_len, "minimum words per line");
    synth->add_option("--max-sentence", synth_max_len, "maximum words per line");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*build) {
            const auto res = rtdlab::build_store(corpus, out_prefix, vocab_size, seq_len);
            std::cerr << "wrote " << res.records_path << " (" << res.record_count << " records), "
                      << res.vocab_path << " (" << res.vocab_size << " tokens)\n";
            return 0;
        }
        if (*train) {
            const rtdlab::Variant v = rtdlab::variant_from_string(variant_s);
            rtdlab::Config cfg = resolve_config(config_path, sets);
            if (seed >= 0) cfg.set("train.seed", std::to_string(seed));
            if (steps > 0) cfg.set("train.steps", std::to_string(steps));
            const auto store = rtdlab::RecordStore::open(records_path_from(data));
            rtdlab::Trainer trainer(v, cfg, store);
            int64_t start_step = 0;
            if (!resume_path.empty()) {
                trainer.load_checkpoint(resume_path);
                start_step = trainer.step();
                std::cerr << "resumed from " << resume_path << " at step " << start_step << "\n";
            }
            if (metrics_path.empty()) metrics_path = variant_s + "-metrics.jsonl";
            std::ofstream mf(metrics_path, start_step > 0 ? std::ios::app : std::ios::trunc);
            if (!mf) throw rtdlab::IoError("cannot open metrics file " + metrics_path);
            const int64_t total = cfg.geti("train.steps");
            std::cerr << "training " << variant_s << " for " << (total - start_step)
                      << " steps (metrics: " << metrics_path << ")\n";
            const auto wins = trainer.run(total - start_step, &mf);
            if (!wins.empty()) {
                const auto& w = wins.back();
                std::cerr << "final window: loss " << w.loss_total << ", rtd_acc " << w.rtd_acc
                          << ", steps/sec " << w.steps_per_sec << "\n";
            }
            if (!save_path.empty()) {
                trainer.save_checkpoint(save_path);
                std::cerr << "checkpoint: " << save_path << "\n";
            }
            return 0;
        }
        if (*bench) {
            rtdlab::Config cfg = resolve_config(bench_config, bench_sets);
            if (bench_seed >= 0) cfg.set("train.seed", std::to_string(bench_seed));
            const auto store = rtdlab::RecordStore::open(records_path_from(bench_data));
            std::vector<rtdlab::Variant> vs;
            std::stringstream ss(bench_variants);
            std::string item;
            while (std::getline(ss, item, ',')) {
                if (!item.empty()) vs.push_back(rtdlab::variant_from_string(item));
            }
            const int window = cfg.geti("ctrl.window");
            if (bench_steps < 2 * window) {
                throw rtdlab::ConfigError("bench needs --steps >= two windows (" +
                                          std::to_string(2 * window) + ")");
            }
            const int measured = int(bench_steps / window) - 1;
            const auto rows = rtdlab::measure_throughput(vs, cfg, store, measured, 1, &std::cerr);
            const std::string table = rtdlab::format_bench_table(rows);
            std::cout << table;
            if (!bench_out.empty()) {
                std::ofstream f(bench_out);
                f << table;
            }
            return 0;
        }
        if (*expo) {
            const auto wins = rtdlab::read_metrics_file(exp_metrics);
            write_export_csvs(wins, exp_out);
            std::cerr << "wrote CSV series for " << wins.size() << " windows to " << exp_out
                      << "\n";
            return 0;
        }
        if (*synth) {
            rtdlab::make_synthetic_corpus(synth_out, synth_bytes, uint64_t(synth_seed),
                                          int(synth_words), synth_min_len, synth_max_len);
            std::cerr << "wrote " << synth_out << "\n";
            return 0;
        }
    } catch (const rtdlab::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
