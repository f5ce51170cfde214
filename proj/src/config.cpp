#include "rtdlab/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace rtdlab {

const std::vector<ConfigKeyInfo>& Config::registry() {
    static const std::vector<ConfigKeyInfo> keys = {
        // model dimensions (shared by generator and discriminator; the token
        // embedding table is shared so the hidden size must agree)
        {"model.hidden_dim", "64", "hidden width of both trunks"},
        {"model.n_heads", "4", "attention heads"},
        {"model.ffn_dim", "256", "feed-forward inner width"},

        // generator
        {"gen.n_layers", "4", "generator trunk depth"},
        {"gen.exit_layers", "1,2,3,4", "ascending exit layers; last must equal gen.n_layers"},
        {"gen.exit_loss_weights", "0.1,0.2,0.3,0.4", "per-exit MLM loss weights (normalized)"},
        {"gen.skip_above_exit", "false", "throughput mode: stop the trunk at the sampled exit"},
        {"gen.concat_exit_heads", "true", "exit head j sees concat of exit hiddens 1..j"},
        {"gen.gumbel", "true", "add Gumbel noise before sampling (off = plain argmax)"},

        // discriminator
        {"disc.n_layers", "4", "discriminator trunk depth"},
        {"disc.n_sections", "4", "early-exit sections (must divide disc.n_layers)"},
        {"disc.early_exit", "false", "section-based early exit"},
        {"disc.share_params_with_gen", "false", "generator and discriminator share one trunk"},

        // adaptive exit controller
        {"ctrl.alpha", "0.1", "reassignment scale"},
        {"ctrl.initial_p", "0.1,0.2,0.3,0.4", "initial exit distribution"},
        {"ctrl.reassignment_scores", "0,1,2,3", "per-exit reassignment scores"},
        {"ctrl.window", "100", "accuracy window length in steps"},

        // masking
        {"mask.fraction", "0.15", "fraction of content tokens selected for MLM"},
        {"mask.ratios", "0.85,0.0,0.15", "mask/random/original split over selected tokens"},

        // embedding-space generator replacement
        {"embgen.mode", "topk", "topk | noise"},
        {"embgen.k", "10", "nearest-neighbor pool size"},
        {"embgen.sigma", "1.0", "noise stddev (noise mode)"},
        {"embgen.aux_coeff", "1.0", "weight of the embedding-distance auxiliary loss"},
        {"embgen.frozen_embeddings_path", "", "checkpoint supplying a frozen embedding table"},

        // training
        {"train.steps", "2000", "total optimizer steps"},
        {"train.batch_size", "32", "sequences per step"},
        {"train.lambda", "50", "discriminator loss weight"},
        {"train.lr", "5e-4", "peak learning rate"},
        {"train.warmup_steps", "100", "linear warmup length"},
        {"train.seed", "0", "master seed"},
    };
    return keys;
}

Config Config::defaults() {
    Config c;
    for (const auto& k : registry()) c.values_[k.key] = k.default_value;
    return c;
}

namespace {
std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}
}  // namespace

void Config::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                              ": expected 'key = value'");
        }
        set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
}

void Config::set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw ConfigError("config: unknown key '" + key + "'");
    values_[key] = value;
}

const std::string& Config::gets(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second;
}

int Config::geti(const std::string& key) const {
    const std::string& v = gets(key);
    try {
        size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double Config::getf(const std::string& key) const {
    const std::string& v = gets(key);
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

bool Config::getb(const std::string& key) const {
    std::string v = gets(key);
    std::transform(v.begin(), v.end(), v.begin(), ::tolower);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config: key '" + key + "' expects a boolean, got '" + gets(key) + "'");
}

std::vector<int> Config::get_int_list(const std::string& key) const {
    std::vector<int> out;
    std::stringstream ss(gets(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + key + "' expects integers, got '" + item + "'");
        }
    }
    return out;
}

std::vector<double> Config::get_float_list(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(gets(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + key + "' expects numbers, got '" + item + "'");
        }
    }
    return out;
}

std::string Config::dump() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
    return os.str();
}

}  // namespace rtdlab
