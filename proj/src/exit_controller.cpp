#include "rtdlab/exit_controller.hpp"

#include <algorithm>
#include <cmath>

namespace rtdlab {

ExitDistribution::ExitDistribution(std::vector<double> initial_p, std::vector<double> scores,
                                   double a)
    : p(std::move(initial_p)), r(std::move(scores)), alpha(a) {
    validate();
}

void ExitDistribution::validate() const {
    if (p.empty() || p.size() != r.size()) {
        throw ConfigError("exit controller: P and R must be non-empty and the same length");
    }
    double sum = 0.0;
    for (double v : p) {
        if (v < 0.0) throw ConfigError("exit controller: P entries must be non-negative");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("exit controller: P must sum to 1, got " + std::to_string(sum));
    }
    if (alpha <= 0.0) throw ConfigError("exit controller: alpha must be positive");
}

std::vector<double> softmax_vec(const std::vector<double>& x) {
    double m = x[0];
    for (double v : x) m = std::max(m, v);
    std::vector<double> out(x.size());
    double sum = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

bool controller_update(ExitDistribution& dist, double acc_curr) {
    if (!(acc_curr >= 0.0 && acc_curr <= 1.0)) {
        throw ConfigError("exit controller: accuracy " + std::to_string(acc_curr) +
                          " outside [0,1]");
    }
    if (!dist.has_last) {
        dist.last_window_acc = acc_curr;
        dist.has_last = true;
        return false;
    }
    double diff = acc_curr - dist.last_window_acc;
    diff = std::min(1.0, std::max(-1.0, diff));
    std::vector<double> z(dist.p.size());
    for (size_t i = 0; i < z.size(); ++i) z[i] = dist.p[i] + dist.alpha * diff * dist.r[i];
    dist.p = softmax_vec(z);
    dist.last_window_acc = acc_curr;
    return true;
}

int sample_exit(const ExitDistribution& dist, Rng& rng) {
    const double u = rng.uniform01();
    double c = 0.0;
    for (size_t i = 0; i < dist.p.size(); ++i) {
        c += dist.p[i];
        if (u < c) return int(i);
    }
    return int(dist.p.size()) - 1;
}

nlohmann::json ExitDistribution::save_state() const {
    nlohmann::json j;
    j["p"] = p;
    j["r"] = r;
    j["alpha"] = alpha;
    j["last_window_acc"] = last_window_acc;
    j["has_last"] = has_last;
    return j;
}

void ExitDistribution::restore_state(const nlohmann::json& j) {
    p = j.at("p").get<std::vector<double>>();
    r = j.at("r").get<std::vector<double>>();
    alpha = j.at("alpha").get<double>();
    last_window_acc = j.at("last_window_acc").get<double>();
    has_last = j.at("has_last").get<bool>();
}

}  // namespace rtdlab
