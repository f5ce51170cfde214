#include "rtdlab/metrics.hpp"

#include <fstream>

#include "rtdlab/errors.hpp"

namespace rtdlab {

namespace {
nlohmann::json num_or_null(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

nlohmann::json vec_json(const std::vector<double>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) a.push_back(num_or_null(x));
    return a;
}

double null_or_num(const nlohmann::json& j) { return j.is_null() ? NAN : j.get<double>(); }

std::vector<double> json_vec(const nlohmann::json& a) {
    std::vector<double> v;
    for (const auto& x : a) v.push_back(null_or_num(x));
    return v;
}

bool vec_eq(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        const bool na = std::isnan(a[i]), nb = std::isnan(b[i]);
        if (na != nb) return false;
        if (!na && a[i] != b[i]) return false;
    }
    return true;
}
}  // namespace

nlohmann::json WindowMetrics::to_json() const {
    nlohmann::json j;
    j["step"] = step;
    j["variant"] = variant;
    j["rtd_acc"] = num_or_null(rtd_acc);
    j["rtd_acc_per_exit"] = vec_json(rtd_acc_per_exit);
    j["mlm_acc_per_exit"] = vec_json(mlm_acc_per_exit);
    j["rtd_acc_per_section"] = vec_json(rtd_acc_per_section);
    j["p_vector"] = vec_json(p_vector);
    j["loss_total"] = loss_total;
    j["loss_mlm"] = loss_mlm;
    j["loss_disc"] = loss_disc;
    j["loss_aux"] = loss_aux;
    j["steps_per_sec"] = steps_per_sec;
    j["active_section"] = active_section;
    j["threshold"] = num_or_null(threshold);
    return j;
}

WindowMetrics WindowMetrics::from_json(const nlohmann::json& j) {
    WindowMetrics m;
    m.step = j.at("step").get<int64_t>();
    m.variant = j.at("variant").get<std::string>();
    m.rtd_acc = null_or_num(j.at("rtd_acc"));
    m.rtd_acc_per_exit = json_vec(j.at("rtd_acc_per_exit"));
    m.mlm_acc_per_exit = json_vec(j.at("mlm_acc_per_exit"));
    m.rtd_acc_per_section = json_vec(j.at("rtd_acc_per_section"));
    m.p_vector = json_vec(j.at("p_vector"));
    m.loss_total = j.at("loss_total").get<double>();
    m.loss_mlm = j.at("loss_mlm").get<double>();
    m.loss_disc = j.at("loss_disc").get<double>();
    m.loss_aux = j.at("loss_aux").get<double>();
    m.steps_per_sec = j.at("steps_per_sec").get<double>();
    m.active_section = j.at("active_section").get<int>();
    m.threshold = null_or_num(j.at("threshold"));
    return m;
}

bool WindowMetrics::same_ignoring_timing(const WindowMetrics& o) const {
    auto deq = [](double a, double b) {
        const bool na = std::isnan(a), nb = std::isnan(b);
        if (na != nb) return false;
        return na || a == b;
    };
    return step == o.step && variant == o.variant && deq(rtd_acc, o.rtd_acc) &&
           vec_eq(rtd_acc_per_exit, o.rtd_acc_per_exit) &&
           vec_eq(mlm_acc_per_exit, o.mlm_acc_per_exit) &&
           vec_eq(rtd_acc_per_section, o.rtd_acc_per_section) && vec_eq(p_vector, o.p_vector) &&
           loss_total == o.loss_total && loss_mlm == o.loss_mlm && loss_disc == o.loss_disc &&
           loss_aux == o.loss_aux && active_section == o.active_section &&
           deq(threshold, o.threshold);
}

std::vector<WindowMetrics> read_metrics_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("metrics: cannot open " + path);
    std::vector<WindowMetrics> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(WindowMetrics::from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw IoError("metrics: " + path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace rtdlab
