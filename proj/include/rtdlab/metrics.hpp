#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

namespace rtdlab {

// One closed accuracy window. Accuracies that had no samples in the window
// (an exit never drawn) are NaN and serialize as null.
struct WindowMetrics {
    int64_t step = 0;  // step count at window close
    std::string variant;
    double rtd_acc = NAN;
    std::vector<double> rtd_acc_per_exit;
    std::vector<double> mlm_acc_per_exit;
    std::vector<double> rtd_acc_per_section;
    std::vector<double> p_vector;
    double loss_total = 0.0, loss_mlm = 0.0, loss_disc = 0.0, loss_aux = 0.0;
    double steps_per_sec = 0.0;
    int active_section = 0;   // 0 when the variant has no section exit
    double threshold = NAN;

    nlohmann::json to_json() const;
    static WindowMetrics from_json(const nlohmann::json& j);

    // field-wise equality ignoring wall-clock throughput
    bool same_ignoring_timing(const WindowMetrics& other) const;
};

std::vector<WindowMetrics> read_metrics_file(const std::string& path);

}  // namespace rtdlab
