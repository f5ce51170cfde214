#pragma once

#include <vector>

#include <json.hpp>

#include "rtdlab/errors.hpp"
#include "rtdlab/rng.hpp"

namespace rtdlab {

// Adaptive probability over generator exit layers. Updated once per accuracy
// window from the change in windowed RTD accuracy:
//
//   diff = clamp(acc - acc_prev, -1, 1)
//   S    = alpha * diff * R          (R = reassignment scores, default 0..3)
//   P    = softmax(P + S)
//
// The first window only records its accuracy; there is no acc_prev yet.
struct ExitDistribution {
    std::vector<double> p;  // current probabilities
    std::vector<double> r;  // reassignment scores
    double alpha = 0.1;
    double last_window_acc = 0.0;
    bool has_last = false;

    ExitDistribution() : p{0.1, 0.2, 0.3, 0.4}, r{0.0, 1.0, 2.0, 3.0} {}
    ExitDistribution(std::vector<double> initial_p, std::vector<double> scores, double a);

    void validate() const;

    nlohmann::json save_state() const;
    void restore_state(const nlohmann::json& j);
};

// Applies one window update. acc_curr must lie in [0,1]. Returns true when the
// distribution changed (false on the first, record-only call).
bool controller_update(ExitDistribution& dist, double acc_curr);

// Categorical draw from P; index into the exit-layer list.
int sample_exit(const ExitDistribution& dist, Rng& rng);

// Numerically stabilized softmax used by the update (exposed for tests).
std::vector<double> softmax_vec(const std::vector<double>& x);

}  // namespace rtdlab
