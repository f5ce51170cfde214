#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace rtdlab {

// One mt19937_64 per independent randomness consumer (batching, masking,
// Gumbel noise, ...). Streams derived from (seed, stream id) so that adding
// a consumer never perturbs the others.
class Rng {
public:
    Rng() : engine_(0) {}
    Rng(uint64_t seed, uint64_t stream) {
        std::seed_seq seq{seed, stream, uint64_t{0x9e3779b97f4a7c15ull}};
        engine_.seed(seq);
    }

    std::mt19937_64& engine() { return engine_; }

    // Uniform in [0, n)
    uint64_t next_below(uint64_t n) {
        std::uniform_int_distribution<uint64_t> d(0, n - 1);
        return d(engine_);
    }

    double uniform01() {
        std::uniform_real_distribution<double> d(0.0, 1.0);
        return d(engine_);
    }

    float normal(float mean, float stddev) {
        std::normal_distribution<float> d(mean, stddev);
        return d(engine_);
    }

    // Gumbel(0,1) noise: -log(-log(U)) with U in the open interval (0,1).
    // Degenerate draws are rejected so the result is always finite.
    double gumbel() {
        double u = uniform01();
        while (u <= 0.0 || u >= 1.0) {
            u = uniform01();
        }
        return -std::log(-std::log(u));
    }

    // Engine state as text, for checkpointing.
    std::string save_state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void restore_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace rtdlab
