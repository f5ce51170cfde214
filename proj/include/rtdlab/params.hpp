#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rtdlab/tensor.hpp"
#include "rtdlab/tensor_store.hpp"

namespace rtdlab {

// Ordered, named parameter registry. Registration order is the serialization
// and optimizer-update order, so it must be deterministic.
class ParamStore {
public:
    Tensor add(const std::string& name, std::vector<int> shape) {
        Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
        put(name, t);
        return t;
    }

    // Register an existing tensor (parameter sharing between models).
    void put(const std::string& name, const Tensor& t) {
        if (index_.count(name)) throw ConfigError("ParamStore: duplicate parameter '" + name + "'");
        index_[name] = items_.size();
        items_.emplace_back(name, t);
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Tensor get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("ParamStore: unknown parameter '" + name + "'");
        return items_[it->second].second;
    }

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    size_t count() const { return items_.size(); }

    int64_t total_size() const {
        int64_t n = 0;
        for (const auto& [k, t] : items_) n += t.size();
        return n;
    }

    void zero_grads() {
        for (auto& [k, t] : items_) t.zero_grad();
    }

    // Copies payloads from a loaded container into the registered tensors.
    // Names and shapes must match exactly; mismatches name the tensor.
    void load_from(const NamedTensors& nt);

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, size_t> index_;
};

struct AdamConfig {
    float lr = 5e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    int warmup_steps = 100;
    int total_steps = 10000;  // for linear decay after warmup
};

// Adam with linear warmup then linear decay to zero.
class Adam {
public:
    Adam(ParamStore& params, AdamConfig cfg);

    void step();  // applies grads, advances the step counter, clears grads
    int64_t step_count() const { return t_; }
    float current_lr() const;

    // moment buffers for checkpointing; order matches the ParamStore
    std::vector<std::pair<std::string, Tensor>> state_tensors() const;
    void load_state(const NamedTensors& nt, int64_t step_count);

private:
    ParamStore& params_;
    AdamConfig cfg_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace rtdlab
