#include "rtdlab/params.hpp"

#include <cmath>
#include <cstring>
#include <unordered_map>

namespace rtdlab {

void ParamStore::load_from(const NamedTensors& nt) {
    std::unordered_map<std::string, const Tensor*> loaded;
    for (const auto& [name, t] : nt.items) loaded[name] = &t;
    for (auto& [name, t] : items_) {
        auto it = loaded.find(name);
        if (it == loaded.end()) {
            throw IoError("checkpoint is missing tensor '" + name + "'");
        }
        const Tensor& src = *it->second;
        if (src.shape() != t.shape()) {
            throw IoError("shape mismatch for tensor '" + name + "': checkpoint has " +
                          shape_str(src.shape()) + ", model expects " + shape_str(t.shape()));
        }
        std::memcpy(t.data(), src.data(), size_t(t.size()) * sizeof(float));
    }
}

Adam::Adam(ParamStore& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
    m_.reserve(params_.count());
    v_.reserve(params_.count());
    for (const auto& [name, t] : params_.items()) {
        m_.push_back(Tensor::zeros(t.shape()));
        v_.push_back(Tensor::zeros(t.shape()));
    }
}

float Adam::current_lr() const {
    const int64_t t = t_ + 1;
    if (t <= cfg_.warmup_steps) {
        return cfg_.lr * float(t) / float(std::max(1, cfg_.warmup_steps));
    }
    const float span = float(std::max<int64_t>(1, cfg_.total_steps - cfg_.warmup_steps));
    const float frac = float(t - cfg_.warmup_steps) / span;
    return cfg_.lr * std::max(0.0f, 1.0f - frac);
}

void Adam::step() {
    const float lr = current_lr();
    ++t_;
    const double bc1 = 1.0 - std::pow(double(cfg_.beta1), double(t_));
    const double bc2 = 1.0 - std::pow(double(cfg_.beta2), double(t_));
    const auto& items = params_.items();
    for (size_t pi = 0; pi < items.size(); ++pi) {
        Tensor p = items[pi].second;
        const float* g = p.grad_data();
        if (!g) continue;  // parameter unused this step
        float* pm = m_[pi].data();
        float* pv = v_[pi].data();
        float* pd = p.data();
        const int64_t n = p.size();
        for (int64_t i = 0; i < n; ++i) {
            pm[i] = cfg_.beta1 * pm[i] + (1.0f - cfg_.beta1) * g[i];
            pv[i] = cfg_.beta2 * pv[i] + (1.0f - cfg_.beta2) * g[i] * g[i];
            const float mh = float(pm[i] / bc1);
            const float vh = float(pv[i] / bc2);
            pd[i] -= lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
    }
    params_.zero_grads();
}

std::vector<std::pair<std::string, Tensor>> Adam::state_tensors() const {
    std::vector<std::pair<std::string, Tensor>> out;
    const auto& items = params_.items();
    for (size_t pi = 0; pi < items.size(); ++pi) {
        out.emplace_back("adam.m." + items[pi].first, m_[pi]);
        out.emplace_back("adam.v." + items[pi].first, v_[pi]);
    }
    return out;
}

void Adam::load_state(const NamedTensors& nt, int64_t step_count) {
    std::unordered_map<std::string, const Tensor*> loaded;
    for (const auto& [name, t] : nt.items) loaded[name] = &t;
    const auto& items = params_.items();
    for (size_t pi = 0; pi < items.size(); ++pi) {
        for (auto [prefix, buf] : {std::pair{std::string("adam.m."), &m_[pi]},
                                   std::pair{std::string("adam.v."), &v_[pi]}}) {
            auto it = loaded.find(prefix + items[pi].first);
            if (it == loaded.end()) {
                throw IoError("checkpoint is missing optimizer state '" + prefix +
                              items[pi].first + "'");
            }
            if (it->second->shape() != buf->shape()) {
                throw IoError("shape mismatch for optimizer state '" + prefix + items[pi].first +
                              "'");
            }
            std::memcpy(buf->data(), it->second->data(), size_t(buf->size()) * sizeof(float));
        }
    }
    t_ = step_count;
}

}  // namespace rtdlab
