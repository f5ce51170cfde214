#include "rtdlab/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace rtdlab {

namespace detail {

struct TensorNode {
    std::vector<int> shape;
    std::shared_ptr<std::vector<float>> buf;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool backward_done = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    int64_t size() const { return buf ? int64_t(buf->size()) : 0; }
    float* data() { return buf->data(); }
    const float* data() const { return buf->data(); }
};

}  // namespace detail

using detail::TensorNode;

namespace {

std::atomic<bool> g_finite_checks{true};

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::shared_ptr<TensorNode> new_node(std::vector<int> shape) {
    auto n = std::make_shared<TensorNode>();
    n->buf = std::make_shared<std::vector<float>>(size_t(shape_numel(shape)), 0.0f);
    n->shape = std::move(shape);
    return n;
}

void check_finite(const TensorNode& n, const char* op) {
    if (!g_finite_checks.load(std::memory_order_relaxed)) return;
    // x - x is 0 for finite values and NaN for NaN/Inf, so a NaN in the
    // accumulator flags any non-finite entry; the loop stays vectorizable.
    float acc = 0.0f;
    for (float v : *n.buf) acc += v - v;
    if (!(acc == 0.0f)) {
        throw NonFiniteError(std::string(op) + ": non-finite value in output of shape " +
                             shape_str(n.shape));
    }
}

void accum_grad(TensorNode* n, const float* g, int64_t len) {
    if (!n->requires_grad) return;
    if (n->grad.empty()) n->grad.assign(size_t(n->size()), 0.0f);
    float* dst = n->grad.data();
    for (int64_t i = 0; i < len; ++i) dst[i] += g[i];
}

// Wires up the result node: graph edges and backward closure only when some
// input participates in the gradient graph.
Tensor make_result(std::shared_ptr<TensorNode> out,
                   std::vector<std::shared_ptr<TensorNode>> parents,
                   std::function<void(TensorNode&)> bwd, const char* op) {
    bool any = false;
    for (auto& p : parents) {
        if (p->requires_grad) {
            any = true;
            break;
        }
    }
    if (any) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backward_fn = std::move(bwd);
    }
    check_finite(*out, op);
    return Tensor(std::move(out));
}

[[noreturn]] void shape_fail(const char* op, const std::vector<int>& a, const std::vector<int>& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

}  // namespace

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

Tensor::Tensor() = default;

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto n = new_node(std::move(shape));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    t.fill(value);
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
    if (shape_numel(shape) != int64_t(data.size())) {
        throw ShapeError("from_data: shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
    }
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->buf = std::make_shared<std::vector<float>>(std::move(data));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const { return node_->shape; }
int Tensor::dim(int i) const { return node_->shape[size_t(i)]; }
int Tensor::ndim() const { return int(node_->shape.size()); }
int64_t Tensor::size() const { return node_->size(); }

float* Tensor::data() { return node_->data(); }
const float* Tensor::data() const { return node_->data(); }

float Tensor::item() const {
    if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
    return (*node_->buf)[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool v) { node_->requires_grad = v; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }
float* Tensor::grad_data() { return node_->grad.empty() ? nullptr : node_->grad.data(); }
const float* Tensor::grad_data() const { return node_->grad.empty() ? nullptr : node_->grad.data(); }

Tensor Tensor::grad_copy() const {
    if (node_->grad.empty()) return Tensor::zeros(shape());
    return Tensor::from_data(shape(), node_->grad);
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detached_view() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = node_->shape;
    n->buf = node_->buf;
    return Tensor(std::move(n));
}

Tensor Tensor::clone() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = node_->shape;
    n->buf = std::make_shared<std::vector<float>>(*node_->buf);
    return Tensor(std::move(n));
}

void Tensor::fill_normal(Rng& rng, float mean, float stddev) {
    for (float& v : *node_->buf) v = rng.normal(mean, stddev);
}

void Tensor::fill(float v) { std::fill(node_->buf->begin(), node_->buf->end(), v); }

bool Tensor::same_storage(const Tensor& other) const { return node_->buf == other.node_->buf; }

void set_finite_checks(bool on) { g_finite_checks.store(on); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

// ---------------------------------------------------------------------------
// matmul family
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() == 2 && sb.size() == 2) {
        if (sa[1] != sb[0]) shape_fail("matmul", sa, sb);
        const int m = sa[0], k = sa[1], n = sb[1];
        auto out = new_node({m, n});
        MMap(out->data(), m, n).noalias() = CMap(a.data(), m, k) * CMap(b.data(), k, n);
        auto an = a.node_ptr(), bn = b.node_ptr();
        return make_result(
            std::move(out), {an, bn},
            [an, bn, m, k, n](TensorNode& o) {
                CMap g(o.grad.data(), m, n);
                if (an->requires_grad) {
                    if (an->grad.empty()) an->grad.assign(size_t(m) * k, 0.0f);
                    MMap(an->grad.data(), m, k).noalias() += g * CMap(bn->data(), k, n).transpose();
                }
                if (bn->requires_grad) {
                    if (bn->grad.empty()) bn->grad.assign(size_t(k) * n, 0.0f);
                    MMap(bn->grad.data(), k, n).noalias() += CMap(an->data(), m, k).transpose() * g;
                }
            },
            "matmul");
    }
    if (sa.size() == 3 && sb.size() == 3) {
        if (sa[0] != sb[0] || sa[2] != sb[1]) shape_fail("matmul", sa, sb);
        const int bt = sa[0], m = sa[1], k = sa[2], n = sb[2];
        auto out = new_node({bt, m, n});
        for (int i = 0; i < bt; ++i) {
            MMap(out->data() + int64_t(i) * m * n, m, n).noalias() =
                CMap(a.data() + int64_t(i) * m * k, m, k) * CMap(b.data() + int64_t(i) * k * n, k, n);
        }
        auto an = a.node_ptr(), bn = b.node_ptr();
        return make_result(
            std::move(out), {an, bn},
            [an, bn, bt, m, k, n](TensorNode& o) {
                if (an->requires_grad && an->grad.empty()) an->grad.assign(size_t(bt) * m * k, 0.0f);
                if (bn->requires_grad && bn->grad.empty()) bn->grad.assign(size_t(bt) * k * n, 0.0f);
                for (int i = 0; i < bt; ++i) {
                    CMap g(o.grad.data() + int64_t(i) * m * n, m, n);
                    if (an->requires_grad) {
                        MMap(an->grad.data() + int64_t(i) * m * k, m, k).noalias() +=
                            g * CMap(bn->data() + int64_t(i) * k * n, k, n).transpose();
                    }
                    if (bn->requires_grad) {
                        MMap(bn->grad.data() + int64_t(i) * k * n, k, n).noalias() +=
                            CMap(an->data() + int64_t(i) * m * k, m, k).transpose() * g;
                    }
                }
            },
            "matmul");
    }
    shape_fail("matmul", sa, sb);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[1]) shape_fail("matmul_nt", sa, sb);
    const int m = sa[0], k = sa[1], n = sb[0];
    auto out = new_node({m, n});
    MMap(out->data(), m, n).noalias() = CMap(a.data(), m, k) * CMap(b.data(), n, k).transpose();
    auto an = a.node_ptr(), bn = b.node_ptr();
    return make_result(
        std::move(out), {an, bn},
        [an, bn, m, k, n](TensorNode& o) {
            CMap g(o.grad.data(), m, n);
            if (an->requires_grad) {
                if (an->grad.empty()) an->grad.assign(size_t(m) * k, 0.0f);
                MMap(an->grad.data(), m, k).noalias() += g * CMap(bn->data(), n, k);
            }
            if (bn->requires_grad) {
                if (bn->grad.empty()) bn->grad.assign(size_t(n) * k, 0.0f);
                MMap(bn->grad.data(), n, k).noalias() += g.transpose() * CMap(an->data(), m, k);
            }
        },
        "matmul_nt");
}

// ---------------------------------------------------------------------------
// elementwise / broadcast
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    const int64_t n = a.size();
    if (sa == sb) {
        auto out = new_node(sa);
        const float* pa = a.data();
        const float* pb = b.data();
        float* po = out->data();
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
        auto an = a.node_ptr(), bn = b.node_ptr();
        return make_result(
            std::move(out), {an, bn},
            [an, bn, n](TensorNode& o) {
                accum_grad(an.get(), o.grad.data(), n);
                accum_grad(bn.get(), o.grad.data(), n);
            },
            "add");
    }
    // bias broadcast: b is 1-D matching the last axis of a
    if (sb.size() == 1 && !sa.empty() && sa.back() == sb[0]) {
        const int64_t d = sb[0];
        auto out = new_node(sa);
        const float* pa = a.data();
        const float* pb = b.data();
        float* po = out->data();
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i % d];
        auto an = a.node_ptr(), bn = b.node_ptr();
        return make_result(
            std::move(out), {an, bn},
            [an, bn, n, d](TensorNode& o) {
                accum_grad(an.get(), o.grad.data(), n);
                if (bn->requires_grad) {
                    if (bn->grad.empty()) bn->grad.assign(size_t(d), 0.0f);
                    std::vector<double> acc(size_t(d), 0.0);
                    const float* g = o.grad.data();
                    for (int64_t i = 0; i < n; ++i) acc[size_t(i % d)] += g[i];
                    for (int64_t i = 0; i < d; ++i) bn->grad[size_t(i)] += float(acc[size_t(i)]);
                }
            },
            "add");
    }
    shape_fail("add", sa, sb);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
    const int64_t n = a.size();
    auto out = new_node(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out->data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    auto an = a.node_ptr(), bn = b.node_ptr();
    return make_result(
        std::move(out), {an, bn},
        [an, bn, n](TensorNode& o) {
            accum_grad(an.get(), o.grad.data(), n);
            if (bn->requires_grad) {
                if (bn->grad.empty()) bn->grad.assign(size_t(n), 0.0f);
                for (int64_t i = 0; i < n; ++i) bn->grad[size_t(i)] -= o.grad[size_t(i)];
            }
        },
        "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
    const int64_t n = a.size();
    auto out = new_node(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out->data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    auto an = a.node_ptr(), bn = b.node_ptr();
    return make_result(
        std::move(out), {an, bn},
        [an, bn, n](TensorNode& o) {
            const float* g = o.grad.data();
            if (an->requires_grad) {
                if (an->grad.empty()) an->grad.assign(size_t(n), 0.0f);
                const float* pb2 = bn->data();
                for (int64_t i = 0; i < n; ++i) an->grad[size_t(i)] += g[i] * pb2[i];
            }
            if (bn->requires_grad) {
                if (bn->grad.empty()) bn->grad.assign(size_t(n), 0.0f);
                const float* pa2 = an->data();
                for (int64_t i = 0; i < n; ++i) bn->grad[size_t(i)] += g[i] * pa2[i];
            }
        },
        "mul");
}

Tensor scale(const Tensor& a, float c) {
    const int64_t n = a.size();
    auto out = new_node(a.shape());
    const float* pa = a.data();
    float* po = out->data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
    auto an = a.node_ptr();
    return make_result(
        std::move(out), {an},
        [an, n, c](TensorNode& o) {
            if (!an->requires_grad) return;
            if (an->grad.empty()) an->grad.assign(size_t(n), 0.0f);
            for (int64_t i = 0; i < n; ++i) an->grad[size_t(i)] += o.grad[size_t(i)] * c;
        },
        "scale");
}

// ---------------------------------------------------------------------------
// nonlinearities and normalization
// ---------------------------------------------------------------------------

Tensor softmax_lastdim(const Tensor& a) {
    const auto& s = a.shape();
    if (s.empty()) shape_fail("softmax", s, s);
    const int64_t d = s.back();
    const int64_t rows = a.size() / d;
    auto out = new_node(s);
    const float* pa = a.data();
    float* po = out->data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* x = pa + r * d;
        float* y = po + r * d;
        float m = x[0];
        for (int64_t i = 1; i < d; ++i) m = std::max(m, x[i]);
        double sum = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            y[i] = std::exp(x[i] - m);
            sum += y[i];
        }
        const float inv = float(1.0 / sum);
        for (int64_t i = 0; i < d; ++i) y[i] *= inv;
    }
    auto an = a.node_ptr();
    auto on = out;  // probs needed in backward
    return make_result(
        std::move(out), {an},
        [an, on, rows, d](TensorNode& o) {
            if (!an->requires_grad) return;
            if (an->grad.empty()) an->grad.assign(size_t(rows * d), 0.0f);
            const float* p = on->data();
            const float* g = o.grad.data();
            for (int64_t r = 0; r < rows; ++r) {
                const float* pr = p + r * d;
                const float* gr = g + r * d;
                float* dr = an->grad.data() + r * d;
                double dot = 0.0;
                for (int64_t i = 0; i < d; ++i) dot += double(gr[i]) * pr[i];
                for (int64_t i = 0; i < d; ++i) dr[i] += pr[i] * (gr[i] - float(dot));
            }
        },
        "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    const auto& s = x.shape();
    const int64_t d = s.back();
    if (gain.ndim() != 1 || gain.dim(0) != d) shape_fail("layer_norm", s, gain.shape());
    if (bias.ndim() != 1 || bias.dim(0) != d) shape_fail("layer_norm", s, bias.shape());
    const int64_t rows = x.size() / d;
    auto out = new_node(s);
    auto xhat = std::make_shared<std::vector<float>>(size_t(rows * d));
    auto inv_std = std::make_shared<std::vector<float>>(size_t(rows));
    const float* px = x.data();
    const float* pg = gain.data();
    const float* pb = bias.data();
    float* po = out->data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = px + r * d;
        double mu = 0.0;
        for (int64_t i = 0; i < d; ++i) mu += xr[i];
        mu /= double(d);
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            const double c = xr[i] - mu;
            var += c * c;
        }
        var /= double(d);
        const float istd = float(1.0 / std::sqrt(var + eps));
        (*inv_std)[size_t(r)] = istd;
        float* hr = xhat->data() + r * d;
        float* yr = po + r * d;
        for (int64_t i = 0; i < d; ++i) {
            hr[i] = (xr[i] - float(mu)) * istd;
            yr[i] = pg[i] * hr[i] + pb[i];
        }
    }
    auto xn = x.node_ptr(), gn = gain.node_ptr(), bn = bias.node_ptr();
    return make_result(
        std::move(out), {xn, gn, bn},
        [xn, gn, bn, xhat, inv_std, rows, d](TensorNode& o) {
            const float* g = o.grad.data();
            const float* h = xhat->data();
            if (gn->requires_grad || bn->requires_grad) {
                std::vector<double> dga(size_t(d), 0.0), dba(size_t(d), 0.0);
                for (int64_t r = 0; r < rows; ++r) {
                    for (int64_t i = 0; i < d; ++i) {
                        dga[size_t(i)] += double(g[r * d + i]) * h[r * d + i];
                        dba[size_t(i)] += g[r * d + i];
                    }
                }
                if (gn->requires_grad) {
                    if (gn->grad.empty()) gn->grad.assign(size_t(d), 0.0f);
                    for (int64_t i = 0; i < d; ++i) gn->grad[size_t(i)] += float(dga[size_t(i)]);
                }
                if (bn->requires_grad) {
                    if (bn->grad.empty()) bn->grad.assign(size_t(d), 0.0f);
                    for (int64_t i = 0; i < d; ++i) bn->grad[size_t(i)] += float(dba[size_t(i)]);
                }
            }
            if (!xn->requires_grad) return;
            if (xn->grad.empty()) xn->grad.assign(size_t(rows * d), 0.0f);
            const float* pg2 = gn->data();
            for (int64_t r = 0; r < rows; ++r) {
                const float* gr = g + r * d;
                const float* hr = h + r * d;
                double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat*xhat)
                for (int64_t i = 0; i < d; ++i) {
                    const double dh = double(gr[i]) * pg2[i];
                    m1 += dh;
                    m2 += dh * hr[i];
                }
                m1 /= double(d);
                m2 /= double(d);
                const float istd = (*inv_std)[size_t(r)];
                float* dx = xn->grad.data() + r * d;
                for (int64_t i = 0; i < d; ++i) {
                    const double dh = double(gr[i]) * pg2[i];
                    dx[i] += float(istd * (dh - m1 - double(hr[i]) * m2));
                }
            }
        },
        "layer_norm");
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

Tensor gelu(const Tensor& x) {
    const int64_t n = x.size();
    auto out = new_node(x.shape());
    const float* px = x.data();
    float* po = out->data();
    for (int64_t i = 0; i < n; ++i) {
        const float v = px[i];
        const float u = kGeluC * (v + kGeluA * v * v * v);
        po[i] = 0.5f * v * (1.0f + std::tanh(u));
    }
    auto xn = x.node_ptr();
    return make_result(
        std::move(out), {xn},
        [xn, n](TensorNode& o) {
            if (!xn->requires_grad) return;
            if (xn->grad.empty()) xn->grad.assign(size_t(n), 0.0f);
            const float* px2 = xn->data();
            for (int64_t i = 0; i < n; ++i) {
                const float v = px2[i];
                const float u = kGeluC * (v + kGeluA * v * v * v);
                const float t = std::tanh(u);
                const float du = kGeluC * (1.0f + 3.0f * kGeluA * v * v);
                const float d = 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du;
                xn->grad[size_t(i)] += o.grad[size_t(i)] * d;
            }
        },
        "gelu");
}

Tensor sigmoid(const Tensor& x) {
    const int64_t n = x.size();
    auto out = new_node(x.shape());
    const float* px = x.data();
    float* po = out->data();
    for (int64_t i = 0; i < n; ++i) {
        const float v = px[i];
        po[i] = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
    }
    auto xn = x.node_ptr();
    auto on = out;
    return make_result(
        std::move(out), {xn},
        [xn, on, n](TensorNode& o) {
            if (!xn->requires_grad) return;
            if (xn->grad.empty()) xn->grad.assign(size_t(n), 0.0f);
            const float* s = on->data();
            for (int64_t i = 0; i < n; ++i) {
                xn->grad[size_t(i)] += o.grad[size_t(i)] * s[i] * (1.0f - s[i]);
            }
        },
        "sigmoid");
}

Tensor log_elem(const Tensor& x) {
    const int64_t n = x.size();
    auto out = new_node(x.shape());
    const float* px = x.data();
    float* po = out->data();
    for (int64_t i = 0; i < n; ++i) po[i] = std::log(px[i]);
    auto xn = x.node_ptr();
    return make_result(
        std::move(out), {xn},
        [xn, n](TensorNode& o) {
            if (!xn->requires_grad) return;
            if (xn->grad.empty()) xn->grad.assign(size_t(n), 0.0f);
            const float* px2 = xn->data();
            for (int64_t i = 0; i < n; ++i) xn->grad[size_t(i)] += o.grad[size_t(i)] / px2[i];
        },
        "log");
}

Tensor mean_all(const Tensor& x) {
    const int64_t n = x.size();
    double acc = 0.0;
    const float* px = x.data();
    for (int64_t i = 0; i < n; ++i) acc += px[i];
    auto out = new_node({1});
    (*out->buf)[0] = float(acc / double(n));
    auto xn = x.node_ptr();
    return make_result(
        std::move(out), {xn},
        [xn, n](TensorNode& o) {
            if (!xn->requires_grad) return;
            if (xn->grad.empty()) xn->grad.assign(size_t(n), 0.0f);
            const float g = o.grad[0] / float(n);
            for (int64_t i = 0; i < n; ++i) xn->grad[size_t(i)] += g;
        },
        "mean");
}

Tensor sum_all(const Tensor& x) {
    const int64_t n = x.size();
    double acc = 0.0;
    const float* px = x.data();
    for (int64_t i = 0; i < n; ++i) acc += px[i];
    auto out = new_node({1});
    (*out->buf)[0] = float(acc);
    auto xn = x.node_ptr();
    return make_result(
        std::move(out), {xn},
        [xn, n](TensorNode& o) {
            if (!xn->requires_grad) return;
            if (xn->grad.empty()) xn->grad.assign(size_t(n), 0.0f);
            const float g = o.grad[0];
            for (int64_t i = 0; i < n; ++i) xn->grad[size_t(i)] += g;
        },
        "sum");
}

// ---------------------------------------------------------------------------
// gathers, reshapes, concatenation
// ---------------------------------------------------------------------------

Tensor embedding_gather(const Tensor& table, const IntMat& ids) {
    if (table.ndim() != 2) shape_fail("embedding_gather", table.shape(), {ids.rows, ids.cols});
    const int v = table.dim(0), d = table.dim(1);
    auto out = new_node({ids.rows, ids.cols, d});
    const float* pt = table.data();
    float* po = out->data();
    for (size_t i = 0; i < ids.size(); ++i) {
        const int32_t id = ids.v[i];
        if (id < 0 || id >= v) {
            throw ShapeError("embedding_gather: id " + std::to_string(id) +
                             " out of range for table " + shape_str(table.shape()));
        }
        std::memcpy(po + i * size_t(d), pt + size_t(id) * d, size_t(d) * sizeof(float));
    }
    auto tn = table.node_ptr();
    auto idv = std::make_shared<std::vector<int32_t>>(ids.v);
    return make_result(
        std::move(out), {tn},
        [tn, idv, d](TensorNode& o) {
            if (!tn->requires_grad) return;
            if (tn->grad.empty()) tn->grad.assign(size_t(tn->size()), 0.0f);
            const float* g = o.grad.data();
            for (size_t i = 0; i < idv->size(); ++i) {
                float* dst = tn->grad.data() + size_t((*idv)[i]) * d;
                const float* src = g + i * size_t(d);
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        },
        "embedding_gather");
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx) {
    if (x.ndim() != 2) shape_fail("gather_rows", x.shape(), {int(idx.size())});
    const int64_t rows = x.dim(0), d = x.dim(1);
    auto out = new_node({int(idx.size()), int(d)});
    const float* px = x.data();
    float* po = out->data();
    for (size_t i = 0; i < idx.size(); ++i) {
        const int64_t r = idx[i];
        if (r < 0 || r >= rows) {
            throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range for " +
                             shape_str(x.shape()));
        }
        std::memcpy(po + i * size_t(d), px + r * d, size_t(d) * sizeof(float));
    }
    auto xn = x.node_ptr();
    auto idv = std::make_shared<std::vector<int64_t>>(idx);
    return make_result(
        std::move(out), {xn},
        [xn, idv, d](TensorNode& o) {
            if (!xn->requires_grad) return;
            if (xn->grad.empty()) xn->grad.assign(size_t(xn->size()), 0.0f);
            const float* g = o.grad.data();
            for (size_t i = 0; i < idv->size(); ++i) {
                float* dst = xn->grad.data() + size_t((*idv)[i]) * d;
                const float* src = g + i * size_t(d);
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        },
        "gather_rows");
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    auto lead = parts[0].shape();
    lead.pop_back();
    int64_t total_d = 0;
    std::vector<int64_t> widths;
    for (const auto& p : parts) {
        auto l = p.shape();
        const int64_t w = l.back();
        l.pop_back();
        if (l != lead) shape_fail("concat", parts[0].shape(), p.shape());
        widths.push_back(w);
        total_d += w;
    }
    int64_t rows = 1;
    for (int v : lead) rows *= v;
    std::vector<int> oshape(lead.begin(), lead.end());
    oshape.push_back(int(total_d));
    auto out = new_node(oshape);
    float* po = out->data();
    {
        int64_t off = 0;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            const float* src = parts[pi].data();
            const int64_t w = widths[pi];
            for (int64_t r = 0; r < rows; ++r) {
                std::memcpy(po + r * total_d + off, src + r * w, size_t(w) * sizeof(float));
            }
            off += w;
        }
    }
    std::vector<std::shared_ptr<TensorNode>> pnodes;
    for (const auto& p : parts) pnodes.push_back(p.node_ptr());
    auto wv = std::make_shared<std::vector<int64_t>>(widths);
    return make_result(
        std::move(out), pnodes,
        [pnodes, wv, rows, total_d](TensorNode& o) {
            const float* g = o.grad.data();
            int64_t off = 0;
            for (size_t pi = 0; pi < pnodes.size(); ++pi) {
                const int64_t w = (*wv)[pi];
                auto& pn = pnodes[pi];
                if (pn->requires_grad) {
                    if (pn->grad.empty()) pn->grad.assign(size_t(pn->size()), 0.0f);
                    for (int64_t r = 0; r < rows; ++r) {
                        float* dst = pn->grad.data() + r * w;
                        const float* src = g + r * total_d + off;
                        for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
                    }
                }
                off += w;
            }
        },
        "concat");
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
    if (shape_numel(new_shape) != x.size()) shape_fail("reshape", x.shape(), new_shape);
    auto out = new_node(new_shape);
    *out->buf = *x.node_ptr()->buf;
    auto xn = x.node_ptr();
    const int64_t n = x.size();
    return make_result(
        std::move(out), {xn},
        [xn, n](TensorNode& o) { accum_grad(xn.get(), o.grad.data(), n); }, "reshape");
}

Tensor transpose_last2(const Tensor& x) {
    const auto& s = x.shape();
    if (s.size() != 2 && s.size() != 3) shape_fail("transpose", s, s);
    const int64_t b = s.size() == 3 ? s[0] : 1;
    const int64_t m = s[s.size() - 2], n = s[s.size() - 1];
    std::vector<int> oshape = s.size() == 3 ? std::vector<int>{int(b), int(n), int(m)}
                                            : std::vector<int>{int(n), int(m)};
    auto out = new_node(oshape);
    const float* px = x.data();
    float* po = out->data();
    for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                po[bi * m * n + j * m + i] = px[bi * m * n + i * n + j];
            }
        }
    }
    auto xn = x.node_ptr();
    return make_result(
        std::move(out), {xn},
        [xn, b, m, n](TensorNode& o) {
            if (!xn->requires_grad) return;
            if (xn->grad.empty()) xn->grad.assign(size_t(xn->size()), 0.0f);
            const float* g = o.grad.data();
            for (int64_t bi = 0; bi < b; ++bi) {
                for (int64_t i = 0; i < m; ++i) {
                    for (int64_t j = 0; j < n; ++j) {
                        xn->grad[size_t(bi * m * n + i * n + j)] += g[bi * m * n + j * m + i];
                    }
                }
            }
        },
        "transpose");
}

Tensor heads_split(const Tensor& x, int n_heads) {
    const auto& s = x.shape();
    if (s.size() != 3 || s[2] % n_heads != 0) shape_fail("heads_split", s, {n_heads});
    const int64_t b = s[0], t = s[1], d = s[2], hd = d / n_heads;
    auto out = new_node({int(b) * n_heads, int(t), int(hd)});
    const float* px = x.data();
    float* po = out->data();
    for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t ti = 0; ti < t; ++ti) {
            for (int h = 0; h < n_heads; ++h) {
                std::memcpy(po + ((bi * n_heads + h) * t + ti) * hd,
                            px + (bi * t + ti) * d + h * hd, size_t(hd) * sizeof(float));
            }
        }
    }
    auto xn = x.node_ptr();
    return make_result(
        std::move(out), {xn},
        [xn, b, t, d, hd, n_heads](TensorNode& o) {
            if (!xn->requires_grad) return;
            if (xn->grad.empty()) xn->grad.assign(size_t(xn->size()), 0.0f);
            const float* g = o.grad.data();
            for (int64_t bi = 0; bi < b; ++bi) {
                for (int64_t ti = 0; ti < t; ++ti) {
                    for (int h = 0; h < n_heads; ++h) {
                        float* dst = xn->grad.data() + (bi * t + ti) * d + h * hd;
                        const float* src = g + ((bi * n_heads + h) * t + ti) * hd;
                        for (int64_t j = 0; j < hd; ++j) dst[j] += src[j];
                    }
                }
            }
        },
        "heads_split");
}

Tensor heads_merge(const Tensor& x, int n_heads) {
    const auto& s = x.shape();
    if (s.size() != 3 || s[0] % n_heads != 0) shape_fail("heads_merge", s, {n_heads});
    const int64_t b = s[0] / n_heads, t = s[1], hd = s[2], d = hd * n_heads;
    auto out = new_node({int(b), int(t), int(d)});
    const float* px = x.data();
    float* po = out->data();
    for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t ti = 0; ti < t; ++ti) {
            for (int h = 0; h < n_heads; ++h) {
                std::memcpy(po + (bi * t + ti) * d + h * hd,
                            px + ((bi * n_heads + h) * t + ti) * hd, size_t(hd) * sizeof(float));
            }
        }
    }
    auto xn = x.node_ptr();
    return make_result(
        std::move(out), {xn},
        [xn, b, t, d, hd, n_heads](TensorNode& o) {
            if (!xn->requires_grad) return;
            if (xn->grad.empty()) xn->grad.assign(size_t(xn->size()), 0.0f);
            const float* g = o.grad.data();
            for (int64_t bi = 0; bi < b; ++bi) {
                for (int64_t ti = 0; ti < t; ++ti) {
                    for (int h = 0; h < n_heads; ++h) {
                        float* dst = xn->grad.data() + ((bi * n_heads + h) * t + ti) * hd;
                        const float* src = g + (bi * t + ti) * d + h * hd;
                        for (int64_t j = 0; j < hd; ++j) dst[j] += src[j];
                    }
                }
            }
        },
        "heads_merge");
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int32_t>& labels) {
    if (logits.ndim() != 2) shape_fail("cross_entropy", logits.shape(), {int(labels.size())});
    const int64_t k = logits.dim(0), v = logits.dim(1);
    if (int64_t(labels.size()) != k) shape_fail("cross_entropy", logits.shape(), {int(labels.size())});
    if (k == 0) throw ShapeError("cross_entropy: empty logits");
    // cache probabilities for the backward pass
    auto probs = std::make_shared<std::vector<float>>(size_t(k * v));
    const float* pl = logits.data();
    double loss = 0.0;
    for (int64_t r = 0; r < k; ++r) {
        const int32_t y = labels[size_t(r)];
        if (y < 0 || y >= v) {
            throw ShapeError("cross_entropy: label " + std::to_string(y) + " out of range for " +
                             shape_str(logits.shape()));
        }
        const float* x = pl + r * v;
        float m = x[0];
        for (int64_t i = 1; i < v; ++i) m = std::max(m, x[i]);
        double sum = 0.0;
        float* pr = probs->data() + r * v;
        for (int64_t i = 0; i < v; ++i) {
            pr[i] = std::exp(x[i] - m);
            sum += pr[i];
        }
        const float inv = float(1.0 / sum);
        for (int64_t i = 0; i < v; ++i) pr[i] *= inv;
        loss += double(m) + std::log(sum) - double(x[y]);
    }
    auto out = new_node({1});
    (*out->buf)[0] = float(loss / double(k));
    auto ln = logits.node_ptr();
    auto lv = std::make_shared<std::vector<int32_t>>(labels);
    return make_result(
        std::move(out), {ln},
        [ln, lv, probs, k, v](TensorNode& o) {
            if (!ln->requires_grad) return;
            if (ln->grad.empty()) ln->grad.assign(size_t(k * v), 0.0f);
            const float g = o.grad[0] / float(k);
            const float* p = probs->data();
            for (int64_t r = 0; r < k; ++r) {
                float* dst = ln->grad.data() + r * v;
                const float* pr = p + r * v;
                for (int64_t i = 0; i < v; ++i) dst[i] += g * pr[i];
                dst[(*lv)[size_t(r)]] -= g;
            }
        },
        "cross_entropy");
}

Tensor bce_logits_masked_mean(const Tensor& logits, const std::vector<float>& labels,
                              const std::vector<float>& mask) {
    const int64_t n = logits.size();
    if (int64_t(labels.size()) != n || int64_t(mask.size()) != n) {
        shape_fail("bce_logits", logits.shape(), {int(labels.size())});
    }
    double count = 0.0;
    for (float m : mask) count += (m != 0.0f) ? 1.0 : 0.0;
    if (count == 0.0) throw ShapeError("bce_logits: no scored positions (mask all zero)");
    const float* pz = logits.data();
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        if (mask[size_t(i)] == 0.0f) continue;
        const double z = pz[i];
        const double y = labels[size_t(i)];
        loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    auto out = new_node({1});
    (*out->buf)[0] = float(loss / count);
    auto zn = logits.node_ptr();
    auto yv = std::make_shared<std::vector<float>>(labels);
    auto mv = std::make_shared<std::vector<float>>(mask);
    return make_result(
        std::move(out), {zn},
        [zn, yv, mv, n, count](TensorNode& o) {
            if (!zn->requires_grad) return;
            if (zn->grad.empty()) zn->grad.assign(size_t(n), 0.0f);
            const float g = o.grad[0] / float(count);
            const float* z = zn->data();
            for (int64_t i = 0; i < n; ++i) {
                if ((*mv)[size_t(i)] == 0.0f) continue;
                const float v = z[i];
                const float s = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                                          : std::exp(v) / (1.0f + std::exp(v));
                zn->grad[size_t(i)] += g * (s - (*yv)[size_t(i)]);
            }
        },
        "bce_logits");
}

// ---------------------------------------------------------------------------
// backward driver
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined()) throw TapeError("backward: undefined loss tensor");
    TensorNode* root = loss.node();
    if (loss.size() != 1) {
        throw TapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    if (root->backward_done) {
        throw TapeError("backward: called twice on the same forward graph");
    }
    if (!root->requires_grad) {
        throw TapeError("backward: loss is not on the tape (no grad-requiring inputs)");
    }

    // iterative DFS post-order: children (parents in graph terms) first
    std::vector<TensorNode*> topo;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next].get();
            ++next;
            if (!visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    root->grad.assign(1, 1.0f);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward_fn && !node->grad.empty()) {
            node->backward_fn(*node);
        }
    }
    // clear the tape: drop graph edges so memory is released and a second
    // backward cannot silently traverse stale state
    for (TensorNode* node : topo) {
        node->parents.clear();
        node->backward_fn = nullptr;
    }
    root->backward_done = true;
}

std::vector<int64_t> argmax_lastdim(const Tensor& x) {
    const auto& s = x.shape();
    const int64_t d = s.back();
    const int64_t rows = x.size() / d;
    std::vector<int64_t> out(size_t(rows), 0);
    const float* px = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = px + r * d;
        int64_t best = 0;
        for (int64_t i = 1; i < d; ++i) {
            if (xr[i] > xr[best]) best = i;
        }
        out[size_t(r)] = best;
    }
    return out;
}

}  // namespace rtdlab
