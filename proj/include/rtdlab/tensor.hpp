#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rtdlab/errors.hpp"
#include "rtdlab/rng.hpp"

namespace rtdlab {

// Integer id matrix (token ids, position ids). Row-major, like Tensor.
struct IntMat {
    int rows = 0;
    int cols = 0;
    std::vector<int32_t> v;

    IntMat() = default;
    IntMat(int r, int c, int32_t fill = 0) : rows(r), cols(c), v(size_t(r) * c, fill) {}
    int32_t& at(int r, int c) { return v[size_t(r) * cols + c]; }
    int32_t at(int r, int c) const { return v[size_t(r) * cols + c]; }
    size_t size() const { return v.size(); }
};

namespace detail {
struct TensorNode;
}

// Value-semantics handle on a float32 buffer with shape and optional gradient.
// Ops build a define-by-run graph; Tensor copies share the underlying node.
class Tensor {
public:
    Tensor();

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<float> data,
                            bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const;
    int dim(int i) const;
    int ndim() const;
    int64_t size() const;

    float* data();
    const float* data() const;
    float item() const;  // scalar tensors only

    bool requires_grad() const;
    void set_requires_grad(bool v);

    bool has_grad() const;
    float* grad_data();
    const float* grad_data() const;
    Tensor grad_copy() const;  // gradient as a fresh tensor (tests, optimizer-free inspection)
    void zero_grad();

    // Same data buffer, detached from the graph. Writes through one handle are
    // visible through the other.
    Tensor detached_view() const;
    // Fresh buffer copy, no graph.
    Tensor clone() const;

    void fill_normal(Rng& rng, float mean, float stddev);
    void fill(float v);

    // Identity of storage (parameter-sharing checks).
    bool same_storage(const Tensor& other) const;

    detail::TensorNode* node() const { return node_.get(); }
    std::shared_ptr<detail::TensorNode> node_ptr() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<detail::TensorNode> node_;
};

// When on (default), every op verifies its output is finite and throws
// NonFiniteError otherwise. The bench path may switch it off.
void set_finite_checks(bool on);
bool finite_checks_enabled();

// ---------------------------------------------------------------------------
// Forward ops. Each records a backward closure when an input participates in
// the gradient graph.
// ---------------------------------------------------------------------------

// 2-D (M,K)x(K,N) -> (M,N), or batched 3-D (B,M,K)x(B,K,N) -> (B,M,N).
Tensor matmul(const Tensor& a, const Tensor& b);
// a (M,K) x b^T with b (N,K) -> (M,N). Used for tied vocab projections.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);  // same shape, or b is 1-D broadcast over last dim
Tensor sub(const Tensor& a, const Tensor& b);  // same shape
Tensor mul(const Tensor& a, const Tensor& b);  // same shape, elementwise
Tensor scale(const Tensor& a, float c);

Tensor softmax_lastdim(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor sigmoid(const Tensor& x);
Tensor log_elem(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);

// Row gather from an embedding table: (V,D) x ids (B,T) -> (B,T,D).
Tensor embedding_gather(const Tensor& table, const IntMat& ids);
// Row gather from a 2-D tensor: (N,D) x idx (K) -> (K,D).
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx);

Tensor concat_lastdim(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, std::vector<int> new_shape);
Tensor transpose_last2(const Tensor& x);  // 2-D or 3-D

// (B,T,D) -> (B*H, T, D/H) and back. Pure index permutations.
Tensor heads_split(const Tensor& x, int n_heads);
Tensor heads_merge(const Tensor& x, int n_heads);

// Mean cross-entropy of row-wise softmax(logits (K,V)) against integer labels.
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int32_t>& labels);
// Mean binary cross-entropy with logits over positions where mask != 0.
// labels in {0,1} as floats; stable softplus formulation.
Tensor bce_logits_masked_mean(const Tensor& logits, const std::vector<float>& labels,
                              const std::vector<float>& mask);

// ---------------------------------------------------------------------------
// Autograd driver
// ---------------------------------------------------------------------------

// Reverse pass from a scalar loss. Populates grads of every reachable tensor
// with requires_grad, then clears the recorded graph. Calling it twice on the
// same forward result is an error.
void backward(const Tensor& loss);

// Forward-only helpers (not differentiable, no tape participation).
std::vector<int64_t> argmax_lastdim(const Tensor& x);
std::string shape_str(const std::vector<int>& shape);

}  // namespace rtdlab
