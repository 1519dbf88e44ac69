#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hrg/errors.hpp"

namespace hrg {

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Multiply-accumulate counter, one per thread. matmul adds m*k*n on every
// forward call; scopes snapshot it to attribute counts to pipeline stages.
struct OpCounter {
    uint64_t mac_count = 0;
    void add(uint64_t n) { mac_count += n; }
};

OpCounter& op_counter();

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    uint64_t visit_mark = 0;

    bool is_leaf() const { return parents.empty(); }
    std::vector<double>& ensure_grad();
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

// Disables graph construction in scope. Forward values are unaffected;
// evaluation uses this to keep episode forwards allocation-light.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

// Dense tensor of 64-bit floats with reverse-mode differentiation.
// Values are immutable after construction except through mutable_values()
// (used by the optimizer and finite-difference probes on leaf parameters);
// grad is the only other mutable field.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor scalar(double v);
    // Leaf with requires_grad set; the unit the optimizer updates.
    static Tensor parameter(Shape shape, std::vector<double> data);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int dim(int i) const;
    int64_t size() const;
    int rows() const;  // rank-2 only
    int cols() const;

    const std::vector<double>& values() const;
    std::vector<double>& mutable_values();
    double at(int64_t i) const;
    double at(int i, int j) const;

    bool requires_grad() const;
    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad() const;

    // Reverse-mode pass from a scalar. Non-leaf grads are scratch per call;
    // leaf grads accumulate across calls until zero_grad().
    void backward() const;

    Tensor detached() const;
    Tensor reshaped(Shape shape) const;

    detail::Node* node() const { return n_.get(); }
    const detail::NodePtr& node_ptr() const { return n_; }

private:
    explicit Tensor(detail::NodePtr n) : n_(std::move(n)) {}
    detail::NodePtr n_;

    friend Tensor wrap_node(detail::NodePtr);
};

// ---- differentiable operations ------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

// v has length C = x.cols(); applied to every row.
Tensor rowwise_add(const Tensor& x, const Tensor& v);
Tensor rowwise_mul(const Tensor& x, const Tensor& v);
// s has length R = x.rows(); s[i] applied across row i.
Tensor colwise_sub(const Tensor& x, const Tensor& s);
Tensor colwise_mul(const Tensor& x, const Tensor& s);
Tensor colwise_div(const Tensor& x, const Tensor& s);

Tensor row_mean(const Tensor& x);
Tensor row_sum(const Tensor& x);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor sqrt_elem(const Tensor& x);  // x >= 0 elementwise
Tensor gelu(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

// Rows on the last axis are non-negative and sum to 1; max-subtracted.
Tensor softmax_rows(const Tensor& x);
// mask is a same-shape 0/1 tensor. Masked positions get exactly zero
// weight (additive -1e9 surrogate, then exact zeroing); an all-zero mask
// row yields an all-zero output row.
Tensor masked_softmax_rows(const Tensor& x, const Tensor& mask);

// Per-row standardization with epsilon 1e-5 inside the sqrt, then affine.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor slice_cols(const Tensor& x, int c0, int len);
Tensor concat_cols(const std::vector<Tensor>& xs);
// Packs scalar tensors into shape (row-major); parents get scattered grads.
Tensor stack_scalars(const std::vector<Tensor>& xs, Shape shape);

// Mean over rows of -log softmax(row)[label].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Monotone alignment cost over a Tq x Ts cost matrix, moves right/down/
// diagonal, cell costs summed along the path. gamma == 0 is the hard path
// minimum (forward only); gamma > 0 applies soft-min inside the recursion
// and is differentiable.
Tensor soft_dtw(const Tensor& dist, double gamma);

// 0.5 * (mean over rows of row-min + mean over cols of col-min).
Tensor bimhm(const Tensor& dist);

}  // namespace hrg
