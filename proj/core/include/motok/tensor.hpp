// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "motok/errors.hpp"
#include "motok/rng.hpp"

namespace motok {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded operation (or leaf) in the computation graph. Values are
// 64-bit floats in contiguous row-major order. A node is immutable once its
// forward value has been computed; only leaf values may be edited between
// graph constructions (optimizer updates, finite-difference probes).
struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward;  // pulls this->grad into parents
    const char* op = "leaf";

    int64_t numel() const { return static_cast<int64_t>(val.size()); }
    void ensure_grad();
};

// Value-semantics handle onto a graph node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int64_t numel() const;
    int64_t dim(int i) const;
    int rank() const;

    std::span<const double> data() const;
    // Leaf-only mutation; throws DimError if this node has parents.
    std::span<double> mutable_data();

    bool requires_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    double item() const;  // numel()==1 only
    double at(int64_t flat_index) const;

    // True if every stored value is finite.
    bool all_finite() const;

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

// While one of these is alive on a thread, newly built ops record no parents
// and no backward closures (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Topologically ordered list of the nodes reachable from one root. Order is
// inputs-first; the backward sweep walks it in reverse and touches each node
// exactly once.
class Tape {
public:
    static Tape build(const Tensor& root);
    void run_backward();
    const std::vector<Node*>& order() const { return order_; }

private:
    NodePtr root_;
    std::vector<Node*> order_;
};

// Seeds d(root)/d(root) = 1 and accumulates gradients into every
// requires_grad node reachable from root. root must be scalar.
void backward(const Tensor& root);

// ---- elementwise / broadcast ----
// Binary ops accept equal shapes, or a 1-element tensor on either side
// (broadcast against the other operand).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor sqrt_t(const Tensor& x);

// ---- row/column structure (matrices are [rows, cols]) ----
Tensor add_rowvec(const Tensor& x, const Tensor& v);  // [L,D] + [D] per row
Tensor mul_rowvec(const Tensor& x, const Tensor& v);  // [L,D] * [D] per row
Tensor row_scale(const Tensor& x, const Tensor& s);   // [L,D] * [L] per row
Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor transpose2d(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Row gather from an embedding table; duplicate indices accumulate on the
// backward pass.
Tensor embedding_rows(const Tensor& table, const std::vector<int64_t>& indices);

// Bijective layout remap: out_flat[i] = in_flat[index[i]]. `index` must be a
// permutation of [0, numel).
Tensor gather_permute(const Tensor& x, Shape out_shape,
                      std::shared_ptr<const std::vector<int64_t>> index);

// ---- reductions ----
Tensor sum_all(const Tensor& x);   // -> [1]
Tensor mean_all(const Tensor& x);  // -> [1]
Tensor dot(const Tensor& a, const Tensor& b);  // sum(a*b) -> [1]

// ---- core linear algebra / NN primitives ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// Zero-mean unit-variance over all elements, with an eps-regularized
// denominator; constant inputs map to exactly zero.
Tensor standardize(const Tensor& x, double eps = 1e-6);

// 2D convolution, no padding unless `pad` > 0 (zero padding). x is [C,H,W]
// or [C,T,H,W] (applied frame by frame). w is [O,C,k,k].
Tensor conv2d(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad = 0);

// Temporal-only causal convolution. x is [C,T,H,W], w is [O,C,kt,1,1]. The
// input is left-padded with kt-1 copies of the first frame, so output step
// tau depends only on input times <= tau*stride_t. T must be divisible by
// stride_t.
Tensor causal_conv3d(const Tensor& x, const Tensor& w, int64_t stride_t);

// Scaled dot-product attention over rows: q [Lq,D], k/v [Lk,D]. heads must
// divide D; each head attends independently and results are concatenated.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t heads = 1);

// ---- optimizer ----
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    int64_t step = 0;
};

// Standard Adam with bias correction, updating param values in place from
// param gradients. Throws TrainError naming the parameter on a non-finite
// gradient.
void adam_step(Tensor& param, AdamState& state, double lr, double beta1, double beta2,
               double eps, const std::string& name);

// ---- gradient checking ----
struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t probes = 0;
    std::string worst_input;
    int64_t worst_index = -1;
};

// Compares tape gradients of a scalar-valued function against central finite
// differences (f(x+h)-f(x-h))/2h. Relative error uses max(1,|a|,|b|) in the
// denominator so near-zero gradients are compared absolutely. If
// max_probes_per_input >= 0, probes a seeded random subset of each input's
// elements instead of all of them.
GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, double h = 1e-5,
                           int64_t max_probes_per_input = -1, uint64_t probe_seed = 17);

}  // namespace motok
