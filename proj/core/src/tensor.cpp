// SPDX-License-Identifier: Apache-2.0
#include "motok/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

namespace motok {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            s += ",";
        }
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

void Node::ensure_grad() {
    if (requires_grad && grad.size() != val.size()) {
        grad.assign(val.size(), 0.0);
    }
}

namespace {

thread_local bool g_grad_enabled = true;

void check_shape_positive(const Shape& shape) {
    for (int64_t d : shape) {
        if (d <= 0) {
            throw DimError("tensor dims must be positive, got " + shape_str(shape));
        }
    }
}

NodePtr new_node(Shape shape, const char* op) {
    check_shape_positive(shape);
    auto node = std::make_shared<Node>();
    node->val.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    node->shape = std::move(shape);
    node->op = op;
    return node;
}

// Attaches parents and the backward closure iff grad mode is on and at least
// one parent carries requires_grad.
void record(const NodePtr& node, std::initializer_list<Tensor> parents,
            std::function<void(Node&)> bw) {
    bool any = false;
    for (const Tensor& p : parents) {
        any = any || p.requires_grad();
    }
    if (g_grad_enabled && any) {
        node->requires_grad = true;
        node->ensure_grad();
        node->parents.reserve(parents.size());
        for (const Tensor& p : parents) {
            node->parents.push_back(p.node());
        }
        node->backward = std::move(bw);
    }
}

const std::vector<double>& pval(const Node& n, size_t i) {
    return n.parents[i]->val;
}

bool pneeds(const Node& n, size_t i) {
    return n.parents[i]->requires_grad;
}

std::vector<double>& pgrad(const Node& n, size_t i) {
    return n.parents[i]->grad;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor basics

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto node = new_node(std::move(shape), "leaf");
    node->requires_grad = requires_grad;
    node->ensure_grad();
    return Tensor(node);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node()->val.begin(), t.node()->val.end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw DimError("from_data: shape " + shape_str(shape) + " does not match data length " +
                       std::to_string(data.size()));
    }
    auto node = new_node(std::move(shape), "leaf");
    node->val = std::move(data);
    node->requires_grad = requires_grad;
    node->ensure_grad();
    return Tensor(node);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return full({1}, value, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double scl, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node()->val) {
        v = rng.normal() * scl;
    }
    return t;
}

const Shape& Tensor::shape() const {
    return node_->shape;
}

int64_t Tensor::numel() const {
    return node_ ? node_->numel() : 0;
}

int64_t Tensor::dim(int i) const {
    return node_->shape.at(static_cast<size_t>(i));
}

int Tensor::rank() const {
    return static_cast<int>(node_->shape.size());
}

std::span<const double> Tensor::data() const {
    return {node_->val.data(), node_->val.size()};
}

std::span<double> Tensor::mutable_data() {
    if (!node_->parents.empty()) {
        throw DimError("mutable_data: only leaf tensors may be mutated");
    }
    return {node_->val.data(), node_->val.size()};
}

bool Tensor::requires_grad() const {
    return node_ && node_->requires_grad;
}

std::span<const double> Tensor::grad() const {
    return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) {
        throw DimError("item: tensor has " + std::to_string(numel()) + " elements");
    }
    return node_->val[0];
}

double Tensor::at(int64_t flat_index) const {
    return node_->val.at(static_cast<size_t>(flat_index));
}

bool Tensor::all_finite() const {
    for (double v : node_->val) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Grad mode, tape, backward

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() {
    g_grad_enabled = previous_;
}

bool grad_enabled() {
    return g_grad_enabled;
}

Tape Tape::build(const Tensor& root) {
    Tape tape;
    tape.root_ = root.node();
    if (!tape.root_) {
        return tape;
    }
    struct Frame {
        Node* n;
        size_t next;
    };
    std::unordered_set<Node*> visited;
    std::vector<Frame> stack;
    stack.push_back({tape.root_.get(), 0});
    visited.insert(tape.root_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (visited.insert(p).second) {
                stack.push_back({p, 0});
            }
        } else {
            tape.order_.push_back(f.n);
            stack.pop_back();
        }
    }
    return tape;
}

void Tape::run_backward() {
    if (!root_) {
        return;
    }
    if (root_->numel() != 1) {
        throw DimError("backward: root must be scalar, got " + shape_str(root_->shape));
    }
    if (!root_->requires_grad) {
        return;
    }
    root_->ensure_grad();
    root_->grad[0] += 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node* n = *it;
        if (n->backward) {
            n->backward(*n);
        }
    }
}

void backward(const Tensor& root) {
    Tape::build(root).run_backward();
}

// ---------------------------------------------------------------------------
// Elementwise / broadcast binary ops

namespace {

enum class Bin { add, sub, mul, divide };

const char* bin_name(Bin op) {
    switch (op) {
        case Bin::add: return "add";
        case Bin::sub: return "sub";
        case Bin::mul: return "mul";
        default: return "div";
    }
}

Tensor binary_op(const Tensor& a, const Tensor& b, Bin op) {
    const bool a_scalar = a.numel() == 1;
    const bool b_scalar = b.numel() == 1;
    if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
        throw DimError(std::string(bin_name(op)) + ": shape mismatch " + shape_str(a.shape()) +
                       " vs " + shape_str(b.shape()));
    }
    const Shape& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
    auto node = new_node(out_shape, bin_name(op));
    const auto& av = a.node()->val;
    const auto& bv = b.node()->val;
    const size_t n = node->val.size();
    for (size_t i = 0; i < n; ++i) {
        const double x = av[a_scalar ? 0 : i];
        const double y = bv[b_scalar ? 0 : i];
        switch (op) {
            case Bin::add: node->val[i] = x + y; break;
            case Bin::sub: node->val[i] = x - y; break;
            case Bin::mul: node->val[i] = x * y; break;
            case Bin::divide: node->val[i] = x / y; break;
        }
    }
    record(node, {a, b}, [op, a_scalar, b_scalar](Node& nd) {
        const auto& av = pval(nd, 0);
        const auto& bv = pval(nd, 1);
        const size_t n = nd.val.size();
        if (pneeds(nd, 0)) {
            auto& da = pgrad(nd, 0);
            for (size_t i = 0; i < n; ++i) {
                const double y = bv[b_scalar ? 0 : i];
                double g = nd.grad[i];
                switch (op) {
                    case Bin::add: break;
                    case Bin::sub: break;
                    case Bin::mul: g *= y; break;
                    case Bin::divide: g /= y; break;
                }
                da[a_scalar ? 0 : i] += g;
            }
        }
        if (pneeds(nd, 1)) {
            auto& db = pgrad(nd, 1);
            for (size_t i = 0; i < n; ++i) {
                const double x = av[a_scalar ? 0 : i];
                const double y = bv[b_scalar ? 0 : i];
                double g = nd.grad[i];
                switch (op) {
                    case Bin::add: break;
                    case Bin::sub: g = -g; break;
                    case Bin::mul: g *= x; break;
                    case Bin::divide: g *= -x / (y * y); break;
                }
                db[b_scalar ? 0 : i] += g;
            }
        }
    });
    return Tensor(node);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, Bin::add);
}
Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, Bin::sub);
}
Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, Bin::mul);
}
Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, Bin::divide);
}

Tensor scale(const Tensor& x, double c) {
    auto node = new_node(x.shape(), "scale");
    const auto& xv = x.node()->val;
    for (size_t i = 0; i < xv.size(); ++i) {
        node->val[i] = xv[i] * c;
    }
    record(node, {x}, [c](Node& nd) {
        if (!pneeds(nd, 0)) {
            return;
        }
        auto& dx = pgrad(nd, 0);
        for (size_t i = 0; i < nd.val.size(); ++i) {
            dx[i] += nd.grad[i] * c;
        }
    });
    return Tensor(node);
}

Tensor add_scalar(const Tensor& x, double c) {
    auto node = new_node(x.shape(), "add_scalar");
    const auto& xv = x.node()->val;
    for (size_t i = 0; i < xv.size(); ++i) {
        node->val[i] = xv[i] + c;
    }
    record(node, {x}, [](Node& nd) {
        if (!pneeds(nd, 0)) {
            return;
        }
        auto& dx = pgrad(nd, 0);
        for (size_t i = 0; i < nd.val.size(); ++i) {
            dx[i] += nd.grad[i];
        }
    });
    return Tensor(node);
}

Tensor neg(const Tensor& x) {
    return scale(x, -1.0);
}

Tensor silu(const Tensor& x) {
    auto node = new_node(x.shape(), "silu");
    const auto& xv = x.node()->val;
    for (size_t i = 0; i < xv.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-xv[i]));
        node->val[i] = xv[i] * s;
    }
    record(node, {x}, [](Node& nd) {
        if (!pneeds(nd, 0)) {
            return;
        }
        const auto& xv = pval(nd, 0);
        auto& dx = pgrad(nd, 0);
        for (size_t i = 0; i < nd.val.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-xv[i]));
            dx[i] += nd.grad[i] * s * (1.0 + xv[i] * (1.0 - s));
        }
    });
    return Tensor(node);
}

Tensor sqrt_t(const Tensor& x) {
    auto node = new_node(x.shape(), "sqrt");
    const auto& xv = x.node()->val;
    for (size_t i = 0; i < xv.size(); ++i) {
        node->val[i] = std::sqrt(xv[i]);
    }
    record(node, {x}, [](Node& nd) {
        if (!pneeds(nd, 0)) {
            return;
        }
        auto& dx = pgrad(nd, 0);
        for (size_t i = 0; i < nd.val.size(); ++i) {
            dx[i] += nd.grad[i] * 0.5 / nd.val[i];
        }
    });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// Row/column structure

namespace {

void check_matrix(const Tensor& x, const char* op) {
    if (x.rank() != 2) {
        throw DimError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(x.shape()));
    }
}

}  // namespace

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    check_matrix(x, "add_rowvec");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    if (v.numel() != cols) {
        throw DimError("add_rowvec: vector length " + std::to_string(v.numel()) +
                       " vs cols " + std::to_string(cols));
    }
    auto node = new_node(x.shape(), "add_rowvec");
    const auto& xv = x.node()->val;
    const auto& vv = v.node()->val;
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            node->val[r * cols + c] = xv[r * cols + c] + vv[c];
        }
    }
    record(node, {x, v}, [rows, cols](Node& nd) {
        if (pneeds(nd, 0)) {
            auto& dx = pgrad(nd, 0);
            for (size_t i = 0; i < nd.val.size(); ++i) {
                dx[i] += nd.grad[i];
            }
        }
        if (pneeds(nd, 1)) {
            auto& dv = pgrad(nd, 1);
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t c = 0; c < cols; ++c) {
                    dv[c] += nd.grad[r * cols + c];
                }
            }
        }
    });
    return Tensor(node);
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
    check_matrix(x, "mul_rowvec");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    if (v.numel() != cols) {
        throw DimError("mul_rowvec: vector length " + std::to_string(v.numel()) +
                       " vs cols " + std::to_string(cols));
    }
    auto node = new_node(x.shape(), "mul_rowvec");
    const auto& xv = x.node()->val;
    const auto& vv = v.node()->val;
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            node->val[r * cols + c] = xv[r * cols + c] * vv[c];
        }
    }
    record(node, {x, v}, [rows, cols](Node& nd) {
        const auto& xv = pval(nd, 0);
        const auto& vv = pval(nd, 1);
        if (pneeds(nd, 0)) {
            auto& dx = pgrad(nd, 0);
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t c = 0; c < cols; ++c) {
                    dx[r * cols + c] += nd.grad[r * cols + c] * vv[c];
                }
            }
        }
        if (pneeds(nd, 1)) {
            auto& dv = pgrad(nd, 1);
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t c = 0; c < cols; ++c) {
                    dv[c] += nd.grad[r * cols + c] * xv[r * cols + c];
                }
            }
        }
    });
    return Tensor(node);
}

Tensor row_scale(const Tensor& x, const Tensor& s) {
    check_matrix(x, "row_scale");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    if (s.numel() != rows) {
        throw DimError("row_scale: scale length " + std::to_string(s.numel()) +
                       " vs rows " + std::to_string(rows));
    }
    auto node = new_node(x.shape(), "row_scale");
    const auto& xv = x.node()->val;
    const auto& sv = s.node()->val;
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            node->val[r * cols + c] = xv[r * cols + c] * sv[r];
        }
    }
    record(node, {x, s}, [rows, cols](Node& nd) {
        const auto& xv = pval(nd, 0);
        const auto& sv = pval(nd, 1);
        if (pneeds(nd, 0)) {
            auto& dx = pgrad(nd, 0);
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t c = 0; c < cols; ++c) {
                    dx[r * cols + c] += nd.grad[r * cols + c] * sv[r];
                }
            }
        }
        if (pneeds(nd, 1)) {
            auto& ds = pgrad(nd, 1);
            for (int64_t r = 0; r < rows; ++r) {
                double acc = 0.0;
                for (int64_t c = 0; c < cols; ++c) {
                    acc += nd.grad[r * cols + c] * xv[r * cols + c];
                }
                ds[r] += acc;
            }
        }
    });
    return Tensor(node);
}

Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1) {
    check_matrix(x, "slice_rows");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    if (r0 < 0 || r1 > rows || r0 >= r1) {
        throw DimError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                       ") out of " + std::to_string(rows));
    }
    auto node = new_node({r1 - r0, cols}, "slice_rows");
    const auto& xv = x.node()->val;
    std::copy(xv.begin() + r0 * cols, xv.begin() + r1 * cols, node->val.begin());
    record(node, {x}, [r0, cols](Node& nd) {
        if (!pneeds(nd, 0)) {
            return;
        }
        auto& dx = pgrad(nd, 0);
        for (size_t i = 0; i < nd.val.size(); ++i) {
            dx[static_cast<size_t>(r0 * cols) + i] += nd.grad[i];
        }
    });
    return Tensor(node);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw DimError("concat_rows: no parts");
    }
    const int64_t cols = parts[0].dim(1);
    int64_t rows = 0;
    bool any_grad = false;
    for (const Tensor& p : parts) {
        check_matrix(p, "concat_rows");
        if (p.dim(1) != cols) {
            throw DimError("concat_rows: column mismatch");
        }
        rows += p.dim(0);
        any_grad = any_grad || p.requires_grad();
    }
    auto node = new_node({rows, cols}, "concat_rows");
    size_t off = 0;
    for (const Tensor& p : parts) {
        const auto& pv = p.node()->val;
        std::copy(pv.begin(), pv.end(), node->val.begin() + static_cast<int64_t>(off));
        off += pv.size();
    }
    if (g_grad_enabled && any_grad) {
        node->requires_grad = true;
        node->ensure_grad();
        for (const Tensor& p : parts) {
            node->parents.push_back(p.node());
        }
        node->backward = [](Node& nd) {
            size_t off = 0;
            for (auto& parent : nd.parents) {
                const size_t n = parent->val.size();
                if (parent->requires_grad) {
                    for (size_t i = 0; i < n; ++i) {
                        parent->grad[i] += nd.grad[off + i];
                    }
                }
                off += n;
            }
        };
    }
    return Tensor(node);
}

Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1) {
    check_matrix(x, "slice_cols");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    if (c0 < 0 || c1 > cols || c0 >= c1) {
        throw DimError("slice_cols: bad range");
    }
    const int64_t w = c1 - c0;
    auto node = new_node({rows, w}, "slice_cols");
    const auto& xv = x.node()->val;
    for (int64_t r = 0; r < rows; ++r) {
        std::copy(xv.begin() + r * cols + c0, xv.begin() + r * cols + c1,
                  node->val.begin() + r * w);
    }
    record(node, {x}, [c0, cols, w](Node& nd) {
        if (!pneeds(nd, 0)) {
            return;
        }
        auto& dx = pgrad(nd, 0);
        const int64_t rows = nd.shape[0];
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t c = 0; c < w; ++c) {
                dx[r * cols + c0 + c] += nd.grad[r * w + c];
            }
        }
    });
    return Tensor(node);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw DimError("concat_cols: no parts");
    }
    const int64_t rows = parts[0].dim(0);
    int64_t cols = 0;
    bool any_grad = false;
    for (const Tensor& p : parts) {
        check_matrix(p, "concat_cols");
        if (p.dim(0) != rows) {
            throw DimError("concat_cols: row mismatch");
        }
        cols += p.dim(1);
        any_grad = any_grad || p.requires_grad();
    }
    auto node = new_node({rows, cols}, "concat_cols");
    int64_t coff = 0;
    for (const Tensor& p : parts) {
        const int64_t w = p.dim(1);
        const auto& pv = p.node()->val;
        for (int64_t r = 0; r < rows; ++r) {
            std::copy(pv.begin() + r * w, pv.begin() + (r + 1) * w,
                      node->val.begin() + r * cols + coff);
        }
        coff += w;
    }
    if (g_grad_enabled && any_grad) {
        node->requires_grad = true;
        node->ensure_grad();
        for (const Tensor& p : parts) {
            node->parents.push_back(p.node());
        }
        node->backward = [rows, cols](Node& nd) {
            int64_t coff = 0;
            for (auto& parent : nd.parents) {
                const int64_t w = parent->shape[1];
                if (parent->requires_grad) {
                    for (int64_t r = 0; r < rows; ++r) {
                        for (int64_t c = 0; c < w; ++c) {
                            parent->grad[r * w + c] += nd.grad[r * cols + coff + c];
                        }
                    }
                }
                coff += w;
            }
        };
    }
    return Tensor(node);
}

Tensor transpose2d(const Tensor& x) {
    check_matrix(x, "transpose2d");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    auto node = new_node({cols, rows}, "transpose2d");
    const auto& xv = x.node()->val;
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            node->val[c * rows + r] = xv[r * cols + c];
        }
    }
    record(node, {x}, [rows, cols](Node& nd) {
        if (!pneeds(nd, 0)) {
            return;
        }
        auto& dx = pgrad(nd, 0);
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t c = 0; c < cols; ++c) {
                dx[r * cols + c] += nd.grad[c * rows + r];
            }
        }
    });
    return Tensor(node);
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                       " changes element count");
    }
    auto node = new_node(std::move(shape), "reshape");
    node->val = x.node()->val;
    record(node, {x}, [](Node& nd) {
        if (!pneeds(nd, 0)) {
            return;
        }
        auto& dx = pgrad(nd, 0);
        for (size_t i = 0; i < nd.val.size(); ++i) {
            dx[i] += nd.grad[i];
        }
    });
    return Tensor(node);
}

Tensor embedding_rows(const Tensor& table, const std::vector<int64_t>& indices) {
    check_matrix(table, "embedding_rows");
    const int64_t vocab = table.dim(0), width = table.dim(1);
    for (int64_t idx : indices) {
        if (idx < 0 || idx >= vocab) {
            throw DimError("embedding_rows: index " + std::to_string(idx) + " out of " +
                           std::to_string(vocab));
        }
    }
    auto node = new_node({static_cast<int64_t>(indices.size()), width}, "embedding_rows");
    const auto& tv = table.node()->val;
    for (size_t i = 0; i < indices.size(); ++i) {
        std::copy(tv.begin() + indices[i] * width, tv.begin() + (indices[i] + 1) * width,
                  node->val.begin() + static_cast<int64_t>(i) * width);
    }
    record(node, {table}, [indices, width](Node& nd) {
        if (!pneeds(nd, 0)) {
            return;
        }
        auto& dt = pgrad(nd, 0);
        for (size_t i = 0; i < indices.size(); ++i) {
            for (int64_t c = 0; c < width; ++c) {
                dt[indices[i] * width + c] += nd.grad[static_cast<int64_t>(i) * width + c];
            }
        }
    });
    return Tensor(node);
}

Tensor gather_permute(const Tensor& x, Shape out_shape,
                      std::shared_ptr<const std::vector<int64_t>> index) {
    const int64_t n = shape_numel(out_shape);
    if (n != x.numel() || static_cast<int64_t>(index->size()) != n) {
        throw DimError("gather_permute: size mismatch");
    }
    auto node = new_node(std::move(out_shape), "gather_permute");
    const auto& xv = x.node()->val;
    const auto& idx = *index;
    for (int64_t i = 0; i < n; ++i) {
        node->val[i] = xv[idx[i]];
    }
    record(node, {x}, [index](Node& nd) {
        if (!pneeds(nd, 0)) {
            return;
        }
        auto& dx = pgrad(nd, 0);
        const auto& idx = *index;
        for (size_t i = 0; i < nd.val.size(); ++i) {
            dx[idx[i]] += nd.grad[i];
        }
    });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum_all(const Tensor& x) {
    auto node = new_node({1}, "sum_all");
    double acc = 0.0;
    for (double v : x.node()->val) {
        acc += v;
    }
    node->val[0] = acc;
    record(node, {x}, [](Node& nd) {
        if (!pneeds(nd, 0)) {
            return;
        }
        auto& dx = pgrad(nd, 0);
        const double g = nd.grad[0];
        for (auto& v : dx) {
            v += g;
        }
    });
    return Tensor(node);
}

Tensor mean_all(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.numel());
    auto node = new_node({1}, "mean_all");
    double acc = 0.0;
    for (double v : x.node()->val) {
        acc += v;
    }
    node->val[0] = acc * inv;
    record(node, {x}, [inv](Node& nd) {
        if (!pneeds(nd, 0)) {
            return;
        }
        auto& dx = pgrad(nd, 0);
        const double g = nd.grad[0] * inv;
        for (auto& v : dx) {
            v += g;
        }
    });
    return Tensor(node);
}

Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) {
        throw DimError("dot: size mismatch");
    }
    auto node = new_node({1}, "dot");
    const auto& av = a.node()->val;
    const auto& bv = b.node()->val;
    double acc = 0.0;
    for (size_t i = 0; i < av.size(); ++i) {
        acc += av[i] * bv[i];
    }
    node->val[0] = acc;
    record(node, {a, b}, [](Node& nd) {
        const auto& av = pval(nd, 0);
        const auto& bv = pval(nd, 1);
        const double g = nd.grad[0];
        if (pneeds(nd, 0)) {
            auto& da = pgrad(nd, 0);
            for (size_t i = 0; i < av.size(); ++i) {
                da[i] += g * bv[i];
            }
        }
        if (pneeds(nd, 1)) {
            auto& db = pgrad(nd, 1);
            for (size_t i = 0; i < av.size(); ++i) {
                db[i] += g * av[i];
            }
        }
    });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_matrix(a, "matmul");
    check_matrix(b, "matmul");
    const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw DimError("matmul: inner dims disagree, " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    }
    auto node = new_node({m, n}, "matmul");
    const double* A = a.node()->val.data();
    const double* B = b.node()->val.data();
    double* C = node->val.data();
    for (int64_t i = 0; i < m; ++i) {
        double* crow = C + i * n;
        const double* arow = A + i * k;
        for (int64_t l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = B + l * n;
            for (int64_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
    record(node, {a, b}, [m, k, n](Node& nd) {
        const double* A = pval(nd, 0).data();
        const double* B = pval(nd, 1).data();
        const double* dC = nd.grad.data();
        if (pneeds(nd, 0)) {
            double* dA = pgrad(nd, 0).data();
            for (int64_t i = 0; i < m; ++i) {
                const double* dcrow = dC + i * n;
                double* darow = dA + i * k;
                for (int64_t l = 0; l < k; ++l) {
                    const double* brow = B + l * n;
                    double acc = 0.0;
                    for (int64_t j = 0; j < n; ++j) {
                        acc += dcrow[j] * brow[j];
                    }
                    darow[l] += acc;
                }
            }
        }
        if (pneeds(nd, 1)) {
            double* dB = pgrad(nd, 1).data();
            for (int64_t i = 0; i < m; ++i) {
                const double* arow = A + i * k;
                const double* dcrow = dC + i * n;
                for (int64_t l = 0; l < k; ++l) {
                    const double av = arow[l];
                    double* dbrow = dB + l * n;
                    for (int64_t j = 0; j < n; ++j) {
                        dbrow[j] += av * dcrow[j];
                    }
                }
            }
        }
    });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// softmax

Tensor softmax(const Tensor& x, int axis) {
    const int r = x.rank();
    if (axis < 0 || axis >= r) {
        throw DimError("softmax: axis " + std::to_string(axis) + " out of rank " +
                       std::to_string(r));
    }
    const int64_t len = x.dim(axis);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) {
        outer *= x.dim(i);
    }
    for (int i = axis + 1; i < r; ++i) {
        inner *= x.dim(i);
    }
    auto node = new_node(x.shape(), "softmax");
    const auto& xv = x.node()->val;
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
            const int64_t base = o * len * inner + i;
            double mx = xv[base];
            for (int64_t a = 1; a < len; ++a) {
                mx = std::max(mx, xv[base + a * inner]);
            }
            double denom = 0.0;
            for (int64_t a = 0; a < len; ++a) {
                const double e = std::exp(xv[base + a * inner] - mx);
                node->val[base + a * inner] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (int64_t a = 0; a < len; ++a) {
                node->val[base + a * inner] *= inv;
            }
        }
    }
    record(node, {x}, [len, outer, inner](Node& nd) {
        if (!pneeds(nd, 0)) {
            return;
        }
        auto& dx = pgrad(nd, 0);
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t i = 0; i < inner; ++i) {
                const int64_t base = o * len * inner + i;
                double s = 0.0;
                for (int64_t a = 0; a < len; ++a) {
                    s += nd.grad[base + a * inner] * nd.val[base + a * inner];
                }
                for (int64_t a = 0; a < len; ++a) {
                    const int64_t idx = base + a * inner;
                    dx[idx] += nd.val[idx] * (nd.grad[idx] - s);
                }
            }
        }
    });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// layer_norm / standardize

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int64_t d = x.dim(x.rank() - 1);
    if (gamma.numel() != d || beta.numel() != d) {
        throw DimError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                       shape_str(beta.shape()) + " vs feature dim " + std::to_string(d));
    }
    const int64_t rows = x.numel() / d;
    auto node = new_node(x.shape(), "layer_norm");
    const auto& xv = x.node()->val;
    const auto& gv = gamma.node()->val;
    const auto& bv = beta.node()->val;
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mu = 0.0;
        for (int64_t c = 0; c < d; ++c) {
            mu += row[c];
        }
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t c = 0; c < d; ++c) {
            const double t = row[c] - mu;
            var += t * t;
        }
        var /= static_cast<double>(d);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        double* out = node->val.data() + r * d;
        for (int64_t c = 0; c < d; ++c) {
            out[c] = (row[c] - mu) * inv_std * gv[c] + bv[c];
        }
    }
    record(node, {x, gamma, beta}, [rows, d, eps](Node& nd) {
        const auto& xv = pval(nd, 0);
        const auto& gv = pval(nd, 1);
        const double dn = static_cast<double>(d);
        for (int64_t r = 0; r < rows; ++r) {
            const double* row = xv.data() + r * d;
            const double* gout = nd.grad.data() + r * d;
            double mu = 0.0;
            for (int64_t c = 0; c < d; ++c) {
                mu += row[c];
            }
            mu /= dn;
            double var = 0.0;
            for (int64_t c = 0; c < d; ++c) {
                const double t = row[c] - mu;
                var += t * t;
            }
            var /= dn;
            const double inv_std = 1.0 / std::sqrt(var + eps);
            // xhat_c = (x_c - mu) * inv_std; g_c = dout_c * gamma_c
            double mean_g = 0.0, mean_gx = 0.0;
            for (int64_t c = 0; c < d; ++c) {
                const double xhat = (row[c] - mu) * inv_std;
                const double g = gout[c] * gv[c];
                mean_g += g;
                mean_gx += g * xhat;
            }
            mean_g /= dn;
            mean_gx /= dn;
            if (pneeds(nd, 0)) {
                double* dx = pgrad(nd, 0).data() + r * d;
                for (int64_t c = 0; c < d; ++c) {
                    const double xhat = (row[c] - mu) * inv_std;
                    const double g = gout[c] * gv[c];
                    dx[c] += (g - mean_g - xhat * mean_gx) * inv_std;
                }
            }
            if (pneeds(nd, 1)) {
                double* dg = pgrad(nd, 1).data();
                for (int64_t c = 0; c < d; ++c) {
                    dg[c] += gout[c] * (row[c] - mu) * inv_std;
                }
            }
            if (pneeds(nd, 2)) {
                double* db = pgrad(nd, 2).data();
                for (int64_t c = 0; c < d; ++c) {
                    db[c] += gout[c];
                }
            }
        }
    });
    return Tensor(node);
}

Tensor standardize(const Tensor& x, double eps) {
    const int64_t n = x.numel();
    auto node = new_node(x.shape(), "standardize");
    const auto& xv = x.node()->val;
    const double dn = static_cast<double>(n);
    double mu = 0.0;
    for (double v : xv) {
        mu += v;
    }
    mu /= dn;
    double var = 0.0;
    for (double v : xv) {
        const double t = v - mu;
        var += t * t;
    }
    var /= dn;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (int64_t i = 0; i < n; ++i) {
        node->val[i] = (xv[i] - mu) * inv_std;
    }
    record(node, {x}, [n, eps](Node& nd) {
        if (!pneeds(nd, 0)) {
            return;
        }
        const auto& xv = pval(nd, 0);
        auto& dx = pgrad(nd, 0);
        const double dn = static_cast<double>(n);
        double mu = 0.0;
        for (double v : xv) {
            mu += v;
        }
        mu /= dn;
        double var = 0.0;
        for (double v : xv) {
            const double t = v - mu;
            var += t * t;
        }
        var /= dn;
        const double inv_std = 1.0 / std::sqrt(var + eps);
        double mean_g = 0.0, mean_gz = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double z = (xv[i] - mu) * inv_std;
            mean_g += nd.grad[i];
            mean_gz += nd.grad[i] * z;
        }
        mean_g /= dn;
        mean_gz /= dn;
        // Same structure as the layer_norm input gradient with the whole
        // tensor as one row; eps keeps the constant-input case finite.
        for (int64_t i = 0; i < n; ++i) {
            const double z = (xv[i] - mu) * inv_std;
            dx[i] += (nd.grad[i] - mean_g - z * mean_gz) * inv_std;
        }
    });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// Convolutions

namespace {

struct Conv2dDims {
    int64_t c, t, h, w;  // t == 1 for rank-3 inputs
    int64_t o, k;
    int64_t oh, ow;
    bool video;
};

Conv2dDims conv2d_dims(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad) {
    if (stride < 1) {
        throw DimError("conv2d: stride must be >= 1");
    }
    if (pad < 0) {
        throw DimError("conv2d: pad must be >= 0");
    }
    Conv2dDims d{};
    if (x.rank() == 3) {
        d.video = false;
        d.c = x.dim(0);
        d.t = 1;
        d.h = x.dim(1);
        d.w = x.dim(2);
    } else if (x.rank() == 4) {
        d.video = true;
        d.c = x.dim(0);
        d.t = x.dim(1);
        d.h = x.dim(2);
        d.w = x.dim(3);
    } else {
        throw DimError("conv2d: input must be [C,H,W] or [C,T,H,W], got " + shape_str(x.shape()));
    }
    if (w.rank() != 4 || w.dim(2) != w.dim(3)) {
        throw DimError("conv2d: weight must be [O,C,k,k], got " + shape_str(w.shape()));
    }
    if (w.dim(1) != d.c) {
        throw DimError("conv2d: input channels " + std::to_string(d.c) + " vs weight " +
                       std::to_string(w.dim(1)));
    }
    d.o = w.dim(0);
    d.k = w.dim(2);
    if (d.k > d.h + 2 * pad || d.k > d.w + 2 * pad) {
        throw DimError("conv2d: kernel " + std::to_string(d.k) + " larger than padded input " +
                       std::to_string(d.h + 2 * pad) + "x" + std::to_string(d.w + 2 * pad));
    }
    d.oh = (d.h + 2 * pad - d.k) / stride + 1;
    d.ow = (d.w + 2 * pad - d.k) / stride + 1;
    return d;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad) {
    const Conv2dDims d = conv2d_dims(x, w, stride, pad);
    Shape out_shape = d.video ? Shape{d.o, d.t, d.oh, d.ow} : Shape{d.o, d.oh, d.ow};
    auto node = new_node(std::move(out_shape), "conv2d");
    const auto& xv = x.node()->val;
    const auto& wv = w.node()->val;
    const int64_t frame_in = d.h * d.w;
    const int64_t frame_out = d.oh * d.ow;
    for (int64_t f = 0; f < d.t; ++f) {
        for (int64_t o = 0; o < d.o; ++o) {
            double* of = node->val.data() + (o * d.t + f) * frame_out;
            for (int64_t oy = 0; oy < d.oh; ++oy) {
                for (int64_t ox = 0; ox < d.ow; ++ox) {
                    double acc = 0.0;
                    const int64_t iy0 = oy * stride - pad;
                    const int64_t ix0 = ox * stride - pad;
                    for (int64_t c = 0; c < d.c; ++c) {
                        const double* xc = xv.data() + (c * d.t + f) * frame_in;
                        const double* wc = wv.data() + (o * d.c + c) * d.k * d.k;
                        for (int64_t ky = 0; ky < d.k; ++ky) {
                            const int64_t iy = iy0 + ky;
                            if (iy < 0 || iy >= d.h) {
                                continue;
                            }
                            for (int64_t kx = 0; kx < d.k; ++kx) {
                                const int64_t ix = ix0 + kx;
                                if (ix < 0 || ix >= d.w) {
                                    continue;
                                }
                                acc += xc[iy * d.w + ix] * wc[ky * d.k + kx];
                            }
                        }
                    }
                    of[oy * d.ow + ox] = acc;
                }
            }
        }
    }
    record(node, {x, w}, [d, stride, pad](Node& nd) {
        const auto& xv = pval(nd, 0);
        const auto& wv = pval(nd, 1);
        const int64_t frame_in = d.h * d.w;
        const int64_t frame_out = d.oh * d.ow;
        double* dx = pneeds(nd, 0) ? pgrad(nd, 0).data() : nullptr;
        double* dw = pneeds(nd, 1) ? pgrad(nd, 1).data() : nullptr;
        for (int64_t f = 0; f < d.t; ++f) {
            for (int64_t o = 0; o < d.o; ++o) {
                const double* gout = nd.grad.data() + (o * d.t + f) * frame_out;
                for (int64_t oy = 0; oy < d.oh; ++oy) {
                    for (int64_t ox = 0; ox < d.ow; ++ox) {
                        const double g = gout[oy * d.ow + ox];
                        if (g == 0.0) {
                            continue;
                        }
                        const int64_t iy0 = oy * stride - pad;
                        const int64_t ix0 = ox * stride - pad;
                        for (int64_t c = 0; c < d.c; ++c) {
                            const int64_t xoff = (c * d.t + f) * frame_in;
                            const int64_t woff = (o * d.c + c) * d.k * d.k;
                            for (int64_t ky = 0; ky < d.k; ++ky) {
                                const int64_t iy = iy0 + ky;
                                if (iy < 0 || iy >= d.h) {
                                    continue;
                                }
                                for (int64_t kx = 0; kx < d.k; ++kx) {
                                    const int64_t ix = ix0 + kx;
                                    if (ix < 0 || ix >= d.w) {
                                        continue;
                                    }
                                    if (dx) {
                                        dx[xoff + iy * d.w + ix] += g * wv[woff + ky * d.k + kx];
                                    }
                                    if (dw) {
                                        dw[woff + ky * d.k + kx] += g * xv[xoff + iy * d.w + ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    return Tensor(node);
}

Tensor causal_conv3d(const Tensor& x, const Tensor& w, int64_t stride_t) {
    if (x.rank() != 4) {
        throw DimError("causal_conv3d: input must be [C,T,H,W], got " + shape_str(x.shape()));
    }
    if (w.rank() != 5 || w.dim(3) != 1 || w.dim(4) != 1) {
        throw DimError("causal_conv3d: weight must be [O,C,kt,1,1], got " + shape_str(w.shape()));
    }
    const int64_t c = x.dim(0), t = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const int64_t o = w.dim(0), kt = w.dim(2);
    if (w.dim(1) != c) {
        throw DimError("causal_conv3d: channel mismatch");
    }
    if (stride_t < 1) {
        throw DimError("causal_conv3d: stride_t must be >= 1");
    }
    if (t % stride_t != 0) {
        throw ConfigError("causal_conv3d: T=" + std::to_string(t) +
                          " not divisible by stride_t=" + std::to_string(stride_t));
    }
    const int64_t to = t / stride_t;
    const int64_t hw = h * ww;
    auto node = new_node({o, to, h, ww}, "causal_conv3d");
    const auto& xv = x.node()->val;
    const auto& wv = w.node()->val;
    // Padded time index p maps to the real frame max(0, p - (kt-1)):
    // the first frame is replicated kt-1 times on the left.
    for (int64_t oc = 0; oc < o; ++oc) {
        for (int64_t tau = 0; tau < to; ++tau) {
            double* out = node->val.data() + (oc * to + tau) * hw;
            for (int64_t ic = 0; ic < c; ++ic) {
                for (int64_t dt = 0; dt < kt; ++dt) {
                    const int64_t treal = std::max<int64_t>(0, tau * stride_t + dt - (kt - 1));
                    const double wgt = wv[(oc * c + ic) * kt + dt];
                    if (wgt == 0.0) {
                        continue;
                    }
                    const double* in = xv.data() + (ic * t + treal) * hw;
                    for (int64_t s = 0; s < hw; ++s) {
                        out[s] += wgt * in[s];
                    }
                }
            }
        }
    }
    record(node, {x, w}, [c, t, h, ww, o, kt, stride_t, to, hw](Node& nd) {
        const auto& xv = pval(nd, 0);
        const auto& wv = pval(nd, 1);
        const bool need_x = pneeds(nd, 0);
        const bool need_w = pneeds(nd, 1);
        for (int64_t oc = 0; oc < o; ++oc) {
            for (int64_t tau = 0; tau < to; ++tau) {
                const double* gout = nd.grad.data() + (oc * to + tau) * hw;
                for (int64_t ic = 0; ic < c; ++ic) {
                    for (int64_t dt = 0; dt < kt; ++dt) {
                        const int64_t treal =
                            std::max<int64_t>(0, tau * stride_t + dt - (kt - 1));
                        const int64_t widx = (oc * c + ic) * kt + dt;
                        const int64_t xoff = (ic * t + treal) * hw;
                        if (need_x) {
                            const double wgt = wv[widx];
                            double* dx = pgrad(nd, 0).data() + xoff;
                            for (int64_t s = 0; s < hw; ++s) {
                                dx[s] += wgt * gout[s];
                            }
                        }
                        if (need_w) {
                            const double* in = xv.data() + xoff;
                            double acc = 0.0;
                            for (int64_t s = 0; s < hw; ++s) {
                                acc += in[s] * gout[s];
                            }
                            pgrad(nd, 1)[widx] += acc;
                        }
                    }
                }
            }
        }
    });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// Attention

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t heads) {
    check_matrix(q, "attention");
    check_matrix(k, "attention");
    check_matrix(v, "attention");
    const int64_t d = q.dim(1);
    if (k.dim(1) != d || v.dim(1) != d) {
        throw DimError("attention: width mismatch");
    }
    if (k.dim(0) != v.dim(0)) {
        throw DimError("attention: key/value counts differ");
    }
    if (heads < 1 || d % heads != 0) {
        throw ConfigError("attention: width " + std::to_string(d) + " not divisible by heads " +
                          std::to_string(heads));
    }
    const int64_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int64_t hd = 0; hd < heads; ++hd) {
        const Tensor qh = heads == 1 ? q : slice_cols(q, hd * dh, (hd + 1) * dh);
        const Tensor kh = heads == 1 ? k : slice_cols(k, hd * dh, (hd + 1) * dh);
        const Tensor vh = heads == 1 ? v : slice_cols(v, hd * dh, (hd + 1) * dh);
        const Tensor scores = scale(matmul(qh, transpose2d(kh)), inv_sqrt);
        const Tensor attn = softmax(scores, 1);
        outs.push_back(matmul(attn, vh));
    }
    return heads == 1 ? outs[0] : concat_cols(outs);
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(Tensor& param, AdamState& state, double lr, double beta1, double beta2,
               double eps, const std::string& name) {
    auto vals = param.mutable_data();
    const auto g = param.grad();
    if (g.size() != vals.size()) {
        throw TrainError("adam_step: parameter '" + name + "' has no gradient");
    }
    if (state.m.size() != vals.size()) {
        state.m.assign(vals.size(), 0.0);
        state.v.assign(vals.size(), 0.0);
        state.step = 0;
    }
    for (size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i])) {
            throw TrainError("adam_step: non-finite gradient in parameter '" + name + "'");
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < vals.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        vals[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

// ---------------------------------------------------------------------------
// Gradient checking

GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, double h, int64_t max_probes_per_input,
                           uint64_t probe_seed) {
    for (auto& t : inputs) {
        if (t.requires_grad()) {
            t.zero_grad();
        }
    }
    Tensor out = f(inputs);
    if (out.numel() != 1) {
        throw DimError("grad_check: function must be scalar-valued");
    }
    backward(out);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& t : inputs) {
        analytic.emplace_back(t.grad().begin(), t.grad().end());
    }

    GradCheckReport report;
    Rng rng(probe_seed);
    for (size_t ii = 0; ii < inputs.size(); ++ii) {
        Tensor& t = inputs[ii];
        if (!t.requires_grad()) {
            continue;
        }
        const int64_t n = t.numel();
        std::vector<int64_t> probe_indices;
        if (max_probes_per_input < 0 || n <= max_probes_per_input) {
            probe_indices.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) {
                probe_indices[static_cast<size_t>(i)] = i;
            }
        } else {
            probe_indices.reserve(static_cast<size_t>(max_probes_per_input));
            for (int64_t i = 0; i < max_probes_per_input; ++i) {
                probe_indices.push_back(
                    static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(n))));
            }
        }
        auto vals = t.mutable_data();
        for (int64_t j : probe_indices) {
            const double orig = vals[static_cast<size_t>(j)];
            double fp = 0.0, fm = 0.0;
            {
                NoGradGuard ng;
                vals[static_cast<size_t>(j)] = orig + h;
                fp = f(inputs).item();
                vals[static_cast<size_t>(j)] = orig - h;
                fm = f(inputs).item();
                vals[static_cast<size_t>(j)] = orig;
            }
            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[ii][static_cast<size_t>(j)];
            const double denom = std::max({1.0, std::fabs(fd), std::fabs(an)});
            const double rel = std::fabs(fd - an) / denom;
            report.probes += 1;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_input = "input" + std::to_string(ii);
                report.worst_index = j;
            }
        }
    }
    return report;
}

}  // namespace motok
