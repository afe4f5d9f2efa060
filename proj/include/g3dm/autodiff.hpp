#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "g3dm/tensor.hpp"

namespace g3dm::ad {

// Reverse-mode graph node. Graphs are built eagerly (values computed at
// construction), can be re-evaluated in topological order after leaf edits,
// and differentiated once per backward() call.
class Node {
public:
    virtual ~Node() = default;

    Tensor value;
    Tensor grad;
    std::vector<std::shared_ptr<Node>> inputs;
    std::string label;

    bool is_leaf() const { return inputs.empty(); }

    virtual const char* kind() const = 0;
    // Recomputes `value` from inputs; leaves keep their stored value.
    virtual void compute() {}
    // Accumulates into the inputs' grads given this node's grad.
    virtual void backprop() {}

    std::string describe() const {
        std::string s = kind();
        if (!label.empty()) s += " '" + label + "'";
        return s;
    }

protected:
    [[noreturn]] void fail(const std::string& msg) const {
        throw std::invalid_argument(describe() + ": " + msg);
    }
};

using NodePtr = std::shared_ptr<Node>;

namespace detail {

inline void topo_order(const NodePtr& root, std::vector<Node*>& order) {
    // Iterative post-order DFS; graphs are DAGs with shared leaves.
    std::unordered_set<const Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (visited.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Re-evaluates every non-leaf node reachable from root, in dependency order,
// and returns the root value.
inline const Tensor& forward(const NodePtr& root) {
    std::vector<Node*> order;
    detail::topo_order(root, order);
    for (Node* n : order)
        if (!n->is_leaf()) n->compute();
    return root->value;
}

// Reverse-mode sweep from a scalar root. Grads of every node in the DAG are
// reset first, so each call yields plain (non-accumulated) derivatives.
inline void backward(const NodePtr& root) {
    if (root->value.size() != 1)
        throw std::invalid_argument("backward: root must be scalar, got shape " +
                                    root->value.shape_str());
    std::vector<Node*> order;
    detail::topo_order(root, order);
    for (Node* n : order) {
        n->grad = Tensor(n->value.shape());
    }
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) (*it)->backprop();
}

// ---------------------------------------------------------------------------
// Leaves

class Leaf final : public Node {
public:
    const char* kind() const override { return "leaf"; }
};

inline NodePtr leaf(Tensor t, std::string label = {}) {
    auto n = std::make_shared<Leaf>();
    n->value = std::move(t);
    n->label = std::move(label);
    return n;
}

// ---------------------------------------------------------------------------
// Dense ops

// X[m,k] @ W[k,n] + b[n]
class LinearOp final : public Node {
public:
    const char* kind() const override { return "linear"; }

    void compute() override {
        const Tensor& x = inputs[0]->value;
        const Tensor& w = inputs[1]->value;
        const Tensor& b = inputs[2]->value;
        if (x.cols() != w.rows())
            fail("input cols " + std::to_string(x.cols()) + " != weight rows " +
                 std::to_string(w.rows()));
        if (b.size() != w.cols()) fail("bias size != weight cols");
        const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
        if (value.size() != m * n) value = Tensor({m, n});
        for (std::size_t i = 0; i < m; ++i) {
            double* out = value.row(i);
            const double* bp = b.data();
            for (std::size_t j = 0; j < n; ++j) out[j] = bp[j];
            const double* xr = x.row(i);
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double xv = xr[kk];
                if (xv == 0.0) continue;
                const double* wr = w.row(kk);
                for (std::size_t j = 0; j < n; ++j) out[j] += xv * wr[j];
            }
        }
    }

    void backprop() override {
        const Tensor& x = inputs[0]->value;
        const Tensor& w = inputs[1]->value;
        Tensor& dx = inputs[0]->grad;
        Tensor& dw = inputs[1]->grad;
        Tensor& db = inputs[2]->grad;
        const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
        for (std::size_t i = 0; i < m; ++i) {
            const double* g = grad.row(i);
            const double* xr = x.row(i);
            double* dxr = dx.row(i);
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double* wr = w.row(kk);
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += g[j] * wr[j];
                dxr[kk] += acc;
                const double xv = xr[kk];
                if (xv != 0.0) {
                    double* dwr = dw.row(kk);
                    for (std::size_t j = 0; j < n; ++j) dwr[j] += xv * g[j];
                }
            }
            double* dbp = db.data();
            for (std::size_t j = 0; j < n; ++j) dbp[j] += g[j];
        }
    }
};

inline NodePtr linear(NodePtr x, NodePtr w, NodePtr b, std::string label = {}) {
    auto n = std::make_shared<LinearOp>();
    n->inputs = {std::move(x), std::move(w), std::move(b)};
    n->label = std::move(label);
    n->compute();
    return n;
}

// A[m,k] @ B[k,n], or A[m,k] @ B[n,k]^T when transpose_b.
class MatMulOp final : public Node {
public:
    bool transpose_b = false;

    const char* kind() const override { return "matmul"; }

    void compute() override {
        const Tensor& a = inputs[0]->value;
        const Tensor& b = inputs[1]->value;
        const std::size_t k = a.cols();
        const std::size_t n = transpose_b ? b.rows() : b.cols();
        if ((transpose_b ? b.cols() : b.rows()) != k) fail("inner dimensions disagree");
        const std::size_t m = a.rows();
        if (value.size() != m * n) value = Tensor({m, n});
        for (std::size_t i = 0; i < m; ++i) {
            const double* ar = a.row(i);
            double* out = value.row(i);
            if (transpose_b) {
                for (std::size_t j = 0; j < n; ++j) {
                    const double* br = b.row(j);
                    double acc = 0.0;
                    for (std::size_t kk = 0; kk < k; ++kk) acc += ar[kk] * br[kk];
                    out[j] = acc;
                }
            } else {
                std::fill(out, out + n, 0.0);
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double av = ar[kk];
                    if (av == 0.0) continue;
                    const double* br = b.row(kk);
                    for (std::size_t j = 0; j < n; ++j) out[j] += av * br[j];
                }
            }
        }
    }

    void backprop() override {
        const Tensor& a = inputs[0]->value;
        const Tensor& b = inputs[1]->value;
        Tensor& da = inputs[0]->grad;
        Tensor& db = inputs[1]->grad;
        const std::size_t m = a.rows(), k = a.cols();
        const std::size_t n = transpose_b ? b.rows() : b.cols();
        for (std::size_t i = 0; i < m; ++i) {
            const double* g = grad.row(i);
            const double* ar = a.row(i);
            double* dar = da.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                const double gv = g[j];
                if (gv == 0.0) continue;
                if (transpose_b) {
                    const double* br = b.row(j);
                    double* dbr = db.row(j);
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        dar[kk] += gv * br[kk];
                        dbr[kk] += gv * ar[kk];
                    }
                } else {
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        dar[kk] += gv * b.at(kk, j);
                        db.at(kk, j) += gv * ar[kk];
                    }
                }
            }
        }
    }
};

inline NodePtr matmul(NodePtr a, NodePtr b, bool transpose_b = false, std::string label = {}) {
    auto n = std::make_shared<MatMulOp>();
    n->transpose_b = transpose_b;
    n->inputs = {std::move(a), std::move(b)};
    n->label = std::move(label);
    n->compute();
    return n;
}

// ---------------------------------------------------------------------------
// Elementwise ops

class LeakyReluOp final : public Node {
public:
    double slope = 0.2;
    const char* kind() const override { return "leaky_relu"; }

    void compute() override {
        const Tensor& x = inputs[0]->value;
        if (!value.same_shape(x)) value = Tensor(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i)
            value[i] = x[i] > 0.0 ? x[i] : slope * x[i];
    }

    void backprop() override {
        const Tensor& x = inputs[0]->value;
        Tensor& dx = inputs[0]->grad;
        for (std::size_t i = 0; i < x.size(); ++i)
            dx[i] += grad[i] * (x[i] > 0.0 ? 1.0 : slope);
    }
};

inline NodePtr leaky_relu(NodePtr x, double slope = 0.2) {
    auto n = std::make_shared<LeakyReluOp>();
    n->slope = slope;
    n->inputs = {std::move(x)};
    n->compute();
    return n;
}

// max(x, 0); the subgradient at 0 is 0.
class HingeOp final : public Node {
public:
    const char* kind() const override { return "hinge"; }

    void compute() override {
        const Tensor& x = inputs[0]->value;
        if (!value.same_shape(x)) value = Tensor(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) value[i] = x[i] > 0.0 ? x[i] : 0.0;
    }

    void backprop() override {
        const Tensor& x = inputs[0]->value;
        Tensor& dx = inputs[0]->grad;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x[i] > 0.0) dx[i] += grad[i];
    }
};

inline NodePtr hinge(NodePtr x) {
    auto n = std::make_shared<HingeOp>();
    n->inputs = {std::move(x)};
    n->compute();
    return n;
}

class TanhOp final : public Node {
public:
    const char* kind() const override { return "tanh"; }

    void compute() override {
        const Tensor& x = inputs[0]->value;
        if (!value.same_shape(x)) value = Tensor(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) value[i] = std::tanh(x[i]);
    }

    void backprop() override {
        Tensor& dx = inputs[0]->grad;
        for (std::size_t i = 0; i < value.size(); ++i)
            dx[i] += grad[i] * (1.0 - value[i] * value[i]);
    }
};

inline NodePtr tanh_op(NodePtr x) {
    auto n = std::make_shared<TanhOp>();
    n->inputs = {std::move(x)};
    n->compute();
    return n;
}

// a * x + b with compile-time constants (no gradient for a, b).
class AffineConstOp final : public Node {
public:
    double a = 1.0, b = 0.0;
    const char* kind() const override { return "affine_const"; }

    void compute() override {
        const Tensor& x = inputs[0]->value;
        if (!value.same_shape(x)) value = Tensor(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) value[i] = a * x[i] + b;
    }

    void backprop() override {
        Tensor& dx = inputs[0]->grad;
        for (std::size_t i = 0; i < value.size(); ++i) dx[i] += grad[i] * a;
    }
};

inline NodePtr affine_const(NodePtr x, double a, double b = 0.0) {
    auto n = std::make_shared<AffineConstOp>();
    n->a = a;
    n->b = b;
    n->inputs = {std::move(x)};
    n->compute();
    return n;
}

// Elementwise multiply by a fixed vector (broadcast over the last axis).
class ScaleVecConstOp final : public Node {
public:
    std::vector<double> scale;
    const char* kind() const override { return "scale_vec_const"; }

    void compute() override {
        const Tensor& x = inputs[0]->value;
        if (x.size() % scale.size() != 0) fail("size not divisible by scale vector length");
        if (!value.same_shape(x)) value = Tensor(x.shape());
        const std::size_t n = scale.size();
        for (std::size_t i = 0; i < x.size(); ++i) value[i] = x[i] * scale[i % n];
    }

    void backprop() override {
        Tensor& dx = inputs[0]->grad;
        const std::size_t n = scale.size();
        for (std::size_t i = 0; i < value.size(); ++i) dx[i] += grad[i] * scale[i % n];
    }
};

inline NodePtr scale_vec_const(NodePtr x, std::vector<double> s) {
    auto n = std::make_shared<ScaleVecConstOp>();
    n->scale = std::move(s);
    n->inputs = {std::move(x)};
    n->compute();
    return n;
}

class AddOp final : public Node {
public:
    double sign = 1.0;  // -1 gives subtraction
    const char* kind() const override { return sign > 0 ? "add" : "sub"; }

    void compute() override {
        const Tensor& a = inputs[0]->value;
        const Tensor& b = inputs[1]->value;
        if (!a.same_shape(b)) fail("shape mismatch " + a.shape_str() + " vs " + b.shape_str());
        if (!value.same_shape(a)) value = Tensor(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) value[i] = a[i] + sign * b[i];
    }

    void backprop() override {
        Tensor& da = inputs[0]->grad;
        Tensor& db = inputs[1]->grad;
        for (std::size_t i = 0; i < value.size(); ++i) {
            da[i] += grad[i];
            db[i] += sign * grad[i];
        }
    }
};

inline NodePtr add(NodePtr a, NodePtr b) {
    auto n = std::make_shared<AddOp>();
    n->inputs = {std::move(a), std::move(b)};
    n->compute();
    return n;
}

inline NodePtr sub(NodePtr a, NodePtr b) {
    auto n = std::make_shared<AddOp>();
    n->sign = -1.0;
    n->inputs = {std::move(a), std::move(b)};
    n->compute();
    return n;
}

// X[m,n] + v[n] broadcast over rows.
class AddRowVecOp final : public Node {
public:
    const char* kind() const override { return "add_rowvec"; }

    void compute() override {
        const Tensor& x = inputs[0]->value;
        const Tensor& v = inputs[1]->value;
        if (v.size() != x.cols()) fail("vector length != matrix cols");
        if (!value.same_shape(x)) value = Tensor(x.shape());
        const std::size_t m = x.rows(), n = x.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) value.at(i, j) = x.at(i, j) + v[j];
    }

    void backprop() override {
        Tensor& dx = inputs[0]->grad;
        Tensor& dv = inputs[1]->grad;
        const std::size_t m = value.rows(), n = value.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                dx.at(i, j) += grad.at(i, j);
                dv[j] += grad.at(i, j);
            }
    }
};

inline NodePtr add_rowvec(NodePtr x, NodePtr v) {
    auto n = std::make_shared<AddRowVecOp>();
    n->inputs = {std::move(x), std::move(v)};
    n->compute();
    return n;
}

// ---------------------------------------------------------------------------
// Structure ops

// N-ary concatenation along the column axis.
class ConcatColsOp final : public Node {
public:
    const char* kind() const override { return "concat_cols"; }

    void compute() override {
        const std::size_t m = inputs[0]->value.rows();
        std::size_t total = 0;
        for (const auto& in : inputs) {
            if (in->value.rows() != m) fail("row counts disagree");
            total += in->value.cols();
        }
        if (value.rows() != m || value.cols() != total) value = Tensor({m, total});
        for (std::size_t i = 0; i < m; ++i) {
            double* out = value.row(i);
            for (const auto& in : inputs) {
                const double* src = in->value.row(i);
                out = std::copy(src, src + in->value.cols(), out);
            }
        }
    }

    void backprop() override {
        const std::size_t m = value.rows();
        for (std::size_t i = 0; i < m; ++i) {
            const double* g = grad.row(i);
            for (const auto& in : inputs) {
                double* dst = in->grad.row(i);
                const std::size_t c = in->value.cols();
                for (std::size_t j = 0; j < c; ++j) dst[j] += g[j];
                g += c;
            }
        }
    }
};

inline NodePtr concat_cols(std::vector<NodePtr> xs, std::string label = {}) {
    auto n = std::make_shared<ConcatColsOp>();
    n->inputs = std::move(xs);
    n->label = std::move(label);
    n->compute();
    return n;
}

// N-ary concatenation along the row axis (columns must agree).
class ConcatRowsOp final : public Node {
public:
    const char* kind() const override { return "concat_rows"; }

    void compute() override {
        const std::size_t c = inputs[0]->value.cols();
        std::size_t total = 0;
        for (const auto& in : inputs) {
            if (in->value.cols() != c) fail("column counts disagree");
            total += in->value.rows();
        }
        if (value.rows() != total || value.cols() != c) value = Tensor({total, c});
        double* out = value.data();
        for (const auto& in : inputs)
            out = std::copy(in->value.data(), in->value.data() + in->value.size(), out);
    }

    void backprop() override {
        const double* g = grad.data();
        for (const auto& in : inputs) {
            double* dst = in->grad.data();
            const std::size_t n = in->value.size();
            for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
            g += n;
        }
    }
};

inline NodePtr concat_rows(std::vector<NodePtr> xs, std::string label = {}) {
    auto n = std::make_shared<ConcatRowsOp>();
    n->inputs = std::move(xs);
    n->label = std::move(label);
    n->compute();
    return n;
}

class SliceRowsOp final : public Node {
public:
    std::size_t from = 0, count = 0;
    const char* kind() const override { return "slice_rows"; }

    void compute() override {
        const Tensor& x = inputs[0]->value;
        if (from + count > x.rows()) fail("row slice out of range");
        const std::size_t c = x.cols();
        if (value.rows() != count || value.cols() != c) value = Tensor({count, c});
        std::copy(x.row(from), x.row(from) + count * c, value.data());
    }

    void backprop() override {
        Tensor& dx = inputs[0]->grad;
        const std::size_t c = value.cols();
        double* dst = dx.row(from);
        for (std::size_t i = 0; i < count * c; ++i) dst[i] += grad[i];
    }
};

inline NodePtr slice_rows(NodePtr x, std::size_t from, std::size_t count) {
    auto n = std::make_shared<SliceRowsOp>();
    n->from = from;
    n->count = count;
    n->inputs = {std::move(x)};
    n->compute();
    return n;
}

class SliceColsOp final : public Node {
public:
    std::size_t from = 0, to = 0;
    const char* kind() const override { return "slice_cols"; }

    void compute() override {
        const Tensor& x = inputs[0]->value;
        if (to > x.cols() || from >= to) fail("slice bounds out of range");
        const std::size_t m = x.rows(), n = to - from;
        if (value.rows() != m || value.cols() != n) value = Tensor({m, n});
        for (std::size_t i = 0; i < m; ++i) {
            const double* src = x.row(i) + from;
            std::copy(src, src + n, value.row(i));
        }
    }

    void backprop() override {
        Tensor& dx = inputs[0]->grad;
        const std::size_t m = value.rows(), n = value.cols();
        for (std::size_t i = 0; i < m; ++i) {
            const double* g = grad.row(i);
            double* dst = dx.row(i) + from;
            for (std::size_t j = 0; j < n; ++j) dst[j] += g[j];
        }
    }
};

inline NodePtr slice_cols(NodePtr x, std::size_t from, std::size_t to) {
    auto n = std::make_shared<SliceColsOp>();
    n->from = from;
    n->to = to;
    n->inputs = {std::move(x)};
    n->compute();
    return n;
}

// Builds per-edge features [x_i || x_j - x_i] from node features and a
// neighbor table (k entries per node, row-major).
class EdgeFeaturesOp final : public Node {
public:
    std::vector<std::int32_t> neighbors;  // size N*k
    std::size_t k = 0;

    const char* kind() const override { return "edge_features"; }

    void compute() override {
        const Tensor& x = inputs[0]->value;
        const std::size_t n = x.rows(), c = x.cols();
        if (neighbors.size() != n * k) fail("neighbor table size != N*k");
        if (value.rows() != n * k || value.cols() != 2 * c) value = Tensor({n * k, 2 * c});
        for (std::size_t i = 0; i < n; ++i) {
            const double* xi = x.row(i);
            for (std::size_t j = 0; j < k; ++j) {
                const std::int32_t nb = neighbors[i * k + j];
                const double* xj = x.row(static_cast<std::size_t>(nb));
                double* out = value.row(i * k + j);
                for (std::size_t cc = 0; cc < c; ++cc) {
                    out[cc] = xi[cc];
                    out[c + cc] = xj[cc] - xi[cc];
                }
            }
        }
    }

    void backprop() override {
        Tensor& dx = inputs[0]->grad;
        const std::size_t n = inputs[0]->value.rows(), c = inputs[0]->value.cols();
        for (std::size_t i = 0; i < n; ++i) {
            double* dxi = dx.row(i);
            for (std::size_t j = 0; j < k; ++j) {
                const std::int32_t nb = neighbors[i * k + j];
                double* dxj = dx.row(static_cast<std::size_t>(nb));
                const double* g = grad.row(i * k + j);
                for (std::size_t cc = 0; cc < c; ++cc) {
                    dxi[cc] += g[cc] - g[c + cc];
                    dxj[cc] += g[c + cc];
                }
            }
        }
    }
};

inline NodePtr edge_features(NodePtr x, std::vector<std::int32_t> neighbors, std::size_t k) {
    auto n = std::make_shared<EdgeFeaturesOp>();
    n->neighbors = std::move(neighbors);
    n->k = k;
    n->inputs = {std::move(x)};
    n->compute();
    return n;
}

// Per-node max over its k edge rows; gradient routes to the argmax edge
// (ties to the lowest edge index).
class MaxAggregateOp final : public Node {
public:
    std::size_t k = 0;
    std::vector<std::int32_t> argmax;

    const char* kind() const override { return "max_aggregate"; }

    void compute() override {
        const Tensor& e = inputs[0]->value;
        if (k == 0 || e.rows() % k != 0) fail("edge rows not divisible by k");
        const std::size_t n = e.rows() / k, c = e.cols();
        if (value.rows() != n || value.cols() != c) value = Tensor({n, c});
        argmax.assign(n * c, 0);
        for (std::size_t i = 0; i < n; ++i) {
            double* out = value.row(i);
            const double* first = e.row(i * k);
            std::copy(first, first + c, out);
            std::int32_t* am = argmax.data() + i * c;
            for (std::size_t j = 1; j < k; ++j) {
                const double* row = e.row(i * k + j);
                for (std::size_t cc = 0; cc < c; ++cc) {
                    if (row[cc] > out[cc]) {
                        out[cc] = row[cc];
                        am[cc] = static_cast<std::int32_t>(j);
                    }
                }
            }
        }
    }

    void backprop() override {
        Tensor& de = inputs[0]->grad;
        const std::size_t n = value.rows(), c = value.cols();
        for (std::size_t i = 0; i < n; ++i) {
            const double* g = grad.row(i);
            const std::int32_t* am = argmax.data() + i * c;
            for (std::size_t cc = 0; cc < c; ++cc)
                de.at(i * k + static_cast<std::size_t>(am[cc]), cc) += g[cc];
        }
    }
};

inline NodePtr max_aggregate(NodePtr e, std::size_t k) {
    auto n = std::make_shared<MaxAggregateOp>();
    n->k = k;
    n->inputs = {std::move(e)};
    n->compute();
    return n;
}

// Column-wise max over all rows -> 1 x C. Ties go to the lowest row.
class MaxPoolRowsOp final : public Node {
public:
    std::vector<std::int32_t> argmax;
    const char* kind() const override { return "max_pool_rows"; }

    void compute() override {
        const Tensor& x = inputs[0]->value;
        if (x.rows() == 0) fail("empty input");
        const std::size_t m = x.rows(), c = x.cols();
        if (value.rows() != 1 || value.cols() != c) value = Tensor({1, c});
        argmax.assign(c, 0);
        const double* first = x.row(0);
        std::copy(first, first + c, value.row(0));
        for (std::size_t i = 1; i < m; ++i) {
            const double* row = x.row(i);
            for (std::size_t j = 0; j < c; ++j) {
                if (row[j] > value[j]) {
                    value[j] = row[j];
                    argmax[j] = static_cast<std::int32_t>(i);
                }
            }
        }
    }

    void backprop() override {
        Tensor& dx = inputs[0]->grad;
        const std::size_t c = value.cols();
        for (std::size_t j = 0; j < c; ++j)
            dx.at(static_cast<std::size_t>(argmax[j]), j) += grad[j];
    }
};

inline NodePtr max_pool_rows(NodePtr x) {
    auto n = std::make_shared<MaxPoolRowsOp>();
    n->inputs = {std::move(x)};
    n->compute();
    return n;
}

class MeanPoolRowsOp final : public Node {
public:
    const char* kind() const override { return "mean_pool_rows"; }

    void compute() override {
        const Tensor& x = inputs[0]->value;
        if (x.rows() == 0) fail("empty input");
        const std::size_t m = x.rows(), c = x.cols();
        if (value.rows() != 1 || value.cols() != c) value = Tensor({1, c});
        value.fill(0.0);
        for (std::size_t i = 0; i < m; ++i) {
            const double* row = x.row(i);
            for (std::size_t j = 0; j < c; ++j) value[j] += row[j];
        }
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t j = 0; j < c; ++j) value[j] *= inv;
    }

    void backprop() override {
        Tensor& dx = inputs[0]->grad;
        const std::size_t m = inputs[0]->value.rows(), c = value.cols();
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) dx.at(i, j) += grad[j] * inv;
    }
};

inline NodePtr mean_pool_rows(NodePtr x) {
    auto n = std::make_shared<MeanPoolRowsOp>();
    n->inputs = {std::move(x)};
    n->compute();
    return n;
}

// ---------------------------------------------------------------------------
// Normalization

// Per-feature normalization over the row axis. In training mode the batch
// statistics are used (and exposed for running-stat updates by the caller);
// in inference mode the provided running statistics are used.
class BatchNormRowsOp final : public Node {
public:
    bool training = true;
    double eps = 1e-5;
    std::vector<double> batch_mean, batch_var;  // filled in training mode

    const char* kind() const override { return "batch_norm"; }

    void compute() override {
        const Tensor& x = inputs[0]->value;
        const Tensor& gamma = inputs[1]->value;
        const Tensor& beta = inputs[2]->value;
        const std::size_t m = x.rows(), c = x.cols();
        if (gamma.size() != c || beta.size() != c) fail("gamma/beta length != feature count");
        if (!value.same_shape(x)) value = Tensor(x.shape());

        const double* mean_p;
        const double* var_p;
        if (training) {
            batch_mean.assign(c, 0.0);
            batch_var.assign(c, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                const double* row = x.row(i);
                for (std::size_t j = 0; j < c; ++j) batch_mean[j] += row[j];
            }
            const double inv = 1.0 / static_cast<double>(m);
            for (std::size_t j = 0; j < c; ++j) batch_mean[j] *= inv;
            for (std::size_t i = 0; i < m; ++i) {
                const double* row = x.row(i);
                for (std::size_t j = 0; j < c; ++j) {
                    const double d = row[j] - batch_mean[j];
                    batch_var[j] += d * d;
                }
            }
            for (std::size_t j = 0; j < c; ++j) batch_var[j] *= inv;
            mean_p = batch_mean.data();
            var_p = batch_var.data();
        } else {
            const Tensor& rm = inputs[3]->value;
            const Tensor& rv = inputs[4]->value;
            if (rm.size() != c || rv.size() != c) fail("running stats length != feature count");
            mean_p = rm.data();
            var_p = rv.data();
        }

        inv_std_.resize(c);
        for (std::size_t j = 0; j < c; ++j) inv_std_[j] = 1.0 / std::sqrt(var_p[j] + eps);
        for (std::size_t i = 0; i < m; ++i) {
            const double* row = x.row(i);
            double* out = value.row(i);
            for (std::size_t j = 0; j < c; ++j)
                out[j] = gamma[j] * (row[j] - mean_p[j]) * inv_std_[j] + beta[j];
        }
    }

    void backprop() override {
        const Tensor& x = inputs[0]->value;
        const Tensor& gamma = inputs[1]->value;
        Tensor& dx = inputs[0]->grad;
        Tensor& dgamma = inputs[1]->grad;
        Tensor& dbeta = inputs[2]->grad;
        const std::size_t m = x.rows(), c = x.cols();
        const double* mean_p = training ? batch_mean.data() : inputs[3]->value.data();

        // dgamma, dbeta, plus the column sums needed for the training-mode
        // input gradient.
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            const double* g = grad.row(i);
            const double* row = x.row(i);
            for (std::size_t j = 0; j < c; ++j) {
                const double xhat = (row[j] - mean_p[j]) * inv_std_[j];
                sum_dy[j] += g[j];
                sum_dy_xhat[j] += g[j] * xhat;
                dgamma[j] += g[j] * xhat;
                dbeta[j] += g[j];
            }
        }

        if (training) {
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) {
                const double* g = grad.row(i);
                const double* row = x.row(i);
                double* dxr = dx.row(i);
                for (std::size_t j = 0; j < c; ++j) {
                    const double xhat = (row[j] - mean_p[j]) * inv_std_[j];
                    dxr[j] += gamma[j] * inv_std_[j] *
                              (g[j] - inv_m * sum_dy[j] - inv_m * xhat * sum_dy_xhat[j]);
                }
            }
        } else {
            const Tensor& rv = inputs[4]->value;
            Tensor& drm = inputs[3]->grad;
            Tensor& drv = inputs[4]->grad;
            for (std::size_t i = 0; i < m; ++i) {
                const double* g = grad.row(i);
                const double* row = x.row(i);
                double* dxr = dx.row(i);
                for (std::size_t j = 0; j < c; ++j) {
                    dxr[j] += g[j] * gamma[j] * inv_std_[j];
                    drm[j] -= g[j] * gamma[j] * inv_std_[j];
                    drv[j] -= 0.5 * g[j] * gamma[j] * (row[j] - mean_p[j]) * inv_std_[j] *
                              inv_std_[j] * inv_std_[j];
                }
            }
        }
    }

private:
    std::vector<double> inv_std_;
};

inline NodePtr batch_norm_rows(NodePtr x, NodePtr gamma, NodePtr beta, bool training,
                               NodePtr running_mean = nullptr, NodePtr running_var = nullptr,
                               std::string label = {}) {
    auto n = std::make_shared<BatchNormRowsOp>();
    n->training = training;
    n->inputs = {std::move(x), std::move(gamma), std::move(beta)};
    if (!training) {
        if (!running_mean || !running_var)
            throw std::invalid_argument("batch_norm: inference mode needs running statistics");
        n->inputs.push_back(std::move(running_mean));
        n->inputs.push_back(std::move(running_var));
    }
    n->label = std::move(label);
    n->compute();
    return n;
}

// ---------------------------------------------------------------------------
// Reductions and scalar ops

class SumOp final : public Node {
public:
    const char* kind() const override { return "sum"; }

    void compute() override {
        const Tensor& x = inputs[0]->value;
        if (value.size() != 1) value = Tensor({1});
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
        value[0] = acc;
    }

    void backprop() override {
        Tensor& dx = inputs[0]->grad;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += grad[0];
    }
};

inline NodePtr sum(NodePtr x) {
    auto n = std::make_shared<SumOp>();
    n->inputs = {std::move(x)};
    n->compute();
    return n;
}

// Euclidean distance between two equally sized tensors -> scalar.
class L2DistOp final : public Node {
public:
    const char* kind() const override { return "l2_dist"; }

    void compute() override {
        const Tensor& a = inputs[0]->value;
        const Tensor& b = inputs[1]->value;
        if (a.size() != b.size()) fail("operand sizes differ");
        if (value.size() != 1) value = Tensor({1});
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = a[i] - b[i];
            acc += d * d;
        }
        value[0] = std::sqrt(acc);
    }

    void backprop() override {
        const Tensor& a = inputs[0]->value;
        const Tensor& b = inputs[1]->value;
        Tensor& da = inputs[0]->grad;
        Tensor& db = inputs[1]->grad;
        const double d = value[0];
        if (d == 0.0) return;  // subgradient 0 at coincident points
        const double g = grad[0] / d;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double diff = a[i] - b[i];
            da[i] += g * diff;
            db[i] -= g * diff;
        }
    }
};

inline NodePtr l2_dist(NodePtr a, NodePtr b) {
    auto n = std::make_shared<L2DistOp>();
    n->inputs = {std::move(a), std::move(b)};
    n->compute();
    return n;
}

// Mean of scalar nodes -> scalar.
class MeanScalarsOp final : public Node {
public:
    const char* kind() const override { return "mean_scalars"; }

    void compute() override {
        if (value.size() != 1) value = Tensor({1});
        double acc = 0.0;
        for (const auto& in : inputs) {
            if (in->value.size() != 1) fail("inputs must be scalars");
            acc += in->value[0];
        }
        value[0] = acc / static_cast<double>(inputs.size());
    }

    void backprop() override {
        const double g = grad[0] / static_cast<double>(inputs.size());
        for (const auto& in : inputs) in->grad[0] += g;
    }
};

inline NodePtr mean_scalars(std::vector<NodePtr> xs) {
    if (xs.empty()) throw std::invalid_argument("mean_scalars: no inputs");
    auto n = std::make_shared<MeanScalarsOp>();
    n->inputs = std::move(xs);
    n->compute();
    return n;
}

// Wraps each element into [0, 2*pi); derivative 1 almost everywhere.
class Mod2PiOp final : public Node {
public:
    const char* kind() const override { return "mod_2pi"; }

    void compute() override {
        const Tensor& x = inputs[0]->value;
        if (!value.same_shape(x)) value = Tensor(x.shape());
        constexpr double two_pi = 6.283185307179586476925286766559;
        for (std::size_t i = 0; i < x.size(); ++i)
            value[i] = x[i] - two_pi * std::floor(x[i] / two_pi);
    }

    void backprop() override {
        Tensor& dx = inputs[0]->grad;
        for (std::size_t i = 0; i < value.size(); ++i) dx[i] += grad[i];
    }
};

inline NodePtr mod_2pi(NodePtr x) {
    auto n = std::make_shared<Mod2PiOp>();
    n->inputs = {std::move(x)};
    n->compute();
    return n;
}

// Euler angles (theta, psi, phi) -> 3x3 rotation, factor matrices exactly as
// the pose-correction equation prints them (R = Rz * Ry * Rx).
class EulerToMatrixOp final : public Node {
public:
    const char* kind() const override { return "euler_to_matrix"; }

    void compute() override {
        const Tensor& ang = inputs[0]->value;
        if (ang.size() != 3) fail("needs exactly 3 angles");
        if (value.rows() != 3 || value.cols() != 3) value = Tensor({3, 3});
        const double t = ang[0], p = ang[1], f = ang[2];
        rx_ = {std::cos(t), -std::sin(t), 0, std::sin(t), std::cos(t), 0, 0, 0, 1};
        ry_ = {std::cos(p), 0, -std::sin(p), 0, 1, 0, std::sin(p), 0, std::cos(p)};
        rz_ = {1, 0, 0, 0, std::cos(f), -std::sin(f), 0, std::sin(f), std::cos(f)};
        const auto zy = mul(rz_, ry_);
        const auto r = mul(zy, rx_);
        std::copy(r.begin(), r.end(), value.data());
    }

    void backprop() override {
        const Tensor& ang = inputs[0]->value;
        Tensor& dang = inputs[0]->grad;
        const double t = ang[0], p = ang[1], f = ang[2];
        const std::array<double, 9> drx{-std::sin(t), -std::cos(t), 0,
                                        std::cos(t),  -std::sin(t), 0,
                                        0,            0,            0};
        const std::array<double, 9> dry{-std::sin(p), 0, -std::cos(p),
                                        0,            0, 0,
                                        std::cos(p),  0, -std::sin(p)};
        const std::array<double, 9> drz{0, 0,            0,
                                        0, -std::sin(f), -std::cos(f),
                                        0, std::cos(f),  -std::sin(f)};
        const auto d_t = mul(mul(rz_, ry_), drx);
        const auto d_p = mul(mul(rz_, dry), rx_);
        const auto d_f = mul(mul(drz, ry_), rx_);
        for (int i = 0; i < 9; ++i) {
            dang[0] += grad[static_cast<std::size_t>(i)] * d_t[static_cast<std::size_t>(i)];
            dang[1] += grad[static_cast<std::size_t>(i)] * d_p[static_cast<std::size_t>(i)];
            dang[2] += grad[static_cast<std::size_t>(i)] * d_f[static_cast<std::size_t>(i)];
        }
    }

private:
    static std::array<double, 9> mul(const std::array<double, 9>& a,
                                     const std::array<double, 9>& b) {
        std::array<double, 9> r{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) r[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
        return r;
    }

    std::array<double, 9> rx_{}, ry_{}, rz_{};
};

inline NodePtr euler_to_matrix(NodePtr angles) {
    auto n = std::make_shared<EulerToMatrixOp>();
    n->inputs = {std::move(angles)};
    n->compute();
    return n;
}

// ---------------------------------------------------------------------------
// Finite differences

// Central-difference check of backward() against every leaf coordinate.
// Returns the maximum relative error over coordinates where the response is
// meaningfully nonzero; coordinates sitting on a kink (max/relu/tie) are
// detected by a second-difference curvature test and excluded.
inline double finite_difference_check(const NodePtr& root, double epsilon) {
    if (root->value.size() != 1)
        throw std::invalid_argument("finite_difference_check: root must be scalar");
    if (!(epsilon >= 1e-7 && epsilon <= 1e-4))
        throw std::invalid_argument("finite_difference_check: epsilon outside [1e-7, 1e-4]");

    std::vector<Node*> order;
    detail::topo_order(root, order);
    std::vector<Node*> leaves;
    for (Node* n : order)
        if (n->is_leaf()) leaves.push_back(n);

    forward(root);
    const double f0 = root->value[0];
    backward(root);
    std::vector<Tensor> analytic;
    analytic.reserve(leaves.size());
    for (Node* l : leaves) analytic.push_back(l->grad);

    double max_rel = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Node* l = leaves[li];
        for (std::size_t i = 0; i < l->value.size(); ++i) {
            const double saved = l->value[i];
            l->value[i] = saved + epsilon;
            const double fp = forward(root)[0];
            l->value[i] = saved - epsilon;
            const double fm = forward(root)[0];
            l->value[i] = saved;

            const double numeric = (fp - fm) / (2.0 * epsilon);
            const double a = analytic[li][i];
            // Curvature spike marks a non-differentiable point between the
            // two probes; those coordinates are excluded.
            const double curvature = std::abs(fp + fm - 2.0 * f0) / epsilon;
            if (curvature > 0.1 * (std::abs(numeric) + std::abs(a) + 1e-6)) continue;
            // Below this, central differences only amplify rounding noise;
            // disagreements within the noise floor are unresolvable.
            const double noise = 16.0 * std::numeric_limits<double>::epsilon() *
                                 (std::abs(f0) + std::abs(fp) + std::abs(fm)) / (2.0 * epsilon);
            if (std::abs(numeric) <= noise && std::abs(a) <= noise) continue;
            if (std::abs(a - numeric) <= noise) continue;
            const double denom = std::abs(a) + std::abs(numeric);
            if (denom <= 1e-10) continue;
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    forward(root);
    return max_rel;
}

}  // namespace g3dm::ad
