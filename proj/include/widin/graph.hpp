#pragma once

#include <cmath>
#include <initializer_list>
#include <vector>

#include "widin/tensor.hpp"

namespace widin {

// Reverse-mode tape over Tensor values.
//
// Nodes are appended in evaluation order, which is a topological order by
// construction; backward() walks the tape strictly in reverse and adds each
// branch's contribution into its parents, so fan-out gradients accumulate.
// A graph is single-threaded and used for one forward/backward pair.
class Graph {
public:
    enum class Op : uint8_t {
        Leaf,
        MatMul,
        Transpose,
        Add,
        Sub,
        Mul,
        AddRow,     // matrix + broadcast row vector
        MulRow,     // matrix * broadcast row vector
        Scale,      // a0 = factor
        ConcatRows,
        SliceRow,   // i0 = row index
        MeanRows,
        Tanh,
        Gelu,
        LayerNorm,  // a0 = eps; saved = per-row [mean, inv_std]
        SoftmaxRows,
        L2NormRows,     // saved = per-row input norm
        SoftmaxXent,    // i0 = target, a0 = tau; saved = softmax probs
        Mse,            // saved = constant target
    };

    struct Node {
        Op op = Op::Leaf;
        std::vector<int> parents;
        Tensor value;
        Tensor grad;   // allocated only when needs_grad
        Tensor saved;
        double a0 = 0.0;
        int i0 = 0;
        bool needs_grad = false;
    };

    const Tensor& value(int id) const { return nodes_[id].value; }
    const Tensor& grad(int id) const {
        if (!nodes_[id].needs_grad)
            throw Error("grad: node does not track gradients");
        return nodes_[id].grad;
    }
    size_t num_nodes() const { return nodes_.size(); }

    int leaf(const Tensor& t, bool requires_grad = false) {
        Node n;
        n.value = t;
        n.needs_grad = requires_grad || t.requires_grad;
        return push(std::move(n));
    }

    int matmul(int a, int b) {
        const Tensor& A = nodes_[a].value;
        const Tensor& B = nodes_[b].value;
        Node n = binary(Op::MatMul, a, b);
        n.value = widin::matmul(A, B);
        return push(std::move(n));
    }

    int transpose(int a) {
        Node n = unary(Op::Transpose, a);
        n.value = widin::transpose(nodes_[a].value);
        return push(std::move(n));
    }

    int add(int a, int b) {
        Node n = binary(Op::Add, a, b);
        n.value = widin::add(nodes_[a].value, nodes_[b].value);
        return push(std::move(n));
    }

    int sub(int a, int b) {
        Node n = binary(Op::Sub, a, b);
        n.value = widin::sub(nodes_[a].value, nodes_[b].value);
        return push(std::move(n));
    }

    int mul(int a, int b) {
        const Tensor& A = nodes_[a].value;
        const Tensor& B = nodes_[b].value;
        require_same_shape(A, B, "mul");
        Node n = binary(Op::Mul, a, b);
        n.value = A;
        for (size_t i = 0; i < n.value.size(); ++i) n.value.data[i] *= B.data[i];
        return push(std::move(n));
    }

    int add_row(int a, int b) {
        const Tensor& A = nodes_[a].value;
        const Tensor& B = nodes_[b].value;
        if (B.rows != 1 || B.cols != A.cols)
            throw ShapeError("add_row: " + shape_str(A) + " + " + shape_str(B));
        Node n = binary(Op::AddRow, a, b);
        n.value = A;
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < A.cols; ++j) n.value.at(i, j) += B.at(0, j);
        return push(std::move(n));
    }

    int mul_row(int a, int b) {
        const Tensor& A = nodes_[a].value;
        const Tensor& B = nodes_[b].value;
        if (B.rows != 1 || B.cols != A.cols)
            throw ShapeError("mul_row: " + shape_str(A) + " * " + shape_str(B));
        Node n = binary(Op::MulRow, a, b);
        n.value = A;
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < A.cols; ++j) n.value.at(i, j) *= B.at(0, j);
        return push(std::move(n));
    }

    int scale(int a, double s) {
        Node n = unary(Op::Scale, a);
        n.a0 = s;
        n.value = widin::scale(nodes_[a].value, s);
        return push(std::move(n));
    }

    int concat_rows(const std::vector<int>& parts) {
        if (parts.empty()) throw ShapeError("concat_rows: empty input");
        const int cols = nodes_[parts[0]].value.cols;
        int rows = 0;
        for (int p : parts) {
            if (nodes_[p].value.cols != cols)
                throw ShapeError("concat_rows: column mismatch");
            rows += nodes_[p].value.rows;
        }
        Node n;
        n.op = Op::ConcatRows;
        n.parents = parts;
        n.value = Tensor(rows, cols);
        int r = 0;
        for (int p : parts) {
            const Tensor& t = nodes_[p].value;
            std::copy(t.data.begin(), t.data.end(),
                      n.value.data.begin() + static_cast<size_t>(r) * cols);
            r += t.rows;
            n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
        }
        return push(std::move(n));
    }

    int slice_row(int a, int r) {
        const Tensor& A = nodes_[a].value;
        if (r < 0 || r >= A.rows) throw ShapeError("slice_row: index out of range");
        Node n = unary(Op::SliceRow, a);
        n.i0 = r;
        n.value = row_of(A, r);
        return push(std::move(n));
    }

    int mean_rows(int a) {
        const Tensor& A = nodes_[a].value;
        if (A.rows == 0) throw DegenerateInput("mean_rows: empty matrix");
        Node n = unary(Op::MeanRows, a);
        n.value = Tensor(1, A.cols);
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < A.cols; ++j) n.value.at(0, j) += A.at(i, j);
        for (int j = 0; j < A.cols; ++j) n.value.at(0, j) /= A.rows;
        return push(std::move(n));
    }

    int tanh_(int a) {
        Node n = unary(Op::Tanh, a);
        n.value = nodes_[a].value;
        for (auto& v : n.value.data) v = std::tanh(v);
        return push(std::move(n));
    }

    int gelu(int a) {
        Node n = unary(Op::Gelu, a);
        n.value = nodes_[a].value;
        for (auto& v : n.value.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
        return push(std::move(n));
    }

    int layer_norm(int a, double eps = 1e-5) {
        const Tensor& A = nodes_[a].value;
        Node n = unary(Op::LayerNorm, a);
        n.a0 = eps;
        n.value = Tensor(A.rows, A.cols);
        n.saved = Tensor(A.rows, 2);
        for (int i = 0; i < A.rows; ++i) {
            double mean = 0.0;
            for (int j = 0; j < A.cols; ++j) mean += A.at(i, j);
            mean /= A.cols;
            double var = 0.0;
            for (int j = 0; j < A.cols; ++j) {
                const double d = A.at(i, j) - mean;
                var += d * d;
            }
            var /= A.cols;
            const double istd = 1.0 / std::sqrt(var + eps);
            n.saved.at(i, 0) = mean;
            n.saved.at(i, 1) = istd;
            for (int j = 0; j < A.cols; ++j) n.value.at(i, j) = (A.at(i, j) - mean) * istd;
        }
        return push(std::move(n));
    }

    // Row-wise softmax, stabilized by max subtraction.
    int softmax_rows(int a) {
        const Tensor& A = nodes_[a].value;
        Node n = unary(Op::SoftmaxRows, a);
        n.value = Tensor(A.rows, A.cols);
        for (int i = 0; i < A.rows; ++i) {
            double mx = A.at(i, 0);
            for (int j = 1; j < A.cols; ++j) mx = std::max(mx, A.at(i, j));
            double sum = 0.0;
            for (int j = 0; j < A.cols; ++j) {
                const double e = std::exp(A.at(i, j) - mx);
                n.value.at(i, j) = e;
                sum += e;
            }
            for (int j = 0; j < A.cols; ++j) n.value.at(i, j) /= sum;
        }
        return push(std::move(n));
    }

    // Unit-normalize every row. Zero-norm rows are an error, never a silent
    // division.
    int l2_normalize(int a) {
        const Tensor& A = nodes_[a].value;
        Node n = unary(Op::L2NormRows, a);
        n.value = Tensor(A.rows, A.cols);
        n.saved = Tensor(A.rows, 1);
        for (int i = 0; i < A.rows; ++i) {
            double s = 0.0;
            for (int j = 0; j < A.cols; ++j) s += A.at(i, j) * A.at(i, j);
            const double nr = std::sqrt(s);
            if (nr == 0.0) throw DegenerateInput("l2_normalize: zero-norm row");
            n.saved.at(i, 0) = nr;
            for (int j = 0; j < A.cols; ++j) n.value.at(i, j) = A.at(i, j) / nr;
        }
        return push(std::move(n));
    }

    // -log softmax(logits / tau)[target] for a single logit row.
    int softmax_xent(int logits, int target, double tau) {
        const Tensor& A = nodes_[logits].value;
        if (A.rows != 1) throw ShapeError("softmax_xent: logits must be a row vector");
        if (target < 0 || target >= A.cols)
            throw Error("softmax_xent: target index out of range");
        if (!(tau > 0.0)) throw Error("softmax_xent: tau must be positive");
        Node n = unary(Op::SoftmaxXent, logits);
        n.i0 = target;
        n.a0 = tau;
        n.saved = Tensor(1, A.cols);
        double mx = A.at(0, 0) / tau;
        for (int j = 1; j < A.cols; ++j) mx = std::max(mx, A.at(0, j) / tau);
        double sum = 0.0;
        for (int j = 0; j < A.cols; ++j) {
            const double e = std::exp(A.at(0, j) / tau - mx);
            n.saved.at(0, j) = e;
            sum += e;
        }
        for (int j = 0; j < A.cols; ++j) n.saved.at(0, j) /= sum;
        n.value = Tensor(1, 1);
        n.value.at(0, 0) = -(A.at(0, target) / tau - mx - std::log(sum));
        return push(std::move(n));
    }

    // Mean squared error against a constant target; no gradient flows into
    // the target side by construction.
    int mse(int pred, const Tensor& target) {
        const Tensor& A = nodes_[pred].value;
        require_same_shape(A, target, "mse");
        if (A.size() == 0) throw DegenerateInput("mse: empty tensors");
        Node n = unary(Op::Mse, pred);
        n.saved = target;
        double s = 0.0;
        for (size_t i = 0; i < A.size(); ++i) {
            const double d = A.data[i] - target.data[i];
            s += d * d;
        }
        n.value = Tensor(1, 1);
        n.value.at(0, 0) = s / static_cast<double>(A.size());
        return push(std::move(n));
    }

    // Scaled dot-product attention composed from primitives; gradients come
    // along for free.
    int attention(int q, int k, int v) {
        const int dk = nodes_[k].value.cols;
        const int scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
        return matmul(softmax_rows(scores), v);
    }

    // Backpropagate from a scalar node. May be called once per graph.
    void backward(int loss) {
        const Tensor& lv = nodes_[loss].value;
        if (lv.rows != 1 || lv.cols != 1)
            throw ShapeError("backward: loss must be a 1x1 scalar");
        if (!std::isfinite(lv.at(0, 0)))
            throw NumericError("backward: non-finite loss");
        if (ran_backward_) throw Error("backward: already ran on this graph");
        ran_backward_ = true;
        if (!nodes_[loss].needs_grad) return;  // constant: all leaf grads stay zero
        nodes_[loss].grad.at(0, 0) = 1.0;
        for (int id = loss; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.needs_grad || n.op == Op::Leaf) continue;
            propagate(n);
        }
    }

private:
    static constexpr double kInvSqrt2 = 0.70710678118654752440;
    static constexpr double kInvSqrt2Pi = 0.39894228040143267794;

    std::vector<Node> nodes_;
    bool ran_backward_ = false;

    Node unary(Op op, int a) {
        Node n;
        n.op = op;
        n.parents = {a};
        n.needs_grad = nodes_[a].needs_grad;
        return n;
    }

    Node binary(Op op, int a, int b) {
        Node n;
        n.op = op;
        n.parents = {a, b};
        n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
        return n;
    }

    int push(Node&& n) {
        if (n.needs_grad) n.grad = Tensor(n.value.rows, n.value.cols);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Tensor* pgrad(int id) { return nodes_[id].needs_grad ? &nodes_[id].grad : nullptr; }

    void propagate(Node& n) {
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::MatMul: {
                const Tensor& A = nodes_[n.parents[0]].value;
                const Tensor& B = nodes_[n.parents[1]].value;
                if (Tensor* ga = pgrad(n.parents[0])) {
                    // dA += G * B^T
                    for (int i = 0; i < A.rows; ++i)
                        for (int k = 0; k < B.cols; ++k) {
                            const double gik = g.at(i, k);
                            if (gik == 0.0) continue;
                            for (int j = 0; j < A.cols; ++j)
                                ga->at(i, j) += gik * B.at(j, k);
                        }
                }
                if (Tensor* gb = pgrad(n.parents[1])) {
                    // dB += A^T * G
                    for (int i = 0; i < A.rows; ++i)
                        for (int j = 0; j < A.cols; ++j) {
                            const double aij = A.at(i, j);
                            if (aij == 0.0) continue;
                            for (int k = 0; k < B.cols; ++k)
                                gb->at(j, k) += aij * g.at(i, k);
                        }
                }
                break;
            }
            case Op::Transpose:
                if (Tensor* ga = pgrad(n.parents[0])) {
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) ga->at(j, i) += g.at(i, j);
                }
                break;
            case Op::Add:
                if (Tensor* ga = pgrad(n.parents[0]))
                    for (size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i];
                if (Tensor* gb = pgrad(n.parents[1]))
                    for (size_t i = 0; i < g.size(); ++i) gb->data[i] += g.data[i];
                break;
            case Op::Sub:
                if (Tensor* ga = pgrad(n.parents[0]))
                    for (size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i];
                if (Tensor* gb = pgrad(n.parents[1]))
                    for (size_t i = 0; i < g.size(); ++i) gb->data[i] -= g.data[i];
                break;
            case Op::Mul: {
                const Tensor& A = nodes_[n.parents[0]].value;
                const Tensor& B = nodes_[n.parents[1]].value;
                if (Tensor* ga = pgrad(n.parents[0]))
                    for (size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i] * B.data[i];
                if (Tensor* gb = pgrad(n.parents[1]))
                    for (size_t i = 0; i < g.size(); ++i) gb->data[i] += g.data[i] * A.data[i];
                break;
            }
            case Op::AddRow:
                if (Tensor* ga = pgrad(n.parents[0]))
                    for (size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i];
                if (Tensor* gb = pgrad(n.parents[1])) {
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) gb->at(0, j) += g.at(i, j);
                }
                break;
            case Op::MulRow: {
                const Tensor& A = nodes_[n.parents[0]].value;
                const Tensor& B = nodes_[n.parents[1]].value;
                if (Tensor* ga = pgrad(n.parents[0]))
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) ga->at(i, j) += g.at(i, j) * B.at(0, j);
                if (Tensor* gb = pgrad(n.parents[1]))
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) gb->at(0, j) += g.at(i, j) * A.at(i, j);
                break;
            }
            case Op::Scale:
                if (Tensor* ga = pgrad(n.parents[0]))
                    for (size_t i = 0; i < g.size(); ++i) ga->data[i] += n.a0 * g.data[i];
                break;
            case Op::ConcatRows: {
                int r = 0;
                for (int p : n.parents) {
                    const int pr = nodes_[p].value.rows;
                    if (Tensor* gp = pgrad(p)) {
                        for (int i = 0; i < pr; ++i)
                            for (int j = 0; j < g.cols; ++j) gp->at(i, j) += g.at(r + i, j);
                    }
                    r += pr;
                }
                break;
            }
            case Op::SliceRow:
                if (Tensor* ga = pgrad(n.parents[0]))
                    for (int j = 0; j < g.cols; ++j) ga->at(n.i0, j) += g.at(0, j);
                break;
            case Op::MeanRows:
                if (Tensor* ga = pgrad(n.parents[0])) {
                    const double inv = 1.0 / ga->rows;
                    for (int i = 0; i < ga->rows; ++i)
                        for (int j = 0; j < g.cols; ++j) ga->at(i, j) += g.at(0, j) * inv;
                }
                break;
            case Op::Tanh:
                if (Tensor* ga = pgrad(n.parents[0]))
                    for (size_t i = 0; i < g.size(); ++i)
                        ga->data[i] += g.data[i] * (1.0 - n.value.data[i] * n.value.data[i]);
                break;
            case Op::Gelu:
                if (Tensor* ga = pgrad(n.parents[0])) {
                    const Tensor& A = nodes_[n.parents[0]].value;
                    for (size_t i = 0; i < g.size(); ++i) {
                        const double x = A.data[i];
                        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                        ga->data[i] += g.data[i] * (cdf + x * pdf);
                    }
                }
                break;
            case Op::LayerNorm:
                if (Tensor* ga = pgrad(n.parents[0])) {
                    const int C = n.value.cols;
                    for (int i = 0; i < n.value.rows; ++i) {
                        const double istd = n.saved.at(i, 1);
                        double gmean = 0.0, gymean = 0.0;
                        for (int j = 0; j < C; ++j) {
                            gmean += g.at(i, j);
                            gymean += g.at(i, j) * n.value.at(i, j);
                        }
                        gmean /= C;
                        gymean /= C;
                        for (int j = 0; j < C; ++j)
                            ga->at(i, j) += istd * (g.at(i, j) - gmean - n.value.at(i, j) * gymean);
                    }
                }
                break;
            case Op::SoftmaxRows:
                if (Tensor* ga = pgrad(n.parents[0])) {
                    for (int i = 0; i < n.value.rows; ++i) {
                        double gp = 0.0;
                        for (int j = 0; j < n.value.cols; ++j)
                            gp += g.at(i, j) * n.value.at(i, j);
                        for (int j = 0; j < n.value.cols; ++j)
                            ga->at(i, j) += n.value.at(i, j) * (g.at(i, j) - gp);
                    }
                }
                break;
            case Op::L2NormRows:
                if (Tensor* ga = pgrad(n.parents[0])) {
                    for (int i = 0; i < n.value.rows; ++i) {
                        const double inv = 1.0 / n.saved.at(i, 0);
                        double gu = 0.0;
                        for (int j = 0; j < n.value.cols; ++j)
                            gu += g.at(i, j) * n.value.at(i, j);
                        for (int j = 0; j < n.value.cols; ++j)
                            ga->at(i, j) += inv * (g.at(i, j) - gu * n.value.at(i, j));
                    }
                }
                break;
            case Op::SoftmaxXent:
                if (Tensor* ga = pgrad(n.parents[0])) {
                    const double gs = g.at(0, 0) / n.a0;
                    for (int j = 0; j < n.saved.cols; ++j) {
                        double d = n.saved.at(0, j);
                        if (j == n.i0) d -= 1.0;
                        ga->at(0, j) += gs * d;
                    }
                }
                break;
            case Op::Mse:
                if (Tensor* ga = pgrad(n.parents[0])) {
                    const Tensor& A = nodes_[n.parents[0]].value;
                    const double s = 2.0 * g.at(0, 0) / static_cast<double>(A.size());
                    for (size_t i = 0; i < A.size(); ++i)
                        ga->data[i] += s * (A.data[i] - n.saved.data[i]);
                }
                break;
        }
    }
};

}  // namespace widin
