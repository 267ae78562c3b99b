#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "pathalign/errors.hpp"
#include "pathalign/tensor.hpp"

namespace pathalign {

enum class OpKind {
    Leaf,
    Gather,          // rows of a table selected by index list
    GroupMean,       // mean-pool row groups given offsets
    MatMul,
    AddRowVec,       // add a 1 x c bias row to every row
    Add,             // elementwise
    Tanh,
    L2NormalizeRows,
    Scale,
    LogSumExp,       // tau * log sum exp(sign * x / tau) over all entries -> 1x1
};

// Reverse-mode tape over small dense graphs. Nodes are appended after their
// inputs, so reverse id order is a valid topological order for backward.
// Every parameter leaf accumulates exactly one gradient per backward pass.
class Graph {
public:
    using NodeId = std::size_t;

    NodeId leaf(Tensor2 value, bool requires_grad) {
        Node n;
        n.kind = OpKind::Leaf;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        return push(std::move(n));
    }

    NodeId gather_rows(NodeId table, std::vector<std::size_t> indices) {
        const Tensor2& t = value(table);
        Tensor2 out(indices.size(), t.cols);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            if (indices[i] >= t.rows) throw std::invalid_argument("gather_rows: index out of range");
            std::copy(t.row(indices[i]).begin(), t.row(indices[i]).end(), out.row(i).begin());
        }
        Node n;
        n.kind = OpKind::Gather;
        n.a = table;
        n.indices = std::move(indices);
        n.value = std::move(out);
        n.requires_grad = nodes_[table].requires_grad;
        return push(std::move(n));
    }

    // offsets has G+1 entries; group g covers input rows [offsets[g], offsets[g+1]).
    NodeId group_mean_rows(NodeId x, std::vector<std::size_t> offsets) {
        const Tensor2& v = value(x);
        if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != v.rows)
            throw std::invalid_argument("group_mean_rows: bad offsets");
        const std::size_t groups = offsets.size() - 1;
        Tensor2 out(groups, v.cols);
        for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t lo = offsets[g], hi = offsets[g + 1];
            if (hi <= lo) throw std::invalid_argument("group_mean_rows: empty group");
            for (std::size_t r = lo; r < hi; ++r)
                for (std::size_t c = 0; c < v.cols; ++c) out.at(g, c) += v.at(r, c);
            for (std::size_t c = 0; c < v.cols; ++c) out.at(g, c) /= static_cast<double>(hi - lo);
        }
        Node n;
        n.kind = OpKind::GroupMean;
        n.a = x;
        n.indices = std::move(offsets);
        n.value = std::move(out);
        n.requires_grad = nodes_[x].requires_grad;
        return push(std::move(n));
    }

    NodeId matmul(NodeId a, NodeId b) {
        Node n;
        n.kind = OpKind::MatMul;
        n.a = a;
        n.b = b;
        n.value = pathalign::matmul(value(a), value(b));
        n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
        return push(std::move(n));
    }

    NodeId add_rowvec(NodeId a, NodeId bias) {
        const Tensor2& va = value(a);
        const Tensor2& vb = value(bias);
        if (vb.rows != 1 || vb.cols != va.cols) throw std::invalid_argument("add_rowvec: bias shape");
        Tensor2 out = va;
        for (std::size_t r = 0; r < out.rows; ++r)
            for (std::size_t c = 0; c < out.cols; ++c) out.at(r, c) += vb.at(0, c);
        Node n;
        n.kind = OpKind::AddRowVec;
        n.a = a;
        n.b = bias;
        n.value = std::move(out);
        n.requires_grad = nodes_[a].requires_grad || nodes_[bias].requires_grad;
        return push(std::move(n));
    }

    NodeId add(NodeId a, NodeId b) {
        const Tensor2& va = value(a);
        const Tensor2& vb = value(b);
        if (!va.same_shape(vb)) throw std::invalid_argument("add: shape mismatch");
        Tensor2 out = va;
        for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += vb.values[i];
        Node n;
        n.kind = OpKind::Add;
        n.a = a;
        n.b = b;
        n.value = std::move(out);
        n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
        return push(std::move(n));
    }

    NodeId tanh(NodeId x) {
        Tensor2 out = value(x);
        for (double& v : out.values) v = std::tanh(v);
        Node n;
        n.kind = OpKind::Tanh;
        n.a = x;
        n.value = std::move(out);
        n.requires_grad = nodes_[x].requires_grad;
        return push(std::move(n));
    }

    NodeId l2_normalize_rows(NodeId x) {
        const Tensor2& v = value(x);
        Tensor2 out(v.rows, v.cols);
        std::vector<double> norms(v.rows);
        for (std::size_t r = 0; r < v.rows; ++r) {
            const double nr = norm2(v.row(r));
            if (!(nr > kNormEps)) throw NumericError("degenerate embedding: vector norm below 1e-12");
            norms[r] = nr;
            for (std::size_t c = 0; c < v.cols; ++c) out.at(r, c) = v.at(r, c) / nr;
        }
        Node n;
        n.kind = OpKind::L2NormalizeRows;
        n.a = x;
        n.value = std::move(out);
        n.norms = std::move(norms);
        n.requires_grad = nodes_[x].requires_grad;
        return push(std::move(n));
    }

    NodeId scale(NodeId x, double c) {
        Tensor2 out = value(x);
        for (double& v : out.values) v *= c;
        Node n;
        n.kind = OpKind::Scale;
        n.a = x;
        n.scalar = c;
        n.value = std::move(out);
        n.requires_grad = nodes_[x].requires_grad;
        return push(std::move(n));
    }

    NodeId logsumexp(NodeId x, int sign, double tau) {
        const Tensor2& v = value(x);
        Tensor2 out(1, 1);
        out.at(0, 0) = pathalign::logsumexp(v.values, sign, tau);
        Node n;
        n.kind = OpKind::LogSumExp;
        n.a = x;
        n.sign = sign;
        n.scalar = tau;
        n.value = std::move(out);
        n.requires_grad = nodes_[x].requires_grad;
        return push(std::move(n));
    }

    const Tensor2& value(NodeId id) const { return nodes_[id].value; }
    const Tensor2& grad(NodeId id) const { return nodes_[id].grad; }
    std::size_t size() const { return nodes_.size(); }

    // Seeds the root with dRoot and accumulates gradients down the tape.
    void backward(NodeId root, const Tensor2& seed) {
        if (!seed.same_shape(nodes_[root].value)) throw std::invalid_argument("backward: seed shape");
        for (Node& n : nodes_) {
            n.grad = Tensor2(n.value.rows, n.value.cols);
        }
        nodes_[root].grad = seed;
        for (std::size_t i = root + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.kind == OpKind::Leaf) continue;
            propagate(n);
        }
    }

private:
    struct Node {
        OpKind kind = OpKind::Leaf;
        NodeId a = 0, b = 0;
        Tensor2 value;
        Tensor2 grad;
        std::vector<std::size_t> indices;  // gather indices or group offsets
        std::vector<double> norms;         // cached input row norms for normalize
        double scalar = 0.0;               // scale factor or tau
        int sign = +1;
        bool requires_grad = false;
    };

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    void propagate(Node& n) {
        const Tensor2& g = n.grad;
        switch (n.kind) {
            case OpKind::Gather: {
                Tensor2& da = nodes_[n.a].grad;
                for (std::size_t i = 0; i < n.indices.size(); ++i)
                    for (std::size_t c = 0; c < g.cols; ++c) da.at(n.indices[i], c) += g.at(i, c);
                break;
            }
            case OpKind::GroupMean: {
                Tensor2& da = nodes_[n.a].grad;
                for (std::size_t grp = 0; grp + 1 < n.indices.size(); ++grp) {
                    const std::size_t lo = n.indices[grp], hi = n.indices[grp + 1];
                    const double inv = 1.0 / static_cast<double>(hi - lo);
                    for (std::size_t r = lo; r < hi; ++r)
                        for (std::size_t c = 0; c < g.cols; ++c) da.at(r, c) += g.at(grp, c) * inv;
                }
                break;
            }
            case OpKind::MatMul: {
                const Tensor2& va = nodes_[n.a].value;
                const Tensor2& vb = nodes_[n.b].value;
                if (nodes_[n.a].requires_grad) accumulate(nodes_[n.a].grad, matmul_nt(g, vb));
                if (nodes_[n.b].requires_grad) accumulate(nodes_[n.b].grad, matmul_tn(va, g));
                break;
            }
            case OpKind::AddRowVec: {
                if (nodes_[n.a].requires_grad) accumulate(nodes_[n.a].grad, g);
                if (nodes_[n.b].requires_grad) {
                    Tensor2& db = nodes_[n.b].grad;
                    for (std::size_t r = 0; r < g.rows; ++r)
                        for (std::size_t c = 0; c < g.cols; ++c) db.at(0, c) += g.at(r, c);
                }
                break;
            }
            case OpKind::Add: {
                if (nodes_[n.a].requires_grad) accumulate(nodes_[n.a].grad, g);
                if (nodes_[n.b].requires_grad) accumulate(nodes_[n.b].grad, g);
                break;
            }
            case OpKind::Tanh: {
                Tensor2& da = nodes_[n.a].grad;
                for (std::size_t i = 0; i < g.size(); ++i)
                    da.values[i] += g.values[i] * (1.0 - n.value.values[i] * n.value.values[i]);
                break;
            }
            case OpKind::L2NormalizeRows: {
                // d(x/|x|) = (g - y <y,g>) / |x| with y the normalized row
                Tensor2& da = nodes_[n.a].grad;
                for (std::size_t r = 0; r < g.rows; ++r) {
                    const double proj = dot(n.value.row(r), g.row(r));
                    for (std::size_t c = 0; c < g.cols; ++c)
                        da.at(r, c) += (g.at(r, c) - n.value.at(r, c) * proj) / n.norms[r];
                }
                break;
            }
            case OpKind::Scale: {
                Tensor2& da = nodes_[n.a].grad;
                for (std::size_t i = 0; i < g.size(); ++i) da.values[i] += g.values[i] * n.scalar;
                break;
            }
            case OpKind::LogSumExp: {
                // softmax weights of sign * x / tau, scaled by sign
                const Tensor2& x = nodes_[n.a].value;
                Tensor2& da = nodes_[n.a].grad;
                const double tau = n.scalar;
                double m = n.sign * x.values[0] / tau;
                for (double v : x.values) m = std::max(m, n.sign * v / tau);
                double s = 0.0;
                for (double v : x.values) s += std::exp(n.sign * v / tau - m);
                const double gs = g.at(0, 0);
                for (std::size_t i = 0; i < x.size(); ++i)
                    da.values[i] += gs * n.sign * std::exp(n.sign * x.values[i] / tau - m) / s;
                break;
            }
            case OpKind::Leaf:
                break;
        }
    }

    static void accumulate(Tensor2& dst, const Tensor2& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst.values[i] += src.values[i];
    }

    std::vector<Node> nodes_;
};

}  // namespace pathalign
