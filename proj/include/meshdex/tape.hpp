#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "meshdex/matrix.hpp"

namespace meshdex {

/// A trainable tensor: its value, and where gradients accumulate (null when
/// no gradient is wanted).
struct ParamRef {
    const Matrix* value = nullptr;
    Matrix* grad = nullptr;
};

/// Reverse-mode differentiation over whole matrices. Operations append nodes;
/// `backward` walks them in reverse creation order. One tape per example, not
/// shared across threads.
class Tape {
public:
    struct Var {
        std::size_t id = 0;
    };

    Var constant(Matrix value);
    Var param(ParamRef p);
    /// Rows of a parameter table; gradients scatter straight into p.grad.
    Var gather_rows(ParamRef table, std::span<const std::size_t> rows);

    Var add(Var a, Var b);
    /// a + row broadcast over every row of a.
    Var add_row(Var a, Var row);
    Var matmul(Var a, Var b);
    /// a * b^T
    Var matmul_nt(Var a, Var b);
    Var scale(Var a, double s);
    Var mul_const(Var a, Matrix mask);
    Var relu(Var a);
    Var tanh(Var a);
    Var sigmoid(Var a);
    /// Row-wise softmax with max subtraction.
    Var softmax_rows(Var a);
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var slice_cols(Var a, std::size_t begin, std::size_t count);
    Var concat_cols(std::span<const Var> parts);
    Var select_rows(Var a, std::span<const std::size_t> rows);

    const Matrix& value(Var v) const;
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Seeds d(root) and propagates to every parameter gradient.
    void backward(Var root, const Matrix& seed);

private:
    struct Node {
        Matrix value;
        const Matrix* external = nullptr;
        Matrix grad;
        bool needs_grad = false;
        std::function<void(Tape&, std::size_t self)> back;
    };

    Var push(Matrix value, bool needs_grad, std::function<void(Tape&, std::size_t)> back);
    bool needs(Var v) const { return nodes_[v.id].needs_grad; }
    /// Lazily allocated gradient buffer of node v.
    Matrix& grad_of(std::size_t id);

    std::vector<Node> nodes_;
};

}  // namespace meshdex
