#include "meshdex/tape.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "meshdex/kernels.hpp"

namespace meshdex {

using kernels::Trans;

Tape::Var Tape::push(Matrix value, bool needs_grad, std::function<void(Tape&, std::size_t)> back)
{
    nodes_.push_back(Node{std::move(value), nullptr, {}, needs_grad, std::move(back)});
    return Var{nodes_.size() - 1};
}

const Matrix& Tape::value(Var v) const
{
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.value;
}

Matrix& Tape::grad_of(std::size_t id)
{
    Node& n = nodes_[id];
    if (n.grad.empty() && !(n.external ? n.external->empty() : n.value.empty())) {
        const Matrix& v = n.external ? *n.external : n.value;
        n.grad = Matrix(v.rows(), v.cols());
    }
    return n.grad;
}

Tape::Var Tape::constant(Matrix value)
{
    return push(std::move(value), false, nullptr);
}

Tape::Var Tape::param(ParamRef p)
{
    nodes_.push_back(Node{{}, p.value, {}, p.grad != nullptr, nullptr});
    const std::size_t id = nodes_.size() - 1;
    if (p.grad) {
        Matrix* target = p.grad;
        nodes_[id].back = [target](Tape& t, std::size_t self) {
            const Matrix& g = t.nodes_[self].grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*target)[i] += g[i];
            }
        };
    }
    return Var{id};
}

Tape::Var Tape::gather_rows(ParamRef table, std::span<const std::size_t> rows)
{
    const Matrix& t = *table.value;
    Matrix out(rows.size(), t.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        assert(rows[r] < t.rows());
        std::copy_n(t.data() + rows[r] * t.cols(), t.cols(), out.data() + r * t.cols());
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    Matrix* target = table.grad;
    return push(std::move(out), target != nullptr, [idx = std::move(idx), target](Tape& tp, std::size_t self) {
        const Matrix& g = tp.nodes_[self].grad;
        const std::size_t c = g.cols();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            double* dst = target->data() + idx[r] * c;
            const double* src = g.data() + r * c;
            for (std::size_t j = 0; j < c; ++j) {
                dst[j] += src[j];
            }
        }
    });
}

Tape::Var Tape::add(Var a, Var b)
{
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    assert(va.same_shape(vb));
    Matrix out = va;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += vb[i];
    }
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
        for (const Var in : {a, b}) {
            if (!t.needs(in)) {
                continue;
            }
            Matrix& gi = t.grad_of(in.id);
            const Matrix& g = t.nodes_[self].grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                gi[i] += g[i];
            }
        }
    });
}

Tape::Var Tape::add_row(Var a, Var row)
{
    const Matrix& va = value(a);
    const Matrix& vr = value(row);
    assert(vr.rows() == 1 && vr.cols() == va.cols());
    Matrix out = va;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < out.cols(); ++c) {
            out(r, c) += vr[c];
        }
    }
    return push(std::move(out), needs(a) || needs(row), [a, row](Tape& t, std::size_t self) {
        const Matrix& g = t.nodes_[self].grad;
        if (t.needs(a)) {
            Matrix& ga = t.grad_of(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
            }
        }
        if (t.needs(row)) {
            Matrix& gr = t.grad_of(row.id);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t c = 0; c < g.cols(); ++c) {
                    gr[c] += g(r, c);
                }
            }
        }
    });
}

Tape::Var Tape::matmul(Var a, Var b)
{
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    assert(va.cols() == vb.rows());
    Matrix out(va.rows(), vb.cols());
    kernels::gemm(va, Trans::no, vb, Trans::no, out);
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
        const Matrix& g = t.nodes_[self].grad;
        if (t.needs(a)) {
            kernels::gemm(g, Trans::no, t.value(b), Trans::yes, t.grad_of(a.id), 1.0);
        }
        if (t.needs(b)) {
            kernels::gemm(t.value(a), Trans::yes, g, Trans::no, t.grad_of(b.id), 1.0);
        }
    });
}

Tape::Var Tape::matmul_nt(Var a, Var b)
{
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    assert(va.cols() == vb.cols());
    Matrix out(va.rows(), vb.rows());
    kernels::gemm(va, Trans::no, vb, Trans::yes, out);
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
        const Matrix& g = t.nodes_[self].grad;
        if (t.needs(a)) {
            kernels::gemm(g, Trans::no, t.value(b), Trans::no, t.grad_of(a.id), 1.0);
        }
        if (t.needs(b)) {
            kernels::gemm(g, Trans::yes, t.value(a), Trans::no, t.grad_of(b.id), 1.0);
        }
    });
}

Tape::Var Tape::scale(Var a, double s)
{
    Matrix out = value(a);
    for (auto& x : out.values()) {
        x *= s;
    }
    return push(std::move(out), needs(a), [a, s](Tape& t, std::size_t self) {
        const Matrix& g = t.nodes_[self].grad;
        Matrix& ga = t.grad_of(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += s * g[i];
        }
    });
}

Tape::Var Tape::mul_const(Var a, Matrix mask)
{
    Matrix out = value(a);
    assert(out.same_shape(mask));
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= mask[i];
    }
    return push(std::move(out), needs(a), [a, mask = std::move(mask)](Tape& t, std::size_t self) {
        const Matrix& g = t.nodes_[self].grad;
        Matrix& ga = t.grad_of(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += mask[i] * g[i];
        }
    });
}

Tape::Var Tape::relu(Var a)
{
    Matrix out = value(a);
    for (auto& x : out.values()) {
        x = x > 0.0 ? x : 0.0;
    }
    return push(std::move(out), needs(a), [a](Tape& t, std::size_t self) {
        const Matrix& g = t.nodes_[self].grad;
        const Matrix& x = t.value(a);
        Matrix& ga = t.grad_of(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (x[i] > 0.0) {
                ga[i] += g[i];
            }
        }
    });
}

Tape::Var Tape::tanh(Var a)
{
    Matrix out = value(a);
    for (auto& x : out.values()) {
        x = std::tanh(x);
    }
    return push(std::move(out), needs(a), [a](Tape& t, std::size_t self) {
        const Matrix& g = t.nodes_[self].grad;
        const Matrix& y = t.nodes_[self].value;
        Matrix& ga = t.grad_of(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * (1.0 - y[i] * y[i]);
        }
    });
}

Tape::Var Tape::sigmoid(Var a)
{
    Matrix out = value(a);
    for (auto& x : out.values()) {
        x = 1.0 / (1.0 + std::exp(-x));
    }
    return push(std::move(out), needs(a), [a](Tape& t, std::size_t self) {
        const Matrix& g = t.nodes_[self].grad;
        const Matrix& y = t.nodes_[self].value;
        Matrix& ga = t.grad_of(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * y[i] * (1.0 - y[i]);
        }
    });
}

Tape::Var Tape::softmax_rows(Var a)
{
    Matrix out = value(a);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (auto& x : row) {
            x = std::exp(x - mx);
            sum += x;
        }
        for (auto& x : row) {
            x /= sum;
        }
    }
    return push(std::move(out), needs(a), [a](Tape& t, std::size_t self) {
        const Matrix& g = t.nodes_[self].grad;
        const Matrix& y = t.nodes_[self].value;
        Matrix& ga = t.grad_of(a.id);
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < y.cols(); ++c) {
                dot += g(r, c) * y(r, c);
            }
            for (std::size_t c = 0; c < y.cols(); ++c) {
                ga(r, c) += y(r, c) * (g(r, c) - dot);
            }
        }
    });
}

Tape::Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps)
{
    const Matrix& vx = value(x);
    const Matrix& vg = value(gamma);
    const Matrix& vb = value(beta);
    const std::size_t n = vx.cols();
    Matrix xhat(vx.rows(), n);
    std::vector<double> inv_std(vx.rows());
    Matrix out(vx.rows(), n);
    for (std::size_t r = 0; r < vx.rows(); ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            mean += vx(r, c);
        }
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            const double d = vx(r, c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) {
            xhat(r, c) = (vx(r, c) - mean) * inv_std[r];
            out(r, c) = vg[c] * xhat(r, c) + vb[c];
        }
    }
    const bool need = needs(x) || needs(gamma) || needs(beta);
    return push(std::move(out), need,
                [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                    const Matrix& g = t.nodes_[self].grad;
                    const Matrix& vg = t.value(gamma);
                    const std::size_t n = g.cols();
                    const auto nd = static_cast<double>(n);
                    if (t.needs(gamma) || t.needs(beta)) {
                        for (std::size_t r = 0; r < g.rows(); ++r) {
                            for (std::size_t c = 0; c < n; ++c) {
                                if (t.needs(gamma)) {
                                    t.grad_of(gamma.id)[c] += g(r, c) * xhat(r, c);
                                }
                                if (t.needs(beta)) {
                                    t.grad_of(beta.id)[c] += g(r, c);
                                }
                            }
                        }
                    }
                    if (!t.needs(x)) {
                        return;
                    }
                    Matrix& gx = t.grad_of(x.id);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                        double mean_d = 0.0;
                        double mean_dx = 0.0;
                        for (std::size_t c = 0; c < n; ++c) {
                            const double d = g(r, c) * vg[c];
                            mean_d += d;
                            mean_dx += d * xhat(r, c);
                        }
                        mean_d /= nd;
                        mean_dx /= nd;
                        for (std::size_t c = 0; c < n; ++c) {
                            const double d = g(r, c) * vg[c];
                            gx(r, c) += inv_std[r] * (d - mean_d - xhat(r, c) * mean_dx);
                        }
                    }
                });
}

Tape::Var Tape::slice_cols(Var a, std::size_t begin, std::size_t count)
{
    const Matrix& va = value(a);
    assert(begin + count <= va.cols());
    Matrix out(va.rows(), count);
    for (std::size_t r = 0; r < va.rows(); ++r) {
        std::copy_n(va.data() + r * va.cols() + begin, count, out.data() + r * count);
    }
    return push(std::move(out), needs(a), [a, begin](Tape& t, std::size_t self) {
        const Matrix& g = t.nodes_[self].grad;
        Matrix& ga = t.grad_of(a.id);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                ga(r, begin + c) += g(r, c);
            }
        }
    });
}

Tape::Var Tape::concat_cols(std::span<const Var> parts)
{
    std::size_t rows = value(parts[0]).rows();
    std::size_t cols = 0;
    bool need = false;
    for (const Var p : parts) {
        assert(value(p).rows() == rows);
        cols += value(p).cols();
        need = need || needs(p);
    }
    Matrix out(rows, cols);
    std::size_t offset = 0;
    for (const Var p : parts) {
        const Matrix& v = value(p);
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(v.data() + r * v.cols(), v.cols(), out.data() + r * cols + offset);
        }
        offset += v.cols();
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return push(std::move(out), need, [ins = std::move(ins)](Tape& t, std::size_t self) {
        const Matrix& g = t.nodes_[self].grad;
        std::size_t offset = 0;
        for (const Var p : ins) {
            const std::size_t w = t.value(p).cols();
            if (t.needs(p)) {
                Matrix& gp = t.grad_of(p.id);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t c = 0; c < w; ++c) {
                        gp(r, c) += g(r, offset + c);
                    }
                }
            }
            offset += w;
        }
    });
}

Tape::Var Tape::select_rows(Var a, std::span<const std::size_t> rows)
{
    const Matrix& va = value(a);
    Matrix out(rows.size(), va.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        assert(rows[r] < va.rows());
        std::copy_n(va.data() + rows[r] * va.cols(), va.cols(), out.data() + r * va.cols());
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return push(std::move(out), needs(a), [a, idx = std::move(idx)](Tape& t, std::size_t self) {
        const Matrix& g = t.nodes_[self].grad;
        Matrix& ga = t.grad_of(a.id);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                ga(idx[r], c) += g(r, c);
            }
        }
    });
}

void Tape::backward(Var root, const Matrix& seed)
{
    if (!needs(root)) {
        return;
    }
    Matrix& g = grad_of(root.id);
    assert(g.same_shape(seed));
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += seed[i];
    }
    for (std::size_t id = root.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.needs_grad || !n.back || n.grad.empty()) {
            continue;
        }
        n.back(*this, id);
    }
}

}  // namespace meshdex
