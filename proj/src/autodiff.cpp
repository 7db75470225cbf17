#include "crashbench/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "crashbench/kernels.hpp"

namespace crashbench::ad {

namespace kern = crashbench::kernels;

Tensor Tensor::ones(int r, int c) {
    Tensor t(r, c);
    std::fill(t.d.begin(), t.d.end(), 1.0);
    return t;
}

Tensor Tensor::from(int r, int c, std::initializer_list<double> vals) {
    if (static_cast<std::size_t>(r) * static_cast<std::size_t>(c) != vals.size())
        throw std::invalid_argument("tensor literal: value count does not match shape");
    Tensor t(r, c);
    std::copy(vals.begin(), vals.end(), t.d.begin());
    return t;
}

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                                " vs " + std::to_string(b.rows) + "x" +
                                std::to_string(b.cols));
}

}  // namespace

Tape::Ref Tape::push(Tensor value, bool needs_grad, std::function<void()> back) {
    Node n;
    n.grad = Tensor(value.rows, value.cols);
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Ref>(nodes_.size() - 1);
}

Tape::Ref Tape::input(const Tensor& t, bool needs_grad) { return push(t, needs_grad); }

Tape::Ref Tape::add(Ref a, Ref b) {
    const Tensor &av = val(a), &bv = val(b);
    if (!av.same_shape(bv)) shape_error("add", av, bv);
    Tensor out(av.rows, av.cols);
    kern::vadd(av.d.data(), bv.d.data(), out.d.data(), out.size());
    bool ng = needs(a) || needs(b);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, a, b, r] {
            const Tensor& go = grad(r);
            if (needs(a)) kern::axpy(1.0, go.d.data(), grad_mut(a).d.data(), go.size());
            if (needs(b)) kern::axpy(1.0, go.d.data(), grad_mut(b).d.data(), go.size());
        };
    return r;
}

Tape::Ref Tape::sub(Ref a, Ref b) {
    const Tensor &av = val(a), &bv = val(b);
    if (!av.same_shape(bv)) shape_error("sub", av, bv);
    Tensor out(av.rows, av.cols);
    kern::vsub(av.d.data(), bv.d.data(), out.d.data(), out.size());
    bool ng = needs(a) || needs(b);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, a, b, r] {
            const Tensor& go = grad(r);
            if (needs(a)) kern::axpy(1.0, go.d.data(), grad_mut(a).d.data(), go.size());
            if (needs(b)) kern::axpy(-1.0, go.d.data(), grad_mut(b).d.data(), go.size());
        };
    return r;
}

Tape::Ref Tape::mul(Ref a, Ref b) {
    const Tensor &av = val(a), &bv = val(b);
    if (!av.same_shape(bv)) shape_error("mul", av, bv);
    Tensor out(av.rows, av.cols);
    kern::vmul(av.d.data(), bv.d.data(), out.d.data(), out.size());
    bool ng = needs(a) || needs(b);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, a, b, r] {
            const Tensor& go = grad(r);
            if (needs(a)) {
                const Tensor& bb = val(b);
                Tensor& ga = grad_mut(a);
                for (std::size_t i = 0; i < go.size(); ++i) ga.d[i] += go.d[i] * bb.d[i];
            }
            if (needs(b)) {
                const Tensor& aa = val(a);
                Tensor& gb = grad_mut(b);
                for (std::size_t i = 0; i < go.size(); ++i) gb.d[i] += go.d[i] * aa.d[i];
            }
        };
    return r;
}

Tape::Ref Tape::scale(Ref a, double c) {
    Tensor out = val(a);
    kern::scal(c, out.d.data(), out.size());
    bool ng = needs(a);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, a, c, r] {
            const Tensor& go = grad(r);
            kern::axpy(c, go.d.data(), grad_mut(a).d.data(), go.size());
        };
    return r;
}

Tape::Ref Tape::matmul(Ref a, Ref b) {
    const Tensor &av = val(a), &bv = val(b);
    if (av.cols != bv.rows) shape_error("matmul", av, bv);
    std::size_t m = static_cast<std::size_t>(av.rows), k = static_cast<std::size_t>(av.cols),
                n = static_cast<std::size_t>(bv.cols);
    Tensor out(av.rows, bv.cols);
    kern::gemm_nn(av.d.data(), bv.d.data(), out.d.data(), m, k, n);
    bool ng = needs(a) || needs(b);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, a, b, r, m, k, n] {
            const Tensor& go = grad(r);
            if (needs(a))  // dA(m,k) += dC(m,n) * B(k,n)^T
                kern::gemm_nt(go.d.data(), val(b).d.data(), grad_mut(a).d.data(), m, n, k);
            if (needs(b))  // dB(k,n) += A(m,k)^T * dC(m,n)
                kern::gemm_tn(val(a).d.data(), go.d.data(), grad_mut(b).d.data(), k, m, n);
        };
    return r;
}

Tape::Ref Tape::matmul_nt(Ref a, Ref b) {
    const Tensor &av = val(a), &bv = val(b);
    if (av.cols != bv.cols) shape_error("matmul_nt", av, bv);
    std::size_t m = static_cast<std::size_t>(av.rows), k = static_cast<std::size_t>(av.cols),
                n = static_cast<std::size_t>(bv.rows);
    Tensor out(av.rows, bv.rows);
    kern::gemm_nt(av.d.data(), bv.d.data(), out.d.data(), m, k, n);
    bool ng = needs(a) || needs(b);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, a, b, r, m, k, n] {
            const Tensor& go = grad(r);
            if (needs(a))  // dA(m,k) += dC(m,n) * B(n,k)
                kern::gemm_nn(go.d.data(), val(b).d.data(), grad_mut(a).d.data(), m, n, k);
            if (needs(b))  // dB(n,k) += dC(m,n)^T * A(m,k)
                kern::gemm_tn(go.d.data(), val(a).d.data(), grad_mut(b).d.data(), n, m, k);
        };
    return r;
}

Tape::Ref Tape::matmul_tn(Ref a, Ref b) {
    const Tensor &av = val(a), &bv = val(b);
    if (av.rows != bv.rows) shape_error("matmul_tn", av, bv);
    std::size_t m = static_cast<std::size_t>(av.cols), k = static_cast<std::size_t>(av.rows),
                n = static_cast<std::size_t>(bv.cols);
    Tensor out(av.cols, bv.cols);
    kern::gemm_tn(av.d.data(), bv.d.data(), out.d.data(), m, k, n);
    bool ng = needs(a) || needs(b);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, a, b, r, m, k, n] {
            const Tensor& go = grad(r);
            if (needs(a))  // dA(k,m) += B(k,n) * dC(m,n)^T
                kern::gemm_nt(val(b).d.data(), go.d.data(), grad_mut(a).d.data(), k, n, m);
            if (needs(b))  // dB(k,n) += A(k,m) * dC(m,n)
                kern::gemm_nn(val(a).d.data(), go.d.data(), grad_mut(b).d.data(), k, m, n);
        };
    return r;
}

Tape::Ref Tape::add_rowvec(Ref a, Ref b) {
    const Tensor &av = val(a), &bv = val(b);
    if (bv.rows != 1 || bv.cols != av.cols) shape_error("add_rowvec", av, bv);
    Tensor out = av;
    for (int i = 0; i < out.rows; ++i)
        kern::vadd(&av.d[static_cast<std::size_t>(i) * av.cols], bv.d.data(),
                   &out.d[static_cast<std::size_t>(i) * av.cols],
                   static_cast<std::size_t>(av.cols));
    bool ng = needs(a) || needs(b);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, a, b, r] {
            const Tensor& go = grad(r);
            if (needs(a)) kern::axpy(1.0, go.d.data(), grad_mut(a).d.data(), go.size());
            if (needs(b)) {
                Tensor& gb = grad_mut(b);
                for (int i = 0; i < go.rows; ++i)
                    kern::vadd(gb.d.data(), &go.d[static_cast<std::size_t>(i) * go.cols],
                               gb.d.data(), static_cast<std::size_t>(go.cols));
            }
        };
    return r;
}

Tape::Ref Tape::tanh_(Ref a) {
    Tensor out = val(a);
    for (double& v : out.d) v = std::tanh(v);
    bool ng = needs(a);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, a, r] {
            const Tensor &go = grad(r), &y = val(r);
            Tensor& ga = grad_mut(a);
            for (std::size_t i = 0; i < go.size(); ++i)
                ga.d[i] += go.d[i] * (1.0 - y.d[i] * y.d[i]);
        };
    return r;
}

Tape::Ref Tape::softmax_rows(Ref a) {
    const Tensor& av = val(a);
    Tensor out(av.rows, av.cols);
    for (int i = 0; i < av.rows; ++i) {
        const double* x = &av.d[static_cast<std::size_t>(i) * av.cols];
        double* y = &out.d[static_cast<std::size_t>(i) * av.cols];
        double m = x[0];
        for (int j = 1; j < av.cols; ++j) m = std::max(m, x[j]);
        double s = 0.0;
        for (int j = 0; j < av.cols; ++j) s += (y[j] = std::exp(x[j] - m));
        for (int j = 0; j < av.cols; ++j) y[j] /= s;
    }
    bool ng = needs(a);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, a, r] {
            const Tensor &go = grad(r), &y = val(r);
            Tensor& ga = grad_mut(a);
            for (int i = 0; i < y.rows; ++i) {
                std::size_t off = static_cast<std::size_t>(i) * y.cols;
                double dot = kern::dot(&go.d[off], &y.d[off], static_cast<std::size_t>(y.cols));
                for (int j = 0; j < y.cols; ++j)
                    ga.d[off + j] += y.d[off + j] * (go.d[off + j] - dot);
            }
        };
    return r;
}

Tape::Ref Tape::layer_norm_rows(Ref a, Ref gamma, Ref beta, double eps) {
    const Tensor &av = val(a), &gv = val(gamma), &bv = val(beta);
    if (gv.rows != 1 || gv.cols != av.cols) shape_error("layer_norm_rows", av, gv);
    if (bv.rows != 1 || bv.cols != av.cols) shape_error("layer_norm_rows", av, bv);
    int n = av.cols;
    Tensor out(av.rows, n);
    // the backward pass reuses the normalized values and inverse spreads
    auto xhat = std::make_shared<Tensor>(av.rows, n);
    auto inv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(av.rows));
    for (int i = 0; i < av.rows; ++i) {
        std::size_t off = static_cast<std::size_t>(i) * n;
        double mu = kern::sum(&av.d[off], static_cast<std::size_t>(n)) / n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            double dx = av.d[off + j] - mu;
            var += dx * dx;
        }
        var /= n;
        double iv = 1.0 / std::sqrt(var + eps);
        (*inv)[static_cast<std::size_t>(i)] = iv;
        for (int j = 0; j < n; ++j) {
            double xh = (av.d[off + j] - mu) * iv;
            xhat->d[off + j] = xh;
            out.d[off + j] = gv.d[static_cast<std::size_t>(j)] * xh +
                             bv.d[static_cast<std::size_t>(j)];
        }
    }
    bool ng = needs(a) || needs(gamma) || needs(beta);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, a, gamma, beta, r, xhat, inv] {
            const Tensor& go = grad(r);
            const Tensor& gv = val(gamma);
            int n = go.cols;
            for (int i = 0; i < go.rows; ++i) {
                std::size_t off = static_cast<std::size_t>(i) * n;
                if (needs(gamma) || needs(beta)) {
                    for (int j = 0; j < n; ++j) {
                        if (needs(gamma))
                            grad_mut(gamma).d[static_cast<std::size_t>(j)] +=
                                go.d[off + j] * xhat->d[off + j];
                        if (needs(beta))
                            grad_mut(beta).d[static_cast<std::size_t>(j)] += go.d[off + j];
                    }
                }
                if (needs(a)) {
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (int j = 0; j < n; ++j) {
                        double dxh = go.d[off + j] * gv.d[static_cast<std::size_t>(j)];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat->d[off + j];
                    }
                    mean_dxhat /= n;
                    mean_dxhat_xhat /= n;
                    double iv = (*inv)[static_cast<std::size_t>(i)];
                    Tensor& ga = grad_mut(a);
                    for (int j = 0; j < n; ++j) {
                        double dxh = go.d[off + j] * gv.d[static_cast<std::size_t>(j)];
                        ga.d[off + j] += iv * (dxh - mean_dxhat -
                                               xhat->d[off + j] * mean_dxhat_xhat);
                    }
                }
            }
        };
    return r;
}

Tape::Ref Tape::concat_cols(const std::vector<Ref>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    int rows = val(parts[0]).rows, cols = 0;
    bool ng = false;
    for (Ref p : parts) {
        if (val(p).rows != rows) shape_error("concat_cols", val(parts[0]), val(p));
        cols += val(p).cols;
        ng = ng || needs(p);
    }
    Tensor out(rows, cols);
    int c0 = 0;
    for (Ref p : parts) {
        const Tensor& pv = val(p);
        for (int i = 0; i < rows; ++i)
            std::copy_n(&pv.d[static_cast<std::size_t>(i) * pv.cols], pv.cols,
                        &out.d[static_cast<std::size_t>(i) * cols + c0]);
        c0 += pv.cols;
    }
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, parts, r] {
            const Tensor& go = grad(r);
            int c0 = 0;
            for (Ref p : parts) {
                int pc = val(p).cols;
                if (needs(p)) {
                    Tensor& gp = grad_mut(p);
                    for (int i = 0; i < go.rows; ++i)
                        kern::vadd(&gp.d[static_cast<std::size_t>(i) * pc],
                                   &go.d[static_cast<std::size_t>(i) * go.cols + c0],
                                   &gp.d[static_cast<std::size_t>(i) * pc],
                                   static_cast<std::size_t>(pc));
                }
                c0 += pc;
            }
        };
    return r;
}

Tape::Ref Tape::slice_cols(Ref a, int c0, int c1) {
    const Tensor& av = val(a);
    if (c0 < 0 || c1 > av.cols || c0 >= c1)
        throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + ", " +
                                    std::to_string(c1) + ") for " + std::to_string(av.cols) +
                                    " columns");
    Tensor out(av.rows, c1 - c0);
    for (int i = 0; i < av.rows; ++i)
        std::copy_n(&av.d[static_cast<std::size_t>(i) * av.cols + c0], c1 - c0,
                    &out.d[static_cast<std::size_t>(i) * out.cols]);
    bool ng = needs(a);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, a, c0, r] {
            const Tensor& go = grad(r);
            Tensor& ga = grad_mut(a);
            for (int i = 0; i < go.rows; ++i)
                kern::vadd(&ga.d[static_cast<std::size_t>(i) * ga.cols + c0],
                           &go.d[static_cast<std::size_t>(i) * go.cols],
                           &ga.d[static_cast<std::size_t>(i) * ga.cols + c0],
                           static_cast<std::size_t>(go.cols));
        };
    return r;
}

Tape::Ref Tape::concat_rows(const std::vector<Ref>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    int cols = val(parts[0]).cols, rows = 0;
    bool ng = false;
    for (Ref p : parts) {
        if (val(p).cols != cols) shape_error("concat_rows", val(parts[0]), val(p));
        rows += val(p).rows;
        ng = ng || needs(p);
    }
    Tensor out(rows, cols);
    std::size_t off = 0;
    for (Ref p : parts) {
        const Tensor& pv = val(p);
        std::copy(pv.d.begin(), pv.d.end(), out.d.begin() + static_cast<std::ptrdiff_t>(off));
        off += pv.size();
    }
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, parts, r] {
            const Tensor& go = grad(r);
            std::size_t off = 0;
            for (Ref p : parts) {
                std::size_t sz = val(p).size();
                if (needs(p))
                    kern::axpy(1.0, &go.d[off], grad_mut(p).d.data(), sz);
                off += sz;
            }
        };
    return r;
}

Tape::Ref Tape::slice_rows(Ref a, int r0, int r1) {
    const Tensor& av = val(a);
    if (r0 < 0 || r1 > av.rows || r0 >= r1)
        throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + ", " +
                                    std::to_string(r1) + ") for " + std::to_string(av.rows) +
                                    " rows");
    Tensor out(r1 - r0, av.cols);
    std::copy_n(&av.d[static_cast<std::size_t>(r0) * av.cols], out.size(), out.d.begin());
    bool ng = needs(a);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, a, r0, r] {
            const Tensor& go = grad(r);
            kern::axpy(1.0, go.d.data(),
                       &grad_mut(a).d[static_cast<std::size_t>(r0) * go.cols], go.size());
        };
    return r;
}

Tape::Ref Tape::rowscale(Ref a, Ref rvec) {
    const Tensor &av = val(a), &rv = val(rvec);
    if (rv.cols != 1 || rv.rows != av.rows) shape_error("rowscale", av, rv);
    Tensor out(av.rows, av.cols);
    for (int i = 0; i < av.rows; ++i) {
        double g = rv.d[static_cast<std::size_t>(i)];
        std::size_t off = static_cast<std::size_t>(i) * av.cols;
        for (int j = 0; j < av.cols; ++j) out.d[off + j] = av.d[off + j] * g;
    }
    bool ng = needs(a) || needs(rvec);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, a, rvec, r] {
            const Tensor& go = grad(r);
            const Tensor &av = val(a), &rv = val(rvec);
            for (int i = 0; i < go.rows; ++i) {
                std::size_t off = static_cast<std::size_t>(i) * go.cols;
                if (needs(a)) {
                    double g = rv.d[static_cast<std::size_t>(i)];
                    Tensor& ga = grad_mut(a);
                    for (int j = 0; j < go.cols; ++j) ga.d[off + j] += go.d[off + j] * g;
                }
                if (needs(rvec))
                    grad_mut(rvec).d[static_cast<std::size_t>(i)] +=
                        kern::dot(&go.d[off], &av.d[off], static_cast<std::size_t>(go.cols));
            }
        };
    return r;
}

Tape::Ref Tape::reciprocal(Ref a) {
    Tensor out = val(a);
    for (double& v : out.d) v = 1.0 / v;
    bool ng = needs(a);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, a, r] {
            const Tensor &go = grad(r), &y = val(r);
            Tensor& ga = grad_mut(a);
            for (std::size_t i = 0; i < go.size(); ++i)
                ga.d[i] -= go.d[i] * y.d[i] * y.d[i];
        };
    return r;
}

Tape::Ref Tape::sse(Ref pred, const Tensor& target) {
    const Tensor& pv = val(pred);
    if (!pv.same_shape(target)) shape_error("sse", pv, target);
    Tensor diff(pv.rows, pv.cols);
    kern::vsub(pv.d.data(), target.d.data(), diff.d.data(), diff.size());
    Tensor out(1, 1);
    out.d[0] = kern::dot(diff.d.data(), diff.d.data(), diff.size());
    bool ng = needs(pred);
    Ref r = push(std::move(out), ng);
    if (ng)
        nodes_.back().back = [this, pred, r, diff = std::move(diff)] {
            double g = 2.0 * grad(r).d[0];
            kern::axpy(g, diff.d.data(), grad_mut(pred).d.data(), diff.size());
        };
    return r;
}

void Tape::backward(Ref loss) {
    Node& top = nodes_.at(static_cast<std::size_t>(loss));
    if (top.value.rows != 1 || top.value.cols != 1)
        throw std::invalid_argument("backward: loss must be 1x1");
    for (Node& n : nodes_) std::fill(n.grad.d.begin(), n.grad.d.end(), 0.0);
    top.grad.d[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (n.back && n.needs_grad) n.back();
    }
}

}  // namespace crashbench::ad
