#include "vmt/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "vmt/errors.hpp"

namespace vmt {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

std::vector<int> inverse_axes(const std::vector<int>& axes) {
    std::vector<int> inv(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) inv[static_cast<std::size_t>(axes[i])] = static_cast<int>(i);
    return inv;
}

}  // namespace

const Tensor& Var::value() const { return g_->value(id_); }
const Tensor& Var::grad() const { return g_->grad(id_); }

const Tensor& Graph::grad(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_seeded) {
        throw Error("Graph::grad: no gradient present; run backward() first");
    }
    return n.grad;
}

int Graph::push(Tensor value, bool requires_grad, std::function<void()> backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Graph::grad_buf(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_seeded) {
        n.grad = Tensor::zeros(n.value.shape());
        n.grad_seeded = true;
    }
    return n.grad;
}

void Graph::accum(int id, const Tensor& g) {
    if (!nodes_[static_cast<std::size_t>(id)].requires_grad) return;
    grad_buf(id).add_scaled(g, 1.0);
}

void Graph::accum_scaled(int id, const Tensor& g, double s) {
    if (!nodes_[static_cast<std::size_t>(id)].requires_grad) return;
    grad_buf(id).add_scaled(g, s);
}

void Graph::check_graph(Var v) const {
    if (v.graph() != this) throw Error("Var belongs to a different graph");
}

Var Graph::leaf(Tensor value, bool requires_grad) {
    return Var(this, push(std::move(value), requires_grad, {}));
}

Var Graph::add(Var a, Var b) {
    check_graph(a);
    check_graph(b);
    const bool rg = requires_grad(a.id()) || requires_grad(b.id());
    int id = push(vmt::add(a.value(), b.value()), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, ai = a.id(), bi = b.id()] {
            accum(ai, grad(id));
            accum(bi, grad(id));
        };
    }
    return Var(this, id);
}

Var Graph::sub(Var a, Var b) {
    check_graph(a);
    check_graph(b);
    const bool rg = requires_grad(a.id()) || requires_grad(b.id());
    int id = push(vmt::sub(a.value(), b.value()), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, ai = a.id(), bi = b.id()] {
            accum(ai, grad(id));
            accum_scaled(bi, grad(id), -1.0);
        };
    }
    return Var(this, id);
}

Var Graph::mul(Var a, Var b) {
    check_graph(a);
    check_graph(b);
    const bool rg = requires_grad(a.id()) || requires_grad(b.id());
    int id = push(vmt::mul(a.value(), b.value()), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, ai = a.id(), bi = b.id()] {
            accum(ai, vmt::mul(grad(id), value(bi)));
            accum(bi, vmt::mul(grad(id), value(ai)));
        };
    }
    return Var(this, id);
}

Var Graph::scale(Var a, double s) {
    check_graph(a);
    const bool rg = requires_grad(a.id());
    int id = push(vmt::scale(a.value(), s), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, ai = a.id(), s] {
            accum_scaled(ai, grad(id), s);
        };
    }
    return Var(this, id);
}

Var Graph::add_scaled(Var a, Var b, double s) {
    check_graph(a);
    check_graph(b);
    const bool rg = requires_grad(a.id()) || requires_grad(b.id());
    Tensor out = a.value();
    out.add_scaled(b.value(), s);
    int id = push(std::move(out), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, ai = a.id(), bi = b.id(), s] {
            accum(ai, grad(id));
            accum_scaled(bi, grad(id), s);
        };
    }
    return Var(this, id);
}

Var Graph::add_bias(Var x, Var v) {
    check_graph(x);
    check_graph(v);
    const Tensor& xv = x.value();
    const Tensor& vv = v.value();
    const std::int64_t c = vv.numel();
    if (xv.dim(-1) != c) throw ShapeError("add_bias: last dim mismatch");
    Tensor out = xv;
    double* dst = out.data();
    const double* bias = vv.data();
    const std::int64_t rows = out.numel() / c;
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < c; ++j) dst[r * c + j] += bias[j];
    }
    const bool rg = requires_grad(x.id()) || requires_grad(v.id());
    int id = push(std::move(out), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, xi = x.id(), vi = v.id(), c] {
            const Tensor& dy = grad(id);
            accum(xi, dy);
            if (requires_grad(vi)) {
                Tensor dv({c});
                const double* g = dy.data();
                const std::int64_t rows2 = dy.numel() / c;
                for (std::int64_t r = 0; r < rows2; ++r) {
                    for (std::int64_t j = 0; j < c; ++j) dv[j] += g[r * c + j];
                }
                accum(vi, dv);
            }
        };
    }
    return Var(this, id);
}

Var Graph::linear(Var x, Var w) {
    check_graph(x);
    check_graph(w);
    const bool rg = requires_grad(x.id()) || requires_grad(w.id());
    int id = push(linear_nobias(x.value(), w.value()), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, xi = x.id(), wi = w.id()] {
            const Tensor& dy = grad(id);
            const Tensor& xv = value(xi);
            const Tensor& wv = value(wi);
            const std::int64_t cin = wv.dim(1);
            const std::int64_t cout = wv.dim(0);
            const std::int64_t rows = xv.numel() / cin;
            if (requires_grad(xi)) {
                Tensor& dx = grad_buf(xi);
                MatMap(dx.data(), rows, cin).noalias() +=
                    ConstMatMap(dy.data(), rows, cout) * ConstMatMap(wv.data(), cout, cin);
            }
            if (requires_grad(wi)) {
                Tensor& dw = grad_buf(wi);
                MatMap(dw.data(), cout, cin).noalias() +=
                    ConstMatMap(dy.data(), rows, cout).transpose() *
                    ConstMatMap(xv.data(), rows, cin);
            }
        };
    }
    return Var(this, id);
}

Var Graph::linear(Var x, Var w, Var b) { return add_bias(linear(x, w), b); }

Var Graph::matmul(Var a, Var b) {
    check_graph(a);
    check_graph(b);
    const bool rg = requires_grad(a.id()) || requires_grad(b.id());
    int id = push(vmt::matmul(a.value(), b.value()), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, ai = a.id(), bi = b.id()] {
            const Tensor& dy = grad(id);
            // y = a b: da = dy b^T, db = a^T dy. matmul_nt multiplies by the
            // transpose of its second argument, so b [k,n] is passed as-is.
            if (requires_grad(ai)) accum(ai, matmul_nt(dy, value(bi)));
            if (requires_grad(bi)) accum(bi, matmul_tn(value(ai), dy));
        };
    }
    return Var(this, id);
}

Var Graph::bmm(Var a, Var b) {
    check_graph(a);
    check_graph(b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
        throw ShapeError("bmm: incompatible shapes " + av.shape_str() + " x " + bv.shape_str());
    }
    const std::int64_t batches = av.dim(0);
    const std::int64_t m = av.dim(1), k = av.dim(2), n = bv.dim(2);
    Tensor out({batches, m, n});
    for (std::int64_t i = 0; i < batches; ++i) {
        MatMap(out.data() + i * m * n, m, n).noalias() =
            ConstMatMap(av.data() + i * m * k, m, k) * ConstMatMap(bv.data() + i * k * n, k, n);
    }
    const bool rg = requires_grad(a.id()) || requires_grad(b.id());
    int id = push(std::move(out), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, ai = a.id(), bi = b.id(), batches, m, k, n] {
            const Tensor& dy = grad(id);
            if (requires_grad(ai)) {
                Tensor& da = grad_buf(ai);
                const Tensor& bvv = value(bi);
                for (std::int64_t i = 0; i < batches; ++i) {
                    MatMap(da.data() + i * m * k, m, k).noalias() +=
                        ConstMatMap(dy.data() + i * m * n, m, n) *
                        ConstMatMap(bvv.data() + i * k * n, k, n).transpose();
                }
            }
            if (requires_grad(bi)) {
                Tensor& db = grad_buf(bi);
                const Tensor& avv = value(ai);
                for (std::int64_t i = 0; i < batches; ++i) {
                    MatMap(db.data() + i * k * n, k, n).noalias() +=
                        ConstMatMap(avv.data() + i * m * k, m, k).transpose() *
                        ConstMatMap(dy.data() + i * m * n, m, n);
                }
            }
        };
    }
    return Var(this, id);
}

Var Graph::reshape(Var x, std::vector<std::int64_t> shape) {
    check_graph(x);
    const bool rg = requires_grad(x.id());
    Tensor out = x.value().reshaped(shape);
    int id = push(std::move(out), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, xi = x.id()] {
            accum(xi, grad(id).reshaped(value(xi).shape()));
        };
    }
    return Var(this, id);
}

Var Graph::permute(Var x, std::vector<int> axes) {
    check_graph(x);
    const bool rg = requires_grad(x.id());
    int id = push(permuted(x.value(), axes), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, xi = x.id(), inv = inverse_axes(axes)] {
            accum(xi, permuted(grad(id), inv));
        };
    }
    return Var(this, id);
}

Var Graph::concat_last(Var a, Var b) {
    check_graph(a);
    check_graph(b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != bv.rank()) throw ShapeError("concat_last: rank mismatch");
    for (int i = 0; i + 1 < av.rank(); ++i) {
        if (av.dim(i) != bv.dim(i)) throw ShapeError("concat_last: leading dims mismatch");
    }
    const std::int64_t ca = av.dim(-1), cb = bv.dim(-1);
    const std::int64_t rows = av.numel() / ca;
    std::vector<std::int64_t> shape = av.shape();
    shape.back() = ca + cb;
    Tensor out(shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < ca; ++j) out[r * (ca + cb) + j] = av[r * ca + j];
        for (std::int64_t j = 0; j < cb; ++j) out[r * (ca + cb) + ca + j] = bv[r * cb + j];
    }
    const bool rg = requires_grad(a.id()) || requires_grad(b.id());
    int id = push(std::move(out), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, ai = a.id(), bi = b.id(), ca, cb, rows] {
            const Tensor& dy = grad(id);
            if (requires_grad(ai)) {
                Tensor da(value(ai).shape());
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < ca; ++j) da[r * ca + j] = dy[r * (ca + cb) + j];
                accum(ai, da);
            }
            if (requires_grad(bi)) {
                Tensor db(value(bi).shape());
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < cb; ++j)
                        db[r * cb + j] = dy[r * (ca + cb) + ca + j];
                accum(bi, db);
            }
        };
    }
    return Var(this, id);
}

Var Graph::set_row(Var x, std::int64_t r, Var v) {
    check_graph(x);
    check_graph(v);
    const Tensor& xv = x.value();
    const Tensor& vv = v.value();
    if (xv.rank() != 2 || vv.numel() != xv.dim(1)) throw ShapeError("set_row: shape mismatch");
    if (r < 0 || r >= xv.dim(0)) throw ShapeError("set_row: row out of range");
    Tensor out = xv;
    const std::int64_t c = xv.dim(1);
    for (std::int64_t j = 0; j < c; ++j) out[r * c + j] = vv[j];
    const bool rg = requires_grad(x.id()) || requires_grad(v.id());
    int id = push(std::move(out), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, xi = x.id(), vi = v.id(), r, c] {
            const Tensor& dy = grad(id);
            if (requires_grad(xi)) {
                Tensor dx = dy;
                for (std::int64_t j = 0; j < c; ++j) dx[r * c + j] = 0.0;
                accum(xi, dx);
            }
            if (requires_grad(vi)) {
                Tensor dv({c});
                for (std::int64_t j = 0; j < c; ++j) dv[j] = dy[r * c + j];
                accum(vi, dv);
            }
        };
    }
    return Var(this, id);
}

Var Graph::row(Var x, std::int64_t r) {
    check_graph(x);
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw ShapeError("row: expected 2-d input");
    if (r < 0 || r >= xv.dim(0)) throw ShapeError("row: index out of range");
    const std::int64_t c = xv.dim(1);
    Tensor out({c});
    for (std::int64_t j = 0; j < c; ++j) out[j] = xv[r * c + j];
    const bool rg = requires_grad(x.id());
    int id = push(std::move(out), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, xi = x.id(), r, c] {
            const Tensor& dy = grad(id);
            Tensor dx(value(xi).shape());
            for (std::int64_t j = 0; j < c; ++j) dx[r * c + j] = dy[j];
            accum(xi, dx);
        };
    }
    return Var(this, id);
}

Var Graph::slice_rows(Var x, std::int64_t start, std::int64_t count) {
    check_graph(x);
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw ShapeError("slice_rows: expected 2-d input");
    if (start < 0 || count < 0 || start + count > xv.dim(0)) {
        throw ShapeError("slice_rows: range out of bounds");
    }
    const std::int64_t c = xv.dim(1);
    Tensor out({count, c});
    std::copy(xv.data() + start * c, xv.data() + (start + count) * c, out.data());
    const bool rg = requires_grad(x.id());
    int id = push(std::move(out), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, xi = x.id(), start, count, c] {
            const Tensor& dy = grad(id);
            Tensor dx(value(xi).shape());
            std::copy(dy.data(), dy.data() + count * c, dx.data() + start * c);
            accum(xi, dx);
        };
    }
    return Var(this, id);
}

Var Graph::softmax_last(Var x) {
    check_graph(x);
    const Tensor& xv = x.value();
    const std::int64_t c = xv.dim(-1);
    const std::int64_t rows = xv.numel() / c;
    Tensor out = xv;
    double* p = out.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        double* rowp = p + r * c;
        double mx = rowp[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, rowp[j]);
        double sum = 0;
        for (std::int64_t j = 0; j < c; ++j) {
            rowp[j] = std::exp(rowp[j] - mx);
            sum += rowp[j];
        }
        const double inv = 1.0 / sum;
        for (std::int64_t j = 0; j < c; ++j) rowp[j] *= inv;
    }
    const bool rg = requires_grad(x.id());
    int id = push(std::move(out), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, xi = x.id(), rows, c] {
            const Tensor& y = value(id);
            const Tensor& dy = grad(id);
            Tensor dx(y.shape());
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* yr = y.data() + r * c;
                const double* gr = dy.data() + r * c;
                double inner = 0;
                for (std::int64_t j = 0; j < c; ++j) inner += yr[j] * gr[j];
                double* dr = dx.data() + r * c;
                for (std::int64_t j = 0; j < c; ++j) dr[j] = yr[j] * (gr[j] - inner);
            }
            accum(xi, dx);
        };
    }
    return Var(this, id);
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
    check_graph(x);
    check_graph(gamma);
    check_graph(beta);
    const Tensor& xv = x.value();
    const std::int64_t c = xv.dim(-1);
    if (gamma.value().numel() != c || beta.value().numel() != c) {
        throw ShapeError("layer_norm: parameter size mismatch");
    }
    const std::int64_t rows = xv.numel() / c;
    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    Tensor inv_sigma({rows});
    const double* g = gamma.value().data();
    const double* b = beta.value().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * c;
        double mean = 0;
        for (std::int64_t j = 0; j < c; ++j) mean += xr[j];
        mean /= static_cast<double>(c);
        double var = 0;
        for (std::int64_t j = 0; j < c; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sigma[r] = inv;
        double* hr = xhat.data() + r * c;
        double* yr = out.data() + r * c;
        for (std::int64_t j = 0; j < c; ++j) {
            hr[j] = (xr[j] - mean) * inv;
            yr[j] = hr[j] * g[j] + b[j];
        }
    }
    const bool rg =
        requires_grad(x.id()) || requires_grad(gamma.id()) || requires_grad(beta.id());
    int id = push(std::move(out), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, xi = x.id(), gi = gamma.id(), bi = beta.id(),
                                  xh = std::move(xhat), inv = std::move(inv_sigma), rows, c] {
            const Tensor& dy = grad(id);
            const double* gv = value(gi).data();
            if (requires_grad(xi)) {
                Tensor dx(value(xi).shape());
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* gr = dy.data() + r * c;
                    const double* hr = xh.data() + r * c;
                    double m1 = 0, m2 = 0;
                    for (std::int64_t j = 0; j < c; ++j) {
                        const double dh = gr[j] * gv[j];
                        m1 += dh;
                        m2 += dh * hr[j];
                    }
                    m1 /= static_cast<double>(c);
                    m2 /= static_cast<double>(c);
                    double* dr = dx.data() + r * c;
                    for (std::int64_t j = 0; j < c; ++j) {
                        const double dh = gr[j] * gv[j];
                        dr[j] = inv[r] * (dh - m1 - hr[j] * m2);
                    }
                }
                accum(xi, dx);
            }
            if (requires_grad(gi) || requires_grad(bi)) {
                Tensor dg({c});
                Tensor db({c});
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* gr = dy.data() + r * c;
                    const double* hr = xh.data() + r * c;
                    for (std::int64_t j = 0; j < c; ++j) {
                        dg[j] += gr[j] * hr[j];
                        db[j] += gr[j];
                    }
                }
                accum(gi, dg);
                accum(bi, db);
            }
        };
    }
    return Var(this, id);
}

Var Graph::gelu(Var x) {
    check_graph(x);
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::int64_t i = 0; i < xv.numel(); ++i) {
        const double v = xv[i];
        out[i] = v * 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    }
    const bool rg = requires_grad(x.id());
    int id = push(std::move(out), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, xi = x.id()] {
            const Tensor& xvv = value(xi);
            const Tensor& dy = grad(id);
            Tensor dx(xvv.shape());
            for (std::int64_t i = 0; i < xvv.numel(); ++i) {
                const double v = xvv[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                dx[i] = dy[i] * (cdf + v * pdf);
            }
            accum(xi, dx);
        };
    }
    return Var(this, id);
}

Var Graph::sum_all(Var x) {
    check_graph(x);
    const bool rg = requires_grad(x.id());
    int id = push(Tensor::scalar(x.value().sum()), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, xi = x.id()] {
            const double g = grad(id).item();
            accum(xi, Tensor::full(value(xi).shape(), g));
        };
    }
    return Var(this, id);
}

Var Graph::mean_all(Var x) {
    check_graph(x);
    const double n = static_cast<double>(x.value().numel());
    const bool rg = requires_grad(x.id());
    int id = push(Tensor::scalar(x.value().sum() / n), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, xi = x.id(), n] {
            const double g = grad(id).item() / n;
            accum(xi, Tensor::full(value(xi).shape(), g));
        };
    }
    return Var(this, id);
}

Var Graph::sum_sq(Var x) {
    check_graph(x);
    const bool rg = requires_grad(x.id());
    int id = push(Tensor::scalar(x.value().sum_sq()), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, xi = x.id()] {
            const double g = grad(id).item();
            accum(xi, vmt::scale(value(xi), 2.0 * g));
        };
    }
    return Var(this, id);
}

Var Graph::mse(Var a, Var b) {
    check_graph(a);
    check_graph(b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) throw ShapeError("mse: shape mismatch");
    const std::int64_t n = av.numel();
    double acc = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = av[i] - bv[i];
        acc += d * d;
    }
    const bool rg = requires_grad(a.id()) || requires_grad(b.id());
    int id = push(Tensor::scalar(acc / static_cast<double>(n)), rg, {});
    if (rg) {
        nodes_.back().backward = [this, id, ai = a.id(), bi = b.id(), n] {
            const double g = 2.0 * grad(id).item() / static_cast<double>(n);
            Tensor diff = vmt::sub(value(ai), value(bi));
            accum_scaled(ai, diff, g);
            accum_scaled(bi, diff, -g);
        };
    }
    return Var(this, id);
}

void Graph::backward(Var loss) {
    check_graph(loss);
    Node& root = nodes_[static_cast<std::size_t>(loss.id())];
    if (root.value.numel() != 1) throw ShapeError("backward: loss must be scalar");
    if (!root.requires_grad) {
        throw Error("backward: loss does not depend on any trainable parameter");
    }
    grad_buf(loss.id()).fill(1.0);
    for (int i = loss.id(); i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.backward && n.grad_seeded) n.backward();
    }
}

}  // namespace vmt
