#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "gastgrn/random.hpp"
#include "gastgrn/tensor.hpp"

namespace gastgrn {

namespace detail {

inline bool recording(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::current().enabled()) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

inline bool recording(const std::vector<Tensor>& inputs) {
    if (!Tape::current().enabled()) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
}

inline double* grad_target(const std::shared_ptr<TensorImpl>& t) {
    return t->requires_grad ? t->grad_buffer() : nullptr;
}

inline Shape strides_of(const Shape& shape) {
    Shape strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
    return strides;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i + a.size() >= r ? a[i + a.size() - r] : 1;
        const std::size_t db = i + b.size() >= r ? b[i + b.size() - r] : 1;
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) + " are not broadcast-compatible");
        }
        out[i] = std::max(da, db);
    }
    return out;
}

/// For each flat index of `to`, the flat index of `from` it reads.
inline std::vector<std::size_t> broadcast_map(const Shape& from, const Shape& to) {
    const std::size_t r = to.size();
    const Shape from_strides = strides_of(from);
    Shape stride(r, 0);
    for (std::size_t i = 0; i < r; ++i) {
        if (i + from.size() < r) continue;
        const std::size_t j = i + from.size() - r;
        stride[i] = from[j] == 1 ? 0 : from_strides[j];
    }
    const std::size_t n = numel_of(to);
    std::vector<std::size_t> map(n);
    Shape counter(r, 0);
    std::size_t offset = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
        map[flat] = offset;
        for (std::size_t ax = r; ax-- > 0;) {
            ++counter[ax];
            offset += stride[ax];
            if (counter[ax] < to[ax]) break;
            offset -= stride[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    return map;
}

template <class Fwd, class GradA, class GradB>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, Fwd f, GradA dfa, GradB dfb) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const bool a_same = a.shape() == out_shape;
    const bool b_same = b.shape() == out_shape;
    std::vector<std::size_t> ia = a_same ? std::vector<std::size_t>{} : broadcast_map(a.shape(), out_shape);
    std::vector<std::size_t> ib = b_same ? std::vector<std::size_t>{} : broadcast_map(b.shape(), out_shape);
    const std::size_t n = numel_of(out_shape);
    std::vector<double> out(n);
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[a_same ? i : ia[i]], bv[b_same ? i : ib[i]]);
    const bool rg = recording({&a, &b});
    Tensor result(out_shape, std::move(out), rg);
    if (rg) {
        auto pa = a.impl();
        auto pb = b.impl();
        auto po = result.impl();
        Tape::current().record({pa, pb}, po, [pa, pb, po, ia = std::move(ia), ib = std::move(ib), a_same, b_same, dfa, dfb] {
            const double* g = po->grad.data();
            double* ga = grad_target(pa);
            double* gb = grad_target(pb);
            const std::size_t m = po->data.size();
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t ja = a_same ? i : ia[i];
                const std::size_t jb = b_same ? i : ib[i];
                if (ga) ga[ja] += g[i] * dfa(pa->data[ja], pb->data[jb]);
                if (gb) gb[jb] += g[i] * dfb(pa->data[ja], pb->data[jb]);
            }
        });
    }
    return result;
}

/// `df(x, y)` is the derivative at input x with output y.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd f, Deriv df) {
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    const bool rg = recording({&a});
    Tensor result(a.shape(), std::move(out), rg);
    if (rg) {
        auto pa = a.impl();
        auto po = result.impl();
        Tape::current().record({pa}, po, [pa, po, df] {
            double* ga = pa->grad_buffer();
            const double* g = po->grad.data();
            for (std::size_t i = 0; i < po->data.size(); ++i) ga[i] += g[i] * df(pa->data[i], po->data[i]);
        });
    }
    return result;
}

/// Out-of-place index gather: out[i] = in[source[i]]; gradients scatter back.
inline Tensor gather(const Tensor& a, Shape out_shape, std::vector<std::size_t> source) {
    const auto av = a.values();
    std::vector<double> out(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) out[i] = av[source[i]];
    const bool rg = recording({&a});
    Tensor result(std::move(out_shape), std::move(out), rg);
    if (rg) {
        auto pa = a.impl();
        auto po = result.impl();
        Tape::current().record({pa}, po, [pa, po, source = std::move(source)] {
            double* ga = pa->grad_buffer();
            const double* g = po->grad.data();
            for (std::size_t i = 0; i < source.size(); ++i) ga[source[i]] += g[i];
        });
    }
    return result;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic with broadcasting

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::broadcast_binary(
        a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::broadcast_binary(
        a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::broadcast_binary(
        a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
    return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor mul_scalar(const Tensor& a, double c) {
    return detail::unary(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

/// c - a
inline Tensor rsub_scalar(double c, const Tensor& a) {
    return detail::unary(a, [c](double x) { return c - x; }, [](double, double) { return -1.0; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary(
        a,
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

/// Subgradient 0 at 0; NaN passes through.
inline Tensor relu(const Tensor& a) {
    return detail::unary(
        a, [](double x) { return x < 0 ? 0.0 : x; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

/// Subgradient 0 at 0.
inline Tensor abs(const Tensor& a) {
    return detail::unary(
        a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

inline Tensor square(const Tensor& a) {
    return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
    const auto av = a.values();
    double s = 0.0;
    for (double v : av) s += v;
    const bool rg = detail::recording({&a});
    Tensor result({1}, {s}, rg);
    if (rg) {
        auto pa = a.impl();
        auto po = result.impl();
        Tape::current().record({pa}, po, [pa, po] {
            double* ga = pa->grad_buffer();
            const double g = po->grad[0];
            for (std::size_t i = 0; i < pa->data.size(); ++i) ga[i] += g;
        });
    }
    return result;
}

inline Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel())); }

// ---------------------------------------------------------------------------
// Matrix product over the last two axes; leading axes broadcast.

namespace detail {

inline void gemm_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                            std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
    }
    const std::size_t m = a.dim(-2), k = a.dim(-1), kb = b.dim(-2), n = b.dim(-1);
    if (k != kb) {
        throw ShapeError("matmul inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
    const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    Shape batch;
    try {
        batch = detail::broadcast_shape(a_batch, b_batch);
    } catch (const ShapeError&) {
        throw ShapeError("matmul batch dimensions incompatible: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
    }
    const std::size_t nbatch = numel_of(batch);
    auto amap = detail::broadcast_map(a_batch, batch);
    auto bmap = detail::broadcast_map(b_batch, batch);
    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<double> out(nbatch * m * n, 0.0);
    const double* ad = a.values().data();
    const double* bd = b.values().data();
    for (std::size_t i = 0; i < nbatch; ++i) {
        detail::gemm_accumulate(ad + amap[i] * m * k, bd + bmap[i] * k * n, out.data() + i * m * n, m, k, n);
    }
    const bool rg = detail::recording({&a, &b});
    Tensor result(std::move(out_shape), std::move(out), rg);
    if (rg) {
        auto pa = a.impl();
        auto pb = b.impl();
        auto po = result.impl();
        Tape::current().record(
            {pa, pb}, po, [pa, pb, po, amap = std::move(amap), bmap = std::move(bmap), nbatch, m, k, n] {
                double* ga = detail::grad_target(pa);
                double* gb = detail::grad_target(pb);
                const double* g = po->grad.data();
                std::vector<double> bt;
                std::size_t bt_source = static_cast<std::size_t>(-1);
                for (std::size_t bi = 0; bi < nbatch; ++bi) {
                    const double* gc = g + bi * m * n;
                    const double* A = pa->data.data() + amap[bi] * m * k;
                    const double* B = pb->data.data() + bmap[bi] * k * n;
                    if (ga) {
                        // dA += dC B^T, accumulated row-wise over a transposed copy of B
                        if (bt_source != bmap[bi]) {
                            bt.resize(k * n);
                            for (std::size_t p = 0; p < k; ++p) {
                                for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = B[p * n + j];
                            }
                            bt_source = bmap[bi];
                        }
                        double* dA = ga + amap[bi] * m * k;
                        detail::gemm_accumulate(gc, bt.data(), dA, m, n, k);
                    }
                    if (gb) {
                        double* dB = gb + bmap[bi] * k * n;
                        for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t p = 0; p < k; ++p) {
                                const double av = A[i * k + p];
                                for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += av * gc[i * n + j];
                            }
                        }
                    }
                }
            });
    }
    return result;
}

// ---------------------------------------------------------------------------
// Normalizations

/// Max-subtracted softmax along `axis`.
inline Tensor softmax(const Tensor& x, int axis = -1) {
    const std::size_t ax = x.normalize_axis(axis);
    const auto& shape = x.shape();
    const std::size_t len = shape[ax];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= shape[i];
    for (std::size_t i = ax + 1; i < shape.size(); ++i) inner *= shape[i];
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, xv[base + l * inner]);
            double total = 0.0;
            for (std::size_t l = 0; l < len; ++l) {
                const double e = std::exp(xv[base + l * inner] - mx);
                out[base + l * inner] = e;
                total += e;
            }
            for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= total;
        }
    }
    const bool rg = detail::recording({&x});
    Tensor result(shape, std::move(out), rg);
    if (rg) {
        auto px = x.impl();
        auto po = result.impl();
        Tape::current().record({px}, po, [px, po, outer, inner, len] {
            double* gx = px->grad_buffer();
            const double* g = po->grad.data();
            const double* y = po->data.data();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * y[base + l * inner];
                    for (std::size_t l = 0; l < len; ++l) {
                        const std::size_t idx = base + l * inner;
                        gx[idx] += y[idx] * (g[idx] - dot);
                    }
                }
            }
        });
    }
    return result;
}

/// Normalizes the last axis to zero mean and unit population variance, then
/// applies `gamma * xhat + beta`.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
    const std::size_t d = x.dim(-1);
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw ShapeError("layer_norm affine shapes " + to_string(gamma.shape()) + "/" + to_string(beta.shape()) +
                         " do not match last dim of " + to_string(x.shape()));
    }
    if (!(eps > 0)) throw std::invalid_argument("layer_norm eps must be positive");
    const std::size_t rows = x.numel() / d;
    const auto xv = x.values();
    const auto gv = gamma.values();
    const auto bv = beta.values();
    std::vector<double> out(xv.size());
    std::vector<double> xhat(xv.size());
    std::vector<double> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - mu) * rstd[r];
            xhat[r * d + j] = h;
            out[r * d + j] = gv[j] * h + bv[j];
        }
    }
    const bool rg = detail::recording({&x, &gamma, &beta});
    Tensor result(x.shape(), std::move(out), rg);
    if (rg) {
        auto px = x.impl();
        auto pg = gamma.impl();
        auto pb = beta.impl();
        auto po = result.impl();
        Tape::current().record({px, pg, pb}, po,
                               [px, pg, pb, po, xhat = std::move(xhat), rstd = std::move(rstd), rows, d] {
                                   double* gx = detail::grad_target(px);
                                   double* gg = detail::grad_target(pg);
                                   double* gb = detail::grad_target(pb);
                                   const double* g = po->grad.data();
                                   const double inv_d = 1.0 / static_cast<double>(d);
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       const double* gr = g + r * d;
                                       const double* hr = xhat.data() + r * d;
                                       if (gg || gb) {
                                           for (std::size_t j = 0; j < d; ++j) {
                                               if (gg) gg[j] += gr[j] * hr[j];
                                               if (gb) gb[j] += gr[j];
                                           }
                                       }
                                       if (gx) {
                                           double mean_dh = 0.0, mean_dh_h = 0.0;
                                           for (std::size_t j = 0; j < d; ++j) {
                                               const double dh = gr[j] * pg->data[j];
                                               mean_dh += dh;
                                               mean_dh_h += dh * hr[j];
                                           }
                                           mean_dh *= inv_d;
                                           mean_dh_h *= inv_d;
                                           for (std::size_t j = 0; j < d; ++j) {
                                               const double dh = gr[j] * pg->data[j];
                                               gx[r * d + j] += rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                                           }
                                       }
                                   }
                               });
    }
    return result;
}

// ---------------------------------------------------------------------------
// Layout

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    const bool rg = detail::recording({&x});
    Tensor result(std::move(shape), std::move(out), rg);
    if (rg) {
        auto px = x.impl();
        auto po = result.impl();
        Tape::current().record({px}, po, [px, po] {
            double* gx = px->grad_buffer();
            for (std::size_t i = 0; i < po->grad.size(); ++i) gx[i] += po->grad[i];
        });
    }
    return result;
}

inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
    const std::size_t r = x.rank();
    if (perm.size() != r) throw ShapeError("permutation rank mismatch for shape " + to_string(x.shape()));
    std::vector<bool> seen(r, false);
    for (auto p : perm) {
        if (p >= r || seen[p]) throw ShapeError("invalid axis permutation for shape " + to_string(x.shape()));
        seen[p] = true;
    }
    const Shape in_strides = detail::strides_of(x.shape());
    Shape out_shape(r), stride(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = x.shape()[perm[i]];
        stride[i] = in_strides[perm[i]];
    }
    const std::size_t n = x.numel();
    std::vector<std::size_t> source(n);
    Shape counter(r, 0);
    std::size_t offset = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
        source[flat] = offset;
        for (std::size_t ax = r; ax-- > 0;) {
            ++counter[ax];
            offset += stride[ax];
            if (counter[ax] < out_shape[ax]) break;
            offset -= stride[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    return detail::gather(x, std::move(out_shape), std::move(source));
}

inline Tensor transpose(const Tensor& x, int axis0, int axis1) {
    std::vector<std::size_t> perm(x.rank());
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[x.normalize_axis(axis0)], perm[x.normalize_axis(axis1)]);
    return permute(x, perm);
}

/// Concatenates along `axis`; other dimensions must agree.
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
    const Tensor& first = parts.front();
    const std::size_t ax = first.normalize_axis(axis);
    Shape out_shape = first.shape();
    out_shape[ax] = 0;
    for (const auto& p : parts) {
        if (p.rank() != first.rank()) throw ShapeError("concat rank mismatch");
        for (std::size_t i = 0; i < p.rank(); ++i) {
            if (i != ax && p.shape()[i] != first.shape()[i]) {
                throw ShapeError("concat shapes " + to_string(first.shape()) + " and " + to_string(p.shape()) +
                                 " differ off the concat axis");
            }
        }
        out_shape[ax] += p.shape()[ax];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= out_shape[i];
    for (std::size_t i = ax + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
    const std::size_t out_chunk = out_shape[ax] * inner;
    std::vector<double> out(numel_of(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t chunk = p.shape()[ax] * inner;
        const auto pv = p.values();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * out_chunk + off);
        }
        off += chunk;
    }
    const bool rg = detail::recording(parts);
    Tensor result(std::move(out_shape), std::move(out), rg);
    if (rg) {
        std::vector<std::shared_ptr<TensorImpl>> ins;
        for (const auto& p : parts) ins.push_back(p.impl());
        auto po = result.impl();
        Tape::current().record(ins, po, [ins, po, offsets, outer, inner, out_chunk, ax] {
            const double* g = po->grad.data();
            for (std::size_t pi = 0; pi < ins.size(); ++pi) {
                if (!ins[pi]->requires_grad) continue;
                double* gp = ins[pi]->grad_buffer();
                const std::size_t chunk = ins[pi]->shape[ax] * inner;
                for (std::size_t o = 0; o < outer; ++o) {
                    const double* src = g + o * out_chunk + offsets[pi];
                    double* dst = gp + o * chunk;
                    for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
                }
            }
        });
    }
    return result;
}

inline Tensor concat_lastdim(const Tensor& a, const Tensor& b) { return concat({a, b}, -1); }

/// Stacks equally-shaped tensors along a new axis inserted at `axis`.
inline Tensor stack(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("stack of zero tensors");
    const Shape& base = parts.front().shape();
    if (axis > base.size()) throw std::out_of_range("stack axis out of range");
    for (const auto& p : parts) {
        if (p.shape() != base) throw ShapeError("stack shapes differ: " + to_string(base) + " vs " + to_string(p.shape()));
    }
    std::vector<Tensor> expanded;
    expanded.reserve(parts.size());
    Shape unsq = base;
    unsq.insert(unsq.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    // concat over a singleton axis; reshape is skipped when no gradient is needed
    for (const auto& p : parts) expanded.push_back(detail::recording({&p}) ? reshape(p, unsq) : Tensor(unsq, {p.values().begin(), p.values().end()}));
    return concat(expanded, static_cast<int>(axis));
}

/// Picks `index` along `axis`, dropping that axis.
inline Tensor select(const Tensor& x, int axis, std::size_t index) {
    const std::size_t ax = x.normalize_axis(axis);
    const auto& shape = x.shape();
    if (index >= shape[ax]) {
        throw std::out_of_range("index " + std::to_string(index) + " out of range for axis " + std::to_string(ax) +
                                " of " + to_string(shape));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= shape[i];
    for (std::size_t i = ax + 1; i < shape.size(); ++i) inner *= shape[i];
    Shape out_shape;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != ax) out_shape.push_back(shape[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
    std::vector<std::size_t> source(outer * inner);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) source[o * inner + in] = (o * shape[ax] + index) * inner + in;
    }
    return detail::gather(x, std::move(out_shape), std::move(source));
}

// ---------------------------------------------------------------------------
// Regularization

/// Inverted dropout: survivors are scaled by 1/(1-p) during training;
/// identity (the same tensor) otherwise.
inline Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
    if (!(p >= 0.0) || p >= 1.0) throw std::invalid_argument("dropout probability must lie in [0, 1)");
    if (!training || p == 0.0) return x;
    const double scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) m = uniform01(rng) < p ? 0.0 : scale;
    return mul(x, Tensor(x.shape(), std::move(mask)));
}

}  // namespace gastgrn
