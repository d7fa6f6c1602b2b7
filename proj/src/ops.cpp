#include "tpp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

namespace tpp {

namespace {

using Node = Tensor::Node;
using NodePtr = std::shared_ptr<Node>;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Tensor make_op(Shape out_shape, std::vector<double> out_values, const std::vector<Tensor>& inputs,
               std::function<void(Node&)> backward) {
    bool requires_grad = false;
    if (grad_recording_enabled()) {
        for (const Tensor& t : inputs) {
            if (t.requires_grad()) {
                requires_grad = true;
                break;
            }
        }
    }
    Tensor out = Tensor::from(std::move(out_shape), std::move(out_values), requires_grad);
    if (requires_grad) {
        for (const Tensor& t : inputs) out.node()->parents.push_back(t.node());
        out.node()->backward_fn = std::move(backward);
    }
    return out;
}

// Row-major strides of `shape` right-aligned against an output of rank
// `out_rank`; broadcast dimensions get stride 0.
std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& out, std::size_t out_rank) {
    std::vector<std::int64_t> strides(out_rank, 0);
    std::int64_t running = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        std::size_t src = shape.size() - 1 - i;
        std::size_t dst = out_rank - 1 - i;
        strides[dst] = (shape[src] == 1 && out[dst] != 1) ? 0 : running;
        running *= shape[src];
    }
    return strides;
}

// Calls f(out_flat, a_flat, b_flat) for every output element in row-major
// order, odometer-style so there is no per-element division.
template <typename F>
void broadcast_for_each(const Shape& out, const Shape& a, const Shape& b, F&& f) {
    const std::size_t rank = out.size();
    const std::int64_t total = shape_numel(out);
    if (a == out && b == out) {
        for (std::int64_t i = 0; i < total; ++i) f(i, i, i);
        return;
    }
    std::vector<std::int64_t> astr = broadcast_strides(a, out, rank);
    std::vector<std::int64_t> bstr = broadcast_strides(b, out, rank);
    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t o = 0; o < total; ++o) {
        f(o, oa, ob);
        for (std::size_t r = rank; r-- > 0;) {
            ++idx[r];
            oa += astr[r];
            ob += bstr[r];
            if (idx[r] < out[r]) break;
            oa -= astr[r] * out[r];
            ob -= bstr[r] * out[r];
            idx[r] = 0;
        }
    }
}

template <typename Fwd, typename DaFn, typename DbFn>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, Fwd fwd, DaFn da, DbFn db) {
    const Shape as = a.shape();
    const Shape bs = b.shape();
    Shape out = broadcast_shape(as, bs);
    std::vector<double> vals(static_cast<std::size_t>(shape_numel(out)));
    auto av = a.values();
    auto bv = b.values();
    broadcast_for_each(out, as, bs,
                       [&](std::int64_t o, std::int64_t ia, std::int64_t ib) { vals[o] = fwd(av[ia], bv[ib]); });
    NodePtr an = a.node();
    NodePtr bn = b.node();
    return make_op(out, std::move(vals), {a, b}, [an, bn, out, as, bs, da, db](Node& n) {
        const bool need_a = an->requires_grad;
        const bool need_b = bn->requires_grad;
        if (need_a) an->ensure_grad();
        if (need_b) bn->ensure_grad();
        broadcast_for_each(out, as, bs, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
            const double g = n.grad[o];
            if (need_a) an->grad[ia] += da(g, an->values[ia], bn->values[ib]);
            if (need_b) bn->grad[ib] += db(g, an->values[ia], bn->values[ib]);
        });
    });
}

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& a, Fwd fwd, Bwd dfdx) {
    auto av = a.values();
    std::vector<double> vals(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) vals[i] = fwd(av[i]);
    NodePtr an = a.node();
    return make_op(a.shape(), std::move(vals), {a}, [an, dfdx](Node& n) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            an->grad[i] += n.grad[i] * dfdx(an->values[i], n.values[i]);
        }
    });
}

// c[p, r] += sum_q a[p, q] * b[q, r], ascending q for every output element.
void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::int64_t P, std::int64_t Q, std::int64_t R) {
    std::fill(c.begin(), c.end(), 0.0);
    for (std::int64_t p = 0; p < P; ++p) {
        const double* arow = a.data() + p * Q;
        double* crow = c.data() + p * R;
        for (std::int64_t q = 0; q < Q; ++q) {
            const double aq = arow[q];
            const double* brow = b.data() + q * R;
            for (std::int64_t r = 0; r < R; ++r) crow[r] += aq * brow[r];
        }
    }
}

// c[p, r] += sum_q a[p, q] * b[r, q]  (b transposed).
void matmul_nt_accum(std::span<const double> a, std::span<const double> b, std::span<double> c,
                     std::int64_t P, std::int64_t Q, std::int64_t R) {
    for (std::int64_t p = 0; p < P; ++p) {
        const double* arow = a.data() + p * Q;
        for (std::int64_t r = 0; r < R; ++r) {
            const double* brow = b.data() + r * Q;
            double acc = 0.0;
            for (std::int64_t q = 0; q < Q; ++q) acc += arow[q] * brow[q];
            c[p * R + r] += acc;
        }
    }
}

// c[q, r] += sum_p a[p, q] * b[p, r]  (a transposed).
void matmul_tn_accum(std::span<const double> a, std::span<const double> b, std::span<double> c,
                     std::int64_t P, std::int64_t Q, std::int64_t R) {
    for (std::int64_t p = 0; p < P; ++p) {
        const double* arow = a.data() + p * Q;
        const double* brow = b.data() + p * R;
        for (std::int64_t q = 0; q < Q; ++q) {
            const double aq = arow[q];
            double* crow = c.data() + q * R;
            for (std::int64_t r = 0; r < R; ++r) crow[r] += aq * brow[r];
        }
    }
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + " requires rank-2 tensors, got " + shape_str(t.shape()));
    }
}

// Row iteration order for the id-ordered aggregation kernels: identity when
// ids are absent or already ascending, else an argsort of the ids.
std::vector<std::int64_t> row_order(std::int64_t n, std::span<const std::int64_t> ids) {
    std::vector<std::int64_t> order;
    if (ids.empty()) return order;
    if (static_cast<std::int64_t>(ids.size()) != n) {
        throw DimensionError("point id count " + std::to_string(ids.size()) + " does not match row count " +
                             std::to_string(n));
    }
    bool ascending = true;
    for (std::size_t i = 1; i < ids.size(); ++i) {
        if (ids[i] <= ids[i - 1]) {
            ascending = false;
            break;
        }
    }
    if (ascending) return order;
    order.resize(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::int64_t x, std::int64_t y) { return ids[x] < ids[y]; });
    return order;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        const std::int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        out[rank - 1 - i] = std::max(da, db);
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        a, b, [](double x, double y) { return x + y; }, [](double g, double, double) { return g; },
        [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        a, b, [](double x, double y) { return x - y; }, [](double g, double, double) { return g; },
        [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        a, b, [](double x, double y) { return x * y; }, [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        a, b, [](double x, double y) { return x / y; }, [](double g, double, double y) { return g / y; },
        [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary_elementwise(
        a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double value) {
    return unary_elementwise(
        a, [value](double x) { return x * value; }, [value](double, double) { return value; });
}

Tensor gelu(const Tensor& a) {
    return unary_elementwise(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
        [](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
}

Tensor sqrt(const Tensor& a) {
    for (double v : a.values()) {
        if (v < 0.0) throw DomainError("sqrt of negative value " + std::to_string(v));
    }
    return unary_elementwise(
        a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor clamp_min(const Tensor& a, double floor) {
    return unary_elementwise(
        a, [floor](double x) { return x > floor ? x : floor; },
        [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::int64_t P = a.dim(0), Q = a.dim(1), R = b.dim(1);
    if (b.dim(0) != Q) {
        throw DimensionError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    std::vector<double> vals(static_cast<std::size_t>(P * R));
    matmul_nn(a.values(), b.values(), vals, P, Q, R);
    NodePtr an = a.node();
    NodePtr bn = b.node();
    return make_op({P, R}, std::move(vals), {a, b}, [an, bn, P, Q, R](Node& n) {
        if (an->requires_grad) {
            an->ensure_grad();
            matmul_nt_accum(n.grad, bn->values, an->grad, P, R, Q);  // dA = dC * B^T
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            matmul_tn_accum(an->values, n.grad, bn->grad, P, Q, R);  // dB = A^T * dC
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const std::int64_t rows = a.dim(0), cols = a.dim(1);
    auto av = a.values();
    std::vector<double> vals(av.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) vals[c * rows + r] = av[r * cols + c];
    }
    NodePtr an = a.node();
    return make_op({cols, rows}, std::move(vals), {a}, [an, rows, cols](Node& n) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t c = 0; c < cols; ++c) an->grad[r * cols + c] += n.grad[c * rows + r];
        }
    });
}

Tensor sum(const Tensor& a) {
    auto av = a.values();
    double acc = 0.0;
    for (double v : av) acc += v;
    NodePtr an = a.node();
    return make_op({1}, {acc}, {a}, [an](Node& n) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const double g = n.grad[0];
        for (double& gv : an->grad) gv += g;
    });
}

Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    auto av = a.values();
    double acc = 0.0;
    for (double v : av) acc += v;
    acc *= inv;
    NodePtr an = a.node();
    return make_op({1}, {acc}, {a}, [an, inv](Node& n) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const double g = n.grad[0] * inv;
        for (double& gv : an->grad) gv += g;
    });
}

Tensor softmax_temp(const Tensor& logits, const Tensor& tau) {
    if (logits.rank() < 1) throw DimensionError("softmax_temp requires rank >= 1");
    const std::int64_t m = logits.shape().back();
    const std::int64_t rows = logits.numel() / m;
    const std::int64_t tau_n = tau.numel();
    if (tau_n != 1 && tau_n != rows) {
        throw DimensionError("softmax_temp tau must hold 1 or " + std::to_string(rows) +
                             " temperatures, got " + shape_str(tau.shape()));
    }
    auto tv = tau.values();
    for (double t : tv) {
        if (!(t > 0.0)) throw DomainError("softmax_temp requires strictly positive tau, got " + std::to_string(t));
    }
    auto lv = logits.values();
    std::vector<double> vals(lv.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* row = lv.data() + r * m;
        double* out = vals.data() + r * m;
        const double t = tv[tau_n == 1 ? 0 : r];
        double mx = row[0];
        for (std::int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::int64_t j = 0; j < m; ++j) {
            out[j] = std::exp((row[j] - mx) / t);
            denom += out[j];
        }
        const double inv = 1.0 / denom;
        for (std::int64_t j = 0; j < m; ++j) out[j] *= inv;
    }
    NodePtr ln = logits.node();
    NodePtr tn = tau.node();
    return make_op(logits.shape(), std::move(vals), {logits, tau}, [ln, tn, rows, m, tau_n](Node& n) {
        const bool need_l = ln->requires_grad;
        const bool need_t = tn->requires_grad;
        if (need_l) ln->ensure_grad();
        if (need_t) tn->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* w = n.values.data() + r * m;
            const double* g = n.grad.data() + r * m;
            const double* row = ln->values.data() + r * m;
            const double t = tn->values[tau_n == 1 ? 0 : r];
            double dot = 0.0;
            for (std::int64_t j = 0; j < m; ++j) dot += g[j] * w[j];
            if (need_l) {
                double* gl = ln->grad.data() + r * m;
                for (std::int64_t j = 0; j < m; ++j) gl[j] += w[j] * (g[j] - dot) / t;
            }
            if (need_t) {
                // u_j = (l_j - max) / t; dL/dt = (S_g * S_u - S_gu) / t.
                double mx = row[0];
                for (std::int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
                double s_u = 0.0, s_gu = 0.0;
                for (std::int64_t j = 0; j < m; ++j) {
                    const double u = (row[j] - mx) / t;
                    s_u += w[j] * u;
                    s_gu += g[j] * w[j] * u;
                }
                tn->grad[tau_n == 1 ? 0 : r] += (dot * s_u - s_gu) / t;
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    require_rank2(x, "layer_norm");
    const std::int64_t rows = x.dim(0), cols = x.dim(1);
    if (gamma.numel() != cols || beta.numel() != cols) {
        throw DimensionError("layer_norm affine parameters must have " + std::to_string(cols) +
                             " entries, got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    }
    constexpr double kEps = 1e-5;
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    std::vector<double> vals(xv.size());
    std::vector<double> inv_std(static_cast<std::size_t>(rows));
    std::vector<double> mean_row(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * cols;
        double mu = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) mu += row[c];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) {
            const double d = row[c] - mu;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double inv = 1.0 / std::sqrt(var + kEps);
        mean_row[r] = mu;
        inv_std[r] = inv;
        double* out = vals.data() + r * cols;
        for (std::int64_t c = 0; c < cols; ++c) out[c] = gv[c] * ((row[c] - mu) * inv) + bv[c];
    }
    NodePtr xn = x.node();
    NodePtr gn = gamma.node();
    NodePtr bn = beta.node();
    return make_op(x.shape(), std::move(vals), {x, gamma, beta},
                   [xn, gn, bn, rows, cols, inv_std, mean_row](Node& n) {
                       const bool need_x = xn->requires_grad;
                       const bool need_g = gn->requires_grad;
                       const bool need_b = bn->requires_grad;
                       if (need_x) xn->ensure_grad();
                       if (need_g) gn->ensure_grad();
                       if (need_b) bn->ensure_grad();
                       const double inv_c = 1.0 / static_cast<double>(cols);
                       std::vector<double> xhat(static_cast<std::size_t>(cols));
                       for (std::int64_t r = 0; r < rows; ++r) {
                           const double* row = xn->values.data() + r * cols;
                           const double* g = n.grad.data() + r * cols;
                           const double inv = inv_std[r];
                           const double mu = mean_row[r];
                           double sum_gg = 0.0, sum_ggx = 0.0;
                           for (std::int64_t c = 0; c < cols; ++c) {
                               xhat[c] = (row[c] - mu) * inv;
                               const double gg = g[c] * gn->values[c];
                               sum_gg += gg;
                               sum_ggx += gg * xhat[c];
                           }
                           if (need_x) {
                               double* gx = xn->grad.data() + r * cols;
                               for (std::int64_t c = 0; c < cols; ++c) {
                                   const double gg = g[c] * gn->values[c];
                                   gx[c] += (gg - inv_c * sum_gg - xhat[c] * inv_c * sum_ggx) * inv;
                               }
                           }
                           if (need_g) {
                               for (std::int64_t c = 0; c < cols; ++c) gn->grad[c] += g[c] * xhat[c];
                           }
                           if (need_b) {
                               for (std::int64_t c = 0; c < cols; ++c) bn->grad[c] += g[c];
                           }
                       }
                   });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows needs at least one part");
    const std::int64_t cols = parts[0].dim(1);
    std::int64_t rows = 0;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_rows");
        if (p.dim(1) != cols) {
            throw DimensionError("concat_rows column mismatch: " + shape_str(p.shape()) + " vs " +
                                 std::to_string(cols) + " columns");
        }
        rows += p.dim(0);
    }
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(rows * cols));
    for (const Tensor& p : parts) {
        auto pv = p.values();
        vals.insert(vals.end(), pv.begin(), pv.end());
    }
    std::vector<NodePtr> nodes;
    std::vector<std::int64_t> offsets;
    std::int64_t off = 0;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        offsets.push_back(off);
        off += p.numel();
    }
    return make_op({rows, cols}, std::move(vals), parts, [nodes, offsets](Node& n) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            if (!nodes[k]->requires_grad) continue;
            nodes[k]->ensure_grad();
            const std::int64_t base = offsets[k];
            for (std::size_t i = 0; i < nodes[k]->grad.size(); ++i) {
                nodes[k]->grad[i] += n.grad[static_cast<std::size_t>(base) + i];
            }
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols needs at least one part");
    const std::int64_t rows = parts[0].dim(0);
    std::int64_t cols = 0;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.dim(0) != rows) {
            throw DimensionError("concat_cols row mismatch: " + shape_str(p.shape()) + " vs " +
                                 std::to_string(rows) + " rows");
        }
        cols += p.dim(1);
    }
    std::vector<double> vals(static_cast<std::size_t>(rows * cols));
    std::int64_t col_off = 0;
    for (const Tensor& p : parts) {
        auto pv = p.values();
        const std::int64_t pc = p.dim(1);
        for (std::int64_t r = 0; r < rows; ++r) {
            std::copy_n(pv.data() + r * pc, pc, vals.data() + r * cols + col_off);
        }
        col_off += pc;
    }
    std::vector<NodePtr> nodes;
    std::vector<std::int64_t> col_offsets;
    std::vector<std::int64_t> widths;
    col_off = 0;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        col_offsets.push_back(col_off);
        widths.push_back(p.dim(1));
        col_off += p.dim(1);
    }
    return make_op({rows, cols}, std::move(vals), parts, [nodes, col_offsets, widths, rows, cols](Node& n) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            if (!nodes[k]->requires_grad) continue;
            nodes[k]->ensure_grad();
            const std::int64_t pc = widths[k];
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* src = n.grad.data() + r * cols + col_offsets[k];
                double* dst = nodes[k]->grad.data() + r * pc;
                for (std::int64_t c = 0; c < pc; ++c) dst[c] += src[c];
            }
        }
    });
}

Tensor slice_rows(const Tensor& a, std::int64_t begin, std::int64_t end) {
    require_rank2(a, "slice_rows");
    const std::int64_t rows = a.dim(0), cols = a.dim(1);
    if (begin < 0 || end > rows || begin >= end) {
        throw DimensionError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of range for " + shape_str(a.shape()));
    }
    auto av = a.values();
    std::vector<double> vals(av.begin() + begin * cols, av.begin() + end * cols);
    NodePtr an = a.node();
    return make_op({end - begin, cols}, std::move(vals), {a}, [an, begin, cols](Node& n) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        double* dst = an->grad.data() + begin * cols;
        for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
    });
}

Tensor slice_cols(const Tensor& a, std::int64_t begin, std::int64_t end) {
    require_rank2(a, "slice_cols");
    const std::int64_t rows = a.dim(0), cols = a.dim(1);
    if (begin < 0 || end > cols || begin >= end) {
        throw DimensionError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of range for " + shape_str(a.shape()));
    }
    const std::int64_t width = end - begin;
    auto av = a.values();
    std::vector<double> vals(static_cast<std::size_t>(rows * width));
    for (std::int64_t r = 0; r < rows; ++r) {
        std::copy_n(av.data() + r * cols + begin, width, vals.data() + r * width);
    }
    NodePtr an = a.node();
    return make_op({rows, width}, std::move(vals), {a}, [an, begin, cols, rows, width](Node& n) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* src = n.grad.data() + r * width;
            double* dst = an->grad.data() + r * cols + begin;
            for (std::int64_t c = 0; c < width; ++c) dst[c] += src[c];
        }
    });
}

Tensor slice_weight_norms(const Tensor& w, std::span<const std::int64_t> point_ids) {
    require_rank2(w, "slice_weight_norms");
    const std::int64_t n_rows = w.dim(0), m = w.dim(1);
    std::vector<std::int64_t> order = row_order(n_rows, point_ids);
    auto wv = w.values();
    std::vector<double> vals(static_cast<std::size_t>(m), 0.0);
    for (std::int64_t k = 0; k < n_rows; ++k) {
        const std::int64_t i = order.empty() ? k : order[k];
        const double* row = wv.data() + i * m;
        for (std::int64_t j = 0; j < m; ++j) vals[j] += row[j];
    }
    NodePtr wn = w.node();
    return make_op({m, 1}, std::move(vals), {w}, [wn, n_rows, m](Node& n) {
        if (!wn->requires_grad) return;
        wn->ensure_grad();
        for (std::int64_t i = 0; i < n_rows; ++i) {
            double* dst = wn->grad.data() + i * m;
            for (std::int64_t j = 0; j < m; ++j) dst[j] += n.grad[j];
        }
    });
}

Tensor slice_states_numer(const Tensor& v, const Tensor& w, std::span<const std::int64_t> point_ids) {
    require_rank2(v, "slice_states_numer");
    require_rank2(w, "slice_states_numer");
    const std::int64_t n_rows = v.dim(0), cols = v.dim(1), m = w.dim(1);
    if (w.dim(0) != n_rows) {
        throw DimensionError("slice_states_numer row mismatch: " + shape_str(v.shape()) + " vs " +
                             shape_str(w.shape()));
    }
    std::vector<std::int64_t> order = row_order(n_rows, point_ids);
    auto vv = v.values();
    auto wv = w.values();
    std::vector<double> vals(static_cast<std::size_t>(m * cols), 0.0);
    for (std::int64_t k = 0; k < n_rows; ++k) {
        const std::int64_t i = order.empty() ? k : order[k];
        const double* vrow = vv.data() + i * cols;
        const double* wrow = wv.data() + i * m;
        for (std::int64_t j = 0; j < m; ++j) {
            const double wij = wrow[j];
            double* out = vals.data() + j * cols;
            for (std::int64_t c = 0; c < cols; ++c) out[c] += wij * vrow[c];
        }
    }
    NodePtr vn = v.node();
    NodePtr wn = w.node();
    return make_op({m, cols}, std::move(vals), {v, w}, [vn, wn, n_rows, cols, m](Node& n) {
        const bool need_v = vn->requires_grad;
        const bool need_w = wn->requires_grad;
        if (need_v) vn->ensure_grad();
        if (need_w) wn->ensure_grad();
        for (std::int64_t i = 0; i < n_rows; ++i) {
            const double* vrow = vn->values.data() + i * cols;
            const double* wrow = wn->values.data() + i * m;
            double* gv = need_v ? vn->grad.data() + i * cols : nullptr;
            double* gw = need_w ? wn->grad.data() + i * m : nullptr;
            for (std::int64_t j = 0; j < m; ++j) {
                const double* gn = n.grad.data() + j * cols;
                if (need_w) {
                    double acc = 0.0;
                    for (std::int64_t c = 0; c < cols; ++c) acc += gn[c] * vrow[c];
                    gw[j] += acc;
                }
                if (need_v) {
                    const double wij = wrow[j];
                    for (std::int64_t c = 0; c < cols; ++c) gv[c] += wij * gn[c];
                }
            }
        }
    });
}

}  // namespace tpp
