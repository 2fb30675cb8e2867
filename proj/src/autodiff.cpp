#include "brainit/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace brainit::nn {

namespace {

using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<Mat>;
using CMapM = Eigen::Map<const Mat>;

std::atomic<std::uint64_t> g_node_id{1};

std::shared_ptr<Node> new_node(Tensor value, std::vector<std::shared_ptr<Node>> parents) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->id = g_node_id.fetch_add(1, std::memory_order_relaxed);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

CMapM map2(const Tensor& t) {
    if (t.rank() != 2) throw std::invalid_argument("expected rank-2 tensor, got " + t.shape_str());
    return CMapM(t.data(), t.dim(0), t.dim(1));
}

MapM map2(Tensor& t) {
    if (t.rank() != 2) throw std::invalid_argument("expected rank-2 tensor, got " + t.shape_str());
    return MapM(t.data(), t.dim(0), t.dim(1));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.value().shape_str() +
                                    " vs " + b.value().shape_str());
}

}  // namespace

Tensor& ensure_grad(const std::shared_ptr<Node>& n) {
    if (!n->grad_ready) {
        n->grad = Tensor::zeros(n->value.shape());
        n->grad_ready = true;
    }
    return n->grad;
}

void accum_grad(const std::shared_ptr<Node>& n, const Tensor& g) {
    Tensor& dst = ensure_grad(n);
    const std::int64_t m = dst.numel();
    Real* d = dst.data();
    const Real* s = g.data();
    for (std::int64_t i = 0; i < m; ++i) d[i] += s[i];
}

Var::Var(Tensor value, bool requires_grad) {
    node_ = new_node(std::move(value), {});
    node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
    if (node_) {
        node_->grad = Tensor();
        node_->grad_ready = false;
    }
}

void Var::backward() const {
    if (!node_) throw std::logic_error("backward on empty Var");
    if (node_->value.numel() != 1) throw std::logic_error("backward requires a scalar output");

    // Collect reachable subgraph, run nodes in reverse creation order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::shared_ptr<Node>> stack{node_};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto cur = stack.back();
        stack.pop_back();
        order.push_back(cur.get());
        for (const auto& p : cur->parents)
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });

    ensure_grad(node_)[0] += Real(1);
    for (Node* n : order) {
        if (n->backward_fn && n->grad_ready) n->backward_fn(n->grad);
    }
}

Var constant(Tensor value) { return Var(std::move(value), false); }
Var parameter(Tensor value) { return Var(std::move(value), true); }

// ---------------------------------------------------------------------------
// Elementwise

namespace {

template <typename F, typename B>
Var unary_op(const Var& a, F fwd, B bwd_factor) {
    Tensor out(a.value().shape());
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(a.value()[i]);
    auto node = new_node(std::move(out), {a.node()});
    if (node->requires_grad) {
        auto pa = a.node();
        auto self = node.get();
        node->backward_fn = [pa, self, bwd_factor](const Tensor& g) {
            Tensor& da = ensure_grad(pa);
            const std::int64_t n = g.numel();
            for (std::int64_t i = 0; i < n; ++i)
                da[i] += g[i] * bwd_factor(pa->value[i], self->value[i]);
        };
    }
    return Var::make(node);
}

}  // namespace

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.value().shape());
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
    auto node = new_node(std::move(out), {a.node(), b.node()});
    if (node->requires_grad) {
        auto pa = a.node(), pb = b.node();
        node->backward_fn = [pa, pb](const Tensor& g) {
            if (pa->requires_grad) accum_grad(pa, g);
            if (pb->requires_grad) accum_grad(pb, g);
        };
    }
    return Var::make(node);
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.value().shape());
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] - b.value()[i];
    auto node = new_node(std::move(out), {a.node(), b.node()});
    if (node->requires_grad) {
        auto pa = a.node(), pb = b.node();
        node->backward_fn = [pa, pb](const Tensor& g) {
            if (pa->requires_grad) accum_grad(pa, g);
            if (pb->requires_grad) {
                Tensor& db = ensure_grad(pb);
                for (std::int64_t i = 0; i < g.numel(); ++i) db[i] -= g[i];
            }
        };
    }
    return Var::make(node);
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.value().shape());
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
    auto node = new_node(std::move(out), {a.node(), b.node()});
    if (node->requires_grad) {
        auto pa = a.node(), pb = b.node();
        node->backward_fn = [pa, pb](const Tensor& g) {
            const std::int64_t n = g.numel();
            if (pa->requires_grad) {
                Tensor& da = ensure_grad(pa);
                for (std::int64_t i = 0; i < n; ++i) da[i] += g[i] * pb->value[i];
            }
            if (pb->requires_grad) {
                Tensor& db = ensure_grad(pb);
                for (std::int64_t i = 0; i < n; ++i) db[i] += g[i] * pa->value[i];
            }
        };
    }
    return Var::make(node);
}

Var add_scalar(const Var& a, Real c) {
    return unary_op(a, [c](Real x) { return x + c; }, [](Real, Real) { return Real(1); });
}

Var mul_scalar(const Var& a, Real c) {
    return unary_op(a, [c](Real x) { return x * c; }, [c](Real, Real) { return c; });
}

Var neg(const Var& a) { return mul_scalar(a, Real(-1)); }

Var log(const Var& a) {
    return unary_op(a, [](Real x) { return std::log(x); }, [](Real x, Real) { return Real(1) / x; });
}

Var exp(const Var& a) {
    return unary_op(a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Var relu(const Var& a) {
    return unary_op(a, [](Real x) { return x > 0 ? x : Real(0); },
                    [](Real x, Real) { return x > 0 ? Real(1) : Real(0); });
}

Var leaky_relu(const Var& a, Real alpha) {
    return unary_op(a, [alpha](Real x) { return x > 0 ? x : alpha * x; },
                    [alpha](Real x, Real) { return x > 0 ? Real(1) : alpha; });
}

Var sigmoid(const Var& a) {
    return unary_op(a, [](Real x) { return Real(1) / (Real(1) + std::exp(-x)); },
                    [](Real, Real y) { return y * (Real(1) - y); });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& a) {
    Real s = 0;
    for (std::int64_t i = 0; i < a.value().numel(); ++i) s += a.value()[i];
    auto node = new_node(Tensor::scalar(s), {a.node()});
    if (node->requires_grad) {
        auto pa = a.node();
        node->backward_fn = [pa](const Tensor& g) {
            Tensor& da = ensure_grad(pa);
            for (std::int64_t i = 0; i < da.numel(); ++i) da[i] += g[0];
        };
    }
    return Var::make(node);
}

Var mean(const Var& a) { return mul_scalar(sum(a), Real(1) / static_cast<Real>(a.value().numel())); }

// ---------------------------------------------------------------------------
// Matrix products

Var matmul(const Var& a, const Var& b) {
    auto A = map2(a.value());
    auto B = map2(b.value());
    if (A.cols() != B.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
    Tensor out({A.rows(), B.cols()});
    map2(out) = A * B;
    auto node = new_node(std::move(out), {a.node(), b.node()});
    if (node->requires_grad) {
        auto pa = a.node(), pb = b.node();
        node->backward_fn = [pa, pb](const Tensor& g) {
            auto G = map2(g);
            if (pa->requires_grad) map2(ensure_grad(pa)) += G * map2(pb->value).transpose();
            if (pb->requires_grad) map2(ensure_grad(pb)) += map2(pa->value).transpose() * G;
        };
    }
    return Var::make(node);
}

Var matmul_nt(const Var& a, const Var& b) {
    auto A = map2(a.value());
    auto B = map2(b.value());
    if (A.cols() != B.cols()) throw std::invalid_argument("matmul_nt: inner dimensions differ");
    Tensor out({A.rows(), B.rows()});
    map2(out) = A * B.transpose();
    auto node = new_node(std::move(out), {a.node(), b.node()});
    if (node->requires_grad) {
        auto pa = a.node(), pb = b.node();
        node->backward_fn = [pa, pb](const Tensor& g) {
            auto G = map2(g);
            if (pa->requires_grad) map2(ensure_grad(pa)) += G * map2(pb->value);
            if (pb->requires_grad) map2(ensure_grad(pb)) += G.transpose() * map2(pa->value);
        };
    }
    return Var::make(node);
}

Var matmul_tn(const Var& a, const Var& b) {
    auto A = map2(a.value());
    auto B = map2(b.value());
    if (A.rows() != B.rows()) throw std::invalid_argument("matmul_tn: inner dimensions differ");
    Tensor out({A.cols(), B.cols()});
    map2(out) = A.transpose() * B;
    auto node = new_node(std::move(out), {a.node(), b.node()});
    if (node->requires_grad) {
        auto pa = a.node(), pb = b.node();
        node->backward_fn = [pa, pb](const Tensor& g) {
            auto G = map2(g);
            if (pa->requires_grad) map2(ensure_grad(pa)) += map2(pb->value) * G.transpose();
            if (pb->requires_grad) map2(ensure_grad(pb)) += map2(pa->value) * G;
        };
    }
    return Var::make(node);
}

// ---------------------------------------------------------------------------
// Structured ops

Var rowwise_scale(const Var& m, const Var& s) {
    const Tensor& M = m.value();
    const Tensor& S = s.value();
    if (M.rank() != 2 || S.rank() != 1 || M.dim(0) != S.dim(0))
        throw std::invalid_argument("rowwise_scale: need m[n,d], s[n]");
    const std::int64_t n = M.dim(0), d = M.dim(1);
    Tensor out({n, d});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) out.at2(i, j) = S[i] * M.at2(i, j);
    auto node = new_node(std::move(out), {m.node(), s.node()});
    if (node->requires_grad) {
        auto pm = m.node(), ps = s.node();
        node->backward_fn = [pm, ps, n, d](const Tensor& g) {
            if (pm->requires_grad) {
                Tensor& dm = ensure_grad(pm);
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < d; ++j) dm.at2(i, j) += ps->value[i] * g.at2(i, j);
            }
            if (ps->requires_grad) {
                Tensor& ds = ensure_grad(ps);
                for (std::int64_t i = 0; i < n; ++i) {
                    Real acc = 0;
                    for (std::int64_t j = 0; j < d; ++j) acc += g.at2(i, j) * pm->value.at2(i, j);
                    ds[i] += acc;
                }
            }
        };
    }
    return Var::make(node);
}

Var add_rowvec(const Var& m, const Var& b) {
    const Tensor& M = m.value();
    const Tensor& B = b.value();
    if (M.rank() != 2 || B.rank() != 1 || M.dim(1) != B.dim(0))
        throw std::invalid_argument("add_rowvec: need m[n,d], b[d]");
    const std::int64_t n = M.dim(0), d = M.dim(1);
    Tensor out({n, d});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) out.at2(i, j) = M.at2(i, j) + B[j];
    auto node = new_node(std::move(out), {m.node(), b.node()});
    if (node->requires_grad) {
        auto pm = m.node(), pb = b.node();
        node->backward_fn = [pm, pb, n, d](const Tensor& g) {
            if (pm->requires_grad) accum_grad(pm, g);
            if (pb->requires_grad) {
                Tensor& db = ensure_grad(pb);
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < d; ++j) db[j] += g.at2(i, j);
            }
        };
    }
    return Var::make(node);
}

Var gather_rows(const Var& m, std::vector<std::int64_t> idx) {
    const Tensor& M = m.value();
    if (M.rank() != 2) throw std::invalid_argument("gather_rows: need rank-2");
    const std::int64_t rows = M.dim(0), d = M.dim(1);
    Tensor out({static_cast<std::int64_t>(idx.size()), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= rows) throw std::out_of_range("gather_rows: index out of range");
        std::copy_n(M.data() + idx[i] * d, d, out.data() + static_cast<std::int64_t>(i) * d);
    }
    auto node = new_node(std::move(out), {m.node()});
    if (node->requires_grad) {
        auto pm = m.node();
        auto indices = std::make_shared<std::vector<std::int64_t>>(std::move(idx));
        node->backward_fn = [pm, indices, d](const Tensor& g) {
            Tensor& dm = ensure_grad(pm);
            for (std::size_t i = 0; i < indices->size(); ++i) {
                Real* dst = dm.data() + (*indices)[i] * d;
                const Real* src = g.data() + static_cast<std::int64_t>(i) * d;
                for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        };
    }
    return Var::make(node);
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const std::int64_t d = parts[0].value().dim(1);
    std::int64_t n = 0;
    for (const auto& p : parts) {
        if (p.value().rank() != 2 || p.value().dim(1) != d)
            throw std::invalid_argument("concat_rows: column mismatch");
        n += p.value().dim(0);
    }
    Tensor out({n, d});
    std::vector<std::shared_ptr<Node>> parents;
    std::int64_t row = 0;
    for (const auto& p : parts) {
        std::copy_n(p.value().data(), p.value().numel(), out.data() + row * d);
        row += p.value().dim(0);
        parents.push_back(p.node());
    }
    auto node = new_node(std::move(out), std::move(parents));
    if (node->requires_grad) {
        auto ps = node->parents;
        node->backward_fn = [ps, d](const Tensor& g) {
            std::int64_t row = 0;
            for (const auto& p : ps) {
                const std::int64_t r = p->value.dim(0);
                if (p->requires_grad) {
                    Tensor& dp = ensure_grad(p);
                    const Real* src = g.data() + row * d;
                    for (std::int64_t i = 0; i < r * d; ++i) dp[i] += src[i];
                }
                row += r;
            }
        };
    }
    return Var::make(node);
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const std::int64_t n = parts[0].value().dim(0);
    std::int64_t d = 0;
    for (const auto& p : parts) {
        if (p.value().rank() != 2 || p.value().dim(0) != n)
            throw std::invalid_argument("concat_cols: row mismatch");
        d += p.value().dim(1);
    }
    Tensor out({n, d});
    std::vector<std::shared_ptr<Node>> parents;
    std::int64_t col = 0;
    for (const auto& p : parts) {
        const std::int64_t pd = p.value().dim(1);
        for (std::int64_t i = 0; i < n; ++i)
            std::copy_n(p.value().data() + i * pd, pd, out.data() + i * d + col);
        col += pd;
        parents.push_back(p.node());
    }
    auto node = new_node(std::move(out), std::move(parents));
    if (node->requires_grad) {
        auto ps = node->parents;
        node->backward_fn = [ps, n, d](const Tensor& g) {
            std::int64_t col = 0;
            for (const auto& p : ps) {
                const std::int64_t pd = p->value.dim(1);
                if (p->requires_grad) {
                    Tensor& dp = ensure_grad(p);
                    for (std::int64_t i = 0; i < n; ++i)
                        for (std::int64_t j = 0; j < pd; ++j) dp.at2(i, j) += g.at2(i, col + j);
                }
                col += pd;
            }
        };
    }
    return Var::make(node);
}

Var slice_rows(const Var& m, std::int64_t start, std::int64_t len) {
    const Tensor& M = m.value();
    if (M.rank() != 2 || start < 0 || start + len > M.dim(0))
        throw std::invalid_argument("slice_rows: out of range");
    const std::int64_t d = M.dim(1);
    Tensor out({len, d});
    std::copy_n(M.data() + start * d, len * d, out.data());
    auto node = new_node(std::move(out), {m.node()});
    if (node->requires_grad) {
        auto pm = m.node();
        node->backward_fn = [pm, start, len, d](const Tensor& g) {
            Tensor& dm = ensure_grad(pm);
            Real* dst = dm.data() + start * d;
            for (std::int64_t i = 0; i < len * d; ++i) dst[i] += g[i];
        };
    }
    return Var::make(node);
}

Var slice_cols(const Var& m, std::int64_t start, std::int64_t len) {
    const Tensor& M = m.value();
    if (M.rank() != 2 || start < 0 || start + len > M.dim(1))
        throw std::invalid_argument("slice_cols: out of range");
    const std::int64_t n = M.dim(0), d = M.dim(1);
    Tensor out({n, len});
    for (std::int64_t i = 0; i < n; ++i)
        std::copy_n(M.data() + i * d + start, len, out.data() + i * len);
    auto node = new_node(std::move(out), {m.node()});
    if (node->requires_grad) {
        auto pm = m.node();
        node->backward_fn = [pm, start, len, n, d](const Tensor& g) {
            Tensor& dm = ensure_grad(pm);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < len; ++j) dm.at2(i, start + j) += g.at2(i, j);
        };
    }
    return Var::make(node);
}

Var softmax_rows(const Var& m) {
    const Tensor& M = m.value();
    if (M.rank() != 2) throw std::invalid_argument("softmax_rows: need rank-2");
    const std::int64_t n = M.dim(0), d = M.dim(1);
    Tensor out({n, d});
    for (std::int64_t i = 0; i < n; ++i) {
        Real mx = M.at2(i, 0);
        for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, M.at2(i, j));
        Real z = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            const Real e = std::exp(M.at2(i, j) - mx);
            out.at2(i, j) = e;
            z += e;
        }
        for (std::int64_t j = 0; j < d; ++j) out.at2(i, j) /= z;
    }
    auto node = new_node(std::move(out), {m.node()});
    if (node->requires_grad) {
        auto pm = m.node();
        auto self = node.get();
        node->backward_fn = [pm, self, n, d](const Tensor& g) {
            Tensor& dm = ensure_grad(pm);
            for (std::int64_t i = 0; i < n; ++i) {
                Real dot = 0;
                for (std::int64_t j = 0; j < d; ++j) dot += g.at2(i, j) * self->value.at2(i, j);
                for (std::int64_t j = 0; j < d; ++j)
                    dm.at2(i, j) += self->value.at2(i, j) * (g.at2(i, j) - dot);
            }
        };
    }
    return Var::make(node);
}

Var take_diag(const Var& m) {
    const Tensor& M = m.value();
    if (M.rank() != 2 || M.dim(0) != M.dim(1)) throw std::invalid_argument("take_diag: need square");
    const std::int64_t n = M.dim(0);
    Tensor out({n});
    for (std::int64_t i = 0; i < n; ++i) out[i] = M.at2(i, i);
    auto node = new_node(std::move(out), {m.node()});
    if (node->requires_grad) {
        auto pm = m.node();
        node->backward_fn = [pm, n](const Tensor& g) {
            Tensor& dm = ensure_grad(pm);
            for (std::int64_t i = 0; i < n; ++i) dm.at2(i, i) += g[i];
        };
    }
    return Var::make(node);
}

Var l2_normalize_rows(const Var& m, Real eps) {
    const Tensor& M = m.value();
    if (M.rank() != 2) throw std::invalid_argument("l2_normalize_rows: need rank-2");
    const std::int64_t n = M.dim(0), d = M.dim(1);
    Tensor out({n, d});
    auto norms = std::make_shared<std::vector<Real>>(n);
    for (std::int64_t i = 0; i < n; ++i) {
        Real ss = eps;
        for (std::int64_t j = 0; j < d; ++j) ss += M.at2(i, j) * M.at2(i, j);
        const Real r = std::sqrt(ss);
        (*norms)[i] = r;
        for (std::int64_t j = 0; j < d; ++j) out.at2(i, j) = M.at2(i, j) / r;
    }
    auto node = new_node(std::move(out), {m.node()});
    if (node->requires_grad) {
        auto pm = m.node();
        auto self = node.get();
        node->backward_fn = [pm, self, norms, n, d](const Tensor& g) {
            Tensor& dm = ensure_grad(pm);
            for (std::int64_t i = 0; i < n; ++i) {
                Real dot = 0;
                for (std::int64_t j = 0; j < d; ++j) dot += g.at2(i, j) * self->value.at2(i, j);
                const Real inv = Real(1) / (*norms)[i];
                for (std::int64_t j = 0; j < d; ++j)
                    dm.at2(i, j) += (g.at2(i, j) - self->value.at2(i, j) * dot) * inv;
            }
        };
    }
    return Var::make(node);
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps) {
    const Tensor& X = x.value();
    if (X.rank() != 2) throw std::invalid_argument("layer_norm: need rank-2");
    const std::int64_t n = X.dim(0), d = X.dim(1);
    if (gamma.value().numel() != d || beta.value().numel() != d)
        throw std::invalid_argument("layer_norm: gamma/beta size mismatch");
    Tensor out({n, d});
    auto ynorm = std::make_shared<Tensor>(Tensor({n, d}));
    auto inv_sigma = std::make_shared<std::vector<Real>>(n);
    for (std::int64_t i = 0; i < n; ++i) {
        Real mu = 0;
        for (std::int64_t j = 0; j < d; ++j) mu += X.at2(i, j);
        mu /= static_cast<Real>(d);
        Real var = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            const Real c = X.at2(i, j) - mu;
            var += c * c;
        }
        var /= static_cast<Real>(d);
        const Real inv = Real(1) / std::sqrt(var + eps);
        (*inv_sigma)[i] = inv;
        for (std::int64_t j = 0; j < d; ++j) {
            const Real y = (X.at2(i, j) - mu) * inv;
            ynorm->at2(i, j) = y;
            out.at2(i, j) = gamma.value()[j] * y + beta.value()[j];
        }
    }
    auto node = new_node(std::move(out), {x.node(), gamma.node(), beta.node()});
    if (node->requires_grad) {
        auto px = x.node(), pg = gamma.node(), pb = beta.node();
        node->backward_fn = [px, pg, pb, ynorm, inv_sigma, n, d](const Tensor& g) {
            if (pg->requires_grad) {
                Tensor& dg = ensure_grad(pg);
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < d; ++j) dg[j] += g.at2(i, j) * ynorm->at2(i, j);
            }
            if (pb->requires_grad) {
                Tensor& db = ensure_grad(pb);
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < d; ++j) db[j] += g.at2(i, j);
            }
            if (px->requires_grad) {
                Tensor& dx = ensure_grad(px);
                for (std::int64_t i = 0; i < n; ++i) {
                    Real m1 = 0, m2 = 0;
                    for (std::int64_t j = 0; j < d; ++j) {
                        const Real gy = g.at2(i, j) * pg->value[j];
                        m1 += gy;
                        m2 += gy * ynorm->at2(i, j);
                    }
                    m1 /= static_cast<Real>(d);
                    m2 /= static_cast<Real>(d);
                    for (std::int64_t j = 0; j < d; ++j) {
                        const Real gy = g.at2(i, j) * pg->value[j];
                        dx.at2(i, j) += (gy - m1 - ynorm->at2(i, j) * m2) * (*inv_sigma)[i];
                    }
                }
            }
        };
    }
    return Var::make(node);
}

Var reshape(const Var& x, std::vector<std::int64_t> shape) {
    Tensor out = x.value().reshaped(shape);
    auto node = new_node(std::move(out), {x.node()});
    if (node->requires_grad) {
        auto px = x.node();
        node->backward_fn = [px](const Tensor& g) {
            Tensor& dx = ensure_grad(px);
            for (std::int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
        };
    }
    return Var::make(node);
}

// ---------------------------------------------------------------------------
// Image ops

namespace {

void im2col(const Tensor& x, int k, int stride, int pad, std::int64_t oh, std::int64_t ow,
            Tensor& cols) {
    const std::int64_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
    Real* cp = cols.data();
    const std::int64_t ncols = oh * ow;
    for (std::int64_t c = 0; c < ci; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                for (std::int64_t oy = 0; oy < oh; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ky;
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kx;
                        Real v = 0;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < w) v = x.at3(c, iy, ix);
                        cp[oy * ow + ox] = v;
                    }
                }
                cp += ncols;
            }
}

void col2im_accum(const Tensor& cols, int k, int stride, int pad, std::int64_t oh, std::int64_t ow,
                  Tensor& dx) {
    const std::int64_t ci = dx.dim(0), h = dx.dim(1), w = dx.dim(2);
    const Real* cp = cols.data();
    const std::int64_t ncols = oh * ow;
    for (std::int64_t c = 0; c < ci; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                for (std::int64_t oy = 0; oy < oh; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dx.at3(c, iy, ix) += cp[oy * ow + ox];
                    }
                }
                cp += ncols;
            }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    if (X.rank() != 3 || W.rank() != 4) throw std::invalid_argument("conv2d: need x[C,H,W], w[Co,Ci,k,k]");
    const std::int64_t ci = X.dim(0), h = X.dim(1), wd = X.dim(2);
    const std::int64_t co = W.dim(0);
    const int k = static_cast<int>(W.dim(2));
    if (W.dim(1) != ci || W.dim(3) != k) throw std::invalid_argument("conv2d: kernel shape mismatch");
    if (b.value().numel() != co) throw std::invalid_argument("conv2d: bias size mismatch");
    const std::int64_t oh = (h + 2 * pad - k) / stride + 1;
    const std::int64_t ow = (wd + 2 * pad - k) / stride + 1;
    const std::int64_t kdim = ci * k * k;

    auto cols = std::make_shared<Tensor>(Tensor({kdim, oh * ow}));
    im2col(X, k, stride, pad, oh, ow, *cols);

    Tensor out({co, oh, ow});
    {
        CMapM Wm(W.data(), co, kdim);
        CMapM Cm(cols->data(), kdim, oh * ow);
        MapM Om(out.data(), co, oh * ow);
        Om.noalias() = Wm * Cm;
        for (std::int64_t c = 0; c < co; ++c) Om.row(c).array() += b.value()[c];
    }
    auto node = new_node(std::move(out), {x.node(), w.node(), b.node()});
    if (node->requires_grad) {
        auto px = x.node(), pw = w.node(), pb = b.node();
        node->backward_fn = [px, pw, pb, cols, stride, pad, k, ci, co, oh, ow, kdim](const Tensor& g) {
            CMapM Gm(g.data(), co, oh * ow);
            if (pb->requires_grad) {
                Tensor& db = ensure_grad(pb);
                for (std::int64_t c = 0; c < co; ++c) db[c] += Gm.row(c).sum();
            }
            if (pw->requires_grad) {
                Tensor& dw = ensure_grad(pw);
                MapM dWm(dw.data(), co, kdim);
                CMapM Cm(cols->data(), kdim, oh * ow);
                dWm.noalias() += Gm * Cm.transpose();
            }
            if (px->requires_grad) {
                Tensor dcols({kdim, oh * ow});
                CMapM Wm(pw->value.data(), co, kdim);
                MapM dCm(dcols.data(), kdim, oh * ow);
                dCm.noalias() = Wm.transpose() * Gm;
                Tensor& dx = ensure_grad(px);
                col2im_accum(dcols, k, stride, pad, oh, ow, dx);
            }
        };
    }
    return Var::make(node);
}

namespace {

struct LerpAxis {
    std::vector<std::int64_t> i0, i1;
    std::vector<Real> w1;  // out = (1-w1)*in[i0] + w1*in[i1]
};

LerpAxis make_axis(std::int64_t in, std::int64_t out) {
    LerpAxis ax;
    ax.i0.resize(out);
    ax.i1.resize(out);
    ax.w1.resize(out);
    const Real scale = static_cast<Real>(in) / static_cast<Real>(out);
    for (std::int64_t o = 0; o < out; ++o) {
        Real src = (static_cast<Real>(o) + Real(0.5)) * scale - Real(0.5);
        if (src < 0) src = 0;
        std::int64_t lo = static_cast<std::int64_t>(std::floor(src));
        if (lo > in - 1) lo = in - 1;
        std::int64_t hi = std::min(lo + 1, in - 1);
        ax.i0[o] = lo;
        ax.i1[o] = hi;
        ax.w1[o] = src - static_cast<Real>(lo);
    }
    return ax;
}

}  // namespace

Tensor upsample_bilinear_value(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
    if (x.rank() != 3) throw std::invalid_argument("upsample_bilinear: need [C,H,W]");
    const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const LerpAxis ay = make_axis(h, out_h), axx = make_axis(w, out_w);
    Tensor out({c, out_h, out_w});
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
            const Real wy = ay.w1[oy];
            for (std::int64_t ox = 0; ox < out_w; ++ox) {
                const Real wx = axx.w1[ox];
                const Real v00 = x.at3(ch, ay.i0[oy], axx.i0[ox]);
                const Real v01 = x.at3(ch, ay.i0[oy], axx.i1[ox]);
                const Real v10 = x.at3(ch, ay.i1[oy], axx.i0[ox]);
                const Real v11 = x.at3(ch, ay.i1[oy], axx.i1[ox]);
                out.at3(ch, oy, ox) = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                      wy * ((1 - wx) * v10 + wx * v11);
            }
        }
    return out;
}

Var upsample_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w) {
    Tensor out = upsample_bilinear_value(x.value(), out_h, out_w);
    auto node = new_node(std::move(out), {x.node()});
    if (node->requires_grad) {
        auto px = x.node();
        const std::int64_t h = px->value.dim(1), w = px->value.dim(2), c = px->value.dim(0);
        node->backward_fn = [px, out_h, out_w, h, w, c](const Tensor& g) {
            const LerpAxis ay = make_axis(h, out_h), axx = make_axis(w, out_w);
            Tensor& dx = ensure_grad(px);
            for (std::int64_t ch = 0; ch < c; ++ch)
                for (std::int64_t oy = 0; oy < out_h; ++oy) {
                    const Real wy = ay.w1[oy];
                    for (std::int64_t ox = 0; ox < out_w; ++ox) {
                        const Real wx = axx.w1[ox];
                        const Real gv = g.at3(ch, oy, ox);
                        dx.at3(ch, ay.i0[oy], axx.i0[ox]) += (1 - wy) * (1 - wx) * gv;
                        dx.at3(ch, ay.i0[oy], axx.i1[ox]) += (1 - wy) * wx * gv;
                        dx.at3(ch, ay.i1[oy], axx.i0[ox]) += wy * (1 - wx) * gv;
                        dx.at3(ch, ay.i1[oy], axx.i1[ox]) += wy * wx * gv;
                    }
                }
        };
    }
    return Var::make(node);
}

Var concat_channels(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != 3 || B.rank() != 3 || A.dim(1) != B.dim(1) || A.dim(2) != B.dim(2))
        throw std::invalid_argument("concat_channels: spatial dims differ");
    Tensor out({A.dim(0) + B.dim(0), A.dim(1), A.dim(2)});
    std::copy_n(A.data(), A.numel(), out.data());
    std::copy_n(B.data(), B.numel(), out.data() + A.numel());
    auto node = new_node(std::move(out), {a.node(), b.node()});
    if (node->requires_grad) {
        auto pa = a.node(), pb = b.node();
        node->backward_fn = [pa, pb](const Tensor& g) {
            const std::int64_t na = pa->value.numel(), nb = pb->value.numel();
            if (pa->requires_grad) {
                Tensor& da = ensure_grad(pa);
                for (std::int64_t i = 0; i < na; ++i) da[i] += g[i];
            }
            if (pb->requires_grad) {
                Tensor& db = ensure_grad(pb);
                for (std::int64_t i = 0; i < nb; ++i) db[i] += g[na + i];
            }
        };
    }
    return Var::make(node);
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_rowvec(matmul(x, w), b); }

Var mse(const Var& a, const Var& b) {
    Var d = sub(a, b);
    return mean(mul(d, d));
}

}  // namespace brainit::nn
