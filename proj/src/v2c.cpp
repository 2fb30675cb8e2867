#include "brainit/v2c.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "brainit/io.hpp"
#include "brainit/rng.hpp"

namespace brainit::v2c {

namespace {

constexpr Real kVarFloor = 1e-8;
constexpr Real kLogTwoPi = 1.8378770664093454835606594728112;

using EMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EVec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

struct Pooled {
    EMat x;                         // [N, d]
    std::vector<int> subjects;      // ordered subject ids
    std::vector<std::int64_t> row0; // first pooled row of each subject
    std::vector<std::int64_t> rows; // V_s per subject
};

Pooled pool(const std::map<int, Tensor>& embeddings) {
    if (embeddings.empty()) throw ArgumentError("v2c: no subjects");
    std::int64_t d = -1, n = 0;
    for (const auto& [sid, m] : embeddings) {
        if (m.rank() != 2 || m.dim(0) < 1) throw ArgumentError("v2c: embeddings must be [V_s, d]");
        if (d < 0) d = m.dim(1);
        if (m.dim(1) != d) throw ArgumentError("v2c: embedding dim differs across subjects");
        if (!m.all_finite()) throw ArgumentError("v2c: non-finite embedding rows");
        n += m.dim(0);
    }
    Pooled p;
    p.x.resize(n, d);
    std::int64_t r = 0;
    for (const auto& [sid, m] : embeddings) {
        p.subjects.push_back(sid);
        p.row0.push_back(r);
        p.rows.push_back(m.dim(0));
        for (std::int64_t i = 0; i < m.dim(0); ++i, ++r)
            for (std::int64_t j = 0; j < d; ++j) p.x(r, j) = m.at2(i, j);
    }
    return p;
}

/// Log joint density log(w_k) + log N(x | mu_k, diag(v_k)) for every row
/// and component. Written with GEMMs so desk-scale pools stay fast.
EMat log_joint(const EMat& x, const EMat& means, const EMat& vars, const std::vector<Real>& weights) {
    const auto n = x.rows();
    const auto k = means.rows();
    const auto d = x.cols();
    EMat inv_v = vars.cwiseInverse();               // [K, d]
    EMat mu_over_v = means.cwiseProduct(inv_v);     // [K, d]
    EVec const_k(k);
    for (Eigen::Index c = 0; c < k; ++c) {
        Real s = 0;
        for (Eigen::Index j = 0; j < d; ++j)
            s += std::log(vars(c, j)) + means(c, j) * means(c, j) * inv_v(c, j);
        const_k(c) = std::log(weights[static_cast<std::size_t>(c)]) -
                     0.5 * (static_cast<Real>(d) * kLogTwoPi + s);
    }
    EMat out = x * mu_over_v.transpose();                        // [N, K]
    out.noalias() -= 0.5 * x.cwiseAbs2() * inv_v.transpose();    // quadratic term
    out.rowwise() += const_k.transpose();
    (void)n;
    return out;
}

Real logsumexp_rows(const EMat& lj, EVec* lse_out) {
    EVec lse(lj.rows());
    for (Eigen::Index i = 0; i < lj.rows(); ++i) {
        const Real m = lj.row(i).maxCoeff();
        Real s = 0;
        for (Eigen::Index c = 0; c < lj.cols(); ++c) s += std::exp(lj(i, c) - m);
        lse(i) = m + std::log(s);
    }
    if (lse_out) *lse_out = lse;
    return lse.sum();
}

EMat kmeanspp_init(const EMat& x, int k, Rng& rng) {
    const auto n = x.rows();
    EMat means(k, x.cols());
    means.row(0) = x.row(rng.uniform_int(n));
    EVec d2 = (x.rowwise() - means.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        const Real total = d2.sum();
        Eigen::Index pick;
        if (total <= 0) {
            pick = rng.uniform_int(n);
        } else {
            Real target = rng.uniform() * total, acc = 0;
            pick = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (acc >= target) { pick = i; break; }
            }
        }
        means.row(c) = x.row(pick);
        d2 = d2.cwiseMin((x.rowwise() - means.row(c)).rowwise().squaredNorm());
    }
    return means;
}

struct FitResult {
    EMat means, vars;
    std::vector<Real> weights;
    std::vector<Real> trace;
    bool ok = false;
};

FitResult fit_once(const EMat& x, int k, int max_iter, Real tol, Rng rng) {
    const auto n = x.rows();
    const auto d = x.cols();
    FitResult res;
    res.means = kmeanspp_init(x, k, rng);
    EVec gmean = x.colwise().mean();
    EVec gvar(d);
    for (Eigen::Index j = 0; j < d; ++j)
        gvar(j) = std::max(kVarFloor, (x.col(j).array() - gmean(j)).square().mean());
    res.vars = gvar.transpose().replicate(k, 1);
    res.weights.assign(static_cast<std::size_t>(k), 1.0 / k);

    Real prev_ll = -std::numeric_limits<Real>::infinity();
    for (int it = 0; it < max_iter; ++it) {
        EMat lj = log_joint(x, res.means, res.vars, res.weights);
        EVec lse;
        const Real ll = logsumexp_rows(lj, &lse);
        if (!std::isfinite(ll)) return res;  // degenerate fit, caller retries
        res.trace.push_back(ll);

        EMat resp = (lj.colwise() - lse).array().exp();  // [N, K]
        EVec nk = resp.colwise().sum();
        if ((nk.array() < 1e-12).any()) return res;

        res.means = resp.transpose() * x;
        res.means.array().colwise() /= nk.array();
        EMat second = resp.transpose() * x.cwiseAbs2();
        second.array().colwise() /= nk.array();
        res.vars = (second - res.means.cwiseAbs2()).cwiseMax(kVarFloor);
        for (int c = 0; c < k; ++c) res.weights[static_cast<std::size_t>(c)] = nk(c) / static_cast<Real>(n);

        if (it > 0 && std::abs(ll - prev_ll) <= tol * (std::abs(prev_ll) + 1.0)) break;
        prev_ll = ll;
    }
    res.ok = true;
    return res;
}

V2CMapping fit_impl(const std::map<int, Tensor>& embeddings, const GmmConfig& config) {
    if (config.k < 1) throw ArgumentError("v2c: K must be >= 1");
    if (config.covariance != "diagonal") throw ConfigError("v2c: only diagonal covariance is supported");
    Pooled p = pool(embeddings);
    if (p.x.rows() < config.k)
        throw ArgumentError("v2c: K exceeds pooled voxel count (" + std::to_string(config.k) + " > " +
                            std::to_string(p.x.rows()) + ")");

    FitResult fit;
    for (int attempt = 0; attempt <= config.retries; ++attempt) {
        fit = fit_once(p.x, config.k, config.max_iter, config.tol,
                       Rng::with_stream(config.seed, static_cast<std::uint64_t>(attempt)));
        if (fit.ok) break;
    }
    if (!fit.ok) throw ConfigError("v2c: EM degenerated on every retry");

    V2CMapping m;
    m.k = config.k;
    m.dim = p.x.cols();
    m.covariance = config.covariance;
    m.means = Tensor({config.k, m.dim});
    m.variances = Tensor({config.k, m.dim});
    for (int c = 0; c < config.k; ++c)
        for (std::int64_t j = 0; j < m.dim; ++j) {
            m.means.at2(c, j) = fit.means(c, j);
            m.variances.at2(c, j) = fit.vars(c, j);
        }
    m.weights = fit.weights;
    m.log_likelihood_trace = fit.trace;

    for (std::size_t s = 0; s < p.subjects.size(); ++s) {
        Tensor rows({p.rows[s], m.dim});
        for (std::int64_t i = 0; i < p.rows[s]; ++i)
            for (std::int64_t j = 0; j < m.dim; ++j) rows.at2(i, j) = p.x(p.row0[s] + i, j);
        m.assignments[p.subjects[s]] = assign_new_subject(m, rows);
    }
    return m;
}

}  // namespace

V2CMapping fit_v2c(const std::map<int, Tensor>& embeddings, const GmmConfig& config) {
    return fit_impl(embeddings, config);
}

V2CMapping fit_anatomical_v2c(const std::map<int, Tensor>& coords, const GmmConfig& config) {
    for (const auto& [sid, m] : coords)
        if (m.rank() != 2 || m.dim(1) != 3)
            throw ArgumentError("v2c: anatomical fit expects [V_s, 3] coordinates");
    return fit_impl(coords, config);
}

Tensor component_log_densities(const V2CMapping& mapping, const Tensor& rows) {
    if (rows.rank() != 2 || rows.dim(1) != mapping.dim)
        throw ArgumentError("v2c: row dim does not match mapping (expected " +
                            std::to_string(mapping.dim) + ")");
    const std::int64_t n = rows.dim(0), d = mapping.dim;
    EMat x(n, d), means(mapping.k, d), vars(mapping.k, d);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) x(i, j) = rows.at2(i, j);
    for (int c = 0; c < mapping.k; ++c)
        for (std::int64_t j = 0; j < d; ++j) {
            means(c, j) = mapping.means.at2(c, j);
            vars(c, j) = mapping.variances.at2(c, j);
        }
    EMat lj = log_joint(x, means, vars, mapping.weights);
    Tensor out({n, static_cast<std::int64_t>(mapping.k)});
    for (std::int64_t i = 0; i < n; ++i)
        for (int c = 0; c < mapping.k; ++c) out.at2(i, c) = lj(i, c);
    return out;
}

std::vector<int> assign_new_subject(const V2CMapping& mapping, const Tensor& embeddings) {
    Tensor lj = component_log_densities(mapping, embeddings);
    std::vector<int> out(static_cast<std::size_t>(embeddings.dim(0)));
    for (std::int64_t i = 0; i < embeddings.dim(0); ++i) {
        int best = 0;
        for (int c = 1; c < mapping.k; ++c)
            if (lj.at2(i, c) > lj.at2(i, best)) best = c;  // ties keep the lowest index
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

void save_mapping(const std::string& dir, const V2CMapping& mapping) {
    io::NamedTensors t;
    t["means"] = mapping.means;
    t["variances"] = mapping.variances;
    Tensor w({static_cast<std::int64_t>(mapping.weights.size())});
    for (std::size_t i = 0; i < mapping.weights.size(); ++i)
        w[static_cast<std::int64_t>(i)] = mapping.weights[i];
    t["weights"] = w;
    io::json extra;
    extra["kind"] = "v2c-mapping";
    extra["k"] = mapping.k;
    extra["dim"] = mapping.dim;
    extra["covariance"] = mapping.covariance;
    extra["log_likelihood_trace"] = mapping.log_likelihood_trace;
    std::vector<int> subjects;
    for (const auto& [sid, a] : mapping.assignments) {
        subjects.push_back(sid);
        Tensor av({static_cast<std::int64_t>(a.size())});
        for (std::size_t i = 0; i < a.size(); ++i) av[static_cast<std::int64_t>(i)] = a[i];
        t["assign/subj" + std::to_string(sid)] = av;
    }
    extra["subjects"] = subjects;
    io::save_named_tensors(dir, t, extra);
}

V2CMapping load_mapping(const std::string& dir) {
    io::json extra;
    io::NamedTensors t = io::load_named_tensors(dir, &extra);
    if (extra.value("kind", "") != "v2c-mapping")
        throw ConfigError("load_mapping: " + dir + " is not a cluster mapping");
    V2CMapping m;
    m.k = extra.at("k").get<int>();
    m.dim = extra.at("dim").get<std::int64_t>();
    m.covariance = extra.value("covariance", "diagonal");
    m.log_likelihood_trace = extra.value("log_likelihood_trace", std::vector<Real>{});
    m.means = t.at("means");
    m.variances = t.at("variances");
    const Tensor& w = t.at("weights");
    Real wsum = 0;
    for (std::int64_t i = 0; i < w.numel(); ++i) wsum += w[i];
    m.weights.resize(static_cast<std::size_t>(w.numel()));
    for (std::int64_t i = 0; i < w.numel(); ++i)
        m.weights[static_cast<std::size_t>(i)] = w[i] / wsum;  // undo float32 rounding
    for (int sid : extra.at("subjects").get<std::vector<int>>()) {
        const Tensor& a = t.at("assign/subj" + std::to_string(sid));
        std::vector<int> av(static_cast<std::size_t>(a.numel()));
        for (std::int64_t i = 0; i < a.numel(); ++i)
            av[static_cast<std::size_t>(i)] = static_cast<int>(std::llround(a[i]));
        m.assignments[sid] = av;
    }
    return m;
}

}  // namespace brainit::v2c
