#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drpc/io.hpp"
#include "drpc/matrix.hpp"
#include "drpc/rng.hpp"

namespace drpc {

enum class Activation { identity, relu, tanh_fn };

inline char activation_code(Activation a) {
    switch (a) {
        case Activation::identity: return 'i';
        case Activation::relu: return 'r';
        case Activation::tanh_fn: return 't';
    }
    return 'i';
}

inline Activation activation_from_code(char c) {
    switch (c) {
        case 'i': return Activation::identity;
        case 'r': return Activation::relu;
        case 't': return Activation::tanh_fn;
    }
    throw std::runtime_error(std::string("unknown activation code '") + c + "'");
}

struct DenseLayer {
    Matrix w;       // out x in
    Vec b;          // out
    Activation act = Activation::identity;
};

// Plain feed-forward net with explicit forward/backward passes. float64
// throughout; gradients are hand-derived and checked against central
// finite differences in the test suite.
struct DenseNet {
    std::vector<DenseLayer> layers;

    std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().w.cols; }
    std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().w.rows; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.w.rows * l.w.cols + l.b.size();
        return n;
    }

    std::vector<std::span<double>> param_views() {
        std::vector<std::span<double>> v;
        for (auto& l : layers) {
            v.emplace_back(l.w.data);
            v.emplace_back(l.b);
        }
        return v;
    }

    std::vector<std::span<const double>> param_views() const {
        std::vector<std::span<const double>> v;
        for (const auto& l : layers) {
            v.emplace_back(l.w.data);
            v.emplace_back(l.b);
        }
        return v;
    }
};

// Initialization: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
inline DenseNet make_dense(const std::vector<std::size_t>& dims,
                           const std::vector<Activation>& acts, Rng& rng) {
    if (dims.size() < 2 || acts.size() != dims.size() - 1)
        throw std::invalid_argument("make_dense: need N>=2 dims and N-1 activations");
    DenseNet net;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        DenseLayer layer;
        layer.w = Matrix(dims[l + 1], dims[l]);
        layer.b = Vec(dims[l + 1], 0.0);
        double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        for (auto& x : layer.w.data) x = rng.uniform(-bound, bound);
        for (auto& x : layer.b) x = rng.uniform(-bound, bound);
        layer.act = acts[l];
        net.layers.push_back(std::move(layer));
    }
    return net;
}

inline double apply_act(Activation a, double x) {
    switch (a) {
        case Activation::identity: return x;
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::tanh_fn: return std::tanh(x);
    }
    return x;
}

// derivative expressed through the post-activation value where possible
inline double act_grad(Activation a, double pre, double post) {
    switch (a) {
        case Activation::identity: return 1.0;
        case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
        case Activation::tanh_fn: return 1.0 - post * post;
    }
    return 1.0;
}

struct DenseCache {
    Vec input;
    std::vector<Vec> pre;    // per layer, pre-activation
    std::vector<Vec> post;   // per layer, post-activation
};

inline Vec dense_forward(const DenseNet& net, const Vec& x, DenseCache* cache = nullptr) {
    if (net.layers.empty()) throw std::invalid_argument("dense_forward: empty net");
    if (x.size() != net.input_dim())
        throw std::invalid_argument("dense_forward: input dimension mismatch");
    if (cache) {
        cache->input = x;
        cache->pre.clear();
        cache->post.clear();
    }
    Vec cur = x;
    for (const auto& l : net.layers) {
        Vec pre = matvec(l.w, cur);
        for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += l.b[i];
        Vec post(pre.size());
        for (std::size_t i = 0; i < pre.size(); ++i) post[i] = apply_act(l.act, pre[i]);
        if (cache) {
            cache->pre.push_back(pre);
            cache->post.push_back(post);
        }
        cur = std::move(post);
    }
    return cur;
}

struct DenseGrads {
    std::vector<Matrix> dw;
    std::vector<Vec> db;
    Vec dx;

    std::vector<std::span<const double>> grad_views() const {
        std::vector<std::span<const double>> v;
        for (std::size_t l = 0; l < dw.size(); ++l) {
            v.emplace_back(dw[l].data);
            v.emplace_back(db[l]);
        }
        return v;
    }
};

inline DenseGrads zero_grads(const DenseNet& net) {
    DenseGrads g;
    for (const auto& l : net.layers) {
        g.dw.emplace_back(l.w.rows, l.w.cols);
        g.db.emplace_back(l.b.size(), 0.0);
    }
    g.dx = Vec(net.input_dim(), 0.0);
    return g;
}

// Reverse-mode gradients of a scalar loss given dL/dy. Also returns dL/dx.
inline DenseGrads dense_backward(const DenseNet& net, const DenseCache& cache, const Vec& grad_out) {
    if (cache.pre.size() != net.layers.size())
        throw std::invalid_argument("dense_backward: cache does not match net");
    if (grad_out.size() != net.output_dim())
        throw std::invalid_argument("dense_backward: grad dimension mismatch");
    DenseGrads g = zero_grads(net);
    Vec dy = grad_out;
    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const auto& l = net.layers[li];
        Vec da(dy.size());
        for (std::size_t i = 0; i < dy.size(); ++i)
            da[i] = dy[i] * act_grad(l.act, cache.pre[li][i], cache.post[li][i]);
        const Vec& layer_in = (li == 0) ? cache.input : cache.post[li - 1];
        add_outer(g.dw[li], da, layer_in);
        add_to(g.db[li], da);
        dy = matvec_t(l.w, da);
    }
    g.dx = dy;
    return g;
}

// accumulate: a += b (same structure)
inline void accumulate(DenseGrads& a, const DenseGrads& b) {
    for (std::size_t l = 0; l < a.dw.size(); ++l) {
        add_to(a.dw[l].data, b.dw[l].data);
        add_to(a.db[l], b.db[l]);
    }
}

inline void scale(DenseGrads& g, double s) {
    for (auto& m : g.dw)
        for (auto& x : m.data) x *= s;
    for (auto& v : g.db)
        for (auto& x : v) x *= s;
}

// ---------------------------------------------------------------------------
// GRU cell.
//   z_t = sigmoid(Wz x_t + Uz h_{t-1} + bz)
//   r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)
//   n_t = tanh(Wn x_t + Un (r_t . h_{t-1}) + bn)
//   h_t = (1 - z_t) . n_t + z_t . h_{t-1}
// Backward is full backprop-through-time.
// ---------------------------------------------------------------------------

struct GruCell {
    std::size_t in_dim = 0, hidden = 0;
    Matrix wz, uz;
    Vec bz;
    Matrix wr, ur;
    Vec br;
    Matrix wn, un;
    Vec bn;

    std::size_t param_count() const {
        return 3 * (hidden * in_dim + hidden * hidden + hidden);
    }

    std::vector<std::span<double>> param_views() {
        return {wz.data, uz.data, bz, wr.data, ur.data, br, wn.data, un.data, bn};
    }
    std::vector<std::span<const double>> param_views() const {
        return {wz.data, uz.data, bz, wr.data, ur.data, br, wn.data, un.data, bn};
    }
};

inline GruCell make_gru(std::size_t in_dim, std::size_t hidden, Rng& rng) {
    GruCell c;
    c.in_dim = in_dim;
    c.hidden = hidden;
    auto init_m = [&](Matrix& m, std::size_t r, std::size_t cl) {
        m = Matrix(r, cl);
        double bound = 1.0 / std::sqrt(static_cast<double>(cl));
        for (auto& x : m.data) x = rng.uniform(-bound, bound);
    };
    auto init_v = [&](Vec& v, std::size_t n, std::size_t fan_in) {
        v.assign(n, 0.0);
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& x : v) x = rng.uniform(-bound, bound);
    };
    init_m(c.wz, hidden, in_dim);
    init_m(c.uz, hidden, hidden);
    init_v(c.bz, hidden, in_dim);
    init_m(c.wr, hidden, in_dim);
    init_m(c.ur, hidden, hidden);
    init_v(c.br, hidden, in_dim);
    init_m(c.wn, hidden, in_dim);
    init_m(c.un, hidden, hidden);
    init_v(c.bn, hidden, in_dim);
    return c;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct GruCache {
    std::vector<Vec> x;      // inputs, one per step
    std::vector<Vec> h;      // h[0] = h0, h[t+1] = state after step t
    std::vector<Vec> z, r, n, rh;  // per step; rh = r . h_prev
};

inline Vec gru_forward(const GruCell& c, const std::vector<Vec>& seq, GruCache* cache = nullptr) {
    if (seq.empty()) throw std::invalid_argument("gru_forward: empty sequence");
    Vec h(c.hidden, 0.0);
    if (cache) {
        *cache = GruCache{};
        cache->h.push_back(h);
    }
    for (const auto& x : seq) {
        if (x.size() != c.in_dim) throw std::invalid_argument("gru_forward: input dimension mismatch");
        Vec z = matvec(c.wz, x), zt = matvec(c.uz, h);
        Vec r = matvec(c.wr, x), rt = matvec(c.ur, h);
        for (std::size_t i = 0; i < c.hidden; ++i) {
            z[i] = sigmoid(z[i] + zt[i] + c.bz[i]);
            r[i] = sigmoid(r[i] + rt[i] + c.br[i]);
        }
        Vec rh(c.hidden);
        for (std::size_t i = 0; i < c.hidden; ++i) rh[i] = r[i] * h[i];
        Vec n = matvec(c.wn, x), nt = matvec(c.un, rh);
        for (std::size_t i = 0; i < c.hidden; ++i) n[i] = std::tanh(n[i] + nt[i] + c.bn[i]);
        Vec h_new(c.hidden);
        for (std::size_t i = 0; i < c.hidden; ++i)
            h_new[i] = (1.0 - z[i]) * n[i] + z[i] * h[i];
        if (cache) {
            cache->x.push_back(x);
            cache->z.push_back(z);
            cache->r.push_back(r);
            cache->n.push_back(n);
            cache->rh.push_back(rh);
            cache->h.push_back(h_new);
        }
        h = std::move(h_new);
    }
    return h;
}

struct GruGrads {
    Matrix dwz, duz;
    Vec dbz;
    Matrix dwr, dur;
    Vec dbr;
    Matrix dwn, dun;
    Vec dbn;
    std::vector<Vec> dx;
    Vec dh0;

    std::vector<std::span<const double>> grad_views() const {
        return {dwz.data, duz.data, dbz, dwr.data, dur.data, dbr, dwn.data, dun.data, dbn};
    }
};

inline GruGrads zero_grads(const GruCell& c) {
    GruGrads g;
    g.dwz = Matrix(c.hidden, c.in_dim);
    g.duz = Matrix(c.hidden, c.hidden);
    g.dbz = Vec(c.hidden, 0.0);
    g.dwr = Matrix(c.hidden, c.in_dim);
    g.dur = Matrix(c.hidden, c.hidden);
    g.dbr = Vec(c.hidden, 0.0);
    g.dwn = Matrix(c.hidden, c.in_dim);
    g.dun = Matrix(c.hidden, c.hidden);
    g.dbn = Vec(c.hidden, 0.0);
    g.dh0 = Vec(c.hidden, 0.0);
    return g;
}

inline GruGrads gru_backward(const GruCell& c, const GruCache& cache, const Vec& grad_h) {
    if (cache.x.empty()) throw std::invalid_argument("gru_backward: empty cache");
    if (grad_h.size() != c.hidden) throw std::invalid_argument("gru_backward: grad dimension mismatch");
    GruGrads g = zero_grads(c);
    g.dx.assign(cache.x.size(), Vec(c.in_dim, 0.0));
    Vec dh = grad_h;
    for (std::size_t t = cache.x.size(); t-- > 0;) {
        const Vec& h_prev = cache.h[t];
        const Vec& z = cache.z[t];
        const Vec& r = cache.r[t];
        const Vec& n = cache.n[t];
        const Vec& rh = cache.rh[t];
        const Vec& x = cache.x[t];

        Vec dz(c.hidden), dn_pre(c.hidden), dh_prev(c.hidden);
        for (std::size_t i = 0; i < c.hidden; ++i) {
            double dz_post = dh[i] * (h_prev[i] - n[i]);
            dz[i] = dz_post * z[i] * (1.0 - z[i]);           // through sigmoid
            dn_pre[i] = dh[i] * (1.0 - z[i]) * (1.0 - n[i] * n[i]);  // through tanh
            dh_prev[i] = dh[i] * z[i];
        }

        // candidate branch
        add_outer(g.dwn, dn_pre, x);
        add_outer(g.dun, dn_pre, rh);
        add_to(g.dbn, dn_pre);
        Vec drh = matvec_t(c.un, dn_pre);
        Vec dr(c.hidden);
        for (std::size_t i = 0; i < c.hidden; ++i) {
            dr[i] = drh[i] * h_prev[i] * r[i] * (1.0 - r[i]);  // through sigmoid
            dh_prev[i] += drh[i] * r[i];
        }

        // reset gate
        add_outer(g.dwr, dr, x);
        add_outer(g.dur, dr, h_prev);
        add_to(g.dbr, dr);
        add_to(dh_prev, matvec_t(c.ur, dr));

        // update gate
        add_outer(g.dwz, dz, x);
        add_outer(g.duz, dz, h_prev);
        add_to(g.dbz, dz);
        add_to(dh_prev, matvec_t(c.uz, dz));

        // input
        Vec dx = matvec_t(c.wn, dn_pre);
        add_to(dx, matvec_t(c.wr, dr));
        add_to(dx, matvec_t(c.wz, dz));
        g.dx[t] = std::move(dx);

        dh = std::move(dh_prev);
    }
    g.dh0 = dh;
    return g;
}

// ---------------------------------------------------------------------------
// Parameter updates.
// ---------------------------------------------------------------------------

using ParamView = std::vector<std::span<double>>;
using GradView = std::vector<std::span<const double>>;

inline std::size_t total_size(const GradView& g) {
    std::size_t n = 0;
    for (const auto& s : g) n += s.size();
    return n;
}

inline void check_shapes(const ParamView& p, const GradView& g) {
    if (p.size() != g.size()) throw std::invalid_argument("update: shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i].size() != g[i].size()) throw std::invalid_argument("update: shape mismatch");
}

inline void sgd_step(ParamView params, const GradView& grads, double lr) {
    check_shapes(params, grads);
    for (std::size_t c = 0; c < params.size(); ++c)
        for (std::size_t i = 0; i < params[c].size(); ++i)
            params[c][i] -= lr * grads[c][i];
}

struct AdamState {
    Vec m, v;
    long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

inline void adam_step(ParamView params, const GradView& grads, AdamState& st, double lr) {
    check_shapes(params, grads);
    std::size_t n = total_size(grads);
    if (st.m.empty()) {
        st.m.assign(n, 0.0);
        st.v.assign(n, 0.0);
    }
    if (st.m.size() != n) throw std::invalid_argument("adam_step: state size mismatch");
    ++st.t;
    double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    std::size_t k = 0;
    for (std::size_t c = 0; c < params.size(); ++c) {
        for (std::size_t i = 0; i < params[c].size(); ++i, ++k) {
            double gr = grads[c][i];
            st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * gr;
            st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * gr * gr;
            double mh = st.m[k] / bc1;
            double vh = st.v[k] / bc2;
            params[c][i] -= lr * mh / (std::sqrt(vh) + st.eps);
        }
    }
}

// Scale a gradient set so its global L2 norm does not exceed max_norm.
inline void clip_grad_norm(std::vector<Matrix*> mats, std::vector<Vec*> vecs, double max_norm) {
    double sq = 0.0;
    for (auto* m : mats)
        for (double v : m->data) sq += v * v;
    for (auto* v : vecs)
        for (double x : *v) sq += x * x;
    double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    double s = max_norm / norm;
    for (auto* m : mats)
        for (double& v : m->data) v *= s;
    for (auto* v : vecs)
        for (double& x : *v) x *= s;
}

inline void clip_grad_norm(DenseGrads& g, double max_norm) {
    std::vector<Matrix*> mats;
    std::vector<Vec*> vecs;
    for (auto& m : g.dw) mats.push_back(&m);
    for (auto& v : g.db) vecs.push_back(&v);
    clip_grad_norm(mats, vecs, max_norm);
}

// Polyak average: target <- rho * target + (1 - rho) * online.
inline void soft_update(ParamView target, const GradView& online, double rho) {
    check_shapes(target, online);
    for (std::size_t c = 0; c < target.size(); ++c)
        for (std::size_t i = 0; i < target[c].size(); ++i)
            target[c][i] = rho * target[c][i] + (1.0 - rho) * online[c][i];
}

// ---------------------------------------------------------------------------
// Checkpoints: text, first line dimensions, then one line per tensor,
// row-major. Values round-trip bit-exactly.
// ---------------------------------------------------------------------------

inline void save_dense(std::ostream& os, const DenseNet& net) {
    os << "dense " << net.layers.size();
    os << ' ' << net.input_dim();
    for (const auto& l : net.layers) os << ' ' << l.w.rows;
    for (const auto& l : net.layers) os << ' ' << activation_code(l.act);
    os << '\n';
    for (const auto& l : net.layers) {
        write_values(os, l.w.data.data(), l.w.data.size());
        write_values(os, l.b.data(), l.b.size());
    }
}

inline DenseNet load_dense(std::istream& is) {
    std::string tag;
    std::size_t nlayers = 0;
    if (!(is >> tag >> nlayers) || tag != "dense")
        throw std::runtime_error("checkpoint: expected dense header");
    std::vector<std::size_t> dims(nlayers + 1);
    for (auto& d : dims)
        if (!(is >> d)) throw std::runtime_error("checkpoint: bad dimensions");
    std::vector<Activation> acts(nlayers);
    for (auto& a : acts) {
        char c;
        if (!(is >> c)) throw std::runtime_error("checkpoint: bad activations");
        a = activation_from_code(c);
    }
    DenseNet net;
    for (std::size_t l = 0; l < nlayers; ++l) {
        DenseLayer layer;
        layer.w = Matrix(dims[l + 1], dims[l]);
        layer.b = Vec(dims[l + 1], 0.0);
        layer.act = acts[l];
        read_values(is, layer.w.data.data(), layer.w.data.size());
        read_values(is, layer.b.data(), layer.b.size());
        net.layers.push_back(std::move(layer));
    }
    return net;
}

inline void save_gru(std::ostream& os, const GruCell& c) {
    os << "gru " << c.in_dim << ' ' << c.hidden << '\n';
    for (auto view : c.param_views()) write_values(os, view.data(), view.size());
}

inline GruCell load_gru(std::istream& is) {
    std::string tag;
    std::size_t in_dim = 0, hidden = 0;
    if (!(is >> tag >> in_dim >> hidden) || tag != "gru")
        throw std::runtime_error("checkpoint: expected gru header");
    Rng dummy(0);
    GruCell c = make_gru(in_dim, hidden, dummy);
    for (auto view : c.param_views()) read_values(is, view.data(), view.size());
    return c;
}

} // namespace drpc
