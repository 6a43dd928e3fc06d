#include "clem/models/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include <omp.h>

#include "clem/error.hpp"
#include "clem/rng.hpp"

namespace clem {

namespace {

template <typename Real>
void linear_fwd(const Real* W, const Real* b, const Real* x, Real* y, int out, int in) {
    for (int o = 0; o < out; ++o) {
        Real s = b[o];
        const Real* w = W + std::size_t(o) * in;
        for (int i = 0; i < in; ++i) s += w[i] * x[i];
        y[o] = s;
    }
}

template <typename Real>
void linear_bwd(const Real* W, const Real* x, const Real* dy, Real* dW, Real* db, Real* dx,
                int out, int in) {
    for (int o = 0; o < out; ++o) {
        const Real d = dy[o];
        db[o] += d;
        Real* dw = dW + std::size_t(o) * in;
        for (int i = 0; i < in; ++i) dw[i] += d * x[i];
    }
    if (dx) {
        for (int o = 0; o < out; ++o) {
            const Real d = dy[o];
            const Real* w = W + std::size_t(o) * in;
            for (int i = 0; i < in; ++i) dx[i] += w[i] * d;
        }
    }
}

template <typename Real>
void layer_norm_fwd(const Real* x, const Real* gamma, const Real* beta, Real* y, Real& mu,
                    Real& rstd, int d) {
    Real m = 0;
    for (int i = 0; i < d; ++i) m += x[i];
    m /= Real(d);
    Real var = 0;
    for (int i = 0; i < d; ++i) {
        const Real c = x[i] - m;
        var += c * c;
    }
    var /= Real(d);
    const Real r = Real(1) / std::sqrt(var + Real(1e-5));
    for (int i = 0; i < d; ++i) y[i] = gamma[i] * (x[i] - m) * r + beta[i];
    mu = m;
    rstd = r;
}

template <typename Real>
void layer_norm_bwd(const Real* x, const Real* gamma, const Real* dy, Real mu, Real rstd,
                    Real* dgamma, Real* dbeta, Real* dx, int d) {
    Real m1 = 0, m2 = 0;
    for (int i = 0; i < d; ++i) {
        const Real xhat = (x[i] - mu) * rstd;
        const Real dxh = dy[i] * gamma[i];
        dgamma[i] += dy[i] * xhat;
        dbeta[i] += dy[i];
        m1 += dxh;
        m2 += dxh * xhat;
    }
    m1 /= Real(d);
    m2 /= Real(d);
    for (int i = 0; i < d; ++i) {
        const Real xhat = (x[i] - mu) * rstd;
        const Real dxh = dy[i] * gamma[i];
        dx[i] += rstd * (dxh - m1 - xhat * m2);
    }
}

template <typename Real>
Real gelu(Real x) {
    return Real(0.5) * x * (Real(1) + std::erf(x * Real(0.7071067811865475)));
}

template <typename Real>
Real gelu_grad(Real x) {
    const Real cdf = Real(0.5) * (Real(1) + std::erf(x * Real(0.7071067811865475)));
    const Real pdf = std::exp(Real(-0.5) * x * x) * Real(0.3989422804014327);
    return cdf + x * pdf;
}

} // namespace

template <typename Real>
struct Encoder<Real>::Workspace {
    int L = 0;
    std::vector<Real> x, h0, mu_e, rstd_e;
    struct LayerWs {
        std::vector<Real> q, k, v, A, ctx, a, mu1, rstd1, h1, u, g, bv, mu2, rstd2, h2;
    };
    std::vector<LayerWs> layers;
    const Real* h_last = nullptr;
};

template <typename Real>
Encoder<Real>::Encoder(const TransformerConfig& config, std::int32_t vocab_size)
    : cfg_(config), vocab_size_(vocab_size) {
    if (cfg_.dim % cfg_.heads != 0) throw ConfigError("transformer: dim must be divisible by heads");
    if (!(cfg_.mask_rate > 0.0 && cfg_.mask_rate < 1.0))
        throw ConfigError("transformer: mask_rate must lie in (0,1)");
    const std::size_t V = static_cast<std::size_t>(vocab_size);
    const std::size_t D = static_cast<std::size_t>(cfg_.dim);
    const std::size_t F = static_cast<std::size_t>(cfg_.ffn);
    std::size_t c = 0;
    auto take = [&](std::size_t count) {
        std::size_t at = c;
        c += count;
        return at;
    };
    layout_.tok_emb = take(V * D);
    layout_.pos_emb = take(static_cast<std::size_t>(cfg_.max_len) * D);
    layout_.ln_e_g = take(D);
    layout_.ln_e_b = take(D);
    for (int l = 0; l < cfg_.layers; ++l) {
        typename Layout::Layer lay;
        lay.wq = take(D * D);
        lay.bq = take(D);
        lay.wk = take(D * D);
        lay.bk = take(D);
        lay.wv = take(D * D);
        lay.bv = take(D);
        lay.wo = take(D * D);
        lay.bo = take(D);
        lay.ln1_g = take(D);
        lay.ln1_b = take(D);
        lay.w1 = take(F * D);
        lay.b1 = take(F);
        lay.w2 = take(D * F);
        lay.b2 = take(D);
        lay.ln2_g = take(D);
        lay.ln2_b = take(D);
        layout_.layers.push_back(lay);
    }
    layout_.dec_w = take(V * D);
    layout_.dec_b = take(V);
    layout_.cls_w = take(D);
    layout_.cls_b = take(1);
    layout_.total = c;
    params_.assign(c, Real(0));
}

template <typename Real>
void Encoder<Real>::init_params(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params_) p = Real(rng.normal() * 0.02);
    const std::size_t D = static_cast<std::size_t>(cfg_.dim);
    auto ones = [&](std::size_t at, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) params_[at + i] = Real(1);
    };
    auto zeros = [&](std::size_t at, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) params_[at + i] = Real(0);
    };
    ones(layout_.ln_e_g, D);
    zeros(layout_.ln_e_b, D);
    for (const auto& lay : layout_.layers) {
        ones(lay.ln1_g, D);
        zeros(lay.ln1_b, D);
        ones(lay.ln2_g, D);
        zeros(lay.ln2_b, D);
        zeros(lay.bq, D);
        zeros(lay.bk, D);
        zeros(lay.bv, D);
        zeros(lay.bo, D);
        zeros(lay.b1, static_cast<std::size_t>(cfg_.ffn));
        zeros(lay.b2, D);
    }
    zeros(layout_.dec_b, static_cast<std::size_t>(vocab_size_));
    zeros(layout_.cls_b, 1);
}

template <typename Real>
void Encoder<Real>::forward(std::span<const std::int32_t> ids, Workspace& ws) const {
    const int L = static_cast<int>(ids.size());
    if (L == 0) throw Error("transformer: empty sequence");
    if (L > cfg_.max_len)
        throw Error("transformer: sequence length " + std::to_string(L) + " exceeds max_len " +
                    std::to_string(cfg_.max_len) + " (must be pre-truncated)");
    const int D = cfg_.dim;
    const int F = cfg_.ffn;
    const int H = cfg_.heads;
    const int Dh = D / H;
    const Real* P = params_.data();

    ws.L = L;
    ws.x.assign(std::size_t(L) * D, Real(0));
    ws.h0.assign(std::size_t(L) * D, Real(0));
    ws.mu_e.assign(static_cast<std::size_t>(L), Real(0));
    ws.rstd_e.assign(static_cast<std::size_t>(L), Real(0));
    ws.layers.resize(static_cast<std::size_t>(cfg_.layers));

    for (int t = 0; t < L; ++t) {
        const std::int32_t id = ids[static_cast<std::size_t>(t)];
        if (id < 0 || id >= vocab_size_) throw Error("transformer: token id out of range");
        const Real* te = P + layout_.tok_emb + std::size_t(id) * D;
        const Real* pe = P + layout_.pos_emb + std::size_t(t) * D;
        Real* x = ws.x.data() + std::size_t(t) * D;
        for (int i = 0; i < D; ++i) x[i] = te[i] + pe[i];
        layer_norm_fwd(x, P + layout_.ln_e_g, P + layout_.ln_e_b, ws.h0.data() + std::size_t(t) * D,
                       ws.mu_e[static_cast<std::size_t>(t)], ws.rstd_e[static_cast<std::size_t>(t)], D);
    }

    const Real inv_sqrt_dh = Real(1) / std::sqrt(Real(Dh));
    const Real* hin = ws.h0.data();
    for (int l = 0; l < cfg_.layers; ++l) {
        auto& lw = ws.layers[static_cast<std::size_t>(l)];
        const auto& lay = layout_.layers[static_cast<std::size_t>(l)];
        lw.q.assign(std::size_t(L) * D, Real(0));
        lw.k.assign(std::size_t(L) * D, Real(0));
        lw.v.assign(std::size_t(L) * D, Real(0));
        lw.A.assign(std::size_t(H) * L * L, Real(0));
        lw.ctx.assign(std::size_t(L) * D, Real(0));
        lw.a.assign(std::size_t(L) * D, Real(0));
        lw.mu1.assign(static_cast<std::size_t>(L), Real(0));
        lw.rstd1.assign(static_cast<std::size_t>(L), Real(0));
        lw.h1.assign(std::size_t(L) * D, Real(0));
        lw.u.assign(std::size_t(L) * F, Real(0));
        lw.g.assign(std::size_t(L) * F, Real(0));
        lw.bv.assign(std::size_t(L) * D, Real(0));
        lw.mu2.assign(static_cast<std::size_t>(L), Real(0));
        lw.rstd2.assign(static_cast<std::size_t>(L), Real(0));
        lw.h2.assign(std::size_t(L) * D, Real(0));

        for (int t = 0; t < L; ++t) {
            const Real* h = hin + std::size_t(t) * D;
            linear_fwd(P + lay.wq, P + lay.bq, h, lw.q.data() + std::size_t(t) * D, D, D);
            linear_fwd(P + lay.wk, P + lay.bk, h, lw.k.data() + std::size_t(t) * D, D, D);
            linear_fwd(P + lay.wv, P + lay.bv, h, lw.v.data() + std::size_t(t) * D, D, D);
        }

        std::vector<Real> scores(static_cast<std::size_t>(L));
        for (int hd = 0; hd < H; ++hd) {
            const int off = hd * Dh;
            Real* Ahd = lw.A.data() + std::size_t(hd) * L * L;
            for (int t1 = 0; t1 < L; ++t1) {
                const Real* qv = lw.q.data() + std::size_t(t1) * D + off;
                Real maxs = -std::numeric_limits<Real>::infinity();
                for (int t2 = 0; t2 < L; ++t2) {
                    const Real* kv = lw.k.data() + std::size_t(t2) * D + off;
                    Real s = 0;
                    for (int i = 0; i < Dh; ++i) s += qv[i] * kv[i];
                    s *= inv_sqrt_dh;
                    scores[static_cast<std::size_t>(t2)] = s;
                    maxs = std::max(maxs, s);
                }
                Real denom = 0;
                Real* arow = Ahd + std::size_t(t1) * L;
                for (int t2 = 0; t2 < L; ++t2) {
                    const Real e = std::exp(scores[static_cast<std::size_t>(t2)] - maxs);
                    arow[t2] = e;
                    denom += e;
                }
                const Real inv = Real(1) / denom;
                for (int t2 = 0; t2 < L; ++t2) arow[t2] *= inv;
                Real* cv = lw.ctx.data() + std::size_t(t1) * D + off;
                for (int t2 = 0; t2 < L; ++t2) {
                    const Real a = arow[t2];
                    const Real* vv = lw.v.data() + std::size_t(t2) * D + off;
                    for (int i = 0; i < Dh; ++i) cv[i] += a * vv[i];
                }
            }
        }

        for (int t = 0; t < L; ++t) {
            const Real* h = hin + std::size_t(t) * D;
            Real* a = lw.a.data() + std::size_t(t) * D;
            linear_fwd(P + lay.wo, P + lay.bo, lw.ctx.data() + std::size_t(t) * D, a, D, D);
            for (int i = 0; i < D; ++i) a[i] += h[i];
            layer_norm_fwd(a, P + lay.ln1_g, P + lay.ln1_b, lw.h1.data() + std::size_t(t) * D,
                           lw.mu1[static_cast<std::size_t>(t)], lw.rstd1[static_cast<std::size_t>(t)], D);

            Real* u = lw.u.data() + std::size_t(t) * F;
            Real* g = lw.g.data() + std::size_t(t) * F;
            linear_fwd(P + lay.w1, P + lay.b1, lw.h1.data() + std::size_t(t) * D, u, F, D);
            for (int i = 0; i < F; ++i) g[i] = gelu(u[i]);
            Real* bv = lw.bv.data() + std::size_t(t) * D;
            linear_fwd(P + lay.w2, P + lay.b2, g, bv, D, F);
            const Real* h1 = lw.h1.data() + std::size_t(t) * D;
            for (int i = 0; i < D; ++i) bv[i] += h1[i];
            layer_norm_fwd(bv, P + lay.ln2_g, P + lay.ln2_b, lw.h2.data() + std::size_t(t) * D,
                           lw.mu2[static_cast<std::size_t>(t)], lw.rstd2[static_cast<std::size_t>(t)], D);
        }
        hin = lw.h2.data();
    }
    ws.h_last = hin;
}

template <typename Real>
void Encoder<Real>::backward(const Workspace& ws, std::span<const std::int32_t> ids, Real scale,
                             std::span<Real> d_hlast, std::span<Real> grads) const {
    const int L = ws.L;
    const int D = cfg_.dim;
    const int F = cfg_.ffn;
    const int H = cfg_.heads;
    const int Dh = D / H;
    const Real inv_sqrt_dh = Real(1) / std::sqrt(Real(Dh));
    const Real* P = params_.data();
    Real* G = grads.data();
    (void)scale; // d_hlast arrives already scaled

    std::vector<Real> dh(d_hlast.begin(), d_hlast.end()); // dL/d h2 of current layer
    std::vector<Real> da(std::size_t(L) * D), dbv(std::size_t(L) * D), dh1(std::size_t(L) * D);
    std::vector<Real> du(std::size_t(L) * F), dg(std::size_t(L) * F);
    std::vector<Real> dq(std::size_t(L) * D), dk(std::size_t(L) * D), dv(std::size_t(L) * D);
    std::vector<Real> dctx(std::size_t(L) * D), dhin(std::size_t(L) * D);
    std::vector<Real> dA(static_cast<std::size_t>(L));
    std::vector<Real> ds(static_cast<std::size_t>(L));

    for (int l = cfg_.layers - 1; l >= 0; --l) {
        const auto& lw = ws.layers[static_cast<std::size_t>(l)];
        const auto& lay = layout_.layers[static_cast<std::size_t>(l)];
        const Real* hin = l == 0 ? ws.h0.data() : ws.layers[static_cast<std::size_t>(l - 1)].h2.data();

        std::fill(da.begin(), da.end(), Real(0));
        std::fill(dbv.begin(), dbv.end(), Real(0));
        std::fill(dh1.begin(), dh1.end(), Real(0));
        std::fill(du.begin(), du.end(), Real(0));
        std::fill(dg.begin(), dg.end(), Real(0));
        std::fill(dq.begin(), dq.end(), Real(0));
        std::fill(dk.begin(), dk.end(), Real(0));
        std::fill(dv.begin(), dv.end(), Real(0));
        std::fill(dctx.begin(), dctx.end(), Real(0));
        std::fill(dhin.begin(), dhin.end(), Real(0));

        for (int t = 0; t < L; ++t) {
            // LN2 <- dh
            layer_norm_bwd(lw.bv.data() + std::size_t(t) * D, P + lay.ln2_g,
                           dh.data() + std::size_t(t) * D, lw.mu2[static_cast<std::size_t>(t)],
                           lw.rstd2[static_cast<std::size_t>(t)], G + lay.ln2_g, G + lay.ln2_b,
                           dbv.data() + std::size_t(t) * D, D);
            // bv = h1 + W2 g + b2
            const Real* dbv_t = dbv.data() + std::size_t(t) * D;
            Real* dh1_t = dh1.data() + std::size_t(t) * D;
            for (int i = 0; i < D; ++i) dh1_t[i] += dbv_t[i];
            linear_bwd(P + lay.w2, lw.g.data() + std::size_t(t) * F, dbv_t, G + lay.w2, G + lay.b2,
                       dg.data() + std::size_t(t) * F, D, F);
            const Real* u = lw.u.data() + std::size_t(t) * F;
            Real* du_t = du.data() + std::size_t(t) * F;
            const Real* dg_t = dg.data() + std::size_t(t) * F;
            for (int i = 0; i < F; ++i) du_t[i] = dg_t[i] * gelu_grad(u[i]);
            linear_bwd(P + lay.w1, lw.h1.data() + std::size_t(t) * D, du_t, G + lay.w1, G + lay.b1,
                       dh1_t, F, D);
            // LN1 <- dh1
            layer_norm_bwd(lw.a.data() + std::size_t(t) * D, P + lay.ln1_g, dh1_t,
                           lw.mu1[static_cast<std::size_t>(t)], lw.rstd1[static_cast<std::size_t>(t)],
                           G + lay.ln1_g, G + lay.ln1_b, da.data() + std::size_t(t) * D, D);
            // a = hin + Wo ctx + bo
            const Real* da_t = da.data() + std::size_t(t) * D;
            Real* dhin_t = dhin.data() + std::size_t(t) * D;
            for (int i = 0; i < D; ++i) dhin_t[i] += da_t[i];
            linear_bwd(P + lay.wo, lw.ctx.data() + std::size_t(t) * D, da_t, G + lay.wo, G + lay.bo,
                       dctx.data() + std::size_t(t) * D, D, D);
        }

        // attention backward per head
        for (int hd = 0; hd < H; ++hd) {
            const int off = hd * Dh;
            const Real* Ahd = lw.A.data() + std::size_t(hd) * L * L;
            for (int t1 = 0; t1 < L; ++t1) {
                const Real* arow = Ahd + std::size_t(t1) * L;
                const Real* dctx_t = dctx.data() + std::size_t(t1) * D + off;
                Real dot = 0;
                for (int t2 = 0; t2 < L; ++t2) {
                    const Real* vv = lw.v.data() + std::size_t(t2) * D + off;
                    Real s = 0;
                    for (int i = 0; i < Dh; ++i) s += dctx_t[i] * vv[i];
                    dA[static_cast<std::size_t>(t2)] = s;
                    dot += s * arow[t2];
                    Real* dv_t = dv.data() + std::size_t(t2) * D + off;
                    const Real a = arow[t2];
                    for (int i = 0; i < Dh; ++i) dv_t[i] += a * dctx_t[i];
                }
                for (int t2 = 0; t2 < L; ++t2)
                    ds[static_cast<std::size_t>(t2)] =
                        arow[t2] * (dA[static_cast<std::size_t>(t2)] - dot);
                Real* dq_t = dq.data() + std::size_t(t1) * D + off;
                for (int t2 = 0; t2 < L; ++t2) {
                    const Real d = ds[static_cast<std::size_t>(t2)] * inv_sqrt_dh;
                    const Real* kv = lw.k.data() + std::size_t(t2) * D + off;
                    Real* dk_t = dk.data() + std::size_t(t2) * D + off;
                    const Real* qv = lw.q.data() + std::size_t(t1) * D + off;
                    for (int i = 0; i < Dh; ++i) {
                        dq_t[i] += d * kv[i];
                        dk_t[i] += d * qv[i];
                    }
                }
            }
        }

        for (int t = 0; t < L; ++t) {
            const Real* h = hin + std::size_t(t) * D;
            Real* dhin_t = dhin.data() + std::size_t(t) * D;
            linear_bwd(P + lay.wq, h, dq.data() + std::size_t(t) * D, G + lay.wq, G + lay.bq,
                       dhin_t, D, D);
            linear_bwd(P + lay.wk, h, dk.data() + std::size_t(t) * D, G + lay.wk, G + lay.bk,
                       dhin_t, D, D);
            linear_bwd(P + lay.wv, h, dv.data() + std::size_t(t) * D, G + lay.wv, G + lay.bv,
                       dhin_t, D, D);
        }
        dh = dhin;
    }

    // embedding layer norm + token/position embeddings
    for (int t = 0; t < L; ++t) {
        std::vector<Real> dx(static_cast<std::size_t>(D), Real(0));
        layer_norm_bwd(ws.x.data() + std::size_t(t) * D, P + layout_.ln_e_g,
                       dh.data() + std::size_t(t) * D, ws.mu_e[static_cast<std::size_t>(t)],
                       ws.rstd_e[static_cast<std::size_t>(t)], G + layout_.ln_e_g,
                       G + layout_.ln_e_b, dx.data(), D);
        const std::int32_t id = ids[static_cast<std::size_t>(t)];
        Real* gte = G + layout_.tok_emb + std::size_t(id) * D;
        Real* gpe = G + layout_.pos_emb + std::size_t(t) * D;
        for (int i = 0; i < D; ++i) {
            gte[i] += dx[static_cast<std::size_t>(i)];
            gpe[i] += dx[static_cast<std::size_t>(i)];
        }
    }
}

template <typename Real>
double Encoder<Real>::mlm_loss(std::span<const std::int32_t> input_ids,
                               std::span<const std::int32_t> targets,
                               std::span<const std::uint8_t> selected) const {
    Workspace ws;
    forward(input_ids, ws);
    const int L = ws.L;
    const int D = cfg_.dim;
    const std::size_t V = static_cast<std::size_t>(vocab_size_);
    const Real* P = params_.data();
    std::vector<Real> logits(V);
    double loss = 0;
    for (int t = 0; t < L; ++t) {
        if (!selected[static_cast<std::size_t>(t)]) continue;
        linear_fwd(P + layout_.dec_w, P + layout_.dec_b, ws.h_last + std::size_t(t) * D,
                   logits.data(), static_cast<int>(V), D);
        Real maxv = logits[0];
        for (std::size_t i = 1; i < V; ++i) maxv = std::max(maxv, logits[i]);
        double denom = 0;
        for (std::size_t i = 0; i < V; ++i) denom += std::exp(double(logits[i] - maxv));
        const auto tgt = static_cast<std::size_t>(targets[static_cast<std::size_t>(t)]);
        loss += std::log(denom) - double(logits[tgt] - maxv);
    }
    return loss;
}

template <typename Real>
double Encoder<Real>::mlm_loss_grad(std::span<const std::int32_t> input_ids,
                                    std::span<const std::int32_t> targets,
                                    std::span<const std::uint8_t> selected, Real scale,
                                    std::span<Real> grads) const {
    Workspace ws;
    forward(input_ids, ws);
    const int L = ws.L;
    const int D = cfg_.dim;
    const std::size_t V = static_cast<std::size_t>(vocab_size_);
    const Real* P = params_.data();
    Real* G = grads.data();

    std::vector<Real> logits(V), probs(V);
    std::vector<Real> d_hlast(std::size_t(L) * D, Real(0));
    double loss = 0;
    for (int t = 0; t < L; ++t) {
        if (!selected[static_cast<std::size_t>(t)]) continue;
        const Real* h = ws.h_last + std::size_t(t) * D;
        linear_fwd(P + layout_.dec_w, P + layout_.dec_b, h, logits.data(), static_cast<int>(V), D);
        Real maxv = logits[0];
        for (std::size_t i = 1; i < V; ++i) maxv = std::max(maxv, logits[i]);
        double denom = 0;
        for (std::size_t i = 0; i < V; ++i) denom += std::exp(double(logits[i] - maxv));
        const auto tgt = static_cast<std::size_t>(targets[static_cast<std::size_t>(t)]);
        loss += std::log(denom) - double(logits[tgt] - maxv);
        const double inv = 1.0 / denom;
        for (std::size_t i = 0; i < V; ++i)
            probs[i] = Real(std::exp(double(logits[i] - maxv)) * inv);
        probs[tgt] -= Real(1);
        // dec head backward; dlogits = probs * scale
        Real* dh = d_hlast.data() + std::size_t(t) * D;
        for (std::size_t o = 0; o < V; ++o) {
            const Real d = probs[o] * scale;
            if (d == Real(0)) continue;
            G[layout_.dec_b + o] += d;
            Real* dw = G + layout_.dec_w + o * D;
            const Real* w = P + layout_.dec_w + o * D;
            for (int i = 0; i < D; ++i) {
                dw[i] += d * h[i];
                dh[i] += w[i] * d;
            }
        }
    }
    backward(ws, input_ids, scale, d_hlast, grads);
    return loss;
}

template <typename Real>
double Encoder<Real>::cls_prob(std::span<const std::int32_t> ids) const {
    Workspace ws;
    forward(ids, ws);
    const int D = cfg_.dim;
    const Real* P = params_.data();
    Real z = P[layout_.cls_b];
    const Real* w = P + layout_.cls_w;
    for (int i = 0; i < D; ++i) z += w[i] * ws.h_last[i];
    return 1.0 / (1.0 + std::exp(-double(z)));
}

template <typename Real>
double Encoder<Real>::cls_loss(std::span<const std::int32_t> ids, int label) const {
    Workspace ws;
    forward(ids, ws);
    const int D = cfg_.dim;
    const Real* P = params_.data();
    Real z = P[layout_.cls_b];
    const Real* w = P + layout_.cls_w;
    for (int i = 0; i < D; ++i) z += w[i] * ws.h_last[i];
    const double zd = double(z);
    return std::log1p(std::exp(-std::abs(zd))) + std::max(zd, 0.0) - zd * label;
}

template <typename Real>
double Encoder<Real>::cls_loss_grad(std::span<const std::int32_t> ids, int label, Real scale,
                                    std::span<Real> grads) const {
    Workspace ws;
    forward(ids, ws);
    const int L = ws.L;
    const int D = cfg_.dim;
    const Real* P = params_.data();
    Real* G = grads.data();
    Real z = P[layout_.cls_b];
    const Real* w = P + layout_.cls_w;
    for (int i = 0; i < D; ++i) z += w[i] * ws.h_last[i];
    const double zd = double(z);
    const double loss = std::log1p(std::exp(-std::abs(zd))) + std::max(zd, 0.0) - zd * label;
    const Real dz = Real((1.0 / (1.0 + std::exp(-zd)) - label)) * scale;

    std::vector<Real> d_hlast(std::size_t(L) * D, Real(0));
    G[layout_.cls_b] += dz;
    for (int i = 0; i < D; ++i) {
        G[layout_.cls_w + static_cast<std::size_t>(i)] += dz * ws.h_last[i];
        d_hlast[static_cast<std::size_t>(i)] += w[i] * dz;
    }
    backward(ws, ids, scale, d_hlast, grads);
    return loss;
}

template class Encoder<float>;
template class Encoder<double>;

// --- masking ---

MaskedSequence apply_mlm_masking(std::span<const std::int32_t> ids, double mask_rate,
                                 std::int32_t vocab_size, Rng& rng) {
    MaskedSequence ms;
    ms.input.assign(ids.begin(), ids.end());
    ms.target.assign(ids.begin(), ids.end());
    ms.selected.assign(ids.size(), 0);
    for (std::size_t t = 0; t < ids.size(); ++t) {
        const std::int32_t id = ids[t];
        if (id == kPadId || id == kClsId) continue;
        ms.n_maskable += 1;
        if (!rng.bernoulli(mask_rate)) continue;
        ms.selected[t] = 1;
        ms.n_selected += 1;
        const double u = rng.next_double();
        if (u < 0.8) {
            ms.input[t] = kMaskId;
        } else if (u < 0.9) {
            ms.input[t] = kNumSpecials +
                          static_cast<std::int32_t>(rng.bounded(
                              static_cast<std::uint64_t>(vocab_size - kNumSpecials)));
        } // else: left unchanged
    }
    return ms;
}

// --- Adam ---

namespace {

struct Adam {
    std::vector<float> m, v;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double b1p = 1.0, b2p = 1.0;

    explicit Adam(std::size_t n) : m(n, 0.0f), v(n, 0.0f) {}

    void step(std::span<float> p, std::span<const float> g, double lr) {
        b1p *= beta1;
        b2p *= beta2;
        const float c1 = float(1.0 - beta1);
        const float c2 = float(1.0 - beta2);
        const float corr1 = float(1.0 / (1.0 - b1p));
        const float corr2 = float(1.0 / (1.0 - b2p));
        const float lrf = float(lr);
        const float epsf = float(eps);
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] += c1 * (g[i] - m[i]);
            v[i] += c2 * (g[i] * g[i] - v[i]);
            p[i] -= lrf * (m[i] * corr1) / (std::sqrt(v[i] * corr2) + epsf);
        }
    }
};

constexpr std::uint64_t kInitStream = 0x500000000ULL;
constexpr std::uint64_t kOrderStream = 0x600000000ULL;
constexpr std::uint64_t kMaskStream = 0x700000000ULL;
constexpr std::uint64_t kFoldStream = 0x800000000ULL;

} // namespace

EncoderF pretrain_mlm(const std::vector<ClaimSequence>& sequences, const Vocabulary& vocab,
                      const TransformerConfig& cfg, MlmPretrainStats* stats) {
    if (sequences.empty()) throw Error("pretrain-mlm: empty corpus");
    EncoderF enc(cfg, vocab.size());
    enc.init_params(mix_seed(cfg.seed, kInitStream));

    std::vector<std::size_t> pool(sequences.size());
    std::iota(pool.begin(), pool.end(), std::size_t(0));
    if (cfg.pretrain_max_sequences > 0 &&
        static_cast<std::size_t>(cfg.pretrain_max_sequences) < pool.size()) {
        Rng rng(mix_seed(cfg.seed, kOrderStream));
        for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.bounded(i)]);
        pool.resize(static_cast<std::size_t>(cfg.pretrain_max_sequences));
        std::sort(pool.begin(), pool.end());
    }

    const int threads = std::max(1, cfg.threads);
    Adam adam(enc.n_params());
    std::vector<float> grads(enc.n_params(), 0.0f);
    std::vector<std::vector<float>> tgrads(static_cast<std::size_t>(threads));
    for (auto& g : tgrads) g.assign(enc.n_params(), 0.0f);

    MlmPretrainStats st;
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        std::vector<std::size_t> order = pool;
        {
            Rng rng(mix_seed(cfg.seed, kOrderStream + 1 + static_cast<std::uint64_t>(epoch)));
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[rng.bounded(i)]);
        }
        double epoch_loss = 0.0;
        long long epoch_sel = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
            const int bn = static_cast<int>(end - at);
            std::vector<MaskedSequence> batch(static_cast<std::size_t>(bn));
            int n_sel = 0;
            for (int b = 0; b < bn; ++b) {
                const std::size_t si = order[at + static_cast<std::size_t>(b)];
                Rng rng(mix_seed(cfg.seed, kMaskStream +
                                               std::uint64_t(epoch) * sequences.size() + si));
                batch[static_cast<std::size_t>(b)] =
                    apply_mlm_masking(sequences[si].ids, cfg.mask_rate, vocab.size(), rng);
                n_sel += batch[static_cast<std::size_t>(b)].n_selected;
                st.n_selected += batch[static_cast<std::size_t>(b)].n_selected;
                st.n_maskable += batch[static_cast<std::size_t>(b)].n_maskable;
            }
            if (n_sel == 0) continue;
            const float scale = 1.0f / float(n_sel);
            double batch_loss = 0.0;
#pragma omp parallel num_threads(threads) reduction(+ : batch_loss)
            {
                auto& tg = tgrads[static_cast<std::size_t>(omp_get_thread_num())];
                std::fill(tg.begin(), tg.end(), 0.0f);
#pragma omp for schedule(static)
                for (int b = 0; b < bn; ++b) {
                    const auto& ms = batch[static_cast<std::size_t>(b)];
                    if (ms.n_selected == 0) continue;
                    batch_loss += enc.mlm_loss_grad(ms.input, ms.target, ms.selected, scale, tg);
                }
            }
            std::fill(grads.begin(), grads.end(), 0.0f);
            for (int tid = 0; tid < threads; ++tid) {
                const auto& tg = tgrads[static_cast<std::size_t>(tid)];
                for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += tg[i];
            }
            adam.step(enc.params(), grads, cfg.pretrain_lr);
            epoch_loss += batch_loss;
            epoch_sel += n_sel;
        }
        st.epoch_loss.push_back(epoch_sel > 0 ? epoch_loss / double(epoch_sel) : 0.0);
    }
    st.mask_fraction = st.n_maskable > 0 ? double(st.n_selected) / double(st.n_maskable) : 0.0;
    if (stats) *stats = st;
    return enc;
}

// --- fine-tuning ---

MlmClassifierModel::MlmClassifierModel(std::shared_ptr<const Vocabulary> vocab,
                                       AgeBucketTable buckets, EncoderF encoder)
    : vocab_(std::move(vocab)), buckets_(std::move(buckets)), encoder_(std::move(encoder)) {}

double MlmClassifierModel::predict_proba(const PatientHistory& history) const {
    auto seq = tokenize_history(history, *vocab_,
                                static_cast<std::size_t>(encoder_.config().max_len), buckets_);
    return encoder_.cls_prob(seq.ids);
}

MlmClassifierModel finetune_classifier(EncoderF encoder,
                                       const std::vector<LabeledExample>& examples,
                                       const std::vector<std::size_t>& train_idx,
                                       std::shared_ptr<const Vocabulary> vocab,
                                       const AgeBucketTable& buckets, const TransformerConfig& cfg,
                                       FinetuneStats* stats) {
    if (train_idx.empty()) throw Error("finetune: empty training set");
    const int threads = std::max(1, cfg.threads);

    std::vector<std::vector<std::int32_t>> seqs(train_idx.size());
    std::vector<int> labels(train_idx.size());
    const std::int64_t n_all = static_cast<std::int64_t>(train_idx.size());
#pragma omp parallel for schedule(static) num_threads(threads)
    for (std::int64_t i = 0; i < n_all; ++i) {
        const auto& ex = examples[train_idx[static_cast<std::size_t>(i)]];
        seqs[static_cast<std::size_t>(i)] =
            tokenize_history(ex.history, *vocab, static_cast<std::size_t>(cfg.max_len), buckets)
                .ids;
        labels[static_cast<std::size_t>(i)] = ex.label == Label::Hospitalized ? 1 : 0;
    }

    // stratified validation fold for early stopping
    std::vector<std::size_t> fit, val;
    {
        std::vector<std::size_t> by_class[2];
        for (std::size_t i = 0; i < seqs.size(); ++i) by_class[labels[i]].push_back(i);
        for (int c = 0; c < 2; ++c) {
            auto& idx = by_class[c];
            Rng rng(mix_seed(cfg.seed, kFoldStream + static_cast<std::uint64_t>(c)));
            for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.bounded(i)]);
            std::size_t k = idx.size() > 1
                                ? std::max<std::size_t>(1, std::size_t(cfg.val_fraction * double(idx.size()) + 0.5))
                                : 0;
            k = std::min(k, idx.size() > 1 ? idx.size() - 1 : std::size_t(0));
            val.insert(val.end(), idx.begin(), idx.begin() + k);
            fit.insert(fit.end(), idx.begin() + k, idx.end());
        }
        std::sort(fit.begin(), fit.end());
        std::sort(val.begin(), val.end());
    }
    if (cfg.finetune_max_examples > 0 &&
        static_cast<std::size_t>(cfg.finetune_max_examples) < fit.size()) {
        Rng rng(mix_seed(cfg.seed, kFoldStream + 7));
        for (std::size_t i = fit.size(); i > 1; --i) std::swap(fit[i - 1], fit[rng.bounded(i)]);
        fit.resize(static_cast<std::size_t>(cfg.finetune_max_examples));
        std::sort(fit.begin(), fit.end());
    }

    Adam adam(encoder.n_params());
    std::vector<float> grads(encoder.n_params(), 0.0f);
    std::vector<std::vector<float>> tgrads(static_cast<std::size_t>(threads));
    for (auto& g : tgrads) g.assign(encoder.n_params(), 0.0f);

    FinetuneStats st;
    std::vector<float> best_params = encoder.params();
    double best_val = std::numeric_limits<double>::infinity();

    auto val_loss = [&]() {
        if (val.empty()) return 0.0;
        double s = 0.0;
        const std::int64_t nv = static_cast<std::int64_t>(val.size());
#pragma omp parallel for schedule(static) num_threads(threads) reduction(+ : s)
        for (std::int64_t i = 0; i < nv; ++i) {
            const std::size_t k = val[static_cast<std::size_t>(i)];
            s += encoder.cls_loss(seqs[k], labels[k]);
        }
        return s / double(val.size());
    };

    for (int epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
        std::vector<std::size_t> order = fit;
        Rng rng(mix_seed(cfg.seed, kOrderStream + 100 + static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.bounded(i)]);

        double epoch_loss = 0.0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
            const int bn = static_cast<int>(end - at);
            const float scale = 1.0f / float(bn);
            double batch_loss = 0.0;
#pragma omp parallel num_threads(threads) reduction(+ : batch_loss)
            {
                auto& tg = tgrads[static_cast<std::size_t>(omp_get_thread_num())];
                std::fill(tg.begin(), tg.end(), 0.0f);
#pragma omp for schedule(static)
                for (int b = 0; b < bn; ++b) {
                    const std::size_t k = order[at + static_cast<std::size_t>(b)];
                    batch_loss += encoder.cls_loss_grad(seqs[k], labels[k], scale, tg);
                }
            }
            std::fill(grads.begin(), grads.end(), 0.0f);
            for (int tid = 0; tid < threads; ++tid) {
                const auto& tg = tgrads[static_cast<std::size_t>(tid)];
                for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += tg[i];
            }
            if (cfg.freeze_encoder) {
                const auto& lay = encoder.layout();
                for (std::size_t i = 0; i < lay.cls_w; ++i) grads[i] = 0.0f;
            }
            adam.step(encoder.params(), grads, cfg.finetune_lr);
            epoch_loss += batch_loss;
        }
        st.train_loss.push_back(order.empty() ? 0.0 : epoch_loss / double(order.size()));
        const double vl = val_loss();
        st.val_loss.push_back(vl);
        if (val.empty() || vl < best_val) {
            best_val = vl;
            best_params = encoder.params();
            st.best_epoch = epoch;
        }
    }
    encoder.params() = std::move(best_params);
    if (stats) *stats = st;
    return MlmClassifierModel(std::move(vocab), buckets, std::move(encoder));
}

} // namespace clem
