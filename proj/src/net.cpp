// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0

#include "bdp/net.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace bdp {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

double gelu(double x) { return 0.5 * x * std::erfc(-x * M_SQRT1_2); }

double gelu_grad(double x) {
    double cdf = 0.5 * std::erfc(-x * M_SQRT1_2);
    double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

template <typename S>
MatT<S> gaussian_mat(int rows, int cols, double scale, Rng &rng) {
    MatT<S> m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = S(rng.gaussian() * scale);
    return m;
}

// Rotates adjacent pairs (2i, 2i+1) of every head by position * theta_i.
// inverse=true applies the transpose rotation, used by the backward pass.
template <typename S>
void apply_rotary(MatT<S> &m, const std::vector<int> &pos, const ModelConfig &cfg, bool inverse) {
    const int dh = cfg.head_dim();
    const int half = dh / 2;
    std::vector<double> theta(half);
    for (int i = 0; i < half; ++i) theta[i] = std::pow(cfg.rope_base, -2.0 * i / dh);
    for (int r = 0; r < m.rows(); ++r) {
        for (int i = 0; i < half; ++i) {
            double angle = double(pos[r]) * theta[i];
            double c = std::cos(angle);
            double s = inverse ? -std::sin(angle) : std::sin(angle);
            for (int h = 0; h < cfg.heads; ++h) {
                int c0 = h * dh + 2 * i;
                double x0 = m(r, c0), x1 = m(r, c0 + 1);
                m(r, c0) = S(x0 * c - x1 * s);
                m(r, c0 + 1) = S(x0 * s + x1 * c);
            }
        }
    }
}

template <typename S>
void layernorm_fwd(const MatT<S> &x, const MatT<S> &g, const MatT<S> &b, MatT<S> &out,
                   MatT<S> &xhat, std::vector<S> &inv_sigma) {
    const int n = int(x.rows()), d = int(x.cols());
    out.resize(n, d);
    xhat.resize(n, d);
    inv_sigma.resize(n);
    for (int r = 0; r < n; ++r) {
        S mu = x.row(r).mean();
        S var = (x.row(r).array() - mu).square().mean();
        S is = S(1) / std::sqrt(var + S(kLnEps));
        inv_sigma[r] = is;
        xhat.row(r) = ((x.row(r).array() - mu) * is).matrix();
        out.row(r) =
            (xhat.row(r).array() * g.col(0).transpose().array() + b.col(0).transpose().array())
                .matrix();
    }
}

// Accumulates dg/db and returns dx for y = g * xhat + b.
Mat layernorm_bwd(const Mat &dy, const Mat &xhat, const std::vector<double> &inv_sigma,
                  const Mat &g, Mat &dg, Mat &db) {
    const int n = int(dy.rows()), d = int(dy.cols());
    Mat dx(n, d);
    for (int r = 0; r < n; ++r) {
        dg.col(0) += (dy.row(r).array() * xhat.row(r).array()).matrix().transpose();
        db.col(0) += dy.row(r).transpose();
        Eigen::ArrayXd dxhat = (dy.row(r).array() * g.col(0).transpose().array()).transpose();
        Eigen::ArrayXd xh = xhat.row(r).transpose().array();
        double m1 = dxhat.mean();
        double m2 = (dxhat * xh).mean();
        dx.row(r) = ((dxhat - m1 - xh * m2) * inv_sigma[r]).matrix().transpose();
    }
    (void)d;
    return dx;
}

template <typename S>
struct LayerWork {
    MatT<S> xhat1, x1;
    std::vector<S> is1;
    MatT<S> q, k, v;             // q/k post-rotary
    std::vector<MatT<S>> probs;  // per head, N x K
    MatT<S> attn_cat;
    MatT<S> xhat2, x2;
    std::vector<S> is2;
    MatT<S> pre, act;
};

template <typename S>
struct Workspace {
    std::vector<LayerWork<S>> layers;
    MatT<S> xhatf, xf;
    std::vector<S> isf;
};

template <typename S>
MatT<S> forward_impl(const ParamsT<S> &P, const std::vector<int> &ids,
                     const std::vector<int> &pos, const AttnMask &mask, KvCacheT<S> *cache,
                     bool update, const std::vector<int> *logit_rows, ForwardDebugT<S> *debug,
                     Workspace<S> *work) {
    const ModelConfig &cfg = P.config;
    cfg.validate();
    const int n = int(ids.size());
    if (n == 0) throw std::invalid_argument("forward: empty input");
    if (int(pos.size()) != n) throw std::invalid_argument("forward: ids/position count mismatch");
    for (int p : pos)
        if (p < 0) throw std::invalid_argument("forward: negative position id");
    for (int id : ids)
        if (id < 0 || id >= cfg.vocab_size) throw std::invalid_argument("forward: id out of vocab");
    const int committed = cache ? cache->len() : 0;
    const int keys = committed + n;
    if (mask.rows != n || mask.cols != keys)
        throw std::invalid_argument("forward: mask shape must be N x (committed + N)");
    if (cache && int(cache->k.size()) != cfg.layers)
        throw std::invalid_argument("forward: cache not initialized for this model");

    const int d = cfg.dim, dh = cfg.head_dim();
    const S inv_sqrt_dh = S(1.0 / std::sqrt(double(dh)));
    const S neg_inf = -std::numeric_limits<S>::infinity();

    if (work) work->layers.resize(cfg.layers);
    if (debug) debug->attn_scores.assign(cfg.layers, MatT<S>());

    MatT<S> h(n, d);
    for (int r = 0; r < n; ++r) h.row(r) = P.embed.row(ids[r]);

    MatT<S> x1, xhat1, x2, xhat2;
    std::vector<S> is1, is2;
    for (int l = 0; l < cfg.layers; ++l) {
        const AttnLayerT<S> &L = P.layers[l];
        layernorm_fwd(h, L.ln1_g, L.ln1_b, x1, xhat1, is1);

        MatT<S> q = x1 * L.wq;
        MatT<S> kn = x1 * L.wk;
        MatT<S> vn = x1 * L.wv;
        apply_rotary(q, pos, cfg, false);
        apply_rotary(kn, pos, cfg, false);

        MatT<S> kall(keys, d), vall(keys, d);
        if (committed > 0) {
            kall.topRows(committed) = cache->k[l];
            vall.topRows(committed) = cache->v[l];
        }
        kall.bottomRows(n) = kn;
        vall.bottomRows(n) = vn;

        MatT<S> attn_cat(n, d);
        std::vector<MatT<S>> probs(cfg.heads);
        for (int hd = 0; hd < cfg.heads; ++hd) {
            MatT<S> scores =
                (q.middleCols(hd * dh, dh) * kall.middleCols(hd * dh, dh).transpose()) *
                inv_sqrt_dh;
            if (debug) {
                if (debug->attn_scores[l].rows() == 0)
                    debug->attn_scores[l].resize(cfg.heads * n, keys);
                debug->attn_scores[l].middleRows(hd * n, n) = scores;
            }
            // Masked entries never enter the exp input and are written back as
            // exact zeros: exp of -inf sentinels emits denormal probabilities,
            // and denormal operands stall every product that touches them.
            for (int r = 0; r < n; ++r) {
                S mx = neg_inf;
                for (int k = 0; k < keys; ++k)
                    if (mask.at(r, k)) mx = std::max(mx, scores(r, k));
                if (!(mx > neg_inf))
                    throw std::invalid_argument("forward: attention row with no allowed keys");
                Eigen::Array<S, Eigen::Dynamic, 1> e =
                    (scores.row(r).transpose().array() - mx).exp();
                for (int k = 0; k < keys; ++k)
                    if (!mask.at(r, k)) e(k) = S(0);
                scores.row(r) = (e / e.sum()).matrix().transpose();
            }
            attn_cat.middleCols(hd * dh, dh) = scores * vall.middleCols(hd * dh, dh);
            probs[hd] = std::move(scores);
        }
        h += attn_cat * L.wo;

        if (update) {
            int old = int(cache->k[l].rows());
            cache->k[l].conservativeResize(old + n, d);
            cache->v[l].conservativeResize(old + n, d);
            cache->k[l].bottomRows(n) = kn;
            cache->v[l].bottomRows(n) = vn;
        }

        layernorm_fwd(h, L.ln2_g, L.ln2_b, x2, xhat2, is2);
        MatT<S> pre = x2 * L.w1;
        pre.rowwise() += L.b1.col(0).transpose();
        MatT<S> act(n, cfg.ffn);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < cfg.ffn; ++c) act(r, c) = S(gelu(double(pre(r, c))));
        h += act * L.w2;
        h.rowwise() += L.b2.col(0).transpose();

        if (work) {
            LayerWork<S> &w = work->layers[l];
            w.xhat1 = xhat1;
            w.is1 = is1;
            w.x1 = std::move(x1);
            w.q = std::move(q);
            w.k = std::move(kn);
            w.v = std::move(vn);
            w.probs = std::move(probs);
            w.attn_cat = std::move(attn_cat);
            w.xhat2 = xhat2;
            w.is2 = is2;
            w.x2 = std::move(x2);
            w.pre = std::move(pre);
            w.act = std::move(act);
        }
    }

    MatT<S> xf, xhatf;
    std::vector<S> isf;
    layernorm_fwd(h, P.lnf_g, P.lnf_b, xf, xhatf, isf);

    MatT<S> logits = MatT<S>::Zero(n, cfg.vocab_size);
    if (!logit_rows) {
        logits = xf * P.head;
    } else {
        for (int r : *logit_rows) {
            if (r < 0 || r >= n) throw std::invalid_argument("forward: logit row out of range");
            logits.row(r) = xf.row(r) * P.head;
        }
    }

    if (update) cache->position_ids.insert(cache->position_ids.end(), pos.begin(), pos.end());

    if (work) {
        work->xhatf = std::move(xhatf);
        work->isf = std::move(isf);
        work->xf = std::move(xf);
    }
    return logits;
}

// Weighted CE over the rows that carry loss; logits are produced only there.
// Returns the raw example loss; gradient contributions are scaled by `scale`.
double example_loss_and_grad(const Params &P, const TrainingExample &ex, Params &grad,
                             double scale) {
    const ModelConfig &cfg = P.config;
    const int n = int(ex.ids.size());
    if (int(ex.targets.size()) != n || int(ex.weights.size()) != n)
        throw std::invalid_argument("loss: targets/weights length mismatch");

    std::vector<int> lrows;
    for (int r = 0; r < n; ++r) {
        if (ex.weights[r] == 0.0) continue;
        if (ex.targets[r] == kIgnoreTarget)
            throw std::invalid_argument("loss: nonzero weight on an IGNORE target");
        if (ex.targets[r] < 0 || ex.targets[r] >= cfg.vocab_size)
            throw std::invalid_argument("loss: target out of vocab");
        lrows.push_back(r);
    }

    Workspace<double> work;
    Mat logits =
        forward_impl<double>(P, ex.ids, ex.position_ids, ex.mask, nullptr, false, &lrows, nullptr,
                             &work);

    const int d = cfg.dim;
    double loss = 0.0;
    Mat dlog = Mat::Zero(int(lrows.size()), cfg.vocab_size);
    Mat xf_rows(int(lrows.size()), d);
    for (size_t i = 0; i < lrows.size(); ++i) {
        int r = lrows[i];
        double w = ex.weights[r];
        int t = ex.targets[r];
        double mx = logits.row(r).maxCoeff();
        Eigen::ArrayXd e = (logits.row(r).transpose().array() - mx).exp();
        double z = e.sum();
        loss += w * (mx + std::log(z) - logits(r, t));
        dlog.row(i) = ((e / z) * (scale * w)).matrix().transpose();
        dlog(i, t) -= scale * w;
        xf_rows.row(i) = work.xf.row(r);
    }

    grad.head += xf_rows.transpose() * dlog;
    Mat dxf = Mat::Zero(n, d);
    Mat dxf_rows = dlog * P.head.transpose();
    for (size_t i = 0; i < lrows.size(); ++i) dxf.row(lrows[i]) = dxf_rows.row(int(i));

    Mat dh = layernorm_bwd(dxf, work.xhatf, work.isf, P.lnf_g, grad.lnf_g, grad.lnf_b);

    const int dh_dim = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh_dim));
    for (int l = cfg.layers - 1; l >= 0; --l) {
        const AttnLayerT<double> &L = P.layers[l];
        AttnLayerT<double> &G = grad.layers[l];
        LayerWork<double> &w = work.layers[l];

        // MLP sublayer
        Mat dact = dh * L.w2.transpose();
        G.w2 += w.act.transpose() * dh;
        G.b2.col(0) += dh.colwise().sum().transpose();
        Mat dpre(n, cfg.ffn);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < cfg.ffn; ++c) dpre(r, c) = dact(r, c) * gelu_grad(w.pre(r, c));
        G.w1 += w.x2.transpose() * dpre;
        G.b1.col(0) += dpre.colwise().sum().transpose();
        Mat dx2 = dpre * L.w1.transpose();
        dh += layernorm_bwd(dx2, w.xhat2, w.is2, L.ln2_g, G.ln2_g, G.ln2_b);

        // attention sublayer
        Mat dattn = dh * L.wo.transpose();
        G.wo += w.attn_cat.transpose() * dh;
        Mat dq = Mat::Zero(n, d), dk = Mat::Zero(n, d), dv = Mat::Zero(n, d);
        for (int hd = 0; hd < cfg.heads; ++hd) {
            const Mat &prob = w.probs[hd];
            Mat dout = dattn.middleCols(hd * dh_dim, dh_dim);
            Mat dprob = dout * w.v.middleCols(hd * dh_dim, dh_dim).transpose();
            dv.middleCols(hd * dh_dim, dh_dim) += prob.transpose() * dout;
            Mat dscore(n, n);
            for (int r = 0; r < n; ++r) {
                double dot = dprob.row(r).dot(prob.row(r));
                dscore.row(r) =
                    (prob.row(r).array() * (dprob.row(r).array() - dot)).matrix() * inv_sqrt_dh;
            }
            dq.middleCols(hd * dh_dim, dh_dim) +=
                dscore * w.k.middleCols(hd * dh_dim, dh_dim);
            dk.middleCols(hd * dh_dim, dh_dim) +=
                dscore.transpose() * w.q.middleCols(hd * dh_dim, dh_dim);
        }
        apply_rotary(dq, ex.position_ids, cfg, true);
        apply_rotary(dk, ex.position_ids, cfg, true);
        Mat dx1 = dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
        G.wq += w.x1.transpose() * dq;
        G.wk += w.x1.transpose() * dk;
        G.wv += w.x1.transpose() * dv;
        dh += layernorm_bwd(dx1, w.xhat1, w.is1, L.ln1_g, G.ln1_g, G.ln1_b);
    }

    // dh already carries the batch scale through dlog
    for (int r = 0; r < n; ++r) grad.embed.row(ex.ids[r]) += dh.row(r);
    return loss;
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 2 || dim < 2 || heads < 1 || layers < 0 || ffn < 1)
        throw std::invalid_argument("model config: sizes must be positive");
    if (dim % heads != 0) throw std::invalid_argument("model config: heads must divide dim");
    if (head_dim() % 2 != 0)
        throw std::invalid_argument("model config: head dim must be even for rotary pairs");
    if (!(rope_base > 1.0)) throw std::invalid_argument("model config: rope base must exceed 1");
    if (!(init_scale >= 0.0))
        throw std::invalid_argument("model config: init scale must not be negative");
}

Params init_params(const ModelConfig &config, Rng &rng) {
    config.validate();
    Params p;
    p.config = config;
    p.embed = gaussian_mat<double>(config.vocab_size, config.dim, config.init_scale, rng);
    p.layers.resize(config.layers);
    for (auto &l : p.layers) {
        l.ln1_g = Mat::Ones(config.dim, 1);
        l.ln1_b = Mat::Zero(config.dim, 1);
        l.wq = gaussian_mat<double>(config.dim, config.dim, config.init_scale, rng);
        l.wk = gaussian_mat<double>(config.dim, config.dim, config.init_scale, rng);
        l.wv = gaussian_mat<double>(config.dim, config.dim, config.init_scale, rng);
        l.wo = gaussian_mat<double>(config.dim, config.dim, config.init_scale, rng);
        l.ln2_g = Mat::Ones(config.dim, 1);
        l.ln2_b = Mat::Zero(config.dim, 1);
        l.w1 = gaussian_mat<double>(config.dim, config.ffn, config.init_scale, rng);
        l.b1 = Mat::Zero(config.ffn, 1);
        l.w2 = gaussian_mat<double>(config.ffn, config.dim, config.init_scale, rng);
        l.b2 = Mat::Zero(config.dim, 1);
    }
    p.lnf_g = Mat::Ones(config.dim, 1);
    p.lnf_b = Mat::Zero(config.dim, 1);
    p.head = gaussian_mat<double>(config.dim, config.vocab_size, config.init_scale, rng);
    return p;
}

Params zeros_like(const Params &params) {
    Params z = params;
    for_each_tensor(z, [](const std::string &, Mat &t) { t.setZero(); });
    return z;
}

ParamsF to_float32(const Params &params) {
    ParamsF out;
    out.config = params.config;
    out.layers.resize(params.layers.size());
    std::vector<MatT<float> *> dst;
    for_each_tensor(out, [&](const std::string &, MatT<float> &t) { dst.push_back(&t); });
    size_t i = 0;
    for_each_tensor(params, [&](const std::string &, const Mat &t) {
        *dst[i++] = t.cast<float>();
    });
    return out;
}

int64_t count_params(const ModelConfig &config) {
    config.validate();
    int64_t per_layer = 4 * int64_t(config.dim) * config.dim + 4 * config.dim +
                        2 * int64_t(config.dim) * config.ffn + config.ffn + config.dim;
    return int64_t(config.vocab_size) * config.dim + config.layers * per_layer + 2 * config.dim +
           int64_t(config.dim) * config.vocab_size;
}

template <typename S>
KvCacheT<S> make_cache(const ModelConfig &config) {
    config.validate();
    KvCacheT<S> cache;
    cache.k.assign(config.layers, MatT<S>(0, config.dim));
    cache.v.assign(config.layers, MatT<S>(0, config.dim));
    return cache;
}

template <typename S>
MatT<S> forward(const ParamsT<S> &params, const std::vector<int> &ids,
                const std::vector<int> &position_ids, const AttnMask &mask, KvCacheT<S> *cache,
                bool update_cache, const std::vector<int> *logit_rows, ForwardDebugT<S> *debug) {
    if (update_cache && !cache)
        throw std::invalid_argument("forward: update requested without a cache");
    return forward_impl<S>(params, ids, position_ids, mask, cache, update_cache, logit_rows,
                           debug, nullptr);
}

double loss_and_grad(const Params &params, const std::vector<TrainingExample> &batch, Params &grad,
                     int threads) {
    if (batch.empty()) throw std::invalid_argument("loss: empty batch");
    grad = zeros_like(params);
    const double scale = 1.0 / double(batch.size());

    threads = std::max(1, std::min<int>(threads, int(batch.size())));
    if (threads == 1) {
        double loss = 0.0;
        for (const TrainingExample &ex : batch) loss += example_loss_and_grad(params, ex, grad, scale);
        return loss * scale;
    }

    // contiguous chunks, reduced in chunk order for scheduling-independent sums
    std::vector<Params> partial(threads, zeros_like(params));
    std::vector<double> losses(threads, 0.0);
    std::vector<std::thread> pool;
    const int per = (int(batch.size()) + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            int begin = t * per, end = std::min<int>(begin + per, int(batch.size()));
            for (int i = begin; i < end; ++i)
                losses[t] += example_loss_and_grad(params, batch[i], partial[t], scale);
        });
    }
    for (auto &th : pool) th.join();

    double loss = 0.0;
    for (int t = 0; t < threads; ++t) {
        loss += losses[t];
        std::vector<Mat *> dst;
        for_each_tensor(grad, [&](const std::string &, Mat &m) { dst.push_back(&m); });
        size_t i = 0;
        for_each_tensor(partial[t], [&](const std::string &, const Mat &m) { *dst[i++] += m; });
    }
    return loss * scale;
}

double loss_only(const Params &params, const TrainingExample &example) {
    const int n = int(example.ids.size());
    std::vector<int> lrows;
    for (int r = 0; r < n; ++r)
        if (example.weights[r] != 0.0) lrows.push_back(r);
    Mat logits = forward_impl<double>(params, example.ids, example.position_ids, example.mask,
                                      nullptr, false, &lrows, nullptr, nullptr);
    double loss = 0.0;
    for (int r : lrows) {
        int t = example.targets[r];
        if (t == kIgnoreTarget) throw std::invalid_argument("loss: nonzero weight on IGNORE");
        double mx = logits.row(r).maxCoeff();
        Eigen::ArrayXd e = (logits.row(r).transpose().array() - mx).exp();
        loss += example.weights[r] * (mx + std::log(e.sum()) - logits(r, t));
    }
    return loss;
}

template KvCacheT<double> make_cache<double>(const ModelConfig &);
template KvCacheT<float> make_cache<float>(const ModelConfig &);
template MatT<double> forward<double>(const ParamsT<double> &, const std::vector<int> &,
                                      const std::vector<int> &, const AttnMask &,
                                      KvCacheT<double> *, bool, const std::vector<int> *,
                                      ForwardDebugT<double> *);
template MatT<float> forward<float>(const ParamsT<float> &, const std::vector<int> &,
                                    const std::vector<int> &, const AttnMask &, KvCacheT<float> *,
                                    bool, const std::vector<int> *, ForwardDebugT<float> *);

}  // namespace bdp
