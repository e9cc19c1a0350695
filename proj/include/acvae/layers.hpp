#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "acvae/tensor.hpp"

namespace acvae {

template <class S>
inline S sigmoid(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

inline void check_dim(bool ok, const std::string& layer, const std::string& what) {
    if (!ok) throw std::invalid_argument(layer + ": shape mismatch in " + what);
}

// ---------------------------------------------------------------------------
// embedding: token ids -> rows of the table. Negative ids (padding slots past
// a sequence's true length) produce zero rows and receive no gradient.

template <class S>
void embedding_forward(const Tensor<S>& table, const std::vector<int>& ids, Tensor<S>& out) {
    const std::size_t dim = table.cols();
    check_dim(out.rows() == ids.size() && out.cols() == dim, "embedding", "output");
    out.zero();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0) continue;
        check_dim(static_cast<std::size_t>(ids[i]) < table.rows(), "embedding", "token id");
        const S* src = table.row(static_cast<std::size_t>(ids[i]));
        S* dst = out.row(i);
        for (std::size_t d = 0; d < dim; ++d) dst[d] = src[d];
    }
}

template <class S>
void embedding_backward(const std::vector<int>& ids, const Tensor<S>& dout, Tensor<S>& dtable) {
    const std::size_t dim = dtable.cols();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0) continue;
        const S* src = dout.row(i);
        S* dst = dtable.row(static_cast<std::size_t>(ids[i]));
        for (std::size_t d = 0; d < dim; ++d) dst[d] += src[d];
    }
}

// ---------------------------------------------------------------------------
// affine: y[B,N] = x[B,K] W[N,K]^T + b, optional tanh on top.

template <class S>
void affine_forward(const Tensor<S>& W, const Tensor<S>& b, const Tensor<S>& x, Tensor<S>& y) {
    check_dim(W.cols() == x.cols(), "affine", "input width vs W");
    check_dim(b.size() == W.rows(), "affine", "bias vs W");
    check_dim(y.rows() == x.rows() && y.cols() == W.rows(), "affine", "output");
    for (std::size_t i = 0; i < y.rows(); ++i) {
        S* yi = y.row(i);
        for (std::size_t j = 0; j < y.cols(); ++j) yi[j] = b.data[j];
    }
    addmm_nt(y.data.data(), x.data.data(), W.data.data(), x.rows(), W.rows(), x.cols());
}

template <class S>
void affine_backward(const Tensor<S>& W, const Tensor<S>& x, const Tensor<S>& dy,
                     Tensor<S>& dW, Tensor<S>& db, Tensor<S>& dx) {
    // dW += dy^T x ; db += column-sum(dy) ; dx += dy W
    addmm_tn(dW.data.data(), dy.data.data(), x.data.data(), dy.rows(), dy.cols(), x.cols());
    for (std::size_t i = 0; i < dy.rows(); ++i) {
        const S* di = dy.row(i);
        for (std::size_t j = 0; j < dy.cols(); ++j) db.data[j] += di[j];
    }
    addmm_nn(dx.data.data(), dy.data.data(), W.data.data(), dy.rows(), dy.cols(), W.cols());
}

template <class S>
void tanh_inplace(Tensor<S>& t) {
    for (S& v : t.data) v = std::tanh(v);
}

// dpre = dy * (1 - y^2), where y is the tanh output
template <class S>
void tanh_backward(const Tensor<S>& y, const Tensor<S>& dy, Tensor<S>& dpre) {
    for (std::size_t i = 0; i < y.size(); ++i)
        dpre.data[i] = dy.data[i] * (S(1) - y.data[i] * y.data[i]);
}

// ---------------------------------------------------------------------------
// two-layer MLP with tanh hidden: out = W2 tanh(W1 x + b1) + b2

template <class S>
struct MlpTrace {
    Tensor<S> hidden; // tanh output [B, M]
};

template <class S>
void mlp_forward(const Tensor<S>& W1, const Tensor<S>& b1, const Tensor<S>& W2, const Tensor<S>& b2,
                 const Tensor<S>& x, Tensor<S>& out, MlpTrace<S>& trace) {
    trace.hidden = Tensor<S>({x.rows(), W1.rows()});
    affine_forward(W1, b1, x, trace.hidden);
    tanh_inplace(trace.hidden);
    affine_forward(W2, b2, trace.hidden, out);
}

template <class S>
void mlp_backward(const Tensor<S>& W1, const Tensor<S>& W2, const Tensor<S>& x,
                  const MlpTrace<S>& trace, const Tensor<S>& dout,
                  Tensor<S>& dW1, Tensor<S>& db1, Tensor<S>& dW2, Tensor<S>& db2, Tensor<S>& dx) {
    Tensor<S> dhidden({x.rows(), W1.rows()});
    affine_backward(W2, trace.hidden, dout, dW2, db2, dhidden);
    Tensor<S> dpre({x.rows(), W1.rows()});
    tanh_backward(trace.hidden, dhidden, dpre);
    affine_backward(W1, x, dpre, dW1, db1, dx);
}

// ---------------------------------------------------------------------------
// LSTM over a batch of variable-length sequences. Gate packing is [i f g o];
// rows past their true length carry state through unchanged, so the hidden at
// the last step is each row's final state.

template <class S>
struct LstmTrace {
    std::size_t steps = 0, batch = 0, hidden = 0;
    std::vector<Tensor<S>> i, f, g, o; // post-activation gates per step [B,H]
    std::vector<Tensor<S>> c, tc, h;   // cell, tanh(cell), hidden per step [B,H]
    Tensor<S> h0, c0;                  // initial state actually used
    const Tensor<S>& h_last() const { return h.back(); }
    const Tensor<S>& c_last() const { return c.back(); }
};

template <class S>
void lstm_forward(const Tensor<S>& W, const Tensor<S>& U, const Tensor<S>& bias,
                  const std::vector<Tensor<S>>& xs, const std::vector<int>& lengths,
                  LstmTrace<S>& tr, const Tensor<S>* h0 = nullptr, const Tensor<S>* c0 = nullptr) {
    const std::size_t T = xs.size();
    const std::size_t B = lengths.size();
    const std::size_t H = U.cols();
    check_dim(W.rows() == 4 * H && U.rows() == 4 * H && bias.size() == 4 * H, "lstm", "gate weights");

    tr.steps = T;
    tr.batch = B;
    tr.hidden = H;
    tr.i.assign(T, Tensor<S>({B, H}));
    tr.f.assign(T, Tensor<S>({B, H}));
    tr.g.assign(T, Tensor<S>({B, H}));
    tr.o.assign(T, Tensor<S>({B, H}));
    tr.c.assign(T ? T : 1, Tensor<S>({B, H}));
    tr.tc.assign(T, Tensor<S>({B, H}));
    tr.h.assign(T ? T : 1, Tensor<S>({B, H}));
    tr.h0 = h0 ? *h0 : Tensor<S>({B, H});
    tr.c0 = c0 ? *c0 : Tensor<S>({B, H});
    if (T == 0) { // empty fold: state passes through
        tr.h[0] = tr.h0;
        tr.c[0] = tr.c0;
        return;
    }

    Tensor<S> pre({B, 4 * H});
    for (std::size_t t = 0; t < T; ++t) {
        check_dim(xs[t].rows() == B && xs[t].cols() == W.cols(), "lstm", "input step " + std::to_string(t));
        const Tensor<S>& hprev = t == 0 ? tr.h0 : tr.h[t - 1];
        const Tensor<S>& cprev = t == 0 ? tr.c0 : tr.c[t - 1];
        for (std::size_t b = 0; b < B; ++b) {
            S* p = pre.row(b);
            for (std::size_t j = 0; j < 4 * H; ++j) p[j] = bias.data[j];
        }
        addmm_nt(pre.data.data(), xs[t].data.data(), W.data.data(), B, 4 * H, W.cols());
        addmm_nt(pre.data.data(), hprev.data.data(), U.data.data(), B, 4 * H, H);

        for (std::size_t b = 0; b < B; ++b) {
            if (static_cast<std::size_t>(lengths[b]) <= t) { // inactive: carry state
                for (std::size_t d = 0; d < H; ++d) {
                    tr.h[t].at(b, d) = hprev.at(b, d);
                    tr.c[t].at(b, d) = cprev.at(b, d);
                }
                continue;
            }
            const S* p = pre.row(b);
            for (std::size_t d = 0; d < H; ++d) {
                S iv = sigmoid(p[d]);
                S fv = sigmoid(p[H + d]);
                S gv = std::tanh(p[2 * H + d]);
                S ov = sigmoid(p[3 * H + d]);
                S cv = fv * cprev.at(b, d) + iv * gv;
                S tcv = std::tanh(cv);
                tr.i[t].at(b, d) = iv;
                tr.f[t].at(b, d) = fv;
                tr.g[t].at(b, d) = gv;
                tr.o[t].at(b, d) = ov;
                tr.c[t].at(b, d) = cv;
                tr.tc[t].at(b, d) = tcv;
                tr.h[t].at(b, d) = ov * tcv;
            }
        }
    }
}

// dh_steps may be null (no per-step gradient); dh_last/dc_last may be null.
// Accumulates into dW/dU/db/dxs and optionally dh0/dc0.
template <class S>
void lstm_backward(const Tensor<S>& W, const Tensor<S>& U, const std::vector<Tensor<S>>& xs,
                   const std::vector<int>& lengths, const LstmTrace<S>& tr,
                   std::type_identity_t<const std::vector<Tensor<S>>*> dh_steps,
                   std::type_identity_t<const Tensor<S>*> dh_last,
                   std::type_identity_t<const Tensor<S>*> dc_last, Tensor<S>& dW, Tensor<S>& dU,
                   Tensor<S>& db, std::vector<Tensor<S>>& dxs,
                   std::type_identity_t<Tensor<S>*> dh0 = nullptr,
                   std::type_identity_t<Tensor<S>*> dc0 = nullptr) {
    const std::size_t T = tr.steps;
    const std::size_t B = tr.batch;
    const std::size_t H = tr.hidden;

    Tensor<S> dh({B, H}), dc({B, H});
    if (dh_last)
        for (std::size_t k = 0; k < dh.size(); ++k) dh.data[k] = dh_last->data[k];
    if (dc_last)
        for (std::size_t k = 0; k < dc.size(); ++k) dc.data[k] = dc_last->data[k];

    Tensor<S> dpre({B, 4 * H});
    for (std::size_t t = T; t-- > 0;) {
        if (dh_steps)
            for (std::size_t k = 0; k < dh.size(); ++k) dh.data[k] += (*dh_steps)[t].data[k];
        const Tensor<S>& hprev = t == 0 ? tr.h0 : tr.h[t - 1];
        const Tensor<S>& cprev = t == 0 ? tr.c0 : tr.c[t - 1];

        dpre.zero();
        for (std::size_t b = 0; b < B; ++b) {
            if (static_cast<std::size_t>(lengths[b]) <= t) continue; // carried through: dh, dc flow back as-is
            S* dp = dpre.row(b);
            for (std::size_t d = 0; d < H; ++d) {
                S iv = tr.i[t].at(b, d), fv = tr.f[t].at(b, d);
                S gv = tr.g[t].at(b, d), ov = tr.o[t].at(b, d);
                S tcv = tr.tc[t].at(b, d);
                S dhv = dh.at(b, d);
                S dcv = dc.at(b, d) + dhv * ov * (S(1) - tcv * tcv);
                S dov = dhv * tcv;
                S dfv = dcv * cprev.at(b, d);
                S div = dcv * gv;
                S dgv = dcv * iv;
                dp[d] = div * iv * (S(1) - iv);
                dp[H + d] = dfv * fv * (S(1) - fv);
                dp[2 * H + d] = dgv * (S(1) - gv * gv);
                dp[3 * H + d] = dov * ov * (S(1) - ov);
                dc.at(b, d) = dcv * fv;
                dh.at(b, d) = S(0); // rebuilt below from dpre * U
            }
        }
        // parameter and input gradients
        addmm_tn(dW.data.data(), dpre.data.data(), xs[t].data.data(), B, 4 * H, W.cols());
        addmm_tn(dU.data.data(), dpre.data.data(), hprev.data.data(), B, 4 * H, H);
        for (std::size_t b = 0; b < B; ++b) {
            const S* dp = dpre.row(b);
            for (std::size_t j = 0; j < 4 * H; ++j) db.data[j] += dp[j];
        }
        addmm_nn(dxs[t].data.data(), dpre.data.data(), W.data.data(), B, 4 * H, W.cols());
        addmm_nn(dh.data.data(), dpre.data.data(), U.data.data(), B, 4 * H, H);
    }
    if (dh0)
        for (std::size_t k = 0; k < dh.size(); ++k) dh0->data[k] += dh.data[k];
    if (dc0)
        for (std::size_t k = 0; k < dc.size(); ++k) dc0->data[k] += dc.data[k];
}

// ---------------------------------------------------------------------------
// softmax cross-entropy over logits [B,V]; targets < 0 are masked out.

template <class S>
struct SoftmaxXentTrace {
    Tensor<S> probs; // [B,V]
};

// Returns the summed loss over unmasked rows; per_row (optional) gets each
// row's loss.
template <class S>
double softmax_xent_forward(const Tensor<S>& logits, const std::vector<int>& targets,
                            SoftmaxXentTrace<S>& tr, std::vector<double>* per_row = nullptr) {
    const std::size_t B = logits.rows(), V = logits.cols();
    check_dim(targets.size() == B, "softmax_xent", "targets");
    tr.probs = Tensor<S>({B, V});
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const S* l = logits.row(b);
        S* p = tr.probs.row(b);
        S mx = l[0];
        for (std::size_t v = 1; v < V; ++v) mx = std::max(mx, l[v]);
        S denom = 0;
        for (std::size_t v = 0; v < V; ++v) {
            p[v] = std::exp(l[v] - mx);
            denom += p[v];
        }
        for (std::size_t v = 0; v < V; ++v) p[v] /= denom;
        double row_loss = 0.0;
        if (targets[b] >= 0) {
            check_dim(static_cast<std::size_t>(targets[b]) < V, "softmax_xent", "target id");
            row_loss = -std::log(static_cast<double>(p[targets[b]]));
            total += row_loss;
        }
        if (per_row) per_row->push_back(row_loss);
    }
    return total;
}

// dlogits += scale * (probs - onehot(target)) per unmasked row
template <class S>
void softmax_xent_backward(const SoftmaxXentTrace<S>& tr, const std::vector<int>& targets, S scale,
                           Tensor<S>& dlogits) {
    const std::size_t B = tr.probs.rows(), V = tr.probs.cols();
    for (std::size_t b = 0; b < B; ++b) {
        if (targets[b] < 0) continue;
        const S* p = tr.probs.row(b);
        S* d = dlogits.row(b);
        for (std::size_t v = 0; v < V; ++v) d[v] += scale * p[v];
        d[targets[b]] -= scale;
    }
}

} // namespace acvae
