#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "acvae/corpus.hpp"
#include "acvae/gaussian.hpp"
#include "acvae/layers.hpp"
#include "acvae/optim.hpp"
#include "acvae/rng.hpp"

namespace acvae {

struct ModelConfig {
    std::size_t embedding_dim = 300;
    std::size_t hidden_dim = 300;
    std::size_t latent_dim = 200;
    std::size_t mlp_hidden_dim = 250;
    std::size_t beta_ramp_updates = 10000;
    std::size_t beta_cycle_updates = 0; // 0 = monotone ramp; >0 = sawtooth period
    double lambda_gold = 1.0;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 30;
    std::size_t max_len = 30;
    std::uint64_t seed = 1;
    std::optional<LatentPartition> partition;

    void validate() const {
        if (!embedding_dim || !hidden_dim || !latent_dim || !mlp_hidden_dim)
            throw std::invalid_argument("model dimensions must be positive");
        if (!batch_size) throw std::invalid_argument("batch size must be positive");
        if (beta_ramp_updates == 0) throw std::invalid_argument("beta ramp must be positive");
        if (partition) partition->validate(latent_dim);
    }
};

// KL coefficient: linear ramp to 1 at `ramp` updates, clamped. With a cycle
// period the ramp restarts every `cycle` updates (sawtooth).
inline double anneal_beta(std::size_t step, std::size_t ramp, std::size_t cycle = 0) {
    if (ramp == 0) throw std::invalid_argument("anneal_beta: ramp must be positive");
    if (cycle > 0) step %= cycle;
    return std::min(1.0, static_cast<double>(step) / static_cast<double>(ramp));
}

struct LossBreakdown {
    double reconstruction = 0.0;
    double prior_kl = 0.0;
    double gold_kl = 0.0;
    double beta = 0.0;
    double lambda = 0.0;
    double total = 0.0; // always reconstruction + beta*prior_kl + lambda*gold_kl
};

// One gold bank per constrained label. Without a latent partition the set
// holds a single entry (the training label); with one, every non-"common"
// slice name must map to a bank holding that label's categories.
using GoldBankSet = std::map<std::string, GoldBank>;

template <class S>
struct ModelParameters {
    enum Index {
        kEmbed,
        kEncInW, kEncInU, kEncInB,
        kEncOutW, kEncOutU, kEncOutB,
        kRecogW1, kRecogB1, kRecogW2, kRecogB2,
        kPriorW1, kPriorB1, kPriorW2, kPriorB2,
        kDecInitW, kDecInitB,
        kDecW, kDecU, kDecB,
        kOutW, kOutB,
        kCount
    };

    std::vector<Parameter<S>> items;
    std::size_t vocab = 0, emb = 0, hidden = 0, latent = 0, mlp = 0;

    ModelParameters(const ModelConfig& cfg, std::size_t vocab_size, std::uint64_t seed)
        : vocab(vocab_size), emb(cfg.embedding_dim), hidden(cfg.hidden_dim),
          latent(cfg.latent_dim), mlp(cfg.mlp_hidden_dim) {
        const std::size_t V = vocab, E = emb, H = hidden, Z = latent, M = mlp;
        auto add = [&](const char* name, std::vector<std::size_t> shape) {
            items.emplace_back(name, std::move(shape));
        };
        add("embed.W", {V, E});
        add("enc_in.W", {4 * H, E});
        add("enc_in.U", {4 * H, H});
        add("enc_in.b", {4 * H});
        add("enc_out.W", {4 * H, E});
        add("enc_out.U", {4 * H, H});
        add("enc_out.b", {4 * H});
        add("recog.W1", {M, 2 * H});
        add("recog.b1", {M});
        add("recog.W2", {2 * Z, M});
        add("recog.b2", {2 * Z});
        add("prior.W1", {M, H});
        add("prior.b1", {M});
        add("prior.W2", {2 * Z, M});
        add("prior.b2", {2 * Z});
        add("dec_init.W", {2 * H, Z + H});
        add("dec_init.b", {2 * H});
        add("dec.W", {4 * H, E});
        add("dec.U", {4 * H, H});
        add("dec.b", {4 * H});
        add("out.W", {V, H});
        add("out.b", {V});
        init(seed);
    }

    Parameter<S>& at(Index i) { return items[static_cast<std::size_t>(i)]; }
    const Parameter<S>& at(Index i) const { return items[static_cast<std::size_t>(i)]; }
    Tensor<S>& value(Index i) { return at(i).value; }
    const Tensor<S>& value(Index i) const { return at(i).value; }
    Tensor<S>& grad(Index i) { return at(i).grad; }

    std::vector<Parameter<S>*> pointers() {
        std::vector<Parameter<S>*> out;
        for (auto& p : items) out.push_back(&p);
        return out;
    }
    std::vector<const Parameter<S>*> pointers() const {
        std::vector<const Parameter<S>*> out;
        for (auto& p : items) out.push_back(&p);
        return out;
    }

    void zero_grads() {
        for (auto& p : items) p.zero_grad();
    }

  private:
    // uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)); embeddings
    // uniform(-0.1, 0.1); forget-gate bias +1 (gate packing [i f g o]).
    void init(std::uint64_t seed) {
        Rng rng(seed, "init");
        const std::size_t H = hidden;
        for (auto& p : items) {
            bool is_bias = p.value.shape.size() == 1;
            if (p.name == "embed.W") {
                for (S& v : p.value.data) v = static_cast<S>(rng.uniform(-0.1, 0.1));
            } else if (is_bias) {
                p.value.zero();
            } else {
                std::size_t fan_out = p.value.rows();
                std::size_t fan_in = p.value.cols();
                if (fan_out == 4 * H) fan_out = H; // per-gate fan-out for recurrent weights
                double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
                for (S& v : p.value.data) v = static_cast<S>(rng.uniform(-a, a));
            }
        }
        for (auto name : {kEncInB, kEncOutB, kDecB}) {
            Tensor<S>& b = value(name);
            for (std::size_t d = H; d < 2 * H; ++d) b.data[d] = S(1);
        }
    }
};

// The A-CVAE: input encoder, output encoder, recognition net, prior net,
// decoder, plus the training objective
//   total = reconstruction + beta * KL(posterior || prior)
//                          + lambda * KL(gold_k || posterior)
template <class S>
class Acvae {
  public:
    using Params = ModelParameters<S>;
    using Idx = typename Params::Index;

    Acvae(const ModelConfig& cfg, std::size_t vocab_size)
        : cfg_(cfg), params_(cfg, vocab_size, cfg.seed) {
        cfg_.validate();
    }

    const ModelConfig& config() const { return cfg_; }
    Params& params() { return params_; }
    const Params& params() const { return params_; }
    std::size_t vocab_size() const { return params_.vocab; }

    void save(const std::string& path) const {
        save_checkpoint(path, params_.pointers());
    }
    void load(const std::string& path) {
        auto ptrs = params_.pointers();
        load_checkpoint(path, ptrs);
    }

    // ---- encoder features -------------------------------------------------

    struct EncodeTrace {
        std::vector<Tensor<S>> ctx_x, resp_x;
        LstmTrace<S> enc_in, enc_out;
        std::vector<int> ctx_ids, resp_ids; // step-major copies for embedding backward
    };

    // r_C and r_X: final recurrent states of the two encoders, [B, H] each.
    std::pair<Tensor<S>, Tensor<S>> encode_pair(const Batch& batch) const {
        EncodeTrace tr;
        run_encoders(batch, tr);
        return {tr.enc_in.h_last(), tr.enc_out.h_last()};
    }

    // posterior q(z | X, C): MLP over [r_X ; r_C] -> (mu, logvar), [B, Z] each
    std::pair<Tensor<S>, Tensor<S>> recognition_features(const Tensor<S>& r_x,
                                                         const Tensor<S>& r_c) const {
        Tensor<S> in = concat_cols(r_x, r_c);
        MlpTrace<S> mlp;
        Tensor<S> out({in.rows(), 2 * params_.latent});
        mlp_forward(params_.value(Idx::kRecogW1), params_.value(Idx::kRecogB1),
                    params_.value(Idx::kRecogW2), params_.value(Idx::kRecogB2), in, out, mlp);
        return split_cols(out);
    }

    // prior p(z | C): MLP over r_C alone
    std::pair<Tensor<S>, Tensor<S>> prior_features(const Tensor<S>& r_c) const {
        MlpTrace<S> mlp;
        Tensor<S> out({r_c.rows(), 2 * params_.latent});
        mlp_forward(params_.value(Idx::kPriorW1), params_.value(Idx::kPriorB1),
                    params_.value(Idx::kPriorW2), params_.value(Idx::kPriorB2), r_c, out, mlp);
        return split_cols(out);
    }

    DiagonalGaussian recognition(const Batch& batch, std::size_t row = 0) const {
        auto [rc, rx] = encode_pair(batch);
        auto [mu, lv] = recognition_features(rx, rc);
        return row_gaussian(mu, lv, row);
    }

    DiagonalGaussian prior(const Batch& batch, std::size_t row = 0) const {
        auto [rc, rx] = encode_pair(batch);
        (void)rx;
        auto [mu, lv] = prior_features(rc);
        return row_gaussian(mu, lv, row);
    }

    // posterior mean of one pair; the latent-space export used for projection
    std::vector<double> encode_latent(const Batch& batch, std::size_t row = 0) const {
        return recognition(batch, row).mean();
    }

    // ---- objective ---------------------------------------------------------

    // Forward and (optionally) backward over one batch. eps is the external
    // reparameterization noise, shape [B, Z]. All gradients accumulate into
    // params().grad; callers zero them first.
    LossBreakdown loss(const Batch& batch, const GoldBankSet* gold, double beta, double lambda,
                       const Tensor<S>& eps, bool want_grad = true) {
        const std::size_t B = batch.size;
        const std::size_t H = params_.hidden;
        const std::size_t Z = params_.latent;
        const std::size_t V = params_.vocab;
        check_dim(eps.rows() == B && eps.cols() == Z, "loss", "eps");

        // -- forward --
        EncodeTrace enc;
        run_encoders(batch, enc);
        const Tensor<S>& rc = enc.enc_in.h_last();
        const Tensor<S>& rx = enc.enc_out.h_last();

        Tensor<S> recog_in = concat_cols(rx, rc);
        MlpTrace<S> recog_mlp;
        Tensor<S> recog_out({B, 2 * Z});
        mlp_forward(params_.value(Idx::kRecogW1), params_.value(Idx::kRecogB1),
                    params_.value(Idx::kRecogW2), params_.value(Idx::kRecogB2), recog_in,
                    recog_out, recog_mlp);

        MlpTrace<S> prior_mlp;
        Tensor<S> prior_out({B, 2 * Z});
        mlp_forward(params_.value(Idx::kPriorW1), params_.value(Idx::kPriorB1),
                    params_.value(Idx::kPriorW2), params_.value(Idx::kPriorB2), rc, prior_out,
                    prior_mlp);

        // z = mu + exp(lv/2) * eps
        Tensor<S> z({B, Z});
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t d = 0; d < Z; ++d)
                z.at(b, d) = recog_out.at(b, d) +
                             std::exp(recog_out.at(b, Z + d) / S(2)) * eps.at(b, d);

        // decoder initial state from [z ; r_C]
        Tensor<S> init_in = concat_cols(z, rc);
        Tensor<S> init_out({B, 2 * H});
        affine_forward(params_.value(Idx::kDecInitW), params_.value(Idx::kDecInitB), init_in, init_out);
        auto [h0, c0] = split_cols(init_out);

        // teacher-forced decoder: inputs resp[0..T-2], targets resp[1..T-1]
        const std::size_t Tdec = batch.resp_cols > 0 ? batch.resp_cols - 1 : 0;
        std::vector<int> dec_lengths(B);
        for (std::size_t b = 0; b < B; ++b) dec_lengths[b] = batch.resp_len[b] - 1;
        std::vector<Tensor<S>> dec_x(Tdec, Tensor<S>({B, params_.emb}));
        std::vector<std::vector<int>> dec_ids(Tdec, std::vector<int>(B));
        for (std::size_t t = 0; t < Tdec; ++t) {
            for (std::size_t b = 0; b < B; ++b)
                dec_ids[t][b] = static_cast<std::size_t>(batch.resp_len[b]) > t
                                    ? batch.resp_row(b)[t]
                                    : -1;
            embedding_forward(params_.value(Idx::kEmbed), dec_ids[t], dec_x[t]);
        }
        LstmTrace<S> dec;
        lstm_forward(params_.value(Idx::kDecW), params_.value(Idx::kDecU), params_.value(Idx::kDecB),
                     dec_x, dec_lengths, dec, &h0, &c0);

        double recon_sum = 0.0;
        std::vector<Tensor<S>> logits(Tdec);
        std::vector<SoftmaxXentTrace<S>> xent(Tdec);
        std::vector<std::vector<int>> targets(Tdec, std::vector<int>(B, -1));
        for (std::size_t t = 0; t < Tdec; ++t) {
            logits[t] = Tensor<S>({B, V});
            affine_forward(params_.value(Idx::kOutW), params_.value(Idx::kOutB), dec.h[t], logits[t]);
            for (std::size_t b = 0; b < B; ++b)
                if (t + 1 < static_cast<std::size_t>(batch.resp_len[b]))
                    targets[t][b] = batch.resp_row(b)[t + 1];
            recon_sum += softmax_xent_forward(logits[t], targets[t], xent[t]);
        }

        // KL terms, summed per example then averaged over the batch
        double prior_kl_sum = 0.0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t d = 0; d < Z; ++d)
                prior_kl_sum += static_cast<double>(
                    kl_diag_term(recog_out.at(b, d), recog_out.at(b, Z + d),
                                 prior_out.at(b, d), prior_out.at(b, Z + d)));

        double gold_kl_sum = 0.0;
        std::vector<GoldTerm> gold_terms;
        if (lambda != 0.0) gold_kl_sum = gold_forward(batch, recog_out, gold, gold_terms);

        LossBreakdown out;
        out.reconstruction = recon_sum / static_cast<double>(B);
        out.prior_kl = prior_kl_sum / static_cast<double>(B);
        out.gold_kl = gold_kl_sum / static_cast<double>(B);
        out.beta = beta;
        out.lambda = lambda;
        out.total = out.reconstruction + beta * out.prior_kl + lambda * out.gold_kl;

        if (!want_grad) return out;

        // -- backward --
        const S inv_b = S(1) / static_cast<S>(B);

        std::vector<Tensor<S>> dh_steps(Tdec, Tensor<S>({B, H}));
        for (std::size_t t = 0; t < Tdec; ++t) {
            Tensor<S> dlogits({B, V});
            softmax_xent_backward(xent[t], targets[t], inv_b, dlogits);
            affine_backward(params_.value(Idx::kOutW), dec.h[t], dlogits,
                            params_.grad(Idx::kOutW), params_.grad(Idx::kOutB), dh_steps[t]);
        }

        std::vector<Tensor<S>> d_dec_x(Tdec, Tensor<S>({B, params_.emb}));
        Tensor<S> dh0({B, H}), dc0({B, H});
        lstm_backward(params_.value(Idx::kDecW), params_.value(Idx::kDecU), dec_x, dec_lengths, dec,
                      &dh_steps, nullptr, nullptr, params_.grad(Idx::kDecW), params_.grad(Idx::kDecU),
                      params_.grad(Idx::kDecB), d_dec_x, &dh0, &dc0);
        for (std::size_t t = 0; t < Tdec; ++t)
            embedding_backward(dec_ids[t], d_dec_x[t], params_.grad(Idx::kEmbed));

        Tensor<S> d_init_out = concat_cols(dh0, dc0);
        Tensor<S> d_init_in({B, Z + H});
        affine_backward(params_.value(Idx::kDecInitW), init_in, d_init_out,
                        params_.grad(Idx::kDecInitW), params_.grad(Idx::kDecInitB), d_init_in);

        Tensor<S> dz({B, Z});
        Tensor<S> drc({B, H});
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t d = 0; d < Z; ++d) dz.at(b, d) = d_init_in.at(b, d);
            for (std::size_t d = 0; d < H; ++d) drc.at(b, d) = d_init_in.at(b, Z + d);
        }

        // reparameterization: dmu += dz, dlv += dz * eps * exp(lv/2) / 2
        Tensor<S> d_recog_out({B, 2 * Z});
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t d = 0; d < Z; ++d) {
                S sd = std::exp(recog_out.at(b, Z + d) / S(2));
                d_recog_out.at(b, d) += dz.at(b, d);
                d_recog_out.at(b, Z + d) += dz.at(b, d) * eps.at(b, d) * sd / S(2);
            }

        // KL(q || p) gradients into both nets, scaled by beta / B
        Tensor<S> d_prior_out({B, 2 * Z});
        const S beta_s = static_cast<S>(beta) * inv_b;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t d = 0; d < Z; ++d) {
                S mu_q = recog_out.at(b, d), lv_q = recog_out.at(b, Z + d);
                S mu_p = prior_out.at(b, d), lv_p = prior_out.at(b, Z + d);
                S e_lvq = std::exp(lv_q), e_nlvp = std::exp(-lv_p);
                S diff = mu_q - mu_p;
                d_recog_out.at(b, d) += beta_s * diff * e_nlvp;
                d_recog_out.at(b, Z + d) += beta_s * S(0.5) * (e_lvq * e_nlvp - S(1));
                d_prior_out.at(b, d) += beta_s * (-diff * e_nlvp);
                d_prior_out.at(b, Z + d) +=
                    beta_s * S(0.5) * (S(1) - (e_lvq + diff * diff) * e_nlvp);
            }

        // KL(gold || q) gradients into the recognition net, scaled by lambda / B
        if (lambda != 0.0) {
            const S lam_s = static_cast<S>(lambda) * inv_b;
            for (const GoldTerm& gt : gold_terms) {
                S mu_q = recog_out.at(gt.row, gt.dim), lv_q = recog_out.at(gt.row, Z + gt.dim);
                S e_nlvq = std::exp(-lv_q);
                S diff = static_cast<S>(gt.gold_mean) - mu_q;
                d_recog_out.at(gt.row, gt.dim) += lam_s * (-diff * e_nlvq);
                d_recog_out.at(gt.row, Z + gt.dim) +=
                    lam_s * S(0.5) *
                    (S(1) - (std::exp(static_cast<S>(gt.gold_logvar)) + diff * diff) * e_nlvq);
            }
        }

        Tensor<S> d_recog_in({B, 2 * H});
        mlp_backward(params_.value(Idx::kRecogW1), params_.value(Idx::kRecogW2), recog_in, recog_mlp,
                     d_recog_out, params_.grad(Idx::kRecogW1), params_.grad(Idx::kRecogB1),
                     params_.grad(Idx::kRecogW2), params_.grad(Idx::kRecogB2), d_recog_in);
        Tensor<S> drx({B, H});
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t d = 0; d < H; ++d) {
                drx.at(b, d) += d_recog_in.at(b, d);
                drc.at(b, d) += d_recog_in.at(b, H + d);
            }

        Tensor<S> d_prior_in({B, H});
        mlp_backward(params_.value(Idx::kPriorW1), params_.value(Idx::kPriorW2), rc, prior_mlp,
                     d_prior_out, params_.grad(Idx::kPriorW1), params_.grad(Idx::kPriorB1),
                     params_.grad(Idx::kPriorW2), params_.grad(Idx::kPriorB2), d_prior_in);
        for (std::size_t k = 0; k < drc.size(); ++k) drc.data[k] += d_prior_in.data[k];

        // back through the encoders
        std::vector<Tensor<S>> d_ctx_x(enc.ctx_x.size(), Tensor<S>({B, params_.emb}));
        std::vector<Tensor<S>> d_resp_x(enc.resp_x.size(), Tensor<S>({B, params_.emb}));
        std::vector<int> ctx_lengths(batch.ctx_len.begin(), batch.ctx_len.end());
        std::vector<int> resp_lengths(batch.resp_len.begin(), batch.resp_len.end());
        lstm_backward(params_.value(Idx::kEncInW), params_.value(Idx::kEncInU), enc.ctx_x,
                      ctx_lengths, enc.enc_in, nullptr, &drc, nullptr, params_.grad(Idx::kEncInW),
                      params_.grad(Idx::kEncInU), params_.grad(Idx::kEncInB), d_ctx_x);
        lstm_backward(params_.value(Idx::kEncOutW), params_.value(Idx::kEncOutU), enc.resp_x,
                      resp_lengths, enc.enc_out, nullptr, &drx, nullptr, params_.grad(Idx::kEncOutW),
                      params_.grad(Idx::kEncOutU), params_.grad(Idx::kEncOutB), d_resp_x);
        for (std::size_t t = 0; t < enc.ctx_x.size(); ++t) {
            std::vector<int> ids(B);
            for (std::size_t b = 0; b < B; ++b)
                ids[b] = static_cast<std::size_t>(batch.ctx_len[b]) > t ? batch.ctx_row(b)[t] : -1;
            embedding_backward(ids, d_ctx_x[t], params_.grad(Idx::kEmbed));
        }
        for (std::size_t t = 0; t < enc.resp_x.size(); ++t) {
            std::vector<int> ids(B);
            for (std::size_t b = 0; b < B; ++b)
                ids[b] = static_cast<std::size_t>(batch.resp_len[b]) > t ? batch.resp_row(b)[t] : -1;
            embedding_backward(ids, d_resp_x[t], params_.grad(Idx::kEmbed));
        }
        return out;
    }

    // ---- generation --------------------------------------------------------

    // Greedy decoding from the prior: z = mu' + sigma' * eps, then argmax per
    // step from SOS until EOS or max_len tokens. EOS is not included.
    std::vector<int> generate(const std::vector<int>& context, const std::vector<double>& eps,
                              std::size_t max_len) const {
        const std::size_t H = params_.hidden;
        const std::size_t Z = params_.latent;
        if (eps.size() != Z) throw std::invalid_argument("generate: eps length must equal latent dim");

        Batch b;
        b.size = 1;
        b.ctx_cols = context.size();
        b.context = context;
        b.ctx_len = {static_cast<int>(context.size())};
        b.resp_cols = 0;
        b.resp_len = {0};

        EncodeTrace enc;
        run_context_encoder(b, enc);
        const Tensor<S>& rc = enc.enc_in.h_last();
        auto [mu, lv] = prior_features(rc);
        DiagonalGaussian prior_g = row_gaussian(mu, lv, 0);
        std::vector<double> zi = reparam_sample(prior_g, eps);

        Tensor<S> init_in({1, Z + H});
        for (std::size_t d = 0; d < Z; ++d) init_in.at(0, d) = static_cast<S>(zi[d]);
        for (std::size_t d = 0; d < H; ++d) init_in.at(0, Z + d) = rc.at(0, d);
        Tensor<S> init_out({1, 2 * H});
        affine_forward(params_.value(Idx::kDecInitW), params_.value(Idx::kDecInitB), init_in, init_out);
        auto [h, c] = split_cols(init_out);

        std::vector<int> out;
        int tok = Vocabulary::kSos;
        std::vector<int> one_len = {1};
        for (std::size_t step = 0; step < max_len; ++step) {
            std::vector<Tensor<S>> x(1, Tensor<S>({1, params_.emb}));
            std::vector<int> ids = {tok};
            embedding_forward(params_.value(Idx::kEmbed), ids, x[0]);
            LstmTrace<S> tr;
            lstm_forward(params_.value(Idx::kDecW), params_.value(Idx::kDecU),
                         params_.value(Idx::kDecB), x, one_len, tr, &h, &c);
            h = tr.h_last();
            c = tr.c_last();
            Tensor<S> logits({1, params_.vocab});
            affine_forward(params_.value(Idx::kOutW), params_.value(Idx::kOutB), h, logits);
            int best = 0;
            for (std::size_t v = 1; v < params_.vocab; ++v)
                if (logits.data[v] > logits.data[static_cast<std::size_t>(best)])
                    best = static_cast<int>(v);
            if (best == Vocabulary::kEos) break;
            out.push_back(best);
            tok = best;
        }
        return out;
    }

    // ---- helpers -----------------------------------------------------------

    void run_encoders(const Batch& batch, EncodeTrace& tr) const {
        run_context_encoder(batch, tr);
        const std::size_t B = batch.size;
        tr.resp_x.assign(batch.resp_cols, Tensor<S>({B, params_.emb}));
        for (std::size_t t = 0; t < batch.resp_cols; ++t) {
            std::vector<int> ids(B);
            for (std::size_t b = 0; b < B; ++b)
                ids[b] = static_cast<std::size_t>(batch.resp_len[b]) > t ? batch.resp_row(b)[t] : -1;
            embedding_forward(params_.value(Idx::kEmbed), ids, tr.resp_x[t]);
        }
        std::vector<int> lengths(batch.resp_len.begin(), batch.resp_len.end());
        lstm_forward(params_.value(Idx::kEncOutW), params_.value(Idx::kEncOutU),
                     params_.value(Idx::kEncOutB), tr.resp_x, lengths, tr.enc_out);
    }

    void run_context_encoder(const Batch& batch, EncodeTrace& tr) const {
        const std::size_t B = batch.size;
        tr.ctx_x.assign(batch.ctx_cols, Tensor<S>({B, params_.emb}));
        for (std::size_t t = 0; t < batch.ctx_cols; ++t) {
            std::vector<int> ids(B);
            for (std::size_t b = 0; b < B; ++b)
                ids[b] = static_cast<std::size_t>(batch.ctx_len[b]) > t ? batch.ctx_row(b)[t] : -1;
            embedding_forward(params_.value(Idx::kEmbed), ids, tr.ctx_x[t]);
        }
        std::vector<int> lengths(batch.ctx_len.begin(), batch.ctx_len.end());
        lstm_forward(params_.value(Idx::kEncInW), params_.value(Idx::kEncInU),
                     params_.value(Idx::kEncInB), tr.ctx_x, lengths, tr.enc_in);
    }

    static Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b) {
        Tensor<S> out({a.rows(), a.cols() + b.cols()});
        for (std::size_t i = 0; i < a.rows(); ++i) {
            for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j);
            for (std::size_t j = 0; j < b.cols(); ++j) out.at(i, a.cols() + j) = b.at(i, j);
        }
        return out;
    }

    static std::pair<Tensor<S>, Tensor<S>> split_cols(const Tensor<S>& t) {
        std::size_t half = t.cols() / 2;
        Tensor<S> a({t.rows(), half}), b({t.rows(), half});
        for (std::size_t i = 0; i < t.rows(); ++i)
            for (std::size_t j = 0; j < half; ++j) {
                a.at(i, j) = t.at(i, j);
                b.at(i, j) = t.at(i, half + j);
            }
        return {std::move(a), std::move(b)};
    }

    static DiagonalGaussian row_gaussian(const Tensor<S>& mu, const Tensor<S>& lv, std::size_t row) {
        std::vector<double> m(mu.cols()), l(lv.cols());
        for (std::size_t d = 0; d < mu.cols(); ++d) {
            m[d] = static_cast<double>(mu.at(row, d));
            l[d] = static_cast<double>(lv.at(row, d));
        }
        return DiagonalGaussian(std::move(m), std::move(l));
    }

  private:
    struct GoldTerm {
        std::size_t row, dim;
        double gold_mean, gold_logvar;
    };

    // Sum over examples of KL(gold_k || q), slice-aware. Fills per-dimension
    // terms for the backward pass.
    double gold_forward(const Batch& batch, const Tensor<S>& recog_out, const GoldBankSet* gold,
                        std::vector<GoldTerm>& terms) const {
        if (!gold || gold->empty())
            throw std::invalid_argument("gold coefficient is nonzero but no gold bank was supplied");
        const std::size_t Z = params_.latent;

        struct Constraint {
            const GoldBank* bank;
            std::string label;
            std::size_t start, length;
        };
        std::vector<Constraint> constraints;
        if (cfg_.partition) {
            for (const auto& s : cfg_.partition->slices) {
                if (s.name == "common") continue; // undisentangled part: no gold pull
                auto it = gold->find(s.name);
                if (it == gold->end())
                    throw std::invalid_argument("no gold bank supplied for slice '" + s.name + "'");
                if (it->second.dim != Z)
                    throw std::invalid_argument("gold bank for '" + s.name + "' has dim " +
                                                std::to_string(it->second.dim) + ", expected " +
                                                std::to_string(Z));
                constraints.push_back({&it->second, s.name, s.start, s.length});
            }
        } else {
            if (gold->size() != 1)
                throw std::invalid_argument("expected exactly one gold bank without a partition");
            const auto& [label, bank] = *gold->begin();
            if (bank.dim != Z)
                throw std::invalid_argument("gold bank has dim " + std::to_string(bank.dim) +
                                            ", expected " + std::to_string(Z));
            constraints.push_back({&bank, label, 0, Z});
        }

        double sum = 0.0;
        for (std::size_t b = 0; b < batch.size; ++b) {
            for (const auto& cons : constraints) {
                auto it = batch.labels[b].find(cons.label);
                if (it == batch.labels[b].end())
                    throw std::invalid_argument("example has no '" + cons.label +
                                                "' label for gold selection");
                const DiagonalGaussian& g = cons.bank->at(it->second);
                for (std::size_t d = cons.start; d < cons.start + cons.length; ++d) {
                    double gm = g.mean()[d], glv = g.logvar()[d];
                    sum += static_cast<double>(kl_diag_term(
                        static_cast<S>(gm), static_cast<S>(glv), recog_out.at(b, d),
                        recog_out.at(b, Z + d)));
                    terms.push_back({b, d, gm, glv});
                }
            }
        }
        return sum;
    }

    ModelConfig cfg_;
    Params params_;
};

// ---------------------------------------------------------------------------
// training loop

struct EpochLog {
    std::size_t epoch = 0;
    LossBreakdown mean; // averages over the epoch's updates
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
    std::vector<LossBreakdown> steps; // per-update breakdowns, in order
    std::size_t updates = 0;
    bool aborted = false;
    std::string abort_reason;
};

// Runs max_epochs of shuffled batches. beta follows anneal_beta on the global
// update counter. On a non-finite loss or gradient the parameters are rolled
// back to the end of the last completed epoch and the run stops.
template <class S>
TrainResult train_model(Acvae<S>& model, const OptimizerConfig& opt,
                        const std::vector<RawExchange>& pairs, const Vocabulary& vocab,
                        const GoldBankSet* gold) {
    if (pairs.empty()) throw std::invalid_argument("training corpus is empty");
    const ModelConfig& cfg = model.config();
    cfg.validate();
    opt.validate();

    TrainResult result;
    Rng eps_rng(cfg.seed, "eps-noise");
    auto ptrs = model.params().pointers();

    auto snapshot = [&] {
        std::vector<std::tuple<Tensor<S>, Tensor<S>, Tensor<S>, std::int64_t>> s;
        for (auto* p : ptrs) s.emplace_back(p->value, p->m, p->v, p->step);
        return s;
    };
    auto restore = [&](const auto& s) {
        for (std::size_t i = 0; i < ptrs.size(); ++i) {
            ptrs[i]->value = std::get<0>(s[i]);
            ptrs[i]->m = std::get<1>(s[i]);
            ptrs[i]->v = std::get<2>(s[i]);
            ptrs[i]->step = std::get<3>(s[i]);
        }
    };
    auto last_good = snapshot();

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        auto batches = make_batches(pairs, vocab, cfg.batch_size, cfg.max_len,
                                    derive_seed(cfg.seed, "epoch-shuffle", epoch));
        LossBreakdown acc;
        std::size_t n = 0;
        for (const Batch& batch : batches) {
            double beta = anneal_beta(step, cfg.beta_ramp_updates, cfg.beta_cycle_updates);
            Tensor<S> eps({batch.size, cfg.latent_dim});
            for (S& v : eps.data) v = static_cast<S>(eps_rng.normal());

            model.params().zero_grads();
            LossBreakdown lb;
            try {
                lb = model.loss(batch, gold, beta, cfg.lambda_gold, eps, true);
                if (!std::isfinite(lb.total)) throw std::runtime_error("non-finite loss");
                adam_step(ptrs, opt, epoch);
            } catch (const std::runtime_error& e) {
                restore(last_good);
                result.aborted = true;
                result.abort_reason = std::string(e.what()) + " at update " + std::to_string(step);
                result.updates = step;
                return result;
            }
            result.steps.push_back(lb);
            acc.reconstruction += lb.reconstruction;
            acc.prior_kl += lb.prior_kl;
            acc.gold_kl += lb.gold_kl;
            acc.beta += lb.beta;
            acc.lambda += lb.lambda;
            acc.total += lb.total;
            ++n;
            ++step;
        }
        EpochLog log;
        log.epoch = epoch;
        log.lr = opt.rate_at_epoch(epoch);
        log.mean.reconstruction = acc.reconstruction / static_cast<double>(n);
        log.mean.prior_kl = acc.prior_kl / static_cast<double>(n);
        log.mean.gold_kl = acc.gold_kl / static_cast<double>(n);
        log.mean.beta = acc.beta / static_cast<double>(n);
        log.mean.lambda = acc.lambda / static_cast<double>(n);
        log.mean.total = acc.total / static_cast<double>(n);
        result.epochs.push_back(log);
        last_good = snapshot();
    }
    result.updates = step;
    return result;
}

} // namespace acvae
