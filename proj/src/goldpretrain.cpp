#include "acvae/goldpretrain.hpp"

#include <stdexcept>

#include "acvae/rng.hpp"

namespace acvae {

std::map<int, std::vector<RawExchange>> split_by_category(const std::vector<RawExchange>& pairs,
                                                          const std::string& label,
                                                          std::size_t num_categories) {
    std::map<int, std::vector<RawExchange>> out;
    for (std::size_t k = 0; k < num_categories; ++k) out[static_cast<int>(k)] = {};
    for (const auto& p : pairs) {
        auto it = p.labels.find(label);
        if (it == p.labels.end())
            throw std::runtime_error("pair is missing label '" + label + "'");
        auto slot = out.find(it->second);
        if (slot == out.end())
            throw std::runtime_error("label '" + label + "' has category id " +
                                     std::to_string(it->second) + " outside 0.." +
                                     std::to_string(num_categories - 1));
        slot->second.push_back(p);
    }
    return out;
}

GoldBank pretrain_gold(const std::map<int, std::vector<RawExchange>>& sub_corpora,
                       const Vocabulary& vocab, const PretrainOptions& opts) {
    if (sub_corpora.empty()) throw std::invalid_argument("pretrain_gold: no sub-corpora");
    bool any = false;
    for (const auto& [k, pairs] : sub_corpora) any = any || !pairs.empty();
    if (!any) throw std::invalid_argument("pretrain_gold: all sub-corpora are empty");

    GoldBank bank;
    bank.dim = opts.model.latent_dim;

    for (const auto& [category, pairs] : sub_corpora) {
        if (pairs.empty())
            throw std::invalid_argument("pretrain_gold: sub-corpus for category " +
                                        std::to_string(category) + " is empty");

        // seeded per-category sample
        std::vector<RawExchange> sample = pairs;
        Rng sample_rng(opts.seed, "gold-sample", static_cast<std::uint64_t>(category));
        sample_rng.shuffle(sample);
        if (opts.sample_size > 0 && sample.size() > opts.sample_size)
            sample.resize(opts.sample_size);

        ModelConfig cfg = opts.model;
        cfg.lambda_gold = 0.0;
        cfg.max_epochs = opts.epochs;
        cfg.partition.reset();
        cfg.seed = derive_seed(opts.seed, "gold-train", static_cast<std::uint64_t>(category));

        Acvae<float> model(cfg, vocab.size());
        TrainResult tr = train_model(model, opts.optimizer, sample, vocab, nullptr);
        if (tr.aborted)
            throw std::runtime_error("phase-1 training for category " + std::to_string(category) +
                                     " aborted: " + tr.abort_reason);

        // posterior of every sampled pair, then the D5 average
        Batch batch = make_single_batch(sample, vocab, cfg.max_len);
        auto [rc, rx] = model.encode_pair(batch);
        auto [mu, lv] = model.recognition_features(rx, rc);
        std::vector<DiagonalGaussian> posteriors;
        posteriors.reserve(batch.size);
        for (std::size_t b = 0; b < batch.size; ++b)
            posteriors.push_back(Acvae<float>::row_gaussian(mu, lv, b));
        bank.categories.push_back(aggregate_posteriors(posteriors, opts.aggregation));
    }
    bank.validate();
    return bank;
}

} // namespace acvae
