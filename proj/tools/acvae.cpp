// acvae: prepare / pretrain-gold / train / generate / evaluate / export-latent
//
// exit codes: 0 success, 1 usage error, 2 data or model error

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "acvae/config.hpp"
#include "acvae/corpus.hpp"
#include "acvae/goldpretrain.hpp"
#include "acvae/latentmap.hpp"
#include "acvae/metrics.hpp"
#include "acvae/model.hpp"
#include "acvae/parallel.hpp"
#include "acvae/rng.hpp"

namespace {

using acvae::RunConfig;
using nlohmann::json;

std::vector<acvae::LabelTaxonomy> load_taxonomies(const RunConfig& cfg) {
    std::vector<acvae::LabelTaxonomy> out;
    for (const auto& path : cfg.str_list("taxonomy")) out.push_back(acvae::LabelTaxonomy::load(path));
    if (out.empty()) throw std::runtime_error("no taxonomy configured (set 'taxonomy')");
    return out;
}

const acvae::LabelTaxonomy& taxonomy_for_label(const std::vector<acvae::LabelTaxonomy>& taxonomies,
                                               const std::string& label) {
    for (const auto& t : taxonomies)
        if (t.label == label) return t;
    throw std::runtime_error("no taxonomy provided for label '" + label + "'");
}

// "label=path" entries, or one bare path keyed by the config label
acvae::GoldBankSet load_banks(const RunConfig& cfg, std::size_t latent_dim) {
    acvae::GoldBankSet banks;
    for (const auto& entry : cfg.str_list("bank")) {
        auto eq = entry.find('=');
        std::string label = eq == std::string::npos ? cfg.label() : entry.substr(0, eq);
        std::string path = eq == std::string::npos ? entry : entry.substr(eq + 1);
        banks.emplace(label, acvae::GoldBank::load(path, latent_dim));
    }
    return banks;
}

struct ContextRecord {
    std::string context;
    std::optional<std::string> reference;
    std::optional<json> labels;
};

std::vector<ContextRecord> load_contexts(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read contexts file: " + path);
    std::vector<ContextRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
        }
        ContextRecord rec;
        if (!j.contains("context"))
            throw std::runtime_error("line " + std::to_string(line_no) + ": record has no 'context'");
        rec.context = j.at("context").get<std::string>();
        if (j.contains("response")) rec.reference = j.at("response").get<std::string>();
        if (j.contains("reference")) rec.reference = j.at("reference").get<std::string>();
        if (j.contains("labels")) rec.labels = j.at("labels");
        out.push_back(std::move(rec));
    }
    return out;
}

struct PredictionRecord {
    std::string context, reference, generated;
    std::optional<int> label;
};

std::vector<PredictionRecord> load_predictions(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read predictions file: " + path);
    std::vector<PredictionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
        }
        PredictionRecord rec;
        for (const char* field : {"context", "reference", "generated"})
            if (!j.contains(field))
                throw std::runtime_error("line " + std::to_string(line_no) + ": record has no '" +
                                         std::string(field) + "'");
        rec.context = j.at("context").get<std::string>();
        rec.reference = j.at("reference").get<std::string>();
        rec.generated = j.at("generated").get<std::string>();
        if (j.contains("label") && j["label"].is_number()) rec.label = j["label"].get<int>();
        out.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------

int cmd_prepare(const RunConfig& cfg) {
    auto taxonomies = load_taxonomies(cfg);
    auto pairs = acvae::load_corpus(cfg.str("corpus"), taxonomies);
    auto vocab = acvae::build_vocabulary(pairs, cfg.vocab_cap());
    vocab.save(cfg.str("vocab"));
    std::cout << "vocabulary: " << vocab.size() << " tokens from " << pairs.size() << " pairs\n";

    if (cfg.has("cache")) {
        std::ofstream out(cfg.str("cache"), std::ios::binary);
        if (!out) throw std::runtime_error("cannot write cache file: " + cfg.str("cache"));
        for (const auto& p : pairs) {
            json j;
            j["context_ids"] = acvae::encode(p.context, vocab);
            j["response_ids"] = acvae::encode(p.response, vocab);
            j["labels"] = p.labels;
            out << j.dump() << "\n";
        }
        std::cout << "cache: " << pairs.size() << " encoded pairs\n";
    }
    return 0;
}

int cmd_pretrain_gold(const RunConfig& cfg) {
    auto taxonomies = load_taxonomies(cfg);
    const auto& tax = taxonomy_for_label(taxonomies, cfg.label());
    auto pairs = acvae::load_corpus(cfg.str("corpus"), taxonomies);
    auto vocab = acvae::Vocabulary::load(cfg.str("vocab"));

    auto sub = acvae::split_by_category(pairs, tax.label, tax.categories.size());

    acvae::PretrainOptions opts;
    opts.model = cfg.model_config();
    opts.optimizer = cfg.optimizer_config();
    opts.epochs = cfg.pretrain_epochs();
    opts.sample_size = cfg.pretrain_sample();
    opts.aggregation = cfg.pretrain_aggregation();
    opts.seed = cfg.seed();
    acvae::GoldBank bank = acvae::pretrain_gold(sub, vocab, opts);
    bank.partition = opts.model.partition;
    bank.save(cfg.str("bank"));
    std::cout << "gold bank: " << bank.categories.size() << " categories, dim " << bank.dim << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    auto taxonomies = load_taxonomies(cfg);
    auto pairs = acvae::load_corpus(cfg.str("corpus"), taxonomies);
    auto vocab = acvae::Vocabulary::load(cfg.str("vocab"));

    acvae::ModelConfig model_cfg = cfg.model_config();
    acvae::GoldBankSet banks = load_banks(cfg, model_cfg.latent_dim);
    if (model_cfg.lambda_gold != 0.0 && banks.empty())
        throw std::runtime_error("lambda_gold is nonzero but no gold bank was configured");

    acvae::Acvae<float> model(model_cfg, vocab.size());
    acvae::TrainResult result = acvae::train_model(model, cfg.optimizer_config(), pairs, vocab,
                                                   banks.empty() ? nullptr : &banks);

    model.save(cfg.str("checkpoint"));
    if (cfg.has("log")) {
        std::ofstream out(cfg.str("log"), std::ios::binary);
        if (!out) throw std::runtime_error("cannot write log file: " + cfg.str("log"));
        for (const auto& e : result.epochs) {
            json j;
            j["epoch"] = e.epoch;
            j["recon"] = e.mean.reconstruction;
            j["prior_kl"] = e.mean.prior_kl;
            j["gold_kl"] = e.mean.gold_kl;
            j["beta"] = e.mean.beta;
            j["lambda"] = e.mean.lambda;
            j["total"] = e.mean.total;
            j["lr"] = e.lr;
            out << j.dump() << "\n";
        }
    }
    if (result.aborted)
        throw std::runtime_error("training aborted (" + result.abort_reason +
                                 "); last good checkpoint written");
    std::cout << "trained " << result.epochs.size() << " epochs, " << result.updates
              << " updates; final mean total " << result.epochs.back().mean.total << "\n";
    return 0;
}

int cmd_generate(const RunConfig& cfg) {
    auto vocab = acvae::Vocabulary::load(cfg.str("vocab"));
    acvae::ModelConfig model_cfg = cfg.model_config();
    acvae::Acvae<float> model(model_cfg, vocab.size());
    model.load(cfg.str("checkpoint"));

    auto contexts = load_contexts(cfg.str("contexts"));
    std::vector<std::string> generated(contexts.size());
    acvae::parallel_for(contexts.size(), [&](std::size_t i) {
        std::vector<int> ids = acvae::encode(contexts[i].context, vocab);
        if (ids.size() > model_cfg.max_len) ids.resize(model_cfg.max_len);
        std::vector<double> eps(model_cfg.latent_dim);
        acvae::Rng rng(model_cfg.seed, "eps-noise", i);
        for (double& e : eps) e = rng.normal();
        std::vector<int> out = model.generate(ids, eps, model_cfg.max_len);
        generated[i] = acvae::decode(out, vocab);
    });

    std::ofstream out(cfg.str("output"), std::ios::binary);
    if (!out) throw std::runtime_error("cannot write output file: " + cfg.str("output"));
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        json j;
        j["context"] = contexts[i].context;
        if (contexts[i].reference) j["reference"] = *contexts[i].reference;
        j["generated"] = generated[i];
        if (contexts[i].labels) j["labels"] = *contexts[i].labels;
        out << j.dump() << "\n";
    }
    std::cout << "generated " << contexts.size() << " responses\n";
    return 0;
}

int cmd_evaluate(const RunConfig& cfg) {
    auto predictions = load_predictions(cfg.str("predictions"));
    if (predictions.empty()) throw std::runtime_error("predictions file is empty");

    std::vector<acvae::Tokens> refs(predictions.size()), gens(predictions.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        refs[i] = acvae::tokenize(predictions[i].reference);
        gens[i] = acvae::tokenize(predictions[i].generated);
        if (refs[i].empty())
            throw std::runtime_error("prediction " + std::to_string(i + 1) +
                                     " has an empty reference");
    }
    std::vector<double> bleu_scores(predictions.size()), rouge_scores(predictions.size()),
        meteor_scores(predictions.size());
    acvae::parallel_for(predictions.size(), [&](std::size_t i) {
        bleu_scores[i] = acvae::bleu(gens[i], refs[i]);
        rouge_scores[i] = acvae::rouge_l(gens[i], refs[i]);
        meteor_scores[i] = acvae::meteor_lite(gens[i], refs[i]);
    });

    const std::size_t resamples = cfg.bootstrap_resamples();
    const std::uint64_t seed = cfg.seed();
    json report;
    auto put = [&](const char* key, const std::vector<double>& scores) {
        acvae::BootstrapReport rep = acvae::bootstrap_report(scores, resamples, seed);
        report[key] = {{"mean", rep.mean},
                       {"ci", rep.half_width},
                       {"ci_low", rep.ci_low},
                       {"ci_high", rep.ci_high}};
    };
    put("bleu", bleu_scores);
    put("rouge_l", rouge_scores);
    put("meteor_lite", meteor_scores);
    report["distinct2"] = {{"value", acvae::distinct_n(gens, 2)}};

    // IEID needs a labeled corpus to train the classifier on
    if (cfg.has("corpus") && cfg.has("taxonomy")) {
        auto taxonomies = load_taxonomies(cfg);
        const auto& tax = taxonomy_for_label(taxonomies, cfg.label());
        auto corpus = acvae::load_corpus(cfg.str("corpus"), taxonomies);
        acvae::Classifier clf =
            acvae::train_classifier(corpus, tax.label, cfg.classifier_kind(), seed);
        std::vector<acvae::EvalPair> pairs(predictions.size());
        for (std::size_t i = 0; i < predictions.size(); ++i) {
            pairs[i].reference = refs[i];
            pairs[i].generated = gens[i];
            if (predictions[i].label) pairs[i].label = *predictions[i].label;
        }
        report["ieid"] = {{"value", acvae::ieid(pairs, clf)},
                          {"classifier_accuracy", clf.held_out_accuracy()}};
    }

    std::ofstream out(cfg.str("report"), std::ios::binary);
    if (!out) throw std::runtime_error("cannot write report file: " + cfg.str("report"));
    out << report.dump(2) << "\n";
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_export_latent(const RunConfig& cfg) {
    auto taxonomies = load_taxonomies(cfg);
    const auto& tax = taxonomy_for_label(taxonomies, cfg.label());
    auto pairs = acvae::load_corpus(cfg.str("corpus"), taxonomies);
    auto vocab = acvae::Vocabulary::load(cfg.str("vocab"));

    acvae::ModelConfig model_cfg = cfg.model_config();
    acvae::Acvae<float> model(model_cfg, vocab.size());
    model.load(cfg.str("checkpoint"));

    acvae::Batch batch = acvae::make_single_batch(pairs, vocab, model_cfg.max_len);
    auto [rc, rx] = model.encode_pair(batch);
    auto [mu, lv] = model.recognition_features(rx, rc);
    (void)lv;

    std::vector<acvae::LatentRecord> records(pairs.size());
    std::vector<std::vector<double>> vecs(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        records[i].id = static_cast<int>(i);
        records[i].label = batch.labels[i].at(tax.label);
        records[i].vec.resize(model_cfg.latent_dim);
        for (std::size_t d = 0; d < model_cfg.latent_dim; ++d)
            records[i].vec[d] = static_cast<double>(mu.at(i, d));
        vecs[i] = records[i].vec;
    }
    auto proj = acvae::project_pca(vecs);
    for (std::size_t i = 0; i < records.size(); ++i) {
        records[i].x = proj[i][0];
        records[i].y = proj[i][1];
    }
    acvae::export_csv(records, cfg.str("csv"));

    std::vector<int> labels;
    for (const auto& r : records) labels.push_back(r.label);
    std::cout << "separation_ratio: " << acvae::separation_ratio(vecs, labels) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"A-CVAE dialogue model: training, generation, and evaluation"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--set", overrides, "override a config key, key=value");

    // per-subcommand path flags; each overrides the same-named config key
    struct PathFlag {
        const char* flag;
        const char* key;
    };
    auto add_paths = [&](CLI::App* sub, std::initializer_list<PathFlag> flags,
                         std::map<std::string, std::pair<std::string, bool>>& store) {
        for (const auto& f : flags) {
            store[f.key] = {"", false};
            auto* opt = sub->add_option(f.flag, store[f.key].first);
            opt->each([&store, key = std::string(f.key)](const std::string&) {
                store[key].second = true;
            });
        }
    };

    std::map<std::string, std::map<std::string, std::pair<std::string, bool>>> path_flags;
    std::map<std::string, std::vector<std::string>> list_flags; // taxonomy / bank lists

    auto* prepare = app.add_subcommand("prepare", "build vocabulary and encoded cache from a corpus");
    prepare->fallthrough();
    add_paths(prepare, {{"--corpus", "corpus"}, {"--vocab-out", "vocab"}, {"--cache-out", "cache"}},
              path_flags["prepare"]);
    prepare->add_option("--taxonomy", list_flags["prepare.taxonomy"], "taxonomy file(s)");

    auto* pretrain = app.add_subcommand("pretrain-gold", "train per-category priors into a gold bank");
    pretrain->fallthrough();
    add_paths(pretrain, {{"--corpus", "corpus"}, {"--vocab", "vocab"}, {"--out", "bank"}},
              path_flags["pretrain-gold"]);
    pretrain->add_option("--taxonomy", list_flags["pretrain-gold.taxonomy"], "taxonomy file(s)");

    auto* train = app.add_subcommand("train", "train the model");
    train->fallthrough();
    add_paths(train,
              {{"--corpus", "corpus"}, {"--vocab", "vocab"}, {"--checkpoint-out", "checkpoint"},
               {"--log-out", "log"}},
              path_flags["train"]);
    train->add_option("--taxonomy", list_flags["train.taxonomy"], "taxonomy file(s)");
    train->add_option("--bank", list_flags["train.bank"], "gold bank(s), path or label=path");

    auto* generate = app.add_subcommand("generate", "generate responses for a contexts file");
    generate->fallthrough();
    add_paths(generate,
              {{"--checkpoint", "checkpoint"}, {"--vocab", "vocab"}, {"--contexts", "contexts"},
               {"--out", "output"}},
              path_flags["generate"]);

    auto* evaluate = app.add_subcommand("evaluate", "score predictions and write a metric report");
    evaluate->fallthrough();
    add_paths(evaluate,
              {{"--predictions", "predictions"}, {"--out", "report"}, {"--corpus", "corpus"},
               {"--vocab", "vocab"}},
              path_flags["evaluate"]);
    evaluate->add_option("--taxonomy", list_flags["evaluate.taxonomy"], "taxonomy file(s)");

    auto* export_latent = app.add_subcommand("export-latent", "export posterior means and 2D projection");
    export_latent->fallthrough();
    add_paths(export_latent,
              {{"--checkpoint", "checkpoint"}, {"--vocab", "vocab"}, {"--corpus", "corpus"},
               {"--out", "csv"}},
              path_flags["export-latent"]);
    export_latent->add_option("--taxonomy", list_flags["export-latent.taxonomy"], "taxonomy file(s)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 1;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg.merge_file(config_path);
        for (const auto& kv : overrides) cfg.merge_override(kv);

        CLI::App* sub = app.get_subcommands().front();
        const std::string name = sub->get_name();
        for (const auto& [key, value] : path_flags[name])
            if (value.second) cfg.merge_override(key + "=" + value.first);
        if (auto it = list_flags.find(name + ".taxonomy");
            it != list_flags.end() && !it->second.empty()) {
            nlohmann::json arr = it->second;
            cfg.merge_override("taxonomy=" + arr.dump());
        }
        if (auto it = list_flags.find(name + ".bank"); it != list_flags.end() && !it->second.empty()) {
            nlohmann::json arr = it->second;
            cfg.merge_override("bank=" + arr.dump());
        }

        if (name == "prepare") return cmd_prepare(cfg);
        if (name == "pretrain-gold") return cmd_pretrain_gold(cfg);
        if (name == "train") return cmd_train(cfg);
        if (name == "generate") return cmd_generate(cfg);
        if (name == "evaluate") return cmd_evaluate(cfg);
        if (name == "export-latent") return cmd_export_latent(cfg);
        std::cerr << "unknown subcommand\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1; // bad flag/config values are usage errors
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
