#include "acvae/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace acvae {

using nlohmann::json;

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        // model
        "embedding_dim", "hidden_dim", "latent_dim", "mlp_hidden_dim",
        "beta_ramp_updates", "beta_cycle_updates", "lambda_gold", "batch_size",
        "max_epochs", "max_len", "seed", "partition",
        // optimizer
        "learning_rate", "lr_decay", "adam_beta1", "adam_beta2", "adam_eps",
        "grad_clip_norm",
        // corpus / phase 1 / evaluation
        "vocab_cap", "label", "pretrain_epochs", "pretrain_sample", "pretrain_aggregation",
        "classifier", "bootstrap_resamples",
        // paths (flags can override these)
        "corpus", "taxonomy", "vocab", "bank", "checkpoint", "log", "cache",
        "contexts", "predictions", "report", "csv", "output",
    };
    return keys;
}

json defaults() {
    json j;
    j["embedding_dim"] = 300;
    j["hidden_dim"] = 300;
    j["latent_dim"] = 200;
    j["mlp_hidden_dim"] = 250;
    j["beta_ramp_updates"] = 10000;
    j["beta_cycle_updates"] = 0;
    j["lambda_gold"] = 1.0;
    j["batch_size"] = 32;
    j["max_epochs"] = 30;
    j["max_len"] = 30;
    j["seed"] = 1;
    j["learning_rate"] = 1e-4;
    j["lr_decay"] = 0.99;
    j["adam_beta1"] = 0.9;
    j["adam_beta2"] = 0.999;
    j["adam_eps"] = 1e-8;
    j["grad_clip_norm"] = 5.0;
    j["vocab_cap"] = 6918;
    j["label"] = "emotion";
    j["pretrain_epochs"] = 10;
    j["pretrain_sample"] = 0;
    j["pretrain_aggregation"] = "average";
    j["classifier"] = "bow";
    j["bootstrap_resamples"] = 1000;
    return j;
}

} // namespace

RunConfig::RunConfig() : data_(defaults()) {}

void RunConfig::check_key(const std::string& key) const {
    if (known_keys().find(key) == known_keys().end())
        throw std::invalid_argument("unknown config key '" + key + "'");
}

void RunConfig::merge_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed config file " + path + ": " + e.what());
    }
    if (!j.is_object()) throw std::runtime_error("config file must hold a JSON object");
    for (const auto& [key, value] : j.items()) {
        check_key(key);
        data_[key] = value;
    }
}

void RunConfig::merge_override(const std::string& key_eq_value) {
    auto eq = key_eq_value.find('=');
    if (eq == std::string::npos || eq == 0)
        throw std::invalid_argument("--set expects key=value, got '" + key_eq_value + "'");
    std::string key = key_eq_value.substr(0, eq);
    std::string value = key_eq_value.substr(eq + 1);
    check_key(key);
    json parsed = json::parse(value, nullptr, false); // number/bool/array if it parses
    data_[key] = parsed.is_discarded() ? json(value) : parsed;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig cfg;
    cfg.embedding_dim = data_.at("embedding_dim").get<std::size_t>();
    cfg.hidden_dim = data_.at("hidden_dim").get<std::size_t>();
    cfg.latent_dim = data_.at("latent_dim").get<std::size_t>();
    cfg.mlp_hidden_dim = data_.at("mlp_hidden_dim").get<std::size_t>();
    cfg.beta_ramp_updates = data_.at("beta_ramp_updates").get<std::size_t>();
    cfg.beta_cycle_updates = data_.at("beta_cycle_updates").get<std::size_t>();
    cfg.lambda_gold = data_.at("lambda_gold").get<double>();
    cfg.batch_size = data_.at("batch_size").get<std::size_t>();
    cfg.max_epochs = data_.at("max_epochs").get<std::size_t>();
    cfg.max_len = data_.at("max_len").get<std::size_t>();
    cfg.seed = data_.at("seed").get<std::uint64_t>();
    if (data_.contains("partition") && !data_["partition"].is_null()) {
        LatentPartition p;
        std::size_t start = 0;
        for (const auto& s : data_["partition"]) {
            LatentSlice slice;
            slice.name = s.at("name").get<std::string>();
            slice.length = s.at("length").get<std::size_t>();
            slice.start = start;
            start += slice.length;
            p.slices.push_back(std::move(slice));
        }
        cfg.partition = std::move(p);
    }
    cfg.validate();
    return cfg;
}

OptimizerConfig RunConfig::optimizer_config() const {
    OptimizerConfig cfg;
    cfg.learning_rate = data_.at("learning_rate").get<double>();
    cfg.lr_decay = data_.at("lr_decay").get<double>();
    cfg.beta1 = data_.at("adam_beta1").get<double>();
    cfg.beta2 = data_.at("adam_beta2").get<double>();
    cfg.eps = data_.at("adam_eps").get<double>();
    cfg.clip_norm = data_.at("grad_clip_norm").get<double>();
    cfg.validate();
    return cfg;
}

std::uint64_t RunConfig::seed() const { return data_.at("seed").get<std::uint64_t>(); }
std::string RunConfig::label() const { return data_.at("label").get<std::string>(); }
std::size_t RunConfig::vocab_cap() const { return data_.at("vocab_cap").get<std::size_t>(); }
std::size_t RunConfig::pretrain_epochs() const { return data_.at("pretrain_epochs").get<std::size_t>(); }
std::size_t RunConfig::pretrain_sample() const { return data_.at("pretrain_sample").get<std::size_t>(); }

AggregationMode RunConfig::pretrain_aggregation() const {
    std::string mode = data_.at("pretrain_aggregation").get<std::string>();
    if (mode == "average") return AggregationMode::kAverage;
    if (mode == "mixture") return AggregationMode::kMixtureMoments;
    throw std::invalid_argument("pretrain_aggregation must be 'average' or 'mixture', got '" + mode + "'");
}
std::size_t RunConfig::bootstrap_resamples() const {
    return data_.at("bootstrap_resamples").get<std::size_t>();
}

ClassifierKind RunConfig::classifier_kind() const {
    std::string kind = data_.at("classifier").get<std::string>();
    if (kind == "bow") return ClassifierKind::kBagOfWordsLogistic;
    if (kind == "cvae") return ClassifierKind::kCvaeLabel;
    throw std::invalid_argument("classifier must be 'bow' or 'cvae', got '" + kind + "'");
}

bool RunConfig::has(const std::string& key) const {
    return data_.contains(key) && !data_[key].is_null();
}

std::string RunConfig::str(const std::string& key) const {
    if (!has(key)) throw std::invalid_argument("config key '" + key + "' is required but not set");
    return data_.at(key).get<std::string>();
}

std::vector<std::string> RunConfig::str_list(const std::string& key) const {
    if (!has(key)) return {};
    const json& v = data_.at(key);
    if (v.is_string()) return {v.get<std::string>()};
    return v.get<std::vector<std::string>>();
}

double RunConfig::number(const std::string& key) const { return data_.at(key).get<double>(); }

} // namespace acvae
