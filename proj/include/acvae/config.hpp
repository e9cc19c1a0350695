#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "acvae/metrics.hpp"
#include "acvae/model.hpp"

namespace acvae {

// Flat key/value configuration: built-in defaults, overlaid by a JSON config
// file, overlaid by --set key=value flags. Unknown keys are rejected.
class RunConfig {
  public:
    RunConfig(); // defaults only

    void merge_file(const std::string& path);
    void merge_override(const std::string& key_eq_value); // "key=value"

    ModelConfig model_config() const;
    OptimizerConfig optimizer_config() const;

    std::uint64_t seed() const;
    std::string label() const;
    std::size_t vocab_cap() const;
    std::size_t pretrain_epochs() const;
    std::size_t pretrain_sample() const;
    AggregationMode pretrain_aggregation() const;
    std::size_t bootstrap_resamples() const;
    ClassifierKind classifier_kind() const;

    bool has(const std::string& key) const;
    std::string str(const std::string& key) const;
    std::vector<std::string> str_list(const std::string& key) const;
    double number(const std::string& key) const;

    const nlohmann::json& raw() const { return data_; }

  private:
    void check_key(const std::string& key) const;
    nlohmann::json data_;
};

} // namespace acvae
