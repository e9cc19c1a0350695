#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "acvae/corpus.hpp"
#include "acvae/gaussian.hpp"
#include "acvae/model.hpp"

namespace acvae {

// Partitions pairs by the given label's category id. Every id in
// [0, num_categories) gets an entry, possibly empty.
std::map<int, std::vector<RawExchange>> split_by_category(const std::vector<RawExchange>& pairs,
                                                          const std::string& label,
                                                          std::size_t num_categories);

struct PretrainOptions {
    ModelConfig model;        // lambda is ignored; phase 1 is a plain CVAE
    OptimizerConfig optimizer;
    std::size_t epochs = 10;      // shortened phase-1 budget
    std::size_t sample_size = 0;  // per-category training sample; 0 = all
    std::uint64_t seed = 1;
    AggregationMode aggregation = AggregationMode::kAverage;
};

// Phase 1: per category, train a lambda=0 model on a seeded sample of that
// category's pairs, run the recognition net back over the sample, and
// collapse the per-example posteriors into one gold Gaussian.
GoldBank pretrain_gold(const std::map<int, std::vector<RawExchange>>& sub_corpora,
                       const Vocabulary& vocab, const PretrainOptions& opts);

} // namespace acvae
