#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "acvae/corpus.hpp"
#include "acvae/model.hpp"

namespace acvae {

using Tokens = std::vector<std::string>;

// Sentence BLEU: clipped modified n-gram precision for n = 1..max_n, add-one
// smoothing on n >= 2, geometric mean, brevity penalty exp(1 - r/c) when the
// candidate is shorter than the reference. Zero unigram overlap scores 0.
double bleu(const Tokens& candidate, const Tokens& reference, int max_n = 4);

// LCS-based F1: P = LCS/|cand|, R = LCS/|ref|, F = 2PR/(P+R).
double rouge_l(const Tokens& candidate, const Tokens& reference);

// METEOR without synonym resources: greedy unigram alignment on exact then
// stem matches; F = 10PR/(R+9P); penalty = 0.5 (chunks/matches)^3.
double meteor_lite(const Tokens& candidate, const Tokens& reference);

// The crude affix-stripping stemmer behind meteor_lite's second pass.
std::string stem(const std::string& word);

// Unique/total n-gram ratio over all outputs. n-grams never span two
// responses. Throws if no n-gram exists.
double distinct_n(const std::vector<Tokens>& outputs, int n = 2);

struct BootstrapReport {
    double mean = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double half_width = 0.0; // (ci_high - ci_low) / 2, the "+-" number
};

// Percentile bootstrap of the mean, 95% interval.
BootstrapReport bootstrap_report(const std::vector<double>& scores, std::size_t resamples,
                                 std::uint64_t seed);

// ---------------------------------------------------------------------------

struct EvalPair {
    Tokens reference;
    Tokens generated;
    int label = -1; // optional gold label
};

enum class ClassifierKind {
    kBagOfWordsLogistic, // default
    kCvaeLabel,          // response -> input encoder, label token -> output encoder
};

// Total classifier over token sequences into 0..k-1.
class Classifier {
  public:
    ClassifierKind kind() const { return kind_; }
    std::size_t num_categories() const { return num_categories_; }
    double held_out_accuracy() const { return held_out_accuracy_; }

    int classify(const Tokens& tokens) const;
    int classify(const std::string& text) const;

    // flat parameter view, for determinism checks
    std::vector<float> parameters() const;

    // trained state; populated by train_classifier
    ClassifierKind kind_ = ClassifierKind::kBagOfWordsLogistic;
    std::size_t num_categories_ = 0;
    double held_out_accuracy_ = 0.0;

    // bag-of-words logistic state
    std::unordered_map<std::string, int> features_;
    std::vector<double> weights_; // k x (F+1), bias last

    // cvae-label state
    std::shared_ptr<Acvae<float>> cvae_;
    std::shared_ptr<Vocabulary> cvae_vocab_;
    std::vector<int> label_token_ids_;
};

// Trains on an 80% split (seeded) and reports accuracy on the held-out 20%.
// Throws if fewer than two categories are present.
Classifier train_classifier(const std::vector<RawExchange>& corpus, const std::string& label,
                            ClassifierKind kind, std::uint64_t seed);

// Fraction of pairs whose reference and generated responses get the same
// predicted category.
double ieid(const std::vector<EvalPair>& pairs, const Classifier& clf);

} // namespace acvae
