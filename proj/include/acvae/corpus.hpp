#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace acvae {

// One single-turn exchange with labels already aggregated to category ids.
struct RawExchange {
    std::string context;
    std::string response;
    std::map<std::string, int> labels; // label name -> category id
};

// Maps a dataset's raw tags onto a small set of categories.
struct LabelTaxonomy {
    std::string label;                                   // e.g. "emotion"
    std::vector<std::string> categories;                 // ordered; id = index
    std::map<std::string, std::string> raw_to_category;  // total over declared tags

    int category_id(const std::string& raw_tag) const;   // throws naming an unknown tag
    int category_index(const std::string& category) const;
    void validate() const;

    void save(const std::string& path) const;
    static LabelTaxonomy load(const std::string& path);
};

// Shipped aggregation tables (config-overridable via taxonomy files).
LabelTaxonomy dailydialog_emotion_taxonomy(); // no-emotion / negative / positive
LabelTaxonomy dailydialog_action_taxonomy();  // the raw 4-way act set, unaggregated
LabelTaxonomy empathetic_emotion_taxonomy();  // 32 tags -> negative / positive

struct Vocabulary {
    static constexpr int kPad = 0;
    static constexpr int kSos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    std::vector<std::string> tokens; // id = position
    std::unordered_map<std::string, int> ids;

    std::size_t size() const { return tokens.size(); }
    int id(const std::string& token) const; // UNK for out-of-vocabulary
    const std::string& token(int id) const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);
};

// lowercase + whitespace split, punctuation characters become their own tokens
std::vector<std::string> tokenize(std::string_view text);

// Reads a UTF-8 JSON-lines corpus. Each line is either
//   {"context": str, "response": str, "labels": {name: tag}}
// or {"turns": [str, ...], "labels": {name: tag | [tag per turn]}}
// Multi-turn records expand to adjacent pairs; each pair takes the response
// turn's tag when tags are per-turn. Every supplied taxonomy's label must be
// present in every record.
std::vector<RawExchange> load_corpus(const std::string& path,
                                     const std::vector<LabelTaxonomy>& taxonomies);
std::vector<RawExchange> load_corpus(const std::string& path, const LabelTaxonomy& taxonomy);

// Fixture writer: maps category ids back to category names as the raw tags.
void save_corpus_jsonl(const std::string& path, const std::vector<RawExchange>& pairs,
                       const std::vector<LabelTaxonomy>& taxonomies);

// Keeps the cap-4 most frequent tokens (ties broken lexicographically) and
// prepends the four specials. cap >= 5; throws on an empty corpus.
Vocabulary build_vocabulary(const std::vector<RawExchange>& pairs, std::size_t cap);

std::vector<int> encode(std::string_view text, const Vocabulary& vocab);
std::string decode(const std::vector<int>& ids, const Vocabulary& vocab);

// Padded batch. Response rows are framed [SOS, tokens..., EOS, PAD...];
// lengths count the frame tokens too.
struct Batch {
    std::size_t size = 0;
    std::size_t ctx_cols = 0, resp_cols = 0;
    std::vector<int> context;  // size x ctx_cols, PAD-filled
    std::vector<int> response; // size x resp_cols
    std::vector<int> ctx_len, resp_len;
    std::vector<std::map<std::string, int>> labels;

    const int* ctx_row(std::size_t b) const { return context.data() + b * ctx_cols; }
    const int* resp_row(std::size_t b) const { return response.data() + b * resp_cols; }
};

// Shuffles with the seeded data-shuffle stream, truncates (context to
// max_len tokens, response content to max_len-2 so the frame fits), and
// packs. The last partial batch is kept.
std::vector<Batch> make_batches(const std::vector<RawExchange>& pairs, const Vocabulary& vocab,
                                std::size_t batch_size, std::size_t max_len, std::uint64_t seed);

// Builds one batch per call order, without shuffling. Used for evaluation.
Batch make_single_batch(const std::vector<RawExchange>& pairs, const Vocabulary& vocab,
                        std::size_t max_len);

// Deterministic synthetic corpus: each category owns a disjoint 15-word
// content pool; a 10-word function pool is shared. 2 <= num_categories <= 5.
struct SynthCorpus {
    std::vector<RawExchange> pairs;
    LabelTaxonomy taxonomy;
};
SynthCorpus synth_corpus(std::size_t num_categories, std::size_t pairs_per_category,
                         std::uint64_t seed);

// Seeded split into (train, held-out) preserving nothing but multiplicity.
std::pair<std::vector<RawExchange>, std::vector<RawExchange>>
split_pairs(const std::vector<RawExchange>& pairs, double held_out_fraction, std::uint64_t seed);

} // namespace acvae
