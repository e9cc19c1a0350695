#include "acvae/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "acvae/rng.hpp"

namespace acvae {

using nlohmann::json;

// ---------------------------------------------------------------------------
// taxonomy

int LabelTaxonomy::category_id(const std::string& raw_tag) const {
    auto it = raw_to_category.find(raw_tag);
    if (it == raw_to_category.end())
        throw std::runtime_error("unknown raw tag '" + raw_tag + "' for label '" + label + "'");
    return category_index(it->second);
}

int LabelTaxonomy::category_index(const std::string& category) const {
    for (std::size_t i = 0; i < categories.size(); ++i)
        if (categories[i] == category) return static_cast<int>(i);
    throw std::runtime_error("taxonomy '" + label + "' has no category '" + category + "'");
}

void LabelTaxonomy::validate() const {
    if (categories.empty()) throw std::invalid_argument("taxonomy '" + label + "' has no categories");
    for (const auto& [tag, cat] : raw_to_category)
        category_index(cat); // throws if the table points at an undeclared category
}

void LabelTaxonomy::save(const std::string& path) const {
    json j;
    j["label"] = label;
    j["categories"] = categories;
    j["map"] = raw_to_category;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write taxonomy file: " + path);
    out << j.dump(2) << "\n";
}

LabelTaxonomy LabelTaxonomy::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read taxonomy file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed taxonomy file " + path + ": " + e.what());
    }
    LabelTaxonomy t;
    t.label = j.at("label").get<std::string>();
    t.categories = j.at("categories").get<std::vector<std::string>>();
    t.raw_to_category = j.at("map").get<std::map<std::string, std::string>>();
    t.validate();
    return t;
}

LabelTaxonomy dailydialog_emotion_taxonomy() {
    LabelTaxonomy t;
    t.label = "emotion";
    t.categories = {"no-emotion", "negative", "positive"};
    t.raw_to_category = {
        {"no emotion", "no-emotion"}, {"no_emotion", "no-emotion"}, {"neutral", "no-emotion"},
        {"anger", "negative"},        {"disgust", "negative"},      {"fear", "negative"},
        {"sadness", "negative"},      {"happiness", "positive"},    {"surprise", "positive"},
    };
    return t;
}

LabelTaxonomy dailydialog_action_taxonomy() {
    LabelTaxonomy t;
    t.label = "action";
    t.categories = {"inform", "question", "directive", "commissive"};
    for (const auto& c : t.categories) t.raw_to_category[c] = c;
    return t;
}

LabelTaxonomy empathetic_emotion_taxonomy() {
    LabelTaxonomy t;
    t.label = "emotion";
    t.categories = {"negative", "positive"};
    const char* negative[] = {"afraid",     "angry",        "annoyed",   "anxious",
                              "apprehensive", "ashamed",    "devastated", "disappointed",
                              "disgusted",  "embarrassed",  "furious",   "guilty",
                              "jealous",    "lonely",       "sad",       "terrified"};
    const char* positive[] = {"anticipating", "caring",     "confident", "content",
                              "excited",    "faithful",     "grateful",  "hopeful",
                              "impressed",  "joyful",       "nostalgic", "prepared",
                              "proud",      "sentimental",  "surprised", "trusting"};
    for (const char* tag : negative) t.raw_to_category[tag] = "negative";
    for (const char* tag : positive) t.raw_to_category[tag] = "positive";
    return t;
}

// ---------------------------------------------------------------------------
// vocabulary

namespace {
const std::vector<std::string>& special_tokens() {
    static const std::vector<std::string> specials = {"<pad>", "<sos>", "<eos>", "<unk>"};
    return specials;
}
} // namespace

int Vocabulary::id(const std::string& token) const {
    auto it = ids.find(token);
    return it == ids.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int tid) const {
    if (tid < 0 || static_cast<std::size_t>(tid) >= tokens.size())
        throw std::out_of_range("token id " + std::to_string(tid) + " out of range");
    return tokens[static_cast<std::size_t>(tid)];
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
    for (const auto& t : tokens) out << t << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read vocabulary file: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        v.ids.emplace(line, static_cast<int>(v.tokens.size()));
        v.tokens.push_back(line);
    }
    if (v.tokens.size() < 4)
        throw std::runtime_error("vocabulary file " + path + " is missing the special tokens");
    return v;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            flush();
        } else if (std::ispunct(c)) {
            flush();
            out.emplace_back(1, ch);
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return out;
}

Vocabulary build_vocabulary(const std::vector<RawExchange>& pairs, std::size_t cap) {
    if (cap < 5) throw std::invalid_argument("vocabulary cap must be at least 5");
    if (pairs.empty()) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");

    std::map<std::string, std::size_t> counts; // ordered keys give the lexicographic tie-break
    for (const auto& p : pairs) {
        for (auto& t : tokenize(p.context)) ++counts[t];
        for (auto& t : tokenize(p.response)) ++counts[t];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocabulary v;
    for (const auto& s : special_tokens()) {
        v.ids.emplace(s, static_cast<int>(v.tokens.size()));
        v.tokens.push_back(s);
    }
    for (const auto& [tok, cnt] : ranked) {
        if (v.tokens.size() >= cap) break;
        v.ids.emplace(tok, static_cast<int>(v.tokens.size()));
        v.tokens.push_back(tok);
    }
    return v;
}

std::vector<int> encode(std::string_view text, const Vocabulary& vocab) {
    std::vector<int> out;
    for (const auto& t : tokenize(text)) out.push_back(vocab.id(t));
    return out;
}

std::string decode(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string out;
    for (int id : ids) {
        if (!out.empty()) out += " ";
        out += vocab.token(id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// corpus loading

namespace {

std::map<std::string, int> aggregate_labels(const json& labels_json,
                                            const std::vector<LabelTaxonomy>& taxonomies,
                                            std::size_t turn_index, std::size_t line_no) {
    std::map<std::string, int> out;
    for (const auto& tax : taxonomies) {
        if (!labels_json.contains(tax.label))
            throw std::runtime_error("line " + std::to_string(line_no) + ": record has no '" +
                                     tax.label + "' label");
        const json& entry = labels_json.at(tax.label);
        std::string tag;
        if (entry.is_array()) { // per-turn tags; the pair takes the response turn's tag
            if (turn_index >= entry.size())
                throw std::runtime_error("line " + std::to_string(line_no) + ": label '" + tax.label +
                                         "' has fewer tags than turns");
            tag = entry[turn_index].get<std::string>();
        } else {
            tag = entry.get<std::string>();
        }
        out[tax.label] = tax.category_id(tag);
    }
    return out;
}

void require_nonempty(const std::string& text, const char* field, std::size_t line_no) {
    if (tokenize(text).empty())
        throw std::runtime_error("line " + std::to_string(line_no) + ": '" + std::string(field) +
                                 "' is empty after tokenization");
}

} // namespace

std::vector<RawExchange> load_corpus(const std::string& path,
                                     const std::vector<LabelTaxonomy>& taxonomies) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read corpus file: " + path);

    std::vector<RawExchange> out;
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
        json labels = j.contains("labels") ? j.at("labels") : json::object();
        if (j.contains("turns")) {
            auto turns = j.at("turns").get<std::vector<std::string>>();
            if (turns.size() < 2)
                throw std::runtime_error("line " + std::to_string(line_no) +
                                         ": multi-turn record needs at least two turns");
            for (std::size_t t = 0; t + 1 < turns.size(); ++t) {
                require_nonempty(turns[t], "turn", line_no);
                require_nonempty(turns[t + 1], "turn", line_no);
                RawExchange ex;
                ex.context = turns[t];
                ex.response = turns[t + 1];
                ex.labels = aggregate_labels(labels, taxonomies, t + 1, line_no);
                out.push_back(std::move(ex));
            }
        } else {
            if (!j.contains("context"))
                throw std::runtime_error("line " + std::to_string(line_no) + ": record has no 'context'");
            if (!j.contains("response"))
                throw std::runtime_error("line " + std::to_string(line_no) + ": record has no 'response'");
            RawExchange ex;
            ex.context = j.at("context").get<std::string>();
            ex.response = j.at("response").get<std::string>();
            require_nonempty(ex.context, "context", line_no);
            require_nonempty(ex.response, "response", line_no);
            ex.labels = aggregate_labels(labels, taxonomies, 0, line_no);
            out.push_back(std::move(ex));
        }
    }
    return out;
}

std::vector<RawExchange> load_corpus(const std::string& path, const LabelTaxonomy& taxonomy) {
    return load_corpus(path, std::vector<LabelTaxonomy>{taxonomy});
}

void save_corpus_jsonl(const std::string& path, const std::vector<RawExchange>& pairs,
                       const std::vector<LabelTaxonomy>& taxonomies) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path);
    for (const auto& p : pairs) {
        json labels = json::object();
        for (const auto& tax : taxonomies) {
            auto it = p.labels.find(tax.label);
            if (it == p.labels.end())
                throw std::runtime_error("pair is missing label '" + tax.label + "'");
            labels[tax.label] = tax.categories.at(static_cast<std::size_t>(it->second));
        }
        json j;
        j["context"] = p.context;
        j["response"] = p.response;
        j["labels"] = labels;
        out << j.dump() << "\n";
    }
}

// ---------------------------------------------------------------------------
// batching

namespace {

Batch pack_batch(const std::vector<const RawExchange*>& pairs, const Vocabulary& vocab,
                 std::size_t max_len) {
    Batch b;
    b.size = pairs.size();
    std::vector<std::vector<int>> ctx(b.size), resp(b.size);
    for (std::size_t i = 0; i < b.size; ++i) {
        ctx[i] = encode(pairs[i]->context, vocab);
        if (ctx[i].size() > max_len) ctx[i].resize(max_len); // truncate, not reject
        std::vector<int> content = encode(pairs[i]->response, vocab);
        if (content.size() > max_len - 2) content.resize(max_len - 2);
        resp[i].push_back(Vocabulary::kSos);
        resp[i].insert(resp[i].end(), content.begin(), content.end());
        resp[i].push_back(Vocabulary::kEos);
        b.ctx_cols = std::max(b.ctx_cols, ctx[i].size());
        b.resp_cols = std::max(b.resp_cols, resp[i].size());
        b.labels.push_back(pairs[i]->labels);
    }
    b.context.assign(b.size * b.ctx_cols, Vocabulary::kPad);
    b.response.assign(b.size * b.resp_cols, Vocabulary::kPad);
    for (std::size_t i = 0; i < b.size; ++i) {
        b.ctx_len.push_back(static_cast<int>(ctx[i].size()));
        b.resp_len.push_back(static_cast<int>(resp[i].size()));
        std::copy(ctx[i].begin(), ctx[i].end(), b.context.begin() + i * b.ctx_cols);
        std::copy(resp[i].begin(), resp[i].end(), b.response.begin() + i * b.resp_cols);
    }
    return b;
}

} // namespace

std::vector<Batch> make_batches(const std::vector<RawExchange>& pairs, const Vocabulary& vocab,
                                std::size_t batch_size, std::size_t max_len, std::uint64_t seed) {
    if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
    if (max_len < 2) throw std::invalid_argument("max length must be at least 2");

    std::vector<const RawExchange*> order;
    order.reserve(pairs.size());
    for (const auto& p : pairs) order.push_back(&p);
    Rng rng(seed, "data-shuffle");
    rng.shuffle(order);

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        std::size_t end = std::min(start + batch_size, order.size());
        std::vector<const RawExchange*> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                                              order.begin() + static_cast<std::ptrdiff_t>(end));
        batches.push_back(pack_batch(chunk, vocab, max_len));
    }
    return batches;
}

Batch make_single_batch(const std::vector<RawExchange>& pairs, const Vocabulary& vocab,
                        std::size_t max_len) {
    if (max_len < 2) throw std::invalid_argument("max length must be at least 2");
    std::vector<const RawExchange*> order;
    order.reserve(pairs.size());
    for (const auto& p : pairs) order.push_back(&p);
    return pack_batch(order, vocab, max_len);
}

// ---------------------------------------------------------------------------
// synthetic fixtures

SynthCorpus synth_corpus(std::size_t num_categories, std::size_t pairs_per_category,
                         std::uint64_t seed) {
    if (num_categories < 2 || num_categories > 5)
        throw std::invalid_argument("synth_corpus supports 2..5 categories");

    static const char* function_pool[10] = {"the", "a",  "to", "and", "of",
                                            "in",  "it", "is", "was", "so"};

    SynthCorpus sc;
    sc.taxonomy.label = "category";
    for (std::size_t k = 0; k < num_categories; ++k) {
        std::string name = "cat" + std::to_string(k);
        sc.taxonomy.categories.push_back(name);
        sc.taxonomy.raw_to_category[name] = name;
    }

    auto content_word = [](std::size_t cat, std::size_t i) {
        return "c" + std::to_string(cat) + "w" + std::to_string(i);
    };

    Rng rng(seed, "synth-corpus");
    auto sentence = [&](std::size_t cat) {
        std::size_t words = 3 + rng.below(3); // 3..5 content words
        std::string s;
        for (std::size_t w = 0; w < words; ++w) {
            if (rng.uniform() < 0.35) {
                s += function_pool[rng.below(10)];
                s += " ";
            }
            s += content_word(cat, rng.below(15));
            if (w + 1 < words) s += " ";
        }
        return s;
    };

    for (std::size_t k = 0; k < num_categories; ++k) {
        for (std::size_t n = 0; n < pairs_per_category; ++n) {
            RawExchange ex;
            ex.context = sentence(k);
            ex.response = sentence(k);
            ex.labels[sc.taxonomy.label] = static_cast<int>(k);
            sc.pairs.push_back(std::move(ex));
        }
    }
    return sc;
}

std::pair<std::vector<RawExchange>, std::vector<RawExchange>>
split_pairs(const std::vector<RawExchange>& pairs, double held_out_fraction, std::uint64_t seed) {
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed, "data-split");
    rng.shuffle(order);
    std::size_t held = static_cast<std::size_t>(static_cast<double>(pairs.size()) * held_out_fraction);
    std::pair<std::vector<RawExchange>, std::vector<RawExchange>> out;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i < pairs.size() - held)
            out.first.push_back(pairs[order[i]]);
        else
            out.second.push_back(pairs[order[i]]);
    }
    return out;
}

} // namespace acvae
