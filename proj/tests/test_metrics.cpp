#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "acvae/metrics.hpp"

using namespace acvae;

namespace {
Tokens tok(const std::string& text) { return tokenize(text); }
} // namespace

// ---------------------------------------------------------------------------
// the ten hand-computed BLEU / ROUGE-L / distinct-2 fixtures; each expected
// value is the frozen result of enumerating n-grams / LCS by hand

TEST_CASE("fixture 1: bleu on an exact match is 1") {
    CHECK(bleu(tok("the cat sat"), tok("the cat sat")) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("fixture 2: bleu clipping and add-one smoothing") {
    // cand "the the the" vs ref "the cat":
    // p1 = clip 1/3; p2 = (0+1)/(2+1); p3 = (0+1)/(1+1); p4 = (0+1)/(0+1);
    // c=3 > r=2 so BP=1; score = (1/3 * 1/3 * 1/2 * 1)^(1/4) = (1/18)^(1/4)
    CHECK(bleu(tok("the the the"), tok("the cat")) ==
          doctest::Approx(std::pow(1.0 / 18.0, 0.25)).epsilon(1e-9));
}

TEST_CASE("fixture 3: bleu brevity penalty") {
    // cand "the cat" vs ref "the cat sat on mat": p1=1, p2=(1+1)/(1+1)=1,
    // p3=p4=1 (empty counts), BP=exp(1-5/2)
    CHECK(bleu(tok("the cat"), tok("the cat sat on mat")) ==
          doctest::Approx(std::exp(-1.5)).epsilon(1e-9));
}

TEST_CASE("fixture 4: bleu with zero unigram overlap is 0") {
    CHECK(bleu(tok("dog runs"), tok("the cat")) == 0.0);
}

TEST_CASE("fixture 5: rouge-l recall/precision blend") {
    // cand "a c" vs ref "a b c": LCS=2, P=1, R=2/3, F=0.8
    CHECK(rouge_l(tok("a c"), tok("a b c")) == doctest::Approx(0.8).epsilon(1e-9));
}

TEST_CASE("fixture 6: rouge-l with a crossing order") {
    // cand "b a d c" vs ref "a b c d": LCS=2 -> P=R=0.5, F=0.5
    CHECK(rouge_l(tok("b a d c"), tok("a b c d")) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("fixture 7: rouge-l on disjoint sentences is 0") {
    CHECK(rouge_l(tok("x y"), tok("a b")) == 0.0);
}

TEST_CASE("fixture 8: distinct-2 counts repeated bigrams once") {
    // "a b a b" -> bigrams (a b), (b a), (a b): 2 unique / 3 total
    CHECK(distinct_n({tok("a b a b")}, 2) == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("fixture 9: distinct-2 on a constant stream") {
    // "a a a" -> (a a) twice -> 1/2
    CHECK(distinct_n({tok("a a a")}, 2) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("fixture 10: distinct-2 never spans two responses") {
    // ["a b"], ["b a"]: bigrams (a b) and (b a) only; no cross-boundary (b b)
    CHECK(distinct_n({tok("a b"), tok("b a")}, 2) == doctest::Approx(1.0).epsilon(1e-9));
}

// ---------------------------------------------------------------------------

TEST_CASE("bleu equals 1 exactly on identity and stays in [0,1]") {
    CHECK(bleu(tok("one two three four five"), tok("one two three four five")) ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(bleu({}, tok("a b")) == 0.0);
    for (const char* cand : {"a", "a b", "b a c", "the cat sat on the mat"}) {
        double v = bleu(tok(cand), tok("the cat sat"));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("rouge-l is symmetric under candidate/reference exchange") {
    // F1 blends P and R symmetrically, so swapping the arguments is a no-op
    for (auto [a, b] : std::vector<std::pair<const char*, const char*>>{
             {"a c", "a b c"}, {"the cat sat", "the dog sat"}, {"x", "x y z"}}) {
        CHECK(rouge_l(tok(a), tok(b)) == doctest::Approx(rouge_l(tok(b), tok(a))).epsilon(1e-12));
    }
    CHECK(rouge_l(tok("same words here"), tok("same words here")) == 1.0);
}

TEST_CASE("meteor-lite formula substitution fixtures") {
    // identical m-token sentence: one chunk, P=R=1, F=1, score = 1 - 0.5/m^3
    CHECK(meteor_lite(tok("a b c"), tok("a b c")) ==
          doctest::Approx(1.0 - 0.5 / 27.0).epsilon(1e-9));
    CHECK(meteor_lite(tok("a b c d e"), tok("a b c d e")) ==
          doctest::Approx(1.0 - 0.5 / 125.0).epsilon(1e-9));

    // disjoint: no matches at all
    CHECK(meteor_lite(tok("x y"), tok("a b")) == 0.0);

    // stem match: "running" vs "run" -> m=1, ch=1, P=R=1, F=1, pen=0.5
    CHECK(meteor_lite(tok("running"), tok("run")) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(meteor_lite(tok("running"), tok("run")) > 0.0);

    // two chunks: cand "a x b" vs ref "a b": m=2, ch=2, P=2/3, R=1,
    // F = 10PR/(R+9P) = (20/3)/7 = 20/21, pen = 0.5, score = 10/21
    CHECK(meteor_lite(tok("a x b"), tok("a b")) == doctest::Approx(10.0 / 21.0).epsilon(1e-9));
}

TEST_CASE("the stemmer strips common suffixes") {
    CHECK(stem("running") == "run");
    CHECK(stem("run") == "run");
    CHECK(stem("stopped") == "stop");
    CHECK(stem("cats") == "cat");
    CHECK(stem("cries") == "cri");
    CHECK(stem("is") == "is"); // too short to strip
}

TEST_CASE("distinct_n input validation") {
    CHECK_THROWS_AS(distinct_n({tok("a")}, 2), std::invalid_argument); // no bigram anywhere
    CHECK_THROWS_AS(distinct_n({}, 2), std::invalid_argument);
    CHECK(distinct_n({tok("a"), tok("a b c")}, 2) == 1.0); // short response just contributes nothing
}

TEST_CASE("bootstrap report brackets the mean and is seed-deterministic") {
    std::vector<double> constant(25, 0.42);
    BootstrapReport c = bootstrap_report(constant, 1000, 7);
    CHECK(c.mean == doctest::Approx(0.42).epsilon(1e-12));
    CHECK(c.half_width == 0.0);

    std::vector<double> scores;
    for (int i = 0; i < 40; ++i) scores.push_back(0.1 + 0.02 * (i % 7));
    BootstrapReport a = bootstrap_report(scores, 1000, 11);
    BootstrapReport b = bootstrap_report(scores, 1000, 11);
    CHECK(a.ci_low == b.ci_low);
    CHECK(a.ci_high == b.ci_high);
    CHECK(a.ci_low <= a.mean);
    CHECK(a.mean <= a.ci_high);

    BootstrapReport other = bootstrap_report(scores, 1000, 12);
    CHECK(other.ci_low != a.ci_low); // different seed, different resamples
}

// ---------------------------------------------------------------------------
// classifiers and IEID

TEST_CASE("bag-of-words classifier separates the synthetic categories") {
    SynthCorpus sc = synth_corpus(3, 120, 17);
    Classifier clf = train_classifier(sc.pairs, "category", ClassifierKind::kBagOfWordsLogistic, 3);
    CHECK(clf.held_out_accuracy() >= 0.9);
    CHECK(clf.num_categories() == 3);

    // totality: any input, including all-unknown, lands in 0..k-1
    int c = clf.classify(tok("zzz qqq www"));
    CHECK(c >= 0);
    CHECK(c < 3);
    CHECK(clf.classify(Tokens{}) >= 0);

    // same seed, identical parameters
    Classifier again = train_classifier(sc.pairs, "category", ClassifierKind::kBagOfWordsLogistic, 3);
    CHECK(clf.parameters() == again.parameters());

    // single-category corpus is rejected
    std::vector<RawExchange> mono(sc.pairs.begin(), sc.pairs.begin() + 50);
    CHECK_THROWS_AS(train_classifier(mono, "category", ClassifierKind::kBagOfWordsLogistic, 3),
                    std::invalid_argument);
}

TEST_CASE("cvae-label classifier learns the synthetic categories") {
    SynthCorpus sc = synth_corpus(3, 120, 19);
    Classifier clf = train_classifier(sc.pairs, "category", ClassifierKind::kCvaeLabel, 5);
    CHECK(clf.kind() == ClassifierKind::kCvaeLabel);
    CHECK(clf.held_out_accuracy() >= 0.9);
    int c = clf.classify(tok("zzz qqq"));
    CHECK(c >= 0);
    CHECK(c < 3);

    Classifier again = train_classifier(sc.pairs, "category", ClassifierKind::kCvaeLabel, 5);
    CHECK(clf.parameters() == again.parameters());
}

TEST_CASE("ieid counts pairs classified into the same category") {
    SynthCorpus sc = synth_corpus(2, 100, 23);
    Classifier clf = train_classifier(sc.pairs, "category", ClassifierKind::kBagOfWordsLogistic, 7);
    REQUIRE(clf.held_out_accuracy() >= 0.9);

    // category-0 and category-1 texts the classifier distinguishes
    Tokens t0 = tokenize(sc.pairs[0].response);
    Tokens t1 = tokenize(sc.pairs[150].response);
    REQUIRE(clf.classify(t0) != clf.classify(t1));

    // identical inputs match everywhere
    std::vector<EvalPair> all_match = {{t0, t0, -1}, {t1, t1, -1}, {t0, t0, -1}};
    CHECK(ieid(all_match, clf) == 1.0);

    // all-different by construction
    std::vector<EvalPair> none = {{t0, t1, -1}, {t1, t0, -1}};
    CHECK(ieid(none, clf) == 0.0);

    // 3 matches of 4 -> 0.75
    std::vector<EvalPair> mixed = {{t0, t0, -1}, {t1, t1, -1}, {t0, t0, -1}, {t0, t1, -1}};
    CHECK(ieid(mixed, clf) == 0.75);

    // permutation invariance
    std::vector<EvalPair> shuffled = {mixed[3], mixed[0], mixed[2], mixed[1]};
    CHECK(ieid(shuffled, clf) == 0.75);

    CHECK_THROWS_AS(ieid({}, clf), std::invalid_argument);
}
