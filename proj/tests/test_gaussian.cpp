#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "acvae/gaussian.hpp"
#include "acvae/rng.hpp"

using namespace acvae;

namespace {

double log_normal_pdf(double x, double mean, double logvar) {
    double var = std::exp(logvar);
    return -0.5 * std::log(2.0 * M_PI * var) - (x - mean) * (x - mean) / (2.0 * var);
}

// independent oracle: KL(p||q) = E_p[log p - log q] by sampling
double mc_kl_1d(const DiagonalGaussian& p, const DiagonalGaussian& q, std::size_t samples,
                Rng& rng) {
    double acc = 0.0;
    double sd = std::exp(p.logvar()[0] / 2.0);
    for (std::size_t i = 0; i < samples; ++i) {
        double x = p.mean()[0] + sd * rng.normal();
        acc += log_normal_pdf(x, p.mean()[0], p.logvar()[0]) -
               log_normal_pdf(x, q.mean()[0], q.logvar()[0]);
    }
    return acc / static_cast<double>(samples);
}

DiagonalGaussian g1(double mean, double var) {
    return DiagonalGaussian({mean}, {std::log(var)});
}

} // namespace

TEST_CASE("kl of identical distributions is exactly zero") {
    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        std::vector<double> mean(4), logvar(4);
        for (auto& m : mean) m = rng.uniform(-5, 5);
        for (auto& l : logvar) l = rng.uniform(-3, 3);
        DiagonalGaussian g(mean, logvar);
        CHECK(kl_diag(g, g) == 0.0);
    }
}

TEST_CASE("1-d N(1,1) vs N(0,1) gives 1/2") {
    double kl = kl_diag(g1(1, 1), g1(0, 1));
    CHECK(kl == doctest::Approx(0.5).epsilon(1e-12));

    Rng rng(11, "mc-oracle");
    double est = mc_kl_1d(g1(1, 1), g1(0, 1), 1000000, rng);
    CHECK(std::abs(est - kl) / kl < 0.01);
}

TEST_CASE("monte-carlo consistency on 10 random 1-d pairs") {
    Rng rng(23, "mc-pairs");
    int accepted = 0;
    while (accepted < 10) {
        DiagonalGaussian p({rng.uniform(-2, 2)}, {rng.uniform(-1, 1)});
        DiagonalGaussian q({rng.uniform(-2, 2)}, {rng.uniform(-1, 1)});
        double kl = kl_diag(p, q);
        if (kl < 0.3 || kl > 8.0) continue; // keep the estimator's variance in range
        ++accepted;
        double est = mc_kl_1d(p, q, 1000000, rng);
        CHECK(std::abs(est - kl) / kl < 0.01);
    }
}

TEST_CASE("kl additivity over independent dimensions") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t dim = 1 + rng.below(8);
        std::vector<double> mp(dim), lp(dim), mq(dim), lq(dim);
        for (std::size_t d = 0; d < dim; ++d) {
            mp[d] = rng.uniform(-5, 5);
            lp[d] = rng.uniform(-3, 3);
            mq[d] = rng.uniform(-5, 5);
            lq[d] = rng.uniform(-3, 3);
        }
        DiagonalGaussian p(mp, lp), q(mq, lq);
        double whole = kl_diag(p, q);
        double parts = 0.0;
        for (std::size_t d = 0; d < dim; ++d)
            parts += kl_diag(DiagonalGaussian({mp[d]}, {lp[d]}), DiagonalGaussian({mq[d]}, {lq[d]}));
        CHECK(whole == doctest::Approx(parts).epsilon(1e-12));
    }

    // identical per-dim parameters: d times the 1-d value
    double one = kl_diag(g1(0.7, 2.0), g1(-0.3, 0.5));
    DiagonalGaussian p(std::vector<double>(6, 0.7), std::vector<double>(6, std::log(2.0)));
    DiagonalGaussian q(std::vector<double>(6, -0.3), std::vector<double>(6, std::log(0.5)));
    CHECK(kl_diag(p, q) == doctest::Approx(6 * one).epsilon(1e-12));
}

TEST_CASE("kl is nonnegative on 1000 random pairs") {
    Rng rng(101);
    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t dim = 1 + rng.below(5);
        std::vector<double> mp(dim), lp(dim), mq(dim), lq(dim);
        for (std::size_t d = 0; d < dim; ++d) {
            mp[d] = rng.uniform(-5, 5);
            lp[d] = rng.uniform(-3, 3);
            mq[d] = rng.uniform(-5, 5);
            lq[d] = rng.uniform(-3, 3);
        }
        CHECK(kl_diag(DiagonalGaussian(mp, lp), DiagonalGaussian(mq, lq)) >= 0.0);
    }
}

TEST_CASE("kl dimension mismatch throws") {
    CHECK_THROWS_AS(kl_diag(DiagonalGaussian::standard(2), DiagonalGaussian::standard(3)),
                    std::invalid_argument);
}

TEST_CASE("reparam_sample basics") {
    DiagonalGaussian g({1.5, -2.0}, {0.0, 0.0});
    auto z = reparam_sample(g, {0.0, 0.0});
    CHECK(z[0] == 1.5);
    CHECK(z[1] == -2.0);

    // mu=0, logvar=log 4, eps=1 -> z = 2
    DiagonalGaussian h({0.0}, {std::log(4.0)});
    CHECK(reparam_sample(h, {1.0})[0] == doctest::Approx(2.0).epsilon(1e-12));

    CHECK_THROWS_AS(reparam_sample(g, {0.0}), std::invalid_argument);
}

TEST_CASE("reparam_sample sample mean obeys the law of large numbers") {
    const double mean = 0.7, sd = 1.5;
    DiagonalGaussian g({mean}, {2.0 * std::log(sd)});
    Rng rng(5, "lln");
    const std::size_t n = 100000;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += reparam_sample(g, {rng.normal()})[0];
    double bound = 4.0 * sd / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(acc / static_cast<double>(n) - mean) < bound);
}

TEST_CASE("reparam_sample gradients by finite differences") {
    const double mean = 0.4, logvar = 0.8, eps = -1.3, h = 1e-6;
    auto z = [&](double m, double lv) {
        return reparam_sample(DiagonalGaussian({m}, {lv}), {eps})[0];
    };
    double dmu = (z(mean + h, logvar) - z(mean - h, logvar)) / (2 * h);
    double dlv = (z(mean, logvar + h) - z(mean, logvar - h)) / (2 * h);
    CHECK(dmu == doctest::Approx(1.0).epsilon(1e-6));
    // d z / d logvar = eps * sigma / 2
    CHECK(dlv == doctest::Approx(eps * std::exp(logvar / 2.0) / 2.0).epsilon(1e-6));
}

TEST_CASE("aggregate_posteriors averages means and variances") {
    DiagonalGaussian a({0.0}, {0.0});               // var 1
    DiagonalGaussian b({2.0}, {std::log(3.0)});     // var 3
    auto agg = aggregate_posteriors({a, b});
    CHECK(agg.mean()[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(agg.logvar()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    auto solo = aggregate_posteriors({b});
    CHECK(solo.mean() == b.mean());
    CHECK(solo.logvar()[0] == doctest::Approx(b.logvar()[0]).epsilon(1e-12));

    CHECK_THROWS_AS(aggregate_posteriors({}), std::invalid_argument);
}

TEST_CASE("aggregate_posteriors mixture-moment mode includes mean spread") {
    DiagonalGaussian a({0.0}, {0.0});
    DiagonalGaussian b({2.0}, {0.0});
    auto agg = aggregate_posteriors({a, b}, AggregationMode::kMixtureMoments);
    // E[z^2] - E[z]^2 = (1 + 0 + 1 + 4)/2 - 1 = 2
    CHECK(std::exp(agg.logvar()[0]) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("math_gold_bank reproduces the grid") {
    GoldBank bank = math_gold_bank(3, 2);
    REQUIRE(bank.categories.size() == 3);
    const double expect_mean[3] = {0.0, 1.0, -1.0};
    const double expect_var[3] = {1.0, 2.0, 3.0};
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t d = 0; d < 2; ++d) {
            CHECK(bank.categories[k].mean()[d] == expect_mean[k]);
            CHECK(bank.categories[k].variance(d) == doctest::Approx(expect_var[k]).epsilon(1e-12));
        }

    // all (mean, variance) pairs distinct
    GoldBank big = math_gold_bank(5, 1);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = i + 1; j < 5; ++j) {
            bool same_mean = big.categories[i].mean() == big.categories[j].mean();
            bool same_var = big.categories[i].logvar() == big.categories[j].logvar();
            CHECK_FALSE((same_mean && same_var));
        }

    GoldBank one = math_gold_bank(1, 4);
    for (std::size_t d = 0; d < 4; ++d) {
        CHECK(one.categories[0].mean()[d] == 0.0);
        CHECK(one.categories[0].logvar()[d] == 0.0);
    }
}

TEST_CASE("slice restricts coordinates and keeps kl additive") {
    DiagonalGaussian g({1, 2, 3, 4}, {0.1, 0.2, 0.3, 0.4});
    auto full = slice(g, 0, 4);
    CHECK(full == g);
    auto tail = slice(g, 2, 2);
    CHECK(tail.mean() == std::vector<double>{3, 4});
    CHECK_THROWS_AS(slice(g, 3, 2), std::invalid_argument);

    DiagonalGaussian p({1, 2, 3, 4}, {0.1, 0.2, 0.3, 0.4});
    DiagonalGaussian q({0, 1, 0, 1}, {0.5, -0.5, 0.5, -0.5});
    double parts = kl_diag(slice(p, 0, 2), slice(q, 0, 2)) + kl_diag(slice(p, 2, 2), slice(q, 2, 2));
    CHECK(kl_diag(p, q) == doctest::Approx(parts).epsilon(1e-12));
}

TEST_CASE("logvar is clamped at construction") {
    DiagonalGaussian g({0.0}, {55.0});
    CHECK(g.logvar()[0] == 20.0);
    DiagonalGaussian h({0.0}, {-55.0});
    CHECK(h.logvar()[0] == -20.0);
    CHECK_THROWS_AS(DiagonalGaussian({std::nan("")}, {0.0}), std::invalid_argument);
}

TEST_CASE("gold bank json round trip") {
    GoldBank bank = math_gold_bank(3, 4);
    bank.partition = LatentPartition{{{"common", 0, 2}, {"category", 2, 2}}};
    auto path = std::filesystem::temp_directory_path() / "acvae_test_bank.json";
    bank.save(path.string());

    GoldBank back = GoldBank::load(path.string());
    REQUIRE(back.categories.size() == bank.categories.size());
    for (std::size_t k = 0; k < bank.categories.size(); ++k)
        CHECK(back.categories[k] == bank.categories[k]);
    REQUIRE(back.partition.has_value());
    CHECK(back.partition->slices[1].name == "category");

    CHECK_THROWS_WITH_AS(GoldBank::load(path.string(), 200),
                         doctest::Contains("has dim 4, expected 200"), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("gold bank load reports a missing category id") {
    auto path = std::filesystem::temp_directory_path() / "acvae_test_bank_gap.json";
    {
        std::FILE* f = std::fopen(path.string().c_str(), "w");
        REQUIRE(f);
        std::fputs("{\"dim\":1,\"partition\":null,\"categories\":["
                   "{\"id\":0,\"mean\":[0.0],\"logvar\":[0.0]},"
                   "{\"id\":2,\"mean\":[1.0],\"logvar\":[0.0]}]}\n",
                   f);
        std::fclose(f);
    }
    CHECK_THROWS_WITH_AS(GoldBank::load(path.string()), doctest::Contains("missing category 1"),
                         std::runtime_error);
    std::filesystem::remove(path);
}
