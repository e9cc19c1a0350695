#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace acvae {

// One slice of the latent space, e.g. common / action / emotion.
struct LatentSlice {
    std::string name;
    std::size_t start = 0;
    std::size_t length = 0;
};

// Ordered, disjoint, contiguous slices covering [0, dim).
struct LatentPartition {
    std::vector<LatentSlice> slices;

    std::size_t dim() const;
    void validate(std::size_t latent_dim) const; // throws on gap/overlap/sum mismatch
    const LatentSlice* find(const std::string& name) const;
};

// Diagonal multivariate Gaussian parameterized by mean and log-variance.
// logvar is clamped to [-20, 20] at construction so exp() stays finite.
class DiagonalGaussian {
  public:
    static constexpr double kLogVarMin = -20.0;
    static constexpr double kLogVarMax = 20.0;

    DiagonalGaussian() = default;
    DiagonalGaussian(std::vector<double> mean, std::vector<double> logvar);

    static DiagonalGaussian standard(std::size_t dim); // N(0, I)

    std::size_t dim() const { return mean_.size(); }
    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& logvar() const { return logvar_; }
    double variance(std::size_t i) const;

    bool operator==(const DiagonalGaussian& o) const {
        return mean_ == o.mean_ && logvar_ == o.logvar_;
    }

  private:
    std::vector<double> mean_;
    std::vector<double> logvar_;
};

// KL(p || q) in closed form:
//   1/2 * sum_i [ log(vq_i/vp_i) + (vp_i + (mp_i - mq_i)^2) / vq_i - 1 ]
// Throws on dimension mismatch.
double kl_diag(const DiagonalGaussian& p, const DiagonalGaussian& q);

// z_i = mu_i + exp(logvar_i / 2) * eps_i. Throws on length mismatch.
std::vector<double> reparam_sample(const DiagonalGaussian& g, const std::vector<double>& noise);

enum class AggregationMode {
    kAverage,        // mean of means, mean of variances
    kMixtureMoments, // mean of means, second moment of the equal-weight mixture
};

// Collapses a set of per-example posteriors into one Gaussian.
DiagonalGaussian aggregate_posteriors(const std::vector<DiagonalGaussian>& gs,
                                      AggregationMode mode = AggregationMode::kAverage);

// Restriction of g to coordinates [start, start+length).
DiagonalGaussian slice(const DiagonalGaussian& g, std::size_t start, std::size_t length);
DiagonalGaussian slice(const DiagonalGaussian& g, const LatentSlice& s);

// Frozen per-category priors. Categories are contiguous ids 0..k-1.
struct GoldBank {
    std::size_t dim = 0;
    std::vector<DiagonalGaussian> categories;
    std::optional<LatentPartition> partition;

    const DiagonalGaussian& at(int category) const; // throws naming a missing id
    void validate() const;

    void save(const std::string& path) const;
    static GoldBank load(const std::string& path);
    static GoldBank load(const std::string& path, std::size_t expected_dim);
};

// Grid-constructed bank: category k gets mean filled with the k-th element of
// {0, 1, -1, 2, -2, ...} and variance filled with the k-th element of
// {1, 2, 3, ...}.
GoldBank math_gold_bank(std::size_t num_categories, std::size_t dim);

// Per-dimension KL terms shared by the double-precision API above and the
// model's loss path (which differentiates through them).
template <class S>
inline S kl_diag_term(S mu_p, S logvar_p, S mu_q, S logvar_q) {
    using std::exp;
    S diff = mu_p - mu_q;
    return S(0.5) * (logvar_q - logvar_p + (exp(logvar_p) + diff * diff) * exp(-logvar_q) - S(1));
}

} // namespace acvae
