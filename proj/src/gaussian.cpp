#include "acvae/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace acvae {

using nlohmann::json;

std::size_t LatentPartition::dim() const {
    std::size_t n = 0;
    for (const auto& s : slices) n += s.length;
    return n;
}

void LatentPartition::validate(std::size_t latent_dim) const {
    if (slices.empty()) throw std::invalid_argument("latent partition has no slices");
    std::size_t expect = 0;
    for (const auto& s : slices) {
        if (s.length == 0) throw std::invalid_argument("latent slice '" + s.name + "' has zero length");
        if (s.start != expect)
            throw std::invalid_argument("latent slice '" + s.name + "' starts at " +
                                        std::to_string(s.start) + ", expected " + std::to_string(expect));
        expect += s.length;
    }
    if (expect != latent_dim)
        throw std::invalid_argument("latent partition covers " + std::to_string(expect) +
                                    " dims, latent dim is " + std::to_string(latent_dim));
}

const LatentSlice* LatentPartition::find(const std::string& name) const {
    for (const auto& s : slices)
        if (s.name == name) return &s;
    return nullptr;
}

DiagonalGaussian::DiagonalGaussian(std::vector<double> mean, std::vector<double> logvar)
    : mean_(std::move(mean)), logvar_(std::move(logvar)) {
    if (mean_.size() != logvar_.size())
        throw std::invalid_argument("gaussian mean/logvar length mismatch: " +
                                    std::to_string(mean_.size()) + " vs " + std::to_string(logvar_.size()));
    for (double m : mean_)
        if (!std::isfinite(m)) throw std::invalid_argument("gaussian mean has a non-finite component");
    for (double& lv : logvar_) {
        if (!std::isfinite(lv)) throw std::invalid_argument("gaussian logvar has a non-finite component");
        lv = std::clamp(lv, kLogVarMin, kLogVarMax);
    }
}

DiagonalGaussian DiagonalGaussian::standard(std::size_t dim) {
    return DiagonalGaussian(std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0));
}

double DiagonalGaussian::variance(std::size_t i) const { return std::exp(logvar_[i]); }

double kl_diag(const DiagonalGaussian& p, const DiagonalGaussian& q) {
    if (p.dim() != q.dim())
        throw std::invalid_argument("kl_diag dimension mismatch: " + std::to_string(p.dim()) +
                                    " vs " + std::to_string(q.dim()));
    if (p == q) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < p.dim(); ++i)
        acc += kl_diag_term(p.mean()[i], p.logvar()[i], q.mean()[i], q.logvar()[i]);
    return acc;
}

std::vector<double> reparam_sample(const DiagonalGaussian& g, const std::vector<double>& noise) {
    if (noise.size() != g.dim())
        throw std::invalid_argument("reparam_sample noise length " + std::to_string(noise.size()) +
                                    " does not match dim " + std::to_string(g.dim()));
    std::vector<double> z(g.dim());
    for (std::size_t i = 0; i < g.dim(); ++i)
        z[i] = g.mean()[i] + std::exp(g.logvar()[i] / 2.0) * noise[i];
    return z;
}

DiagonalGaussian aggregate_posteriors(const std::vector<DiagonalGaussian>& gs, AggregationMode mode) {
    if (gs.empty()) throw std::invalid_argument("aggregate_posteriors: empty input");
    const std::size_t dim = gs[0].dim();
    for (const auto& g : gs)
        if (g.dim() != dim) throw std::invalid_argument("aggregate_posteriors: mixed dimensions");

    const double n = static_cast<double>(gs.size());
    std::vector<double> mean(dim, 0.0), var(dim, 0.0);
    for (const auto& g : gs)
        for (std::size_t i = 0; i < dim; ++i) {
            mean[i] += g.mean()[i];
            var[i] += std::exp(g.logvar()[i]);
        }
    for (std::size_t i = 0; i < dim; ++i) {
        mean[i] /= n;
        var[i] /= n;
    }
    if (mode == AggregationMode::kMixtureMoments) {
        // E[z^2] - E[z]^2 of the equal-weight mixture
        for (std::size_t i = 0; i < dim; ++i) {
            double second = 0.0;
            for (const auto& g : gs)
                second += std::exp(g.logvar()[i]) + g.mean()[i] * g.mean()[i];
            var[i] = second / n - mean[i] * mean[i];
            var[i] = std::max(var[i], 1e-12);
        }
    }
    std::vector<double> logvar(dim);
    for (std::size_t i = 0; i < dim; ++i) logvar[i] = std::log(var[i]);
    return DiagonalGaussian(std::move(mean), std::move(logvar));
}

DiagonalGaussian slice(const DiagonalGaussian& g, std::size_t start, std::size_t length) {
    if (start + length > g.dim())
        throw std::invalid_argument("slice [" + std::to_string(start) + ", " +
                                    std::to_string(start + length) + ") out of range for dim " +
                                    std::to_string(g.dim()));
    std::vector<double> mean(g.mean().begin() + start, g.mean().begin() + start + length);
    std::vector<double> logvar(g.logvar().begin() + start, g.logvar().begin() + start + length);
    return DiagonalGaussian(std::move(mean), std::move(logvar));
}

DiagonalGaussian slice(const DiagonalGaussian& g, const LatentSlice& s) {
    return slice(g, s.start, s.length);
}

const DiagonalGaussian& GoldBank::at(int category) const {
    if (category < 0 || static_cast<std::size_t>(category) >= categories.size())
        throw std::out_of_range("gold bank has no category " + std::to_string(category));
    return categories[static_cast<std::size_t>(category)];
}

void GoldBank::validate() const {
    if (categories.empty()) throw std::invalid_argument("gold bank has no categories");
    for (const auto& g : categories)
        if (g.dim() != dim)
            throw std::invalid_argument("gold bank entry dim " + std::to_string(g.dim()) +
                                        " does not match bank dim " + std::to_string(dim));
    if (partition) partition->validate(dim);
}

void GoldBank::save(const std::string& path) const {
    validate();
    json j;
    j["dim"] = dim;
    if (partition) {
        json parts = json::array();
        for (const auto& s : partition->slices)
            parts.push_back({{"name", s.name}, {"start", s.start}, {"length", s.length}});
        j["partition"] = parts;
    } else {
        j["partition"] = nullptr;
    }
    json cats = json::array();
    for (std::size_t k = 0; k < categories.size(); ++k)
        cats.push_back({{"id", k}, {"mean", categories[k].mean()}, {"logvar", categories[k].logvar()}});
    j["categories"] = cats;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write gold bank file: " + path);
    out << j.dump(2) << "\n";
}

GoldBank GoldBank::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read gold bank file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed gold bank file " + path + ": " + e.what());
    }

    GoldBank bank;
    bank.dim = j.at("dim").get<std::size_t>();
    if (j.contains("partition") && !j["partition"].is_null()) {
        LatentPartition part;
        for (const auto& s : j["partition"])
            part.slices.push_back({s.at("name").get<std::string>(), s.at("start").get<std::size_t>(),
                                   s.at("length").get<std::size_t>()});
        bank.partition = std::move(part);
    }
    std::map<int, DiagonalGaussian> by_id;
    for (const auto& c : j.at("categories")) {
        int id = c.at("id").get<int>();
        by_id.emplace(id, DiagonalGaussian(c.at("mean").get<std::vector<double>>(),
                                           c.at("logvar").get<std::vector<double>>()));
    }
    for (int k = 0; k < static_cast<int>(by_id.size()); ++k) {
        auto it = by_id.find(k);
        if (it == by_id.end())
            throw std::runtime_error("gold bank file " + path + " is missing category " + std::to_string(k));
        bank.categories.push_back(std::move(it->second));
    }
    bank.validate();
    return bank;
}

GoldBank GoldBank::load(const std::string& path, std::size_t expected_dim) {
    GoldBank bank = load(path);
    if (bank.dim != expected_dim)
        throw std::runtime_error("gold bank file " + path + " has dim " + std::to_string(bank.dim) +
                                 ", expected " + std::to_string(expected_dim));
    return bank;
}

GoldBank math_gold_bank(std::size_t num_categories, std::size_t dim) {
    if (num_categories < 1) throw std::invalid_argument("math_gold_bank needs at least one category");
    GoldBank bank;
    bank.dim = dim;
    for (std::size_t k = 0; k < num_categories; ++k) {
        // means walk outward from 0: 0, 1, -1, 2, -2, ...
        double mag = static_cast<double>((k + 1) / 2);
        double mean = (k % 2 == 1) ? mag : (mag == 0.0 ? 0.0 : -mag);
        double variance = static_cast<double>(k + 1); // 1, 2, 3, ...
        bank.categories.emplace_back(std::vector<double>(dim, mean),
                                     std::vector<double>(dim, std::log(variance)));
    }
    return bank;
}

} // namespace acvae
