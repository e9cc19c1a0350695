#include "acvae/latentmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "acvae/rng.hpp"

namespace acvae {

namespace {

// top eigenvector of a symmetric PSD matrix by power iteration
std::pair<std::vector<double>, double> power_iteration(const std::vector<double>& mat,
                                                       std::size_t d, Rng& rng) {
    std::vector<double> v(d);
    double norm = 0.0;
    for (double& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;

    std::vector<double> w(d);
    double eigenvalue = 0.0;
    for (int iter = 0; iter < 10000; ++iter) {
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            const double* row = mat.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) acc += row[j] * v[j];
            w[i] = acc;
        }
        double wn = 0.0;
        for (double x : w) wn += x * x;
        wn = std::sqrt(wn);
        if (wn < 1e-30) return {std::vector<double>(d, 0.0), 0.0}; // zero matrix
        double delta = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double next = w[i] / wn;
            delta = std::max(delta, std::abs(next - v[i]));
            v[i] = next;
        }
        eigenvalue = wn;
        if (delta < 1e-9) break;
    }
    // fix sign: largest-magnitude component positive
    std::size_t arg = 0;
    for (std::size_t i = 1; i < d; ++i)
        if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    if (v[arg] < 0)
        for (double& x : v) x = -x;
    return {v, eigenvalue};
}

} // namespace

std::vector<std::array<double, 2>> project_pca(const std::vector<std::vector<double>>& vectors) {
    if (vectors.size() < 3) throw std::invalid_argument("project_pca needs at least 3 vectors");
    const std::size_t n = vectors.size();
    const std::size_t d = vectors[0].size();
    for (const auto& v : vectors)
        if (v.size() != d) throw std::invalid_argument("project_pca: mixed dimensions");

    std::vector<double> mean(d, 0.0);
    for (const auto& v : vectors)
        for (std::size_t j = 0; j < d; ++j) mean[j] += v[j];
    for (double& m : mean) m /= static_cast<double>(n);

    std::vector<double> centered(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) centered[i * d + j] = vectors[i][j] - mean[j];

    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = centered.data() + i * d;
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += xi[a] * xi[b];
    }
    for (double& c : cov) c /= static_cast<double>(n - 1);

    Rng rng(0x9c0ffee5u, "pca-start"); // fixed start: same inputs, same output
    auto [u1, l1] = power_iteration(cov, d, rng);
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= l1 * u1[a] * u1[b];
    auto [u2, l2] = power_iteration(cov, d, rng);
    (void)l2;

    std::vector<std::array<double, 2>> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = centered.data() + i * d;
        double p0 = 0.0, p1 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            p0 += xi[j] * u1[j];
            p1 += xi[j] * u2[j];
        }
        out[i] = {p0, p1};
    }
    return out;
}

double separation_ratio(const std::vector<std::vector<double>>& vectors,
                        const std::vector<int>& labels) {
    if (vectors.size() != labels.size())
        throw std::invalid_argument("separation_ratio: vectors/labels size mismatch");
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
    if (groups.size() < 2)
        throw std::invalid_argument("separation_ratio needs at least 2 labels");
    for (const auto& [label, idx] : groups)
        if (idx.size() < 2)
            throw std::invalid_argument("separation_ratio: label " + std::to_string(label) +
                                        " has fewer than 2 points");

    const std::size_t d = vectors[0].size();
    std::map<int, std::vector<double>> centroids;
    for (const auto& [label, idx] : groups) {
        std::vector<double> c(d, 0.0);
        for (std::size_t i : idx)
            for (std::size_t j = 0; j < d; ++j) c[j] += vectors[i][j];
        for (double& x : c) x /= static_cast<double>(idx.size());
        centroids[label] = std::move(c);
    }

    auto dist = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
        return std::sqrt(s);
    };

    double between = 0.0;
    std::size_t pairs = 0;
    for (auto it = centroids.begin(); it != centroids.end(); ++it)
        for (auto jt = std::next(it); jt != centroids.end(); ++jt) {
            between += dist(it->second, jt->second);
            ++pairs;
        }
    between /= static_cast<double>(pairs);

    double within = 0.0;
    for (const auto& [label, idx] : groups)
        for (std::size_t i : idx) within += dist(vectors[i], centroids[label]);
    within /= static_cast<double>(vectors.size());

    if (within == 0.0) return kSeparationCap;
    return std::min(between / within, kSeparationCap);
}

void export_csv(const std::vector<LatentRecord>& records, const std::string& path) {
    std::vector<const LatentRecord*> ordered;
    ordered.reserve(records.size());
    for (const auto& r : records) ordered.push_back(&r);
    std::sort(ordered.begin(), ordered.end(),
              [](const LatentRecord* a, const LatentRecord* b) { return a->id < b->id; });

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write csv file: " + path);
    std::size_t dims = records.empty() ? 0 : records[0].vec.size();
    out << "id,label,x,y";
    for (std::size_t j = 0; j < dims; ++j) out << ",d" << j;
    out << "\n";

    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << buf;
    };
    for (const LatentRecord* r : ordered) {
        out << r->id << "," << r->label << ",";
        put(r->x);
        out << ",";
        put(r->y);
        for (double v : r->vec) {
            out << ",";
            put(v);
        }
        out << "\n";
    }
}

} // namespace acvae
