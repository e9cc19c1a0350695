#pragma once

#include <array>
#include <string>
#include <vector>

namespace acvae {

struct LatentRecord {
    int id = 0;
    int label = 0;
    std::vector<double> vec; // posterior mean
    double x = 0.0, y = 0.0; // 2D projection
};

// Centers the data and projects onto the top two principal directions
// (power iteration with deflation, tol 1e-9, deterministic start). Column 0
// carries at least as much variance as column 1. Needs at least 3 vectors.
std::vector<std::array<double, 2>> project_pca(const std::vector<std::vector<double>>& vectors);

// (mean pairwise distance between distinct-label centroids) /
// (mean point-to-own-centroid distance), in the full latent space. A zero
// denominator returns the capped sentinel 1e12. Needs >= 2 labels with
// >= 2 points each.
double separation_ratio(const std::vector<std::vector<double>>& vectors,
                        const std::vector<int>& labels);

inline constexpr double kSeparationCap = 1e12;

// CSV with header "id,label,x,y,d0,...", rows ordered by id, full-precision
// decimals.
void export_csv(const std::vector<LatentRecord>& records, const std::string& path);

} // namespace acvae
