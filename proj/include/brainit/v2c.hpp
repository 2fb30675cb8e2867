#pragma once

#include <map>
#include <string>
#include <vector>

#include "brainit/errors.hpp"
#include "brainit/tensor.hpp"

namespace brainit::v2c {

struct GmmConfig {
    int k = 128;
    std::string covariance = "diagonal";
    int max_iter = 100;
    Real tol = 1e-6;
    std::uint64_t seed = 0;
    int retries = 3;
};

/// Shared voxels-to-clusters mapping: a fitted mixture over pooled voxel
/// embeddings plus the per-subject hard assignment. Immutable once fitted.
struct V2CMapping {
    int k = 0;
    std::int64_t dim = 0;
    std::string covariance = "diagonal";
    Tensor means;                // [K, d]
    Tensor variances;            // [K, d]
    std::vector<Real> weights;   // K, sums to 1
    std::map<int, std::vector<int>> assignments;  // subject -> per-voxel cluster
    std::vector<Real> log_likelihood_trace;       // one entry per EM iteration
};

/// Fits the shared mixture on the pooled per-voxel embeddings of all
/// subjects (map: subject id -> [V_s, d] matrix) and assigns every voxel
/// to its maximum-responsibility component.
V2CMapping fit_v2c(const std::map<int, Tensor>& embeddings, const GmmConfig& config);

/// Anatomical baseline: same procedure over [V_s, 3] coordinate matrices.
V2CMapping fit_anatomical_v2c(const std::map<int, Tensor>& coords, const GmmConfig& config);

/// Hard assignment of a new subject under the frozen mixture.
std::vector<int> assign_new_subject(const V2CMapping& mapping, const Tensor& embeddings);

/// Per-row component log-densities (including mixture weights), [n, K].
Tensor component_log_densities(const V2CMapping& mapping, const Tensor& rows);

void save_mapping(const std::string& dir, const V2CMapping& mapping);
V2CMapping load_mapping(const std::string& dir);

}  // namespace brainit::v2c
