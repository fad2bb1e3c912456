#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hat/core.hpp"

namespace hat {

/// Exponential-kernel density estimate. Log-densities are reported without the
/// kernel normalizing constant, i.e. up to an additive constant that depends
/// only on the dimension and bandwidth.
class KdeModel {
public:
    KdeModel(std::vector<FeatureVector> points, double bandwidth);

    /// Median pairwise distance over a seeded subsample of at most `subsample` points.
    static double median_heuristic(std::span<const FeatureVector> points, std::size_t subsample, std::uint64_t seed);

    /// log[(1/n) sum_i exp(-||x - x_i|| / h)]
    double log_density(const FeatureVector& x) const;

    double bandwidth() const { return bandwidth_; }
    std::size_t size() const { return points_.size(); }

private:
    std::vector<FeatureVector> points_;
    double bandwidth_;
};

inline double kde_logdensity(const KdeModel& model, const FeatureVector& x) { return model.log_density(x); }

struct LabeledPoint {
    std::string id;
    FeatureVector features;
};

/// Clusters with the fixed centers first (indices 0..F-1), then the free ones.
struct ClusterModel {
    std::vector<FeatureVector> fixed_centers;
    std::vector<FeatureVector> free_centers;
    std::unordered_map<std::string, std::size_t> assignment;
    std::vector<double> objective_history;  // after every Lloyd iteration
    std::size_t iterations = 0;
    bool converged = false;

    std::size_t num_clusters() const { return fixed_centers.size() + free_centers.size(); }
    const FeatureVector& center(std::size_t index) const;
    bool is_fixed(std::size_t index) const { return index < fixed_centers.size(); }
};

/// Nearest center over fixed + free; ties go to the lower index.
std::size_t assign_cluster(const ClusterModel& model, const FeatureVector& x);

struct KMeansOptions {
    std::size_t max_iterations = 100;
    std::size_t workers = 1;
};

/// Lloyd iterations where fixed centers take part in assignment but never move.
/// Free centers start from k-means++ seeding conditioned on the fixed ones.
/// A free center that loses all its points jumps to the point farthest from
/// its current center. Throws clustering error when k_total < |fixed| or the
/// points have fewer than k_total distinct values.
ClusterModel incremental_kmeans(std::span<const LabeledPoint> points, std::span<const FeatureVector> fixed_centers,
                                std::size_t k_total, std::uint64_t seed, const KMeansOptions& options = {});

/// Writes "id,f0,...,f{d-1}" rows for external plotting.
void export_features_csv(const std::string& path, std::span<const LabeledPoint> points);

}  // namespace hat
