#include "hat/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "hat/error.hpp"
#include "hat/parallel.hpp"
#include "hat/random.hpp"

namespace hat {

KdeModel::KdeModel(std::vector<FeatureVector> points, double bandwidth)
    : points_(std::move(points)), bandwidth_(bandwidth) {
    if (points_.empty()) throw Error(ErrorCode::parameter, "KDE needs at least one point");
    if (!(bandwidth_ > 0.0) || !std::isfinite(bandwidth_))
        throw Error(ErrorCode::parameter, "KDE bandwidth must be finite and positive");
}

double KdeModel::median_heuristic(std::span<const FeatureVector> points, std::size_t subsample, std::uint64_t seed) {
    if (points.size() < 2) return 1.0;
    std::vector<std::size_t> idx(points.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > subsample) {
        Rng rng = derive_rng(seed, 0x6b6465);
        for (std::size_t i = 0; i < subsample; ++i) {
            std::size_t j = i + uniform_index(rng, idx.size() - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(subsample);
        std::sort(idx.begin(), idx.end());
    }
    std::vector<double> d;
    d.reserve(idx.size() * (idx.size() - 1) / 2);
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = i + 1; j < idx.size(); ++j) d.push_back(euclidean_distance(points[idx[i]], points[idx[j]]));
    std::sort(d.begin(), d.end());
    double med = d.size() % 2 ? d[d.size() / 2] : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
    if (med > 0.0) return med;
    // Mostly duplicates: fall back to the smallest positive distance.
    auto pos = std::upper_bound(d.begin(), d.end(), 0.0);
    return pos == d.end() ? 1.0 : *pos;
}

double KdeModel::log_density(const FeatureVector& x) const {
    std::vector<double> a;
    a.reserve(points_.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (const auto& p : points_) {
        a.push_back(-euclidean_distance(x, p) / bandwidth_);
        mx = std::max(mx, a.back());
    }
    double s = 0.0;
    for (double v : a) s += std::exp(v - mx);
    return mx + std::log(s) - std::log(static_cast<double>(points_.size()));
}

const FeatureVector& ClusterModel::center(std::size_t index) const {
    if (index < fixed_centers.size()) return fixed_centers[index];
    return free_centers.at(index - fixed_centers.size());
}

namespace {

struct Nearest {
    std::size_t index;
    double d2;
};

double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        double t = a[i] - b[i];
        s += t * t;
    }
    return s;
}

Nearest nearest_center(const double* x, const std::vector<const double*>& centers, std::size_t dim) {
    Nearest best{0, std::numeric_limits<double>::infinity()};
    for (std::size_t c = 0; c < centers.size(); ++c) {
        double d2 = sq_dist(x, centers[c], dim);
        if (d2 < best.d2) best = {c, d2};
    }
    return best;
}

}  // namespace

std::size_t assign_cluster(const ClusterModel& model, const FeatureVector& x) {
    if (model.num_clusters() == 0) throw Error(ErrorCode::clustering, "cluster model has no centers");
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < model.num_clusters(); ++c) {
        double d2 = squared_distance(x, model.center(c));
        if (d2 < best_d2) {
            best = c;
            best_d2 = d2;
        }
    }
    return best;
}

ClusterModel incremental_kmeans(std::span<const LabeledPoint> points, std::span<const FeatureVector> fixed_centers,
                                std::size_t k_total, std::uint64_t seed, const KMeansOptions& options) {
    if (k_total < fixed_centers.size())
        throw Error(ErrorCode::clustering, "k_total " + std::to_string(k_total) + " below the " +
                                               std::to_string(fixed_centers.size()) + " fixed centers");
    if (k_total == 0) throw Error(ErrorCode::clustering, "k_total must be positive");
    if (points.empty()) throw Error(ErrorCode::clustering, "no points to cluster");
    const std::size_t dim = points.front().features.dimension();
    for (const auto& p : points)
        if (p.features.dimension() != dim) throw Error(ErrorCode::invalid_argument, "feature dimension mismatch");
    for (const auto& c : fixed_centers)
        if (c.dimension() != dim) throw Error(ErrorCode::invalid_argument, "fixed center dimension mismatch");
    {
        std::set<std::vector<double>> distinct;
        for (const auto& p : points) {
            distinct.emplace(p.features.values().begin(), p.features.values().end());
            if (distinct.size() >= k_total) break;
        }
        if (distinct.size() < k_total)
            throw Error(ErrorCode::clustering, "only " + std::to_string(distinct.size()) +
                                                   " distinct points for " + std::to_string(k_total) + " clusters");
    }

    const std::size_t n = points.size();
    const std::size_t n_fixed = fixed_centers.size();
    const std::size_t n_free = k_total - n_fixed;

    // Flat storage: fixed centers are copied once and never written again.
    std::vector<std::vector<double>> centers;
    centers.reserve(k_total);
    for (const auto& c : fixed_centers) centers.emplace_back(c.values().begin(), c.values().end());

    // k-means++ seeding of the free centers, conditioned on the fixed ones.
    Rng rng = derive_rng(seed, 0x6b6d65616e73);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    auto refresh_d2 = [&](const std::vector<double>& c) {
        for (std::size_t i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], sq_dist(points[i].features.values().data(), c.data(), dim));
    };
    for (const auto& c : centers) refresh_d2(c);
    for (std::size_t f = 0; f < n_free; ++f) {
        std::size_t pick;
        if (centers.empty()) {
            pick = uniform_index(rng, n);
        } else {
            double total = std::accumulate(d2.begin(), d2.end(), 0.0);
            if (!(total > 0.0))
                throw Error(ErrorCode::clustering, "cannot seed free center: every point coincides with a center");
            pick = sample_categorical(rng, d2);
        }
        const auto& v = points[pick].features.values();
        centers.emplace_back(v.begin(), v.end());
        refresh_d2(centers.back());
    }

    std::vector<std::size_t> assign(n, 0);
    std::vector<double> cost(n, 0.0);
    auto assign_all = [&]() {
        std::vector<const double*> ptrs;
        ptrs.reserve(centers.size());
        for (const auto& c : centers) ptrs.push_back(c.data());
        parallel_for(n, options.workers, [&](std::size_t i) {
            Nearest nn = nearest_center(points[i].features.values().data(), ptrs, dim);
            assign[i] = nn.index;
            cost[i] = nn.d2;
        });
        return std::accumulate(cost.begin(), cost.end(), 0.0);
    };

    ClusterModel model;
    double objective = assign_all();
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
        std::vector<std::size_t> before = assign;

        std::vector<std::vector<double>> sums(n_free, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> counts(n_free, 0);
        for (std::size_t i = 0; i < n; ++i) {
            if (assign[i] < n_fixed) continue;
            std::size_t f = assign[i] - n_fixed;
            ++counts[f];
            const auto& v = points[i].features.values();
            for (std::size_t k = 0; k < dim; ++k) sums[f][k] += v[k];
        }
        std::vector<bool> taken(n, false);
        for (std::size_t f = 0; f < n_free; ++f) {
            auto& c = centers[n_fixed + f];
            if (counts[f] > 0) {
                for (std::size_t k = 0; k < dim; ++k) c[k] = sums[f][k] / static_cast<double>(counts[f]);
                continue;
            }
            std::size_t far = n;
            for (std::size_t i = 0; i < n; ++i)
                if (!taken[i] && cost[i] > 0.0 && (far == n || cost[i] > cost[far])) far = i;
            if (far == n) continue;
            taken[far] = true;
            const auto& v = points[far].features.values();
            c.assign(v.begin(), v.end());
            cost[far] = 0.0;
        }

        double next = assign_all();
        model.objective_history.push_back(next);
        if (next > objective + 1e-9 * std::max(1.0, objective))
            throw Error(ErrorCode::internal, "k-means objective increased from " + std::to_string(objective) +
                                                 " to " + std::to_string(next));
        objective = next;
        model.iterations = it + 1;
        if (assign == before) {
            model.converged = true;
            break;
        }
    }

    model.fixed_centers.assign(fixed_centers.begin(), fixed_centers.end());
    for (std::size_t f = 0; f < n_free; ++f) model.free_centers.emplace_back(centers[n_fixed + f]);
    for (std::size_t i = 0; i < n; ++i) model.assignment[points[i].id] = assign[i];
    return model;
}

void export_features_csv(const std::string& path, std::span<const LabeledPoint> points) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::io, "cannot write '" + path + "'");
    out.precision(17);
    if (!points.empty()) {
        out << "id";
        for (std::size_t k = 0; k < points.front().features.dimension(); ++k) out << ",f" << k;
        out << '\n';
    }
    for (const auto& p : points) {
        out << p.id;
        for (double v : p.features.values()) out << ',' << v;
        out << '\n';
    }
}

}  // namespace hat
